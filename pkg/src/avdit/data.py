"""Jointly Gaussian paired latents with a closed-form optimal noise predictor.

A shared factor ``s ~ N(0, I_k)`` drives both modalities::

    frame m of z_v = V s + m W s + sigma_v * eta
    z_a            = A s + sigma_a * eta'

so the joint covariance is ``L L^T + diag(noise)`` with ``L`` the stacked
loadings. The frame-dependent term gives the video latents a temporal
structure that a per-frame model cannot see.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .diffusion import LatentPair, NoiseSchedule
from .tensor import ContractError

LAYOUTS = ("tiled", "random")


@dataclass(frozen=True)
class JointGaussianSpec:
    """Linear factor model over flattened (video, audio) latents.

    ``layout="tiled"`` repeats one per-patch loading across the patch grid, so a
    frame is a texture whose patch pattern is set by the shared factor; ``"random"``
    draws every row independently.
    """

    video_shape: tuple[int, int, int, int]  # (M, H, W, c_v)
    audio_shape: tuple[int, int, int]  # (T, F, c_a)
    factors: int = 8
    sigma_v: float = 0.3
    sigma_a: float = 0.3
    trajectory_scale: float = 0.5
    layout: str = "tiled"
    patch: int = 2
    seed: int = 0
    V: np.ndarray = field(init=False, repr=False, compare=False)
    W: np.ndarray = field(init=False, repr=False, compare=False)
    A: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if self.factors < 1:
            raise ValueError("need at least one shared factor")
        rng = np.random.default_rng(self.seed)
        M, H, W, cv = self.video_shape
        T, F, ca = self.audio_shape
        k = self.factors
        if self.layout == "random":
            V = rng.standard_normal((H * W * cv, k)) / np.sqrt(k)
            Wm = rng.standard_normal((H * W * cv, k)) / np.sqrt(k) * self.trajectory_scale
            A = rng.standard_normal((T * F * ca, k)) / np.sqrt(k)
        else:
            V = _tiled_loading(rng, (H, W, cv), self.patch, k)
            Wm = _tiled_loading(rng, (H, W, cv), self.patch, k) * self.trajectory_scale
            A = _tiled_loading(rng, (T, F, ca), self.patch, k)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "W", Wm)
        object.__setattr__(self, "A", A)

    @property
    def frame_dim(self) -> int:
        M, H, W, c = self.video_shape
        return H * W * c

    @property
    def video_dim(self) -> int:
        return self.video_shape[0] * self.frame_dim

    @property
    def audio_dim(self) -> int:
        T, F, c = self.audio_shape
        return T * F * c

    @property
    def dim(self) -> int:
        return self.video_dim + self.audio_dim

    @cached_property
    def loadings(self) -> np.ndarray:
        """Stacked (dim, k) map from the shared factor to the flattened latents."""
        M = self.video_shape[0]
        frames = [self.V + m * self.W for m in range(M)]
        return np.concatenate(frames + [self.A], axis=0)

    @cached_property
    def noise_var(self) -> np.ndarray:
        return np.concatenate([np.full(self.video_dim, self.sigma_v ** 2),
                               np.full(self.audio_dim, self.sigma_a ** 2)])

    @cached_property
    def _eig(self) -> tuple[np.ndarray, np.ndarray]:
        lam, Q = np.linalg.eigh(exact_covariance(self))
        return lam, Q

    def flatten(self, z_v: np.ndarray, z_a: np.ndarray) -> np.ndarray:
        n = z_v.shape[0]
        return np.concatenate([z_v.reshape(n, -1), z_a.reshape(n, -1)], axis=1)

    def unflatten(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = x.shape[0]
        return (x[:, :self.video_dim].reshape((n,) + tuple(self.video_shape)),
                x[:, self.video_dim:].reshape((n,) + tuple(self.audio_shape)))


def _tiled_loading(rng: np.random.Generator, grid: tuple[int, int, int], patch: int, k: int) -> np.ndarray:
    """One per-patch loading repeated over the whole patch grid."""
    H, W, c = grid
    base = rng.standard_normal((patch, patch, c, k)) / np.sqrt(k)
    gh, gw = H // patch, W // patch
    full = np.broadcast_to(base[None, :, None], (gh, patch, gw, patch, c, k))
    return np.ascontiguousarray(full).reshape(H * W * c, k)


def exact_covariance(spec: JointGaussianSpec) -> np.ndarray:
    L = spec.loadings
    return L @ L.T + np.diag(spec.noise_var)


def sample_pairs(spec: JointGaussianSpec, n: int, rng: np.random.Generator,
                 dtype=np.float32) -> LatentPair:
    if n <= 0:
        raise ContractError(f"need a positive sample count, got {n}")
    s = rng.standard_normal((n, spec.factors))
    x = s @ spec.loadings.T + rng.standard_normal((n, spec.dim)) * np.sqrt(spec.noise_var)
    z_v, z_a = spec.unflatten(x.astype(dtype))
    return LatentPair(z_v, z_a, np.zeros(n, dtype=np.int64))


def analytic_eps(x_t: np.ndarray, t, spec: JointGaussianSpec, s: NoiseSchedule) -> np.ndarray:
    """Bayes-optimal noise prediction E[eps | x_t] for flattened (n, dim) inputs."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.ndim == 1:
        return analytic_eps(x_t[None], t, spec, s)[0]
    t = np.broadcast_to(np.asarray(t), (x_t.shape[0],))
    ab = s.alpha_bar_at(t)[:, None]
    lam, Q = spec._eig
    coef = np.sqrt(1.0 - ab) / (ab * lam[None, :] + (1.0 - ab))
    return ((x_t @ Q) * coef) @ Q.T


def optimal_loss_per_t(spec: JointGaussianSpec, s: NoiseSchedule) -> np.ndarray:
    """Expected video MSE + audio MSE under the optimal predictor, for each t = 1..T."""
    lam, Q = spec._eig
    ab = s.alpha_bar[:, None]
    resid = ab * lam[None, :] / (ab * lam[None, :] + (1.0 - ab))  # (T, dim) in eigenbasis
    diag = resid @ (Q * Q).T  # conditional variance per coordinate
    return diag[:, :spec.video_dim].mean(axis=1) + diag[:, spec.video_dim:].mean(axis=1)


def optimal_expected_loss(spec: JointGaussianSpec, s: NoiseSchedule) -> float:
    """Optimal loss averaged over t drawn uniformly from 1..T."""
    return float(optimal_loss_per_t(spec, s).mean())
