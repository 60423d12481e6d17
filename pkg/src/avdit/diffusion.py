"""DDPM machinery for a (video, audio) latent pair.

Timesteps are 1-based throughout: ``t`` in ``{1..T}`` and ``alpha_bar[0]``
stands for the empty product (= 1). Schedules keep their coefficients in
float64; results are cast back to the dtype of the latents they touch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import tensor as tn
from .tensor import ContractError, Tensor

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step betas with derived alphas; ``timesteps`` maps step k to the model's time input."""

    betas: np.ndarray
    timesteps: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ConfigError("betas must be a non-empty 1D sequence")
        if not np.all((betas > 0) & (betas <= 1)):
            raise ConfigError("betas must lie in (0, 1]")
        object.__setattr__(self, "betas", betas)
        ts = np.arange(1, betas.size + 1) if self.timesteps is None else np.asarray(self.timesteps)
        if ts.shape != betas.shape:
            raise ConfigError("timesteps and betas differ in length")
        object.__setattr__(self, "timesteps", ts.astype(np.int64))
        alpha_bar = np.cumprod(1.0 - betas)
        # index 0 is the empty product
        object.__setattr__(self, "_alpha_bar", np.concatenate([[1.0], alpha_bar]))

    @property
    def T(self) -> int:
        return int(self.betas.size)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bar(self) -> np.ndarray:
        """alpha_bar[t-1] for t = 1..T."""
        return self._alpha_bar[1:]

    def alpha_bar_at(self, t) -> np.ndarray:
        """alpha_bar_t with alpha_bar_0 = 1; ``t`` may be an int or an int array."""
        return self._alpha_bar[np.asarray(t)]

    def beta_at(self, t) -> np.ndarray:
        return self.betas[np.asarray(t) - 1]

    def posterior_variance(self, t) -> np.ndarray:
        t = np.asarray(t)
        ab = self.alpha_bar_at(t)
        ab_prev = self.alpha_bar_at(t - 1)
        return (1.0 - ab_prev) / (1.0 - ab) * self.beta_at(t)

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if t.size and (t.min() < 1 or t.max() > self.T):
            raise ContractError(f"timestep out of range 1..{self.T}: {t}")
        return t


def make_linear_schedule(T: int = 1000, beta1: float = 1e-4, betaT: float = 2e-2) -> NoiseSchedule:
    if T < 2:
        raise ConfigError(f"need at least 2 steps, got T={T}")
    if not 0 < beta1 < betaT < 1:
        raise ConfigError(f"need 0 < beta1 < betaT < 1, got {beta1}, {betaT}")
    betas = beta1 + np.arange(T, dtype=np.float64) / (T - 1) * (betaT - beta1)
    betas[-1] = betaT
    return NoiseSchedule(betas)


def respace(s: NoiseSchedule, n: int) -> NoiseSchedule:
    """Keep ``n`` steps at a uniform stride (always including the last one)."""
    if not 1 <= n <= s.T:
        raise ConfigError(f"cannot respace {s.T} steps to {n}")
    if n == s.T:
        return s
    if n == 1:
        keep = np.array([s.T])
    else:
        keep = np.round(1 + np.arange(n) * (s.T - 1) / (n - 1)).astype(np.int64)
    ab = s.alpha_bar_at(keep)
    ab_prev = np.concatenate([[1.0], ab[:-1]])
    return NoiseSchedule(1.0 - ab / ab_prev, timesteps=s.timesteps[keep - 1])


def _coef(values: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Broadcast per-sample coefficients over the trailing dims of ``like``."""
    values = np.asarray(values)
    if values.ndim == 0:
        return values.astype(like.dtype)
    return values.reshape(values.shape + (1,) * (like.ndim - values.ndim)).astype(like.dtype)


def q_sample(x0: np.ndarray, t, eps: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps; ``t`` int or one per leading sample."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if eps.shape != x0.shape:
        raise ContractError(f"noise shape {eps.shape} differs from data shape {x0.shape}")
    t = s.check_t(t)
    ab = s.alpha_bar_at(t)
    return _coef(np.sqrt(ab), x0) * x0 + _coef(np.sqrt(1.0 - ab), x0) * eps


@dataclass
class PosteriorParams:
    mean: np.ndarray
    variance: np.ndarray  # one value per sample (or per element)
    log_variance: np.ndarray
    x0_hat: np.ndarray


def predict_x0(x_t: np.ndarray, eps_hat: np.ndarray, t, s: NoiseSchedule) -> np.ndarray:
    ab = s.alpha_bar_at(t)
    return (x_t - _coef(np.sqrt(1.0 - ab), x_t) * eps_hat) / _coef(np.sqrt(ab), x_t)


def posterior_mean_coefs(t, s: NoiseSchedule) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t)
    ab = s.alpha_bar_at(t)
    ab_prev = s.alpha_bar_at(t - 1)
    beta = s.beta_at(t)
    c0 = np.sqrt(ab_prev) * beta / (1.0 - ab)
    ct = np.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab)
    return c0, ct


def clipped_log_posterior_variance(t, s: NoiseSchedule) -> np.ndarray:
    """log of beta_tilde_t with the t=1 zero replaced by beta_tilde_2."""
    t = np.asarray(t)
    var = s.posterior_variance(np.where(t == 1, min(2, s.T), t))
    return np.log(var)


def posterior_params(x_t: np.ndarray, eps_hat: np.ndarray, t, s: NoiseSchedule) -> PosteriorParams:
    t = s.check_t(t)
    x0_hat = predict_x0(x_t, eps_hat, t, s)
    c0, ct = posterior_mean_coefs(t, s)
    mean = _coef(c0, x_t) * x0_hat + _coef(ct, x_t) * x_t
    var = s.posterior_variance(t)
    return PosteriorParams(mean, var, clipped_log_posterior_variance(t, s), x0_hat)


def learned_log_variance(v: np.ndarray, t, s: NoiseSchedule) -> np.ndarray:
    """Interpolate between log beta_tilde_t (v=-1) and log beta_t (v=+1)."""
    min_log = _coef(clipped_log_posterior_variance(t, s), v)
    max_log = _coef(np.log(s.beta_at(t)), v)
    frac = (v + 1.0) / 2.0
    return frac * max_log + (1.0 - frac) * min_log


# ---------------------------------------------------------------------------
# model protocol and joint objective


class JointDenoiser(Protocol):
    """Maps (z_v, z_a, t) to outputs with 2*c channels: noise then variance values."""

    def __call__(self, z_v: Tensor, z_a: Tensor, t: np.ndarray) -> tuple[Tensor, Tensor]: ...


@dataclass
class LatentPair:
    z_v: np.ndarray  # (B, M, H, W, c_v)
    z_a: np.ndarray  # (B, T, F, c_a)
    t: np.ndarray | None = None

    def __post_init__(self):
        if self.z_v.shape[0] != self.z_a.shape[0]:
            raise ContractError(f"batch mismatch: video {self.z_v.shape} vs audio {self.z_a.shape}")
        if self.t is not None:
            self.t = np.broadcast_to(np.asarray(self.t, dtype=np.int64), (self.z_v.shape[0],)).copy()

    @property
    def batch(self) -> int:
        return self.z_v.shape[0]


@dataclass
class LossTerms:
    total: Tensor
    video: Tensor
    audio: Tensor
    vb: Tensor | None = None


def _split_channels(out: Tensor, c: int) -> tuple[Tensor, Tensor | None]:
    if out.shape[-1] == c:
        return out, None
    if out.shape[-1] != 2 * c:
        raise tn.ShapeError(f"model output has {out.shape[-1]} channels, expected {c} or {2 * c}")
    eps, var = tn.split(out, [c, c], axis=-1)
    return eps, var


def _normal_kl(mean1, logvar1, mean2: Tensor, logvar2: Tensor) -> Tensor:
    """KL(N1 || N2) elementwise; the first argument is the (constant) true posterior."""
    d = tn.sub(mean2, mean1)
    inv_var2 = tn.exp(tn.scale(logvar2, -1.0))
    return tn.scale(
        tn.add(tn.add(tn.sub(logvar2, logvar1), tn.mul(np.exp(logvar1), inv_var2)),
               tn.add(tn.mul(tn.mul(d, d), inv_var2), -1.0)),
        0.5)


def _gaussian_nll(x, mean: Tensor, logvar: Tensor) -> Tensor:
    d = tn.sub(mean, x)
    inv_var = tn.exp(tn.scale(logvar, -1.0))
    return tn.scale(tn.add(tn.add(logvar, tn.mul(tn.mul(d, d), inv_var)), math.log(2 * math.pi)), 0.5)


def _vb_term(var_out: Tensor, eps_hat: Tensor, x0, x_t, t, s: NoiseSchedule) -> Tensor:
    """Variational bound on the variance channels; the mean path is detached."""
    t = np.asarray(t)
    c0, ct = posterior_mean_coefs(t, s)
    true_mean = _coef(c0, x_t) * x0 + _coef(ct, x_t) * x_t
    true_logvar = _coef(clipped_log_posterior_variance(t, s), x_t)
    model_mean = posterior_params(x_t, eps_hat.data, t, s).mean
    min_log = Tensor(true_logvar)
    max_log = Tensor(_coef(np.log(s.beta_at(t)), x_t))
    frac = tn.scale(tn.add(var_out, 1.0), 0.5)
    model_logvar = tn.add(tn.mul(frac, max_log), tn.mul(tn.sub(1.0, frac), min_log))
    kl = _normal_kl(true_mean, true_logvar, Tensor(model_mean), model_logvar)
    nll = _gaussian_nll(x0, Tensor(model_mean), model_logvar)
    first = _coef((t == 1).astype(np.float64), x_t)
    per_elem = tn.add(tn.mul(kl, 1.0 - first), tn.mul(nll, first))
    axes = tuple(range(1, x_t.ndim))
    return tn.scale(tn.mean(tn.mean(per_elem, axis=axes)), 1.0 / math.log(2.0))


def joint_training_loss(model: JointDenoiser, z0: LatentPair, t, eps_v: np.ndarray, eps_a: np.ndarray,
                        s: NoiseSchedule, learned_variance: bool = False) -> LossTerms:
    """Unweighted sum of the per-modality noise MSEs (plus the bound term when variance is learned)."""
    t = s.check_t(np.broadcast_to(np.asarray(t), (z0.batch,)))
    x_v = q_sample(z0.z_v, t, eps_v, s)
    x_a = q_sample(z0.z_a, t, eps_a, s)
    out_v, out_a = model(Tensor(x_v), Tensor(x_a), s.timesteps[t - 1])
    eps_hat_v, var_v = _split_channels(out_v, z0.z_v.shape[-1])
    eps_hat_a, var_a = _split_channels(out_a, z0.z_a.shape[-1])
    loss_v = tn.mse(eps_hat_v, eps_v)
    loss_a = tn.mse(eps_hat_a, eps_a)
    total = tn.add(loss_v, loss_a)
    vb = None
    if learned_variance:
        if var_v is None or var_a is None:
            raise ContractError("learned variance needs 2*c output channels")
        vb = tn.add(_vb_term(var_v, eps_hat_v, z0.z_v, x_v, t, s),
                    _vb_term(var_a, eps_hat_a, z0.z_a, x_a, t, s))
        total = tn.add(total, vb)
    if not np.isfinite(total.data).all():
        raise NonFiniteLossError(f"non-finite loss at timesteps {t.tolist()}")
    return LossTerms(total, loss_v, loss_a, vb)


# ---------------------------------------------------------------------------
# reverse process


def _eps_and_logvar(out: np.ndarray, c: int, x_t, t, s: NoiseSchedule, learned_variance: bool):
    eps = out[..., :c]
    if learned_variance and out.shape[-1] == 2 * c:
        logvar = learned_log_variance(out[..., c:], t, s)
        return eps, np.exp(logvar)
    return eps, None


def ddpm_step(model: JointDenoiser, pair: LatentPair, k: int, s: NoiseSchedule,
              rng: np.random.Generator, learned_variance: bool = False) -> LatentPair:
    """One reverse step from step ``k`` of schedule ``s`` to ``k - 1``."""
    k = int(s.check_t(k))
    ks = np.full(pair.batch, k, dtype=np.int64)
    with tn.no_grad():
        out_v, out_a = model(Tensor(pair.z_v), Tensor(pair.z_a), s.timesteps[ks - 1])
    result = []
    for x_t, out in ((pair.z_v, out_v.data), (pair.z_a, out_a.data)):
        c = x_t.shape[-1]
        eps, var = _eps_and_logvar(out, c, x_t, ks, s, learned_variance)
        post = posterior_params(x_t, eps, ks, s)
        if var is None:
            var = _coef(post.variance, x_t)
        if k > 1:
            z = rng.standard_normal(x_t.shape).astype(x_t.dtype)
            x_prev = post.mean + np.sqrt(var).astype(x_t.dtype) * z
        else:
            x_prev = post.mean
        result.append(x_prev.astype(x_t.dtype))
    return LatentPair(result[0], result[1], np.full(pair.batch, k - 1))


def sample_joint(model: JointDenoiser, shapes: tuple[tuple[int, ...], tuple[int, ...]], s: NoiseSchedule,
                 n_steps: int, rng: np.random.Generator, learned_variance: bool = False,
                 dtype=np.float32, progress: Callable[[int], None] | None = None) -> LatentPair:
    """Run the reverse chain from Gaussian noise. ``shapes`` are full (batch-leading) latent shapes."""
    sched = respace(s, n_steps)
    video_shape, audio_shape = shapes
    z_v = rng.standard_normal(video_shape).astype(dtype)
    z_a = rng.standard_normal(audio_shape).astype(dtype)
    pair = LatentPair(z_v, z_a, np.full(video_shape[0], sched.T))
    for k in range(sched.T, 0, -1):
        pair = ddpm_step(model, pair, k, sched, rng, learned_variance)
        log.debug("sampling step %d/%d", sched.T - k + 1, sched.T)
        if progress is not None:
            progress(k)
    return pair
