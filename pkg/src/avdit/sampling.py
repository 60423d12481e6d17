"""Batched ancestral sampling and moment summaries of generated latent pairs."""

from __future__ import annotations

import csv
import io

import numpy as np

from .data import JointGaussianSpec, exact_covariance
from .diffusion import LatentPair, NoiseSchedule, sample_joint


def generate(model, spec: JointGaussianSpec, s: NoiseSchedule, n: int, steps: int, seed: int,
             chunk: int = 512, learned_variance: bool = False) -> LatentPair:
    """``n`` joint samples, drawn in chunks that each get their own seeded stream."""
    M, H, W, cv = spec.video_shape
    T, F, ca = spec.audio_shape
    parts = []
    for i, start in enumerate(range(0, n, chunk)):
        b = min(chunk, n - start)
        rng = np.random.default_rng([seed, i])
        parts.append(sample_joint(model, ((b, M, H, W, cv), (b, T, F, ca)), s, steps, rng, learned_variance))
    return LatentPair(np.concatenate([p.z_v for p in parts]), np.concatenate([p.z_a for p in parts]),
                      np.zeros(n, dtype=np.int64))


def cross_block(spec: JointGaussianSpec, cov: np.ndarray) -> np.ndarray:
    return cov[:spec.video_dim, spec.video_dim:]


def sample_statistics(spec: JointGaussianSpec, pair: LatentPair) -> dict[str, float]:
    """Covariance error against the exact joint covariance plus cross-modal correlation agreement."""
    x = spec.flatten(pair.z_v, pair.z_a).astype(np.float64)
    emp = np.cov(x, rowvar=False)
    exact = exact_covariance(spec)
    ce, cx = cross_block(spec, emp), cross_block(spec, exact)
    # sign agreement over the cross entries that are clearly nonzero in the exact covariance
    strong = np.abs(cx) > 0.5 * np.abs(cx).max()
    return {
        "n": float(x.shape[0]),
        "cov_rel_frobenius": float(np.linalg.norm(emp - exact) / np.linalg.norm(exact)),
        "video_cov_rel_frobenius": float(np.linalg.norm(emp[:spec.video_dim, :spec.video_dim]
                                                        - exact[:spec.video_dim, :spec.video_dim])
                                         / np.linalg.norm(exact[:spec.video_dim, :spec.video_dim])),
        "audio_cov_rel_frobenius": float(np.linalg.norm(emp[spec.video_dim:, spec.video_dim:]
                                                        - exact[spec.video_dim:, spec.video_dim:])
                                         / np.linalg.norm(exact[spec.video_dim:, spec.video_dim:])),
        "cross_rel_frobenius": float(np.linalg.norm(ce - cx) / np.linalg.norm(cx)),
        "cross_alignment": float(np.sum(ce * cx) / (np.linalg.norm(ce) * np.linalg.norm(cx))),
        "cross_sign_agreement": float(np.mean(np.sign(ce[strong]) == np.sign(cx[strong]))),
        "cross_abs_mean": float(np.abs(ce).mean()),
        "mean_abs_mean": float(np.abs(x.mean(axis=0)).mean()),
    }


def moments_csv(spec: JointGaussianSpec, pair: LatentPair) -> str:
    """Per-coordinate mean and variance (sample vs exact), then the summary statistics."""
    x = spec.flatten(pair.z_v, pair.z_a).astype(np.float64)
    exact_var = np.diag(exact_covariance(spec))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["coordinate", "modality", "mean", "variance", "exact_variance"])
    mean, var = x.mean(axis=0), x.var(axis=0, ddof=1)
    for i in range(spec.dim):
        w.writerow([i, "video" if i < spec.video_dim else "audio", repr(mean[i]), repr(var[i]), repr(exact_var[i])])
    w.writerow([])
    w.writerow(["statistic", "value"])
    for k, v in sample_statistics(spec, pair).items():
        w.writerow([k, repr(v)])
    return buf.getvalue()
