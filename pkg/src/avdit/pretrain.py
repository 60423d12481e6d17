"""Stand-ins for an image-pretrained DiT: a tiny DiT trained on images, then frozen.

Two image sources: Gaussian blobs (unrelated to the downstream task) or single
frames of the synthetic video latents, each frame an independent image with
its frame index hidden. The second mirrors a backbone pretrained on the same
visual domain that has never seen motion or sound.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .data import sample_pairs
from .diffusion import make_linear_schedule, q_sample
from .model import DiTBackbone, ModelConfig
from .nn import Init
from .optim import AdamW

log = logging.getLogger(__name__)

_CACHE: dict[tuple, "PretrainResult"] = {}


def blob_images(n: int, shape: tuple[int, int, int], rng: np.random.Generator, max_blobs: int = 3) -> np.ndarray:
    """Sum of 1..max_blobs isotropic Gaussian bumps per image, random per-channel amplitudes."""
    H, W, C = shape
    yy, xx = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")
    out = np.zeros((n, H, W, C))
    counts = rng.integers(1, max_blobs + 1, size=n)
    for i in range(n):
        for _ in range(counts[i]):
            cy, cx = rng.uniform(0, H), rng.uniform(0, W)
            width = rng.uniform(0.8, 2.5)
            bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width * width))
            out[i] += bump[:, :, None] * rng.normal(0, 1.5, size=C)[None, None, :]
    return out.astype(np.float32)


@dataclass
class PretrainResult:
    backbone: DiTBackbone
    losses: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


def _eval_loss(bb: DiTBackbone, images, t, eps, sched) -> float:
    with tn.no_grad():
        x_t = q_sample(images, t, eps, sched)
        out = bb.forward_image(x_t, t)
        pred = out.data[..., :images.shape[-1]]
    return float(np.mean((pred - eps) ** 2))


def frame_images(spec, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` single frames, each from an independent clip at a uniformly drawn frame index."""
    pair = sample_pairs(spec, n, rng)
    m = rng.integers(0, spec.video_shape[0], size=n)
    return pair.z_v[np.arange(n), m]


def pretrain_backbone(cfg: ModelConfig, seed: int, steps: int | None = None, batch: int = 32,
                      lr: float = 1e-3, frames=None) -> PretrainResult:
    """Train every backbone weight on image denoising, then apply the freeze partition.

    Images are frames of ``frames`` (a JointGaussianSpec) when given, blobs otherwise.
    """
    steps = cfg.pretrain_steps if steps is None else steps
    init = Init(seed)
    bb = DiTBackbone(init, cfg, scratch=True)
    params = list(bb.named_parameters())
    for _, p in params:
        p.requires_grad = True
    sched = make_linear_schedule(1000, 1e-4, 2e-2)
    rng = np.random.default_rng([seed, 7])
    shape = (cfg.video_height, cfg.video_width, cfg.video_channels)
    if frames is None:
        def images(n, r):
            return blob_images(n, shape, r)
    else:
        def images(n, r):
            return frame_images(frames, n, r)

    eval_rng = np.random.default_rng([seed, 8])
    ev_img = images(256, eval_rng)
    ev_t = eval_rng.integers(1, sched.T + 1, size=256)
    ev_eps = eval_rng.standard_normal(ev_img.shape).astype(np.float32)

    result = PretrainResult(bb)
    result.initial_loss = _eval_loss(bb, ev_img, ev_t, ev_eps, sched)
    opt = AdamW(params, lr=lr)
    for step in range(steps):
        imgs = images(batch, rng)
        t = rng.integers(1, sched.T + 1, size=batch)
        eps = rng.standard_normal(imgs.shape).astype(np.float32)
        x_t = q_sample(imgs, t, eps, sched)
        out = bb.forward_image(x_t, t)
        pred, _ = tn.split(out, [cfg.video_channels, cfg.video_channels], axis=-1)
        loss = tn.mse(pred, eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        result.losses.append(loss.item())
        if step % 500 == 0:
            log.info("pretrain step %d loss %.4f", step, loss.item())
    result.final_loss = _eval_loss(bb, ev_img, ev_t, ev_eps, sched)
    for _, p in params:
        p.requires_grad = p.trainable_by_rule
        p.grad = None
    log.info("pretrain done: eval loss %.4f -> %.4f", result.initial_loss, result.final_loss)
    return result


def pretrained_backbone(cfg: ModelConfig, seed: int, frames=None) -> DiTBackbone:
    """Cached per (backbone config, seed, image source); callers get an independent copy."""
    key = (cfg.backbone_key(), seed, None if frames is None else repr(frames))
    if key not in _CACHE:
        _CACHE[key] = pretrain_backbone(cfg, seed, frames=frames)
    return _CACHE[key].backbone.astype(np.float32)
