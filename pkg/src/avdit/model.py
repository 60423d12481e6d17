"""AV-DiT: a frozen image DiT shared by a video and an audio branch.

Inserted layers (temporal adapters, audio LoRA, audio bottleneck adapters,
fusion LoRA, audio patch embedder and decode head, residual gates) train;
backbone weight matrices stay frozen while every bias vector trains.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from . import tensor as tn
from .diffusion import ConfigError
from .nn import BACKBONE, NEW, Init, Linear, LoRA, Module, Parameter, project
from .tensor import Tensor

PROJECTIONS = ("q", "k", "v", "o")


BACKBONE_MODES = ("random", "blobs", "frames")


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    heads: int = 4
    depth: int = 4
    patch: int = 2
    frames: int = 4
    video_height: int = 8
    video_width: int = 8
    video_channels: int = 4
    audio_time: int = 8
    audio_freq: int = 4
    audio_channels: int = 4
    ratio_temporal: int = 8
    ratio_audio: int = 2
    ratio_fusion: int = 2
    mlp_ratio: int = 4
    freq_dim: int = 256
    variance: str = "fixed"  # fixed | learned
    fusion_mode: str = "self"  # self | cross
    backbone: str = "frames"  # random | blobs | frames
    pretrain_steps: int = 3000
    temporal_adapter: bool = True
    audio_lora: bool = True
    audio_ffn_adapter: bool = True
    fusion: bool = True
    fusion_lora: bool = True

    def __post_init__(self):
        D, h, p = self.hidden, self.heads, self.patch
        if D % h:
            raise ConfigError(f"hidden {D} not divisible by heads {h}")
        for name in ("video_height", "video_width", "audio_time", "audio_freq"):
            if getattr(self, name) % p:
                raise ConfigError(f"{name}={getattr(self, name)} not divisible by patch {p}")
        if D % (self.ratio_temporal * h):
            raise ConfigError(f"hidden {D} not divisible by ratio_temporal*heads = {self.ratio_temporal * h}")
        for name in ("ratio_audio", "ratio_fusion"):
            if D % getattr(self, name):
                raise ConfigError(f"hidden {D} not divisible by {name}={getattr(self, name)}")
        if self.variance not in ("fixed", "learned"):
            raise ConfigError(f"variance must be fixed|learned, got {self.variance!r}")
        if self.fusion_mode not in ("self", "cross"):
            raise ConfigError(f"fusion_mode must be self|cross, got {self.fusion_mode!r}")
        if self.backbone not in BACKBONE_MODES:
            raise ConfigError(f"backbone must be one of {'|'.join(BACKBONE_MODES)}, got {self.backbone!r}")
        if self.frames < 1 or self.depth < 1:
            raise ConfigError("frames and depth must be positive")

    @property
    def video_tokens(self) -> int:
        return (self.video_height // self.patch) * (self.video_width // self.patch)

    @property
    def audio_tokens(self) -> int:
        return (self.audio_time // self.patch) * (self.audio_freq // self.patch)

    @property
    def video_latent_shape(self) -> tuple[int, int, int, int]:
        return (self.frames, self.video_height, self.video_width, self.video_channels)

    @property
    def audio_latent_shape(self) -> tuple[int, int, int]:
        return (self.audio_time, self.audio_freq, self.audio_channels)

    def backbone_key(self) -> tuple:
        keep = ("hidden", "heads", "depth", "patch", "video_height", "video_width",
                "video_channels", "mlp_ratio", "freq_dim", "backbone", "pretrain_steps")
        return tuple((f.name, getattr(self, f.name)) for f in fields(self) if f.name in keep)


# ---------------------------------------------------------------------------
# fixed encodings


def _sincos_1d(dim: int, pos: np.ndarray) -> np.ndarray:
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = pos.reshape(-1)[:, None] * omega[None, :]
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


@lru_cache(maxsize=None)
def sincos_2d(dim: int, gh: int, gw: int) -> np.ndarray:
    """(gh*gw, dim) fixed positional encoding for a row-major patch grid."""
    ys, xs = np.meshgrid(np.arange(gh, dtype=np.float64), np.arange(gw, dtype=np.float64), indexing="ij")
    return np.concatenate([_sincos_1d(dim // 2, ys), _sincos_1d(dim // 2, xs)], axis=1)


@lru_cache(maxsize=None)
def sincos_frames(dim: int, frames: int) -> np.ndarray:
    return _sincos_1d(dim, np.arange(frames, dtype=np.float64))


def sinusoidal_time(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Interleaved (sin, cos) pairs: entry 2i is sin(t f_i), entry 2i+1 is cos(t f_i)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    out = np.zeros((t.size, dim))
    out[:, 0:2 * half:2] = np.sin(args)
    out[:, 1:2 * half:2] = np.cos(args)
    return out


# ---------------------------------------------------------------------------
# layout


def patchify_array(z: np.ndarray, p: int) -> np.ndarray:
    """(N, H, W, C) -> (N, H/p * W/p, p*p*C), patches in row-major grid order."""
    N, H, W, C = z.shape
    if H % p or W % p:
        raise ConfigError(f"latent {z.shape} not divisible by patch {p}")
    z = z.reshape(N, H // p, p, W // p, p, C).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(z).reshape(N, (H // p) * (W // p), p * p * C)


def unpatchify(x: Tensor, p: int, H: int, W: int) -> Tensor:
    N, L, PC = x.shape
    C = PC // (p * p)
    x = x.reshape(N, H // p, W // p, p, p, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(N, H, W, C)


def modulate(x: Tensor, shift, scale, eps: float = 1e-6) -> Tensor:
    return tn.add(tn.mul(tn.layer_norm(x, eps), tn.add(scale, 1.0)), shift)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Multi-head attention over (N, L, *) projections; q/k and v may differ in width."""
    N, Lq, dq = q.shape
    Lk = k.shape[1]
    dv = v.shape[2]
    if dq % heads or dv % heads:
        raise ConfigError(f"projected widths {dq}/{dv} not divisible by {heads} heads")
    qh = q.reshape(N, Lq, heads, dq // heads).permute(0, 2, 1, 3)
    kh = k.reshape(N, Lk, heads, dq // heads).permute(0, 2, 3, 1)
    vh = v.reshape(N, Lk, heads, dv // heads).permute(0, 2, 1, 3)
    scores = tn.scale(tn.matmul(qh, kh), 1.0 / np.sqrt(dq // heads))
    out = tn.matmul(tn.softmax_lastdim(scores), vh)
    return out.permute(0, 2, 1, 3).reshape(N, Lq, dv)


# ---------------------------------------------------------------------------
# backbone (image DiT)


class Attention(Module):
    def __init__(self, init: Init, d_model: int, heads: int, origin: str, stream: str, d_qk: int | None = None):
        d_qk = d_qk or d_model
        self.heads = heads
        self.q = Linear(init, d_model, d_qk, origin, stream)
        self.k = Linear(init, d_model, d_qk, origin, stream)
        self.v = Linear(init, d_model, d_model, origin, stream)
        self.o = Linear(init, d_model, d_model, origin, stream)

    def __call__(self, x: Tensor, lora: dict | None = None, context: Tensor | None = None) -> Tensor:
        lora = lora or {}
        ctx = x if context is None else context
        q = project(x, self.q, lora.get("q"))
        k = project(ctx, self.k, lora.get("k"))
        v = project(ctx, self.v, lora.get("v"))
        return project(attention(q, k, v, self.heads), self.o, lora.get("o"))


class MLP(Module):
    def __init__(self, init: Init, d_model: int, hidden: int, origin: str, stream: str):
        self.fc1 = Linear(init, d_model, hidden, origin, stream)
        self.fc2 = Linear(init, hidden, d_model, origin, stream)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(tn.gelu(self.fc1(x)))


class TimestepEmbedder(Module):
    def __init__(self, init: Init, cfg: ModelConfig, weight):
        self.freq_dim = cfg.freq_dim
        self.fc1 = Linear(init, cfg.freq_dim, cfg.hidden, BACKBONE, "backbone", weight=weight)
        self.fc2 = Linear(init, cfg.hidden, cfg.hidden, BACKBONE, "backbone", weight=weight)
        self._dtype = init.dtype

    def _on_cast(self, dtype):
        self._dtype = dtype

    def __call__(self, t: np.ndarray) -> Tensor:
        freq = Tensor(sinusoidal_time(t, self.freq_dim).astype(self._dtype))
        return self.fc2(tn.silu(self.fc1(freq)))


class DiTBlock(Module):
    """Image DiT block with adaLN modulation (shift, scale, gate) for each stage."""

    def __init__(self, init: Init, cfg: ModelConfig, mod_weight):
        D = cfg.hidden
        self.adaLN = Linear(init, D, 6 * D, BACKBONE, "backbone", weight=mod_weight)
        self.attn = Attention(init, D, cfg.heads, BACKBONE, "backbone")
        self.mlp = MLP(init, D, cfg.mlp_ratio * D, BACKBONE, "backbone")

    def modulation(self, c: Tensor) -> list[Tensor]:
        """Six (N, 1, D) tensors: shift/scale/gate for attention, then for the FFN."""
        N, D = c.shape
        mod = self.adaLN(tn.silu(c)).reshape(N, 1, 6 * D)
        return tn.split(mod, [D] * 6, axis=2)

    def __call__(self, x: Tensor, c: Tensor) -> Tensor:
        sh1, sc1, g1, sh2, sc2, g2 = self.modulation(c)
        x = tn.add(x, tn.mul(g1, self.attn(modulate(x, sh1, sc1))))
        return tn.add(x, tn.mul(g2, self.mlp(modulate(x, sh2, sc2))))


class DiTBackbone(Module):
    def __init__(self, init: Init, cfg: ModelConfig, scratch: bool = False):
        """``scratch=True`` uses from-scratch DiT init (zero modulation/head) ahead of pretraining."""
        D, p = cfg.hidden, cfg.patch
        mod_weight = "zeros" if scratch else "xavier"
        t_weight = 0.02 if scratch else "xavier"
        self.cfg = cfg
        self.x_embed = Linear(init, p * p * cfg.video_channels, D, BACKBONE, "backbone")
        self.t_embedder = TimestepEmbedder(init, cfg, t_weight)
        self.blocks = [DiTBlock(init, cfg, mod_weight) for _ in range(cfg.depth)]
        self.final_adaLN = Linear(init, D, 2 * D, BACKBONE, "backbone", weight=mod_weight)
        self.video_head = Linear(init, D, p * p * 2 * cfg.video_channels, BACKBONE, "backbone",
                                 weight="zeros" if scratch else "xavier")
        self._dtype = init.dtype

    def _on_cast(self, dtype):
        super()._on_cast(dtype)
        self._dtype = dtype

    def embed_frames(self, frames: np.ndarray) -> Tensor:
        """(N, H, W, c_v) latent frames -> (N, L_v, D) tokens with positional encoding."""
        cfg = self.cfg
        p = cfg.patch
        pos = sincos_2d(cfg.hidden, cfg.video_height // p, cfg.video_width // p).astype(self._dtype)
        return tn.add(self.x_embed(Tensor(patchify_array(frames, p))), pos)

    def final_modulation(self, c: Tensor) -> tuple[Tensor, Tensor]:
        N, D = c.shape
        mod = self.final_adaLN(tn.silu(c)).reshape(N, 1, 2 * D)
        shift, scale_ = tn.split(mod, [D, D], axis=2)
        return shift, scale_

    def forward_image(self, z: Tensor | np.ndarray, t: np.ndarray) -> Tensor:
        """Plain image DiT: (N, H, W, c) -> (N, H, W, 2c)."""
        cfg = self.cfg
        z = z.data if isinstance(z, Tensor) else z
        x = self.embed_frames(z)
        c = self.t_embedder(t)
        for blk in self.blocks:
            x = blk(x, c)
        shift, scale_ = self.final_modulation(c)
        out = self.video_head(modulate(x, shift, scale_))
        return unpatchify(out, cfg.patch, cfg.video_height, cfg.video_width)


# ---------------------------------------------------------------------------
# inserted layers


class TemporalAdapter(Module):
    """Attention across frames with compressed query/key width and a zero-initialized gate."""

    def __init__(self, init: Init, cfg: ModelConfig, stream: str):
        D = cfg.hidden
        self.attn = Attention(init, D, cfg.heads, NEW, stream, d_qk=D // cfg.ratio_temporal)
        self.gate = Parameter(init.zeros((1,)), NEW)
        self._dtype = init.dtype

    def _on_cast(self, dtype):
        self._dtype = dtype

    def __call__(self, x_v: Tensor, shift: Tensor, scale_: Tensor, batch: int) -> Tensor:
        BM, L, D = x_v.shape
        M = BM // batch
        h = modulate(x_v.reshape(batch, M * L, D), shift, scale_)
        h = h.reshape(batch, M, L, D).permute(0, 2, 1, 3).reshape(batch * L, M, D)
        h = tn.add(h, sincos_frames(D, M).astype(self._dtype))
        a = self.attn(h)
        a = a.reshape(batch, L, M, D).permute(0, 2, 1, 3).reshape(BM, L, D)
        return tn.add(x_v, tn.mul(self.gate, a))


class BottleneckAdapter(Module):
    """down -> GELU -> up, parallel to the frozen FFN; ``up`` starts at zero."""

    def __init__(self, init: Init, cfg: ModelConfig, stream: str):
        D = cfg.hidden
        r = D // cfg.ratio_audio
        self.down = Linear(init, D, r, NEW, stream)
        self.up = Linear(init, r, D, NEW, stream, weight="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return self.up(tn.gelu(self.down(x)))


def lora_set(init: Init, D: int, rank: int, stream: str) -> dict[str, LoRA]:
    return {name: LoRA(init, D, D, rank, stream) for name in PROJECTIONS}


class SelfAttentionFusion(Module):
    """Joint attention over frame-pooled video tokens and audio tokens via the frozen MHSA."""

    def __init__(self, init: Init, cfg: ModelConfig, stream: str, with_lora: bool):
        D = cfg.hidden
        self.lora = lora_set(init, D, D // cfg.ratio_fusion, stream) if with_lora else None
        self.gate_v = Parameter(init.zeros((1,)), NEW)
        self.gate_a = Parameter(init.zeros((1,)), NEW)

    def __call__(self, x_v: Tensor, x_a: Tensor, attn: Attention, batch: int) -> tuple[Tensor, Tensor]:
        BM, Lv, D = x_v.shape
        if BM % batch or x_a.shape[0] != batch:
            raise tn.ShapeError(f"fusion batch mismatch: video {x_v.shape}, audio {x_a.shape}, B={batch}")
        M = BM // batch
        La = x_a.shape[1]
        frames = x_v.reshape(batch, M, Lv, D)
        pooled = tn.mean(frames, axis=1)
        joint = tn.concat([pooled, x_a], axis=1)
        out = attn(tn.layer_norm(joint), lora=self.lora)
        r_v, r_a = tn.split(out, [Lv, La], axis=1)
        x_v = tn.add(frames, tn.mul(self.gate_v, r_v.reshape(batch, 1, Lv, D))).reshape(BM, Lv, D)
        x_a = tn.add(x_a, tn.mul(self.gate_a, r_a))
        return x_v, x_a


class CrossAttentionFusion(Module):
    """Two new cross-attention blocks: video queries audio, audio queries video."""

    def __init__(self, init: Init, cfg: ModelConfig, stream: str):
        D = cfg.hidden
        self.video_from_audio = Attention(init, D, cfg.heads, NEW, stream)
        self.audio_from_video = Attention(init, D, cfg.heads, NEW, stream)
        self.gate_v = Parameter(init.zeros((1,)), NEW)
        self.gate_a = Parameter(init.zeros((1,)), NEW)

    def __call__(self, x_v: Tensor, x_a: Tensor, attn: Attention, batch: int) -> tuple[Tensor, Tensor]:
        BM, Lv, D = x_v.shape
        if BM % batch or x_a.shape[0] != batch:
            raise tn.ShapeError(f"fusion batch mismatch: video {x_v.shape}, audio {x_a.shape}, B={batch}")
        M = BM // batch
        v_all = tn.layer_norm(x_v.reshape(batch, M * Lv, D))
        a_n = tn.layer_norm(x_a)
        r_v = self.video_from_audio(v_all, context=a_n)
        r_a = self.audio_from_video(a_n, context=v_all)
        x_v = tn.add(x_v.reshape(batch, M * Lv, D), tn.mul(self.gate_v, r_v)).reshape(BM, Lv, D)
        x_a = tn.add(x_a, tn.mul(self.gate_a, r_a))
        return x_v, x_a


class AVDiTBlock(Module):
    """One frozen DiT block driving both branches, plus this block's inserted layers."""

    def __init__(self, init: Init, cfg: ModelConfig, dit: DiTBlock, index: int):
        D = cfg.hidden
        s = f"block{index}"
        self._dit = dit
        self.temporal = TemporalAdapter(init, cfg, s + ".temporal") if cfg.temporal_adapter else None
        self.audio_lora = lora_set(init, D, D // cfg.ratio_audio, s + ".audio_lora") if cfg.audio_lora else None
        self.audio_adapter = BottleneckAdapter(init, cfg, s + ".audio_adapter") if cfg.audio_ffn_adapter else None
        if not cfg.fusion:
            self.fusion = None
        elif cfg.fusion_mode == "cross":
            self.fusion = CrossAttentionFusion(init, cfg, s + ".fusion")
        else:
            self.fusion = SelfAttentionFusion(init, cfg, s + ".fusion", cfg.fusion_lora)

    @property
    def dit(self) -> DiTBlock:
        return self._dit

    def __call__(self, x_v: Tensor, x_a: Tensor, c: Tensor, batch: int) -> tuple[Tensor, Tensor]:
        dit = self._dit
        BM, Lv, D = x_v.shape
        M = BM // batch
        sh1, sc1, g1, sh2, sc2, g2 = dit.modulation(c)

        h_v = modulate(x_v.reshape(batch, M * Lv, D), sh1, sc1).reshape(BM, Lv, D)
        a_v = dit.attn(h_v).reshape(batch, M * Lv, D)
        x_v = tn.add(x_v, tn.mul(g1, a_v).reshape(BM, Lv, D))
        x_a = tn.add(x_a, tn.mul(g1, dit.attn(modulate(x_a, sh1, sc1), lora=self.audio_lora)))

        if self.temporal is not None:
            x_v = self.temporal(x_v, sh1, sc1, batch)
        if self.fusion is not None:
            x_v, x_a = self.fusion(x_v, x_a, dit.attn, batch)

        h_v = modulate(x_v.reshape(batch, M * Lv, D), sh2, sc2)
        x_v = tn.add(x_v, tn.mul(g2, dit.mlp(h_v)).reshape(BM, Lv, D))
        h_a = modulate(x_a, sh2, sc2)
        f_a = dit.mlp(h_a)
        if self.audio_adapter is not None:
            f_a = tn.add(f_a, self.audio_adapter(h_a))
        x_a = tn.add(x_a, tn.mul(g2, f_a))
        return x_v, x_a


class AVDiT(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, meta: bool = False, dtype=np.float32,
                 backbone: DiTBackbone | None = None):
        init = Init(seed, meta=meta, dtype=dtype)
        D, p = cfg.hidden, cfg.patch
        self.cfg = cfg
        self.backbone = backbone if backbone is not None else DiTBackbone(init, cfg)
        self.audio_embed = Linear(init, p * p * cfg.audio_channels, D, NEW, "audio_embed")
        self.blocks = [AVDiTBlock(init, cfg, dit, i) for i, dit in enumerate(self.backbone.blocks)]
        self.audio_head = Linear(init, D, p * p * 2 * cfg.audio_channels, NEW, "audio_head", weight="zeros")
        self._dtype = dtype

    def _on_cast(self, dtype):
        super()._on_cast(dtype)
        # blocks hold a private reference to the backbone blocks; re-point after the deep copy
        for blk, dit in zip(self.blocks, self.backbone.blocks):
            blk._dit = dit
        self._dtype = dtype

    @property
    def dtype(self):
        return self._dtype

    def embed(self, z_v: np.ndarray, z_a: np.ndarray) -> tuple[Tensor, Tensor]:
        cfg = self.cfg
        B, M = z_v.shape[:2]
        x_v = self.backbone.embed_frames(z_v.reshape((B * M,) + z_v.shape[2:]))
        pos_a = sincos_2d(cfg.hidden, cfg.audio_time // cfg.patch, cfg.audio_freq // cfg.patch)
        x_a = tn.add(self.audio_embed(Tensor(patchify_array(z_a, cfg.patch))), pos_a.astype(self._dtype))
        return x_v, x_a

    def decode(self, x_v: Tensor, x_a: Tensor, c: Tensor, batch: int) -> tuple[Tensor, Tensor]:
        cfg = self.cfg
        BM, Lv, D = x_v.shape
        M = BM // batch
        shift, scale_ = self.backbone.final_modulation(c)
        o_v = self.backbone.video_head(modulate(x_v.reshape(batch, M * Lv, D), shift, scale_))
        o_v = unpatchify(o_v.reshape(BM, Lv, o_v.shape[-1]), cfg.patch, cfg.video_height, cfg.video_width)
        o_v = o_v.reshape(batch, M, cfg.video_height, cfg.video_width, 2 * cfg.video_channels)
        o_a = self.audio_head(modulate(x_a, shift, scale_))
        o_a = unpatchify(o_a, cfg.patch, cfg.audio_time, cfg.audio_freq)
        return o_v, o_a

    def __call__(self, z_v, z_a, t) -> tuple[Tensor, Tensor]:
        z_v = z_v.data if isinstance(z_v, Tensor) else np.asarray(z_v)
        z_a = z_a.data if isinstance(z_a, Tensor) else np.asarray(z_a)
        z_v = z_v.astype(self._dtype, copy=False)
        z_a = z_a.astype(self._dtype, copy=False)
        B = z_v.shape[0]
        t = np.broadcast_to(np.asarray(t), (B,))
        c = self.backbone.t_embedder(t)
        x_v, x_a = self.embed(z_v, z_a)
        for blk in self.blocks:
            x_v, x_a = blk(x_v, x_a, c, B)
        return self.decode(x_v, x_a, c, B)

    def registry(self) -> "ParamRegistry":
        return ParamRegistry.from_module(self)


# ---------------------------------------------------------------------------
# parameter registry


class IntegrityError(RuntimeError):
    pass


@dataclass
class ParamEntry:
    name: str
    param: Parameter

    @property
    def tag(self) -> str:
        return self.param.tag

    @property
    def size(self) -> int:
        return int(np.prod(self.param.shape))


class ParamRegistry:
    """Named parameters with their frozen/trainable partition."""

    def __init__(self, entries: list[ParamEntry]):
        self.entries = entries
        self.check()

    @classmethod
    def from_module(cls, module: Module) -> "ParamRegistry":
        return cls([ParamEntry(n, p) for n, p in module.named_parameters()])

    def check(self) -> None:
        for e in self.entries:
            p = e.param
            if not isinstance(p, Parameter) or p.tag not in ("frozen", "trainable"):
                raise IntegrityError(f"parameter {e.name} carries no frozen/trainable tag")
            if p.requires_grad != p.trainable_by_rule:
                raise IntegrityError(f"parameter {e.name} tagged {p.tag} against the partition rule")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def trainable(self) -> list[ParamEntry]:
        return [e for e in self.entries if e.tag == "trainable"]

    def frozen(self) -> list[ParamEntry]:
        return [e for e in self.entries if e.tag == "frozen"]

    def counts(self) -> dict[str, int]:
        tr = sum(e.size for e in self.trainable())
        fr = sum(e.size for e in self.frozen())
        return {"trainable": tr, "frozen": fr, "total": tr + fr}

    def breakdown(self) -> dict[str, dict[str, int]]:
        """Counts grouped by component (bias vectors of the backbone reported separately)."""
        out: dict[str, dict[str, int]] = {}
        for e in self.entries:
            comp = component_of(e.name, e.param)
            row = out.setdefault(comp, {"trainable": 0, "frozen": 0})
            row[e.tag] += e.size
        return out


def component_of(name: str, p: Parameter) -> str:
    parts = name.split(".")
    if parts[0] == "backbone":
        return "backbone.bias" if p.is_bias else "backbone.weight"
    if parts[0] == "blocks":
        return parts[2]
    return parts[0]


# ---------------------------------------------------------------------------
# construction


def build_model(cfg: ModelConfig, seed: int = 0, pretrain_seed: int | None = None, meta: bool = False,
                dtype=np.float32, frames=None) -> AVDiT:
    """Build AV-DiT around its stand-in frozen backbone.

    ``cfg.backbone`` picks the backbone: seeded random weights, or a DiT pretrained on
    Gaussian-blob images (``blobs``) or on single frames of ``frames`` (a
    :class:`JointGaussianSpec`) treated as independent images.
    """
    if meta or cfg.backbone == "random":
        return AVDiT(cfg, seed=seed, meta=meta, dtype=dtype)
    from .pretrain import pretrained_backbone

    if cfg.backbone == "frames" and frames is None:
        raise ConfigError("the frames backbone needs the data spec (frames=...)")
    backbone = pretrained_backbone(cfg, seed if pretrain_seed is None else pretrain_seed,
                                   frames if cfg.backbone == "frames" else None)
    return AVDiT(cfg, seed=seed, dtype=dtype, backbone=backbone)
