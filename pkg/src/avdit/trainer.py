"""Training loop, oracle evaluation, gradient checks and ablation runs."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from . import tensor as tn
from .config import RunConfig, serialize
from .data import JointGaussianSpec, analytic_eps, optimal_expected_loss, sample_pairs
from .diffusion import (LatentPair, NoiseSchedule, NonFiniteLossError, joint_training_loss,
                        make_linear_schedule, q_sample)
from .model import AVDiT, build_model
from .nn import NEW, Parameter
from .optim import AdamW, NonFiniteGradError

log = logging.getLogger(__name__)

ABLATIONS: dict[str, dict[str, object]] = {
    "full": {},
    "no_temporal_adapter": {"ablation.temporal_adapter": False},
    "no_audio_ffn_adapter": {"ablation.audio_ffn_adapter": False},
    "no_audio_lora": {"ablation.audio_lora": False},
    "no_audio_lora_and_adapter": {"ablation.audio_lora": False, "ablation.audio_ffn_adapter": False},
    "no_fusion": {"ablation.fusion": False},
    "no_fusion_lora": {"ablation.fusion_lora": False},
}


def make_schedule(cfg: RunConfig) -> NoiseSchedule:
    s = cfg.schedule
    return make_linear_schedule(s.steps, s.beta_start, s.beta_end)


def make_spec(cfg: RunConfig) -> JointGaussianSpec:
    m, d = cfg.model, cfg.data
    return JointGaussianSpec(
        video_shape=m.video_latent_shape,
        audio_shape=m.audio_latent_shape,
        factors=d.factors,
        sigma_v=d.sigma_video,
        sigma_a=d.sigma_audio,
        trajectory_scale=d.trajectory_scale,
        layout=d.layout,
        patch=m.patch,
        seed=cfg.seed.spec,
    )


# ---------------------------------------------------------------------------
# oracle evaluation


def predict_eps(model, x_t: LatentPair, t: np.ndarray, batch: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Noise channels of the model output, evaluated without a tape in chunks."""
    outs_v, outs_a = [], []
    n = x_t.batch
    with tn.no_grad():
        for i in range(0, n, batch):
            sl = slice(i, i + batch)
            o_v, o_a = model(tn.Tensor(x_t.z_v[sl]), tn.Tensor(x_t.z_a[sl]), t[sl])
            outs_v.append(o_v.data[..., :x_t.z_v.shape[-1]])
            outs_a.append(o_a.data[..., :x_t.z_a.shape[-1]])
    return np.concatenate(outs_v), np.concatenate(outs_a)


class AnalyticDenoiser:
    """The closed-form optimal noise predictor, shaped like a model (variance channels zero)."""

    def __init__(self, spec: JointGaussianSpec, s: NoiseSchedule):
        self.spec = spec
        self.s = s

    def __call__(self, z_v, z_a, t):
        z_v = z_v.data if isinstance(z_v, tn.Tensor) else z_v
        z_a = z_a.data if isinstance(z_a, tn.Tensor) else z_a
        x = self.spec.flatten(z_v, z_a)
        eps = analytic_eps(x, t, self.spec, self.s)
        e_v, e_a = self.spec.unflatten(eps.astype(z_v.dtype))
        return (tn.Tensor(np.concatenate([e_v, np.zeros_like(e_v)], axis=-1)),
                tn.Tensor(np.concatenate([e_a, np.zeros_like(e_a)], axis=-1)))


def _rel(err: np.ndarray, ref: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(err, axis=1) / np.linalg.norm(ref, axis=1)))


def evaluate_against_oracle(model, spec: JointGaussianSpec, s: NoiseSchedule, t_list, n: int = 256,
                            rng: np.random.Generator | None = None) -> dict[int, dict[str, float]]:
    """Mean relative L2 error of predicted noise against the closed-form optimum, per timestep."""
    rng = rng if rng is not None else np.random.default_rng(0)
    out: dict[int, dict[str, float]] = {}
    for t in t_list:
        x0 = sample_pairs(spec, n, rng)
        ts = np.full(n, int(t))
        x_v = q_sample(x0.z_v, ts, rng.standard_normal(x0.z_v.shape).astype(np.float32), s)
        x_a = q_sample(x0.z_a, ts, rng.standard_normal(x0.z_a.shape).astype(np.float32), s)
        pair = LatentPair(x_v, x_a, ts)
        e_v, e_a = predict_eps(model, pair, s.timesteps[ts - 1])
        pred = spec.flatten(e_v, e_a).astype(np.float64)
        star = analytic_eps(spec.flatten(x_v, x_a), ts, spec, s)
        d = pred - star
        nv = spec.video_dim
        out[int(t)] = {
            "joint": _rel(d, star),
            "video": _rel(d[:, :nv], star[:, :nv]),
            "audio": _rel(d[:, nv:], star[:, nv:]),
        }
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainReport:
    eval_timesteps: list[int]
    steps: list[int] = field(default_factory=list)
    loss_total: list[float] = field(default_factory=list)
    loss_video: list[float] = field(default_factory=list)
    loss_audio: list[float] = field(default_factory=list)
    nan: list[bool] = field(default_factory=list)
    wall: list[float] = field(default_factory=list)
    evals: dict[int, dict[int, dict[str, float]]] = field(default_factory=dict)

    def append(self, step: int, total: float, video: float, audio: float, wall: float) -> None:
        self.steps.append(step)
        self.loss_total.append(total)
        self.loss_video.append(video)
        self.loss_audio.append(audio)
        self.nan.append(not np.isfinite(total))
        self.wall.append(wall)

    def columns(self) -> list[str]:
        cols = ["step", "loss_total", "loss_v", "loss_a"]
        for t in self.eval_timesteps:
            cols += [f"err_joint_t{t}", f"err_video_t{t}", f"err_audio_t{t}"]
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for i, step in enumerate(self.steps):
            row = [step, repr(self.loss_total[i]), repr(self.loss_video[i]), repr(self.loss_audio[i])]
            ev = self.evals.get(step)
            for t in self.eval_timesteps:
                if ev is None:
                    row += ["", "", ""]
                else:
                    row += [repr(ev[t]["joint"]), repr(ev[t]["video"]), repr(ev[t]["audio"])]
            w.writerow(row)
        return buf.getvalue()

    def last_eval(self) -> dict[int, dict[str, float]] | None:
        if not self.evals:
            return None
        return self.evals[max(self.evals)]


@dataclass
class TrainResult:
    report: TrainReport
    model: AVDiT
    optimizer: AdamW
    spec: JointGaussianSpec
    schedule: NoiseSchedule
    optimal_loss: float


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint


def checkpoint_tensors(model: AVDiT, cfg: RunConfig, step: int) -> dict[str, np.ndarray]:
    tensors = {f"param/{name}": np.asarray(p.data, dtype=np.float32) for name, p in model.named_parameters()}
    tensors["meta/config"] = container.text_entry(serialize(cfg))
    tensors["meta/step"] = np.array([step], dtype=np.int64)
    return tensors


def save_checkpoint(path: Path, model: AVDiT, cfg: RunConfig, step: int) -> None:
    container.save(path, checkpoint_tensors(model, cfg, step))


def load_checkpoint(path: str | Path) -> tuple[AVDiT, RunConfig, int]:
    from .config import parse

    entries = container.load(path)
    cfg = parse(container.entry_text(entries["meta/config"]))
    model = AVDiT(cfg.model, seed=cfg.seed.init)
    model.load_state_dict({k[len("param/"):]: v for k, v in entries.items() if k.startswith("param/")})
    return model, cfg, int(entries["meta/step"][0])


def train(cfg: RunConfig, out_dir: str | Path | None = None, model: AVDiT | None = None,
          steps: int | None = None) -> TrainResult:
    """Minimize the joint noise-prediction loss over the trainable partition (deterministic given seeds)."""
    steps = cfg.train.steps if steps is None else steps
    tc = cfg.train
    s = make_schedule(cfg)
    spec = make_spec(cfg)
    if model is None:
        model = build_model(cfg.model, seed=cfg.seed.init, pretrain_seed=cfg.seed.pretrain, frames=spec)
    opt = AdamW(list(model.named_parameters()), lr=tc.lr, betas=(tc.beta1, tc.beta2), eps=tc.eps,
                weight_decay=tc.weight_decay)
    data_rng = np.random.default_rng(cfg.seed.data)
    t_rng = np.random.default_rng(cfg.seed.timestep)
    noise_rng = np.random.default_rng(cfg.seed.noise)
    report = TrainReport(tc.timesteps())
    out = Path(out_dir) if out_dir is not None else None
    learned = cfg.model.variance == "learned"
    start = time.perf_counter()

    def run_eval(step):
        rng = np.random.default_rng([cfg.seed.eval, step])
        report.evals[step] = evaluate_against_oracle(model, spec, s, report.eval_timesteps, tc.eval_samples, rng)
        summary = ", ".join(f"t{t}={v['joint']:.3f}" for t, v in report.evals[step].items())
        log.info("step %d oracle error %s", step, summary)

    last_good = {n: p.data.copy() for n, p in opt.params}
    for step in range(steps):
        batch = sample_pairs(spec, tc.batch, data_rng)
        t = t_rng.integers(1, s.T + 1, size=tc.batch)
        eps_v = noise_rng.standard_normal(batch.z_v.shape).astype(np.float32)
        eps_a = noise_rng.standard_normal(batch.z_a.shape).astype(np.float32)
        try:
            terms = joint_training_loss(model, batch, t, eps_v, eps_a, s, learned_variance=learned)
            opt.zero_grad()
            terms.total.backward()
            opt.step()
        except (NonFiniteLossError, NonFiniteGradError) as exc:
            ck = None
            if out is not None:
                for n, p in opt.params:
                    p.data[...] = last_good[n]
                ck = out / "last_good.avdt"
                save_checkpoint(ck, model, cfg, step)
            raise TrainingAborted(f"step {step}: {exc}", ck) from exc
        for n, p in opt.params:
            np.copyto(last_good[n], p.data)
        report.append(step, terms.total.item(), terms.video.item(), terms.audio.item(),
                      time.perf_counter() - start)
        if tc.eval_every and (step % tc.eval_every == 0 or step == steps - 1):
            run_eval(step)
        if out is not None and tc.checkpoint_every and step and step % tc.checkpoint_every == 0:
            save_checkpoint(out / "checkpoint.avdt", model, cfg, step)
        if step % 500 == 0:
            log.info("step %d loss %.4f (video %.4f, audio %.4f)", step, terms.total.item(),
                     terms.video.item(), terms.audio.item())
    if tc.eval_every and steps and (steps - 1) not in report.evals:
        run_eval(steps - 1)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.avdt", model, cfg, steps)
        container.atomic_write(out / "metrics.csv", report.to_csv().encode())
    return TrainResult(report, model, opt, spec, s, optimal_expected_loss(spec, s))


def smoothed(values: list[float], window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        return np.array([v.mean()])
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window


def lower_bound_check(report: TrainReport, optimal: float, window: int = 1000) -> tuple[float, float, bool]:
    """Mean loss over the last ``window`` steps against ``optimal - 3 * standard error``."""
    tail = np.asarray(report.loss_total[-window:], dtype=np.float64)
    mean = float(tail.mean())
    se = float(tail.std(ddof=1) / np.sqrt(tail.size))
    bound = optimal - 3.0 * se
    return mean, bound, mean >= bound


# ---------------------------------------------------------------------------
# gradient checks


GRADCHECK_GROUPS = ("temporal", "temporal_gate", "audio_lora", "audio_adapter", "fusion_lora", "fusion_gate",
                    "cross_fusion", "audio_embed", "audio_head", "bias")


def group_of(name: str, p: Parameter) -> str | None:
    """Gradcheck group for a trainable parameter; ``None`` for frozen weights."""
    if not p.requires_grad:
        return None
    parts = name.split(".")
    if parts[0] in ("audio_embed", "audio_head"):
        return parts[0]
    if parts[0] == "blocks":
        sub = parts[2]
        if sub == "temporal":
            return "temporal_gate" if parts[-1] == "gate" else "temporal"
        if sub == "fusion":
            if parts[-1] in ("gate_v", "gate_a"):
                return "fusion_gate"
            return "fusion_lora" if parts[3] == "lora" else "cross_fusion"
        return sub
    if p.is_bias:
        return "bias"
    raise KeyError(f"no gradcheck group for {name}")


@dataclass
class GradcheckRow:
    group: str
    params: int
    checked: int
    max_rel_err: float
    worst: str
    passed: bool


def _activate_zero_paths(model: AVDiT, rng: np.random.Generator) -> None:
    """Give every zero-initialized inserted parameter a small random value so each path carries gradient."""
    for name, p in model.named_parameters():
        if p.origin == NEW and not np.any(p.data):
            p.data[...] = rng.normal(0.0, 0.1, size=p.shape)


def gradcheck_suite(cfg: RunConfig, threshold: float = 1e-4, h: float = 1e-5, per_tensor: int = 3,
                    batch: int = 2, seed: int = 0, delta: float = 1e-6,
                    model: AVDiT | None = None) -> list[GradcheckRow]:
    """Autodiff vs central differences (float64) on the joint loss, grouped by trainable submodule."""
    base = model if model is not None else build_model(cfg.model, seed=cfg.seed.init, pretrain_seed=cfg.seed.pretrain,
                                                        frames=make_spec(cfg))
    m = base.astype(np.float64)
    rng = np.random.default_rng(seed)
    _activate_zero_paths(m, rng)
    s = make_schedule(cfg)
    spec = make_spec(cfg)
    pair = sample_pairs(spec, batch, rng, dtype=np.float64)
    t = rng.integers(1, s.T + 1, size=batch)
    eps_v = rng.standard_normal(pair.z_v.shape)
    eps_a = rng.standard_normal(pair.z_a.shape)
    learned = cfg.model.variance == "learned"

    def f():
        with tn.no_grad():
            return joint_training_loss(m, pair, t, eps_v, eps_a, s, learned).total.item()

    m.zero_grad()
    joint_training_loss(m, pair, t, eps_v, eps_a, s, learned).total.backward()

    groups: dict[str, list[tuple[str, Parameter]]] = {}
    for name, p in m.named_parameters():
        g = group_of(name, p)
        if g is not None:
            groups.setdefault(g, []).append((name, p))

    rows = []
    for g in GRADCHECK_GROUPS:
        if g not in groups:
            continue
        worst, worst_at, checked = 0.0, "", 0
        for name, p in groups[g]:
            flat = rng.choice(p.size, size=min(per_tensor, p.size), replace=False)
            idx = [np.unravel_index(i, p.shape) for i in flat]
            fd = finite = tn.finite_diff_grad(f, p, h, idx)
            auto = p.grad if p.grad is not None else np.zeros(p.shape)
            for ix in idx:
                err = float(tn.relative_error(auto[ix], finite[ix], delta))
                checked += 1
                if err > worst or not np.isfinite(err):
                    worst, worst_at = err, f"{name}[{','.join(map(str, ix))}] auto={auto[ix]:.6e} fd={fd[ix]:.6e}"
        rows.append(GradcheckRow(g, len(groups[g]), checked, worst, worst_at, bool(worst < threshold)))
    return rows


# ---------------------------------------------------------------------------
# ablations


def ablation_config(cfg: RunConfig, variant: str) -> RunConfig:
    return cfg.replace(**ABLATIONS[variant])


def run_ablations(cfg: RunConfig, variants=None, steps: int | None = None,
                  t_list=None, n_eval: int = 512) -> list[dict[str, object]]:
    variants = list(ABLATIONS) if variants is None else list(variants)
    t_list = cfg.train.timesteps() if t_list is None else t_list
    rows = []
    for name in variants:
        vcfg = ablation_config(cfg, name).replace(**{"train.eval_every": 0})
        res = train(vcfg, steps=steps)
        ev = evaluate_against_oracle(res.model, res.spec, res.schedule, t_list, n_eval,
                                     np.random.default_rng([cfg.seed.eval, 99]))
        counts = res.model.registry().counts()
        rows.append({
            "variant": name,
            "trainable_params": counts["trainable"],
            "video_err": float(np.mean([ev[t]["video"] for t in t_list])),
            "audio_err": float(np.mean([ev[t]["audio"] for t in t_list])),
            "joint_err": float(np.mean([ev[t]["joint"] for t in t_list])),
            "final_loss": float(np.mean(res.report.loss_total[-200:])),
        })
        log.info("ablation %s: %s", name, rows[-1])
    return rows
