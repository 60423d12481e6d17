"""``avdit`` command line: train, sample, params, gradcheck, ablate.

Exit codes: 0 ok, 1 runtime failure, 2 config error, 3 gradcheck or invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import container
from .config import RunConfig, load, preset_names
from .diffusion import ConfigError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2, 3
REPORTED_XL2_TRAINABLE = 159.91e6

log = logging.getLogger("avdit")


class InvariantFailure(RuntimeError):
    pass


def _seeded(cfg: RunConfig, seed: int | None) -> RunConfig:
    """Shift the run seeds (init, data, timestep, noise, eval, sample) by ``seed``; task and backbone stay fixed."""
    if seed is None:
        return cfg
    keys = ("init", "data", "timestep", "noise", "eval", "sample")
    defaults = dataclasses.asdict(type(cfg.seed)())
    return cfg.replace(**{f"seed.{k}": defaults[k] + seed for k in keys})


def _resolve(args) -> RunConfig:
    cfg = _seeded(load(args.config), args.seed)
    if getattr(args, "steps", None) is not None and args.command in ("train", "ablate"):
        cfg = cfg.replace(**{"train.steps": args.steps})
    return cfg


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_text(path: Path, text: str) -> None:
    container.atomic_write(path, text.encode("utf-8"))


def cmd_train(args) -> int:
    from .trainer import TrainingAborted, lower_bound_check, train

    cfg = _resolve(args)
    out = _out(args, "runs/train")
    start = time.perf_counter()
    try:
        res = train(cfg, out_dir=out)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        if exc.checkpoint is not None:
            print(f"last good checkpoint: {exc.checkpoint}", file=sys.stderr)
        return EXIT_RUNTIME
    window = min(1000, len(res.report.loss_total))
    mean, bound, ok = lower_bound_check(res.report, res.optimal_loss, window) if window > 1 else (float("nan"),) * 2 + (True,)
    meta = {
        "config": cfg.to_dict(),
        "seeds": dataclasses.asdict(cfg.seed),
        "steps": len(res.report.steps),
        "optimal_expected_loss": res.optimal_loss,
        "tail_loss_mean": mean,
        "lower_bound": bound,
        "lower_bound_ok": bool(ok),
        "final_eval": {str(t): v for t, v in (res.report.last_eval() or {}).items()},
        "params": res.model.registry().counts(),
        "checkpoint_sha256": container.checksum(out / "checkpoint.avdt"),
        "wall_seconds": time.perf_counter() - start,
    }
    _write_text(out / "metadata.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'checkpoint.avdt'}, {out / 'metrics.csv'}, {out / 'metadata.json'}")
    for t, v in meta["final_eval"].items():
        print(f"t={t}: oracle error joint {v['joint']:.4f} video {v['video']:.4f} audio {v['audio']:.4f}")
    print(f"tail loss {mean:.5f}, optimal {res.optimal_loss:.5f}")
    if not ok:
        print("training loss fell below the analytic optimum minus 3 standard errors", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_sample(args) -> int:
    from .sampling import generate, moments_csv, sample_statistics
    from .trainer import load_checkpoint, make_schedule, make_spec

    if args.checkpoint is None:
        raise ConfigError("sample needs --checkpoint")
    model, cfg, _ = load_checkpoint(args.checkpoint)
    if args.config is not None and args.config != "desk":
        print("note: --config is ignored by sample; the checkpoint carries its config", file=sys.stderr)
    seed = cfg.seed.sample if args.seed is None else args.seed
    steps = cfg.schedule.sample_steps if args.steps is None else args.steps
    n = 2048 if args.n is None else args.n
    spec, s = make_spec(cfg), make_schedule(cfg)
    out = _out(args, "runs/sample")
    pair = generate(model, spec, s, n, steps, seed, learned_variance=cfg.model.variance == "learned")
    container.save(out / "latents.avdt", {"video": pair.z_v, "audio": pair.z_a,
                                          "meta/seed": np.array([seed], dtype=np.int64),
                                          "meta/steps": np.array([steps], dtype=np.int64)})
    _write_text(out / "moments.csv", moments_csv(spec, pair))
    stats = sample_statistics(spec, pair)
    print(f"wrote {n} pairs to {out / 'latents.avdt'} (sha256 {container.checksum(out / 'latents.avdt')})")
    print(f"covariance rel. Frobenius error {stats['cov_rel_frobenius']:.4f}, "
          f"cross-modal alignment {stats['cross_alignment']:.4f}")
    return EXIT_OK


def params_report(cfg: RunConfig, label: str = "") -> str:
    from .model import build_model

    reg = build_model(dataclasses.replace(cfg.model, backbone="random"), meta=True).registry()
    c = reg.counts()
    lines = [f"config: {label}" if label else "config:",
             f"total      {c['total']:>14,d}",
             f"frozen     {c['frozen']:>14,d}",
             f"trainable  {c['trainable']:>14,d}",
             f"trainable/total {c['trainable'] / c['total']:.4%}",
             "breakdown (trainable / frozen):"]
    for comp, row in sorted(reg.breakdown().items()):
        lines.append(f"  {comp:<22s} {row['trainable']:>13,d} {row['frozen']:>14,d}")
    if Path(label).stem.startswith("xl2-paper") and cfg.model.fusion_mode == "self":
        diff = c["trainable"] - REPORTED_XL2_TRAINABLE
        lines.append(f"reported trainable 159.91M; this build {c['trainable'] / 1e6:.2f}M "
                     f"({diff / 1e6:+.2f}M, {diff / REPORTED_XL2_TRAINABLE:+.1%}) -- reported, not asserted")
    return "\n".join(lines)


def cmd_params(args) -> int:
    cfg = _resolve(args)
    print(params_report(cfg, str(args.config)))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .trainer import gradcheck_suite

    cfg = _resolve(args)
    rows = gradcheck_suite(cfg, seed=0 if args.seed is None else args.seed)
    print(f"{'module':<16s} {'tensors':>7s} {'checked':>7s} {'max rel err':>12s}  status")
    for r in rows:
        print(f"{r.group:<16s} {r.params:>7d} {r.checked:>7d} {r.max_rel_err:>12.3e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r for r in rows if not r.passed]
    for r in failed:
        print(f"gradcheck failed in {r.group}: worst element {r.worst}", file=sys.stderr)
    return EXIT_INVARIANT if failed else EXIT_OK


def cmd_ablate(args) -> int:
    from .trainer import run_ablations

    cfg = _resolve(args)
    out = _out(args, "runs/ablate")
    rows = run_ablations(cfg, n_eval=512 if args.n is None else args.n)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    _write_text(out / "ablation.csv", buf.getvalue())
    print(buf.getvalue(), end="")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "sample": cmd_sample, "params": cmd_params,
            "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avdit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default="desk",
                        help=f"config file or preset name ({', '.join(preset_names())})")
        sp.add_argument("--checkpoint", default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--steps", type=int, default=None,
                        help="training steps (train, ablate) or sampling steps (sample)")
        sp.add_argument("--n", type=int, default=None, help="sample count (sample) or eval samples (ablate)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except container.VersionMismatch as exc:
        print(f"refusing to load: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except InvariantFailure as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (container.ContainerError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
