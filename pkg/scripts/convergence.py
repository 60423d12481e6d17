"""Train a preset and print the oracle-error curve, then sample and print moment statistics.

    python scripts/convergence.py [preset] [key=value ...] [--sample-steps N] [--n N]
"""

import argparse
import logging
import time

from avdit.config import load
from avdit.sampling import generate, sample_statistics
from avdit.trainer import lower_bound_check, train


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("preset", nargs="?", default="desk")
    ap.add_argument("overrides", nargs="*", help="dotted key=value overrides")
    ap.add_argument("--sample-steps", type=int, default=50)
    ap.add_argument("--n", type=int, default=2048)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load(args.preset).replace(**dict(o.split("=", 1) for o in args.overrides))
    start = time.perf_counter()
    res = train(cfg, out_dir=args.out)
    print(f"trained in {time.perf_counter() - start:.0f}s")
    for step, ev in res.report.evals.items():
        print(step, "  ".join(f"t={t} joint {v['joint']:.3f} video {v['video']:.3f} audio {v['audio']:.3f}"
                              for t, v in ev.items()))
    mean, bound, above = lower_bound_check(res.report, res.optimal_loss,
                                           min(1000, len(res.report.loss_total)))
    print(f"tail loss {mean:.4f}, optimum {res.optimal_loss:.4f}, optimum-3SE {bound:.4f}, above={above}")

    start = time.perf_counter()
    pair = generate(res.model, res.spec, res.schedule, args.n, args.sample_steps, seed=5)
    print(f"sampled {args.n} x {args.sample_steps} steps in {time.perf_counter() - start:.0f}s")
    for k, v in sample_statistics(res.spec, pair).items():
        print(f"{k} {v:.4f}")


if __name__ == "__main__":
    main()
