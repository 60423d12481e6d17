"""Run the ablation grid on a preset and print a table of oracle errors.

    python scripts/ablations.py [preset] [--steps N] [--variants a,b,c]
"""

import argparse
import logging

from avdit.config import load
from avdit.trainer import ABLATIONS, run_ablations


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("preset", nargs="?", default="desk")
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--variants", default=",".join(ABLATIONS))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    rows = run_ablations(load(args.preset), args.variants.split(","), steps=args.steps, n_eval=args.n)
    print(f"{'variant':32s} {'trainable':>10s} {'video':>8s} {'audio':>8s} {'joint':>8s}")
    for r in rows:
        print(f"{r['variant']:32s} {r['trainable_params']:>10,d} {r['video_err']:8.4f} "
              f"{r['audio_err']:8.4f} {r['joint_err']:8.4f}")


if __name__ == "__main__":
    main()
