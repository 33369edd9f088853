"""Run one scenario over consecutive seeds and summarize the spread of key metrics.

    python scripts/seed_sweep.py --config scenarios/quick.cfg --seeds 10
"""
import argparse
from dataclasses import replace

import numpy as np

from ngwn_sentinel import sim

METRICS = ("accuracy", "detection_rate", "fpr", "auc", "novel_heldout_rate")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="scenarios/quick.cfg")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--feedback", choices=("on", "off"), default=None)
    args = ap.parse_args()
    base = sim.load_config(args.config)
    if args.feedback:
        base = replace(base, feedback=args.feedback == "on")
    values: dict[str, list[float]] = {m: [] for m in METRICS}
    for k in range(args.seeds):
        row = sim.run(sim.build_topology(replace(base, seed=base.seed + k))).row()
        print(f"seed={base.seed + k} " + " ".join(f"{m}={row[m]}" for m in METRICS))
        for m in METRICS:
            if row[m] != "NA":
                values[m].append(float(row[m]))
    for m, v in values.items():
        if v:
            print(f"{m:<20} mean={np.mean(v):.4f} std={np.std(v, ddof=1) if len(v) > 1 else 0.0:.4f} n={len(v)}")
        else:
            print(f"{m:<20} NA")


if __name__ == "__main__":
    main()
