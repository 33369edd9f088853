"""Run a scenario with the honeypot feedback loop on and off and compare detection.

    python scripts/feedback_experiment.py --config scenarios/novel_family.cfg
"""
import argparse
from dataclasses import replace

from ngwn_sentinel import sim


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="scenarios/novel_family.cfg")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    base = sim.load_config(args.config)
    if args.seed is not None:
        base = replace(base, seed=args.seed)
    rows = {}
    for mode in (True, False):
        cfg = replace(base, feedback=mode)
        report = sim.run(sim.build_topology(cfg))
        rows["on" if mode else "off"] = report.row()
        print(f"feedback={'on' if mode else 'off'} wall={report.wall_time_s:.1f}s")
    keys = [k for k in rows["on"] if k.startswith("sids_rate_")] + [
        "novel_heldout_rate", "detection_rate", "accuracy", "retrains", "patterns_sealed"]
    width = max(map(len, keys))
    print(f"{'metric':<{width}}  {'on':>12}  {'off':>12}")
    for k in keys:
        print(f"{k:<{width}}  {rows['on'][k]:>12}  {rows['off'][k]:>12}")
    nov = base.novel_family
    if nov:
        on, off = rows["on"][f"sids_rate_{nov}"], rows["off"][f"sids_rate_{nov}"]
        if "NA" not in (on, off):
            print(f"{nov} SIDS gain: {100 * (float(on) - float(off)):.1f} pp")


if __name__ == "__main__":
    main()
