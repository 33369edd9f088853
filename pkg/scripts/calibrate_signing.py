"""Measure the signer's empirical acceptance rate against the 1/M floor for a few M values.

    python scripts/calibrate_signing.py --messages 3000
"""
import argparse

import numpy as np

from ngwn_sentinel import bliss_sig as bs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--messages", type=int, default=2000)
    ap.add_argument("--M", type=float, nargs="+", default=[1.5, 2.0, 3.0, 5.0])
    args = ap.parse_args()
    print(f"{'M':>5} {'kappa':>6} {'acceptance':>11} {'1/M':>7} {'mean attempts':>14}")
    for M in args.M:
        params = bs.SignParams(M=M)
        keys = bs.keygen(params, 1)
        rng = np.random.default_rng(1)
        attempts = [bs.sign_counted(keys, params, i.to_bytes(8, "little"), rng)[1]
                    for i in range(args.messages)]
        rate = args.messages / sum(attempts)
        print(f"{M:>5.2f} {params.challenge_bound:>6} {rate:>11.4f} {1 / M:>7.4f} {np.mean(attempts):>14.3f}")


if __name__ == "__main__":
    main()
