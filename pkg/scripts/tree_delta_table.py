"""Tabulate the node-count factor and the resulting tree-count change over a small grid.

    python scripts/tree_delta_table.py --Z 10 50 200 --g 5 --P 0.98
"""
import argparse

from ngwn_sentinel.sids_irf import GrowthState, node_factor, tree_delta


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--Z", type=int, nargs="+", default=[10, 50, 200])
    ap.add_argument("--M", type=float, nargs="+", default=[1.0, 3.0, 10.0, 30.0])
    ap.add_argument("--P", type=float, default=0.5)
    ap.add_argument("--g", type=int, default=5)
    ap.add_argument("--dh", type=int, default=1)
    ap.add_argument("--dg", type=int, default=-3)
    args = ap.parse_args()
    print(f"{'Z':>5} {'M_av':>6} {'l':>12} {'dZ':>5}")
    for Z in args.Z:
        for M in args.M:
            st = GrowthState(P=args.P, M_av=M, dh=args.dh, dg=args.dg)
            print(f"{Z:>5} {M:>6.1f} {node_factor(Z, M, args.P):>12.5g} {tree_delta(st, args.g, Z):>5}")


if __name__ == "__main__":
    main()
