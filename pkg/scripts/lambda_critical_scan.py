"""Scan the critical drift strength over planar directions.

Square-lattice symmetry makes [0, 45] degrees the fundamental domain; the
critical strength is largest on the axis and shrinks toward the diagonal.
Writes a small CSV next to the printed table.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

from percodrift.expansion import critical_lambda_estimate


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="artifacts/lambda_scan")
    parser.add_argument("--n-angles", type=int, default=10)
    parser.add_argument("--tol", type=float, default=1e-6)
    args = parser.parse_args()
    if args.n_angles < 2:
        print("need at least 2 angles", file=sys.stderr)
        return 2

    rows = []
    print("angle(deg)  direction               critical strength")
    for i in range(args.n_angles):
        theta = math.radians(45.0 * i / (args.n_angles - 1))
        direction = (math.cos(theta), math.sin(theta))
        lam_c = critical_lambda_estimate(direction, tol=args.tol)
        rows.append((math.degrees(theta), direction, lam_c))
        print(
            f"{math.degrees(theta):<11.2f} "
            f"({direction[0]:.6f}, {direction[1]:.6f})  {lam_c:.6f}"
        )

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "lambda_critical.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["angle_deg", "dir_x", "dir_y", "critical_lambda"])
        for deg, direction, lam_c in rows:
            writer.writerow(
                [f"{deg:.4f}", repr(direction[0]), repr(direction[1]), repr(lam_c)]
            )
    print(f"\nwrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
