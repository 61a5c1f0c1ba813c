"""Reproduce the headline slope experiment: dilute speed against the expansion.

With no flags this runs the full-scale sweep (4 grid points x 8 replicas x
10^6 steps, several minutes); --smoke shrinks everything for a quick wiring
check whose statistical gate is then expected to fail.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

from percodrift import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="artifacts/headline")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument(
        "--smoke",
        action="store_true",
        help="2e4 steps per replica instead of 1e6 (gate will likely trip)",
    )
    args = parser.parse_args()

    argv = [
        "speed-sweep",
        "--seed",
        str(args.seed),
        "--out",
        args.out,
        "--threads",
        str(args.threads),
    ]
    cfg_path = None
    if args.smoke:
        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
            json.dump({"n_steps": 20_000}, fh)
            cfg_path = fh.name
        argv += ["--config", cfg_path]
    try:
        rc = cli.main(argv)
    finally:
        if cfg_path is not None:
            os.unlink(cfg_path)
    print(f"artifacts in {args.out}: sweep.csv, sweep_line.csv, sweep.json")
    return rc


if __name__ == "__main__":
    sys.exit(main())
