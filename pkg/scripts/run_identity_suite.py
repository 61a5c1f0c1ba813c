"""Run the exact-identity suite across a ladder of killing rates.

Each delta gets its own artifact directory (identity_suite.json inside);
the final table summarizes the worst residual per identity across the
ladder.  Exit code is nonzero if any rung fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

from percodrift import cli

DELTAS = (0.3, 0.5, 0.9, 0.99)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="artifacts/identity_ladder")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    worst: dict[str, float] = {}
    failed = False
    for delta in DELTAS:
        out_dir = os.path.join(args.out, f"delta_{delta}")
        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
            json.dump({"delta": delta}, fh)
            cfg_path = fh.name
        try:
            rc = cli.main(
                [
                    "identity-suite",
                    "--config",
                    cfg_path,
                    "--seed",
                    str(args.seed),
                    "--out",
                    out_dir,
                    "--threads",
                    str(args.threads),
                ]
            )
        finally:
            os.unlink(cfg_path)
        failed = failed or rc != 0
        with open(os.path.join(out_dir, "identity_suite.json")) as fh:
            doc = json.load(fh)
        for check in doc["checks"]:
            worst[check["name"]] = max(
                worst.get(check["name"], 0.0), check["residual"]
            )

    width = max(len(name) for name in worst)
    print(f"\nworst residual per identity over deltas {DELTAS}:")
    for name in sorted(worst):
        print(f"  {name:<{width}}  {worst[name]:.3e}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
