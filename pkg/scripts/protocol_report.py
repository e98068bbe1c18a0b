#!/usr/bin/env python3
"""Structural report for a sparse mixing protocol across a size sweep.

Prints one analyze record per power-of-two n, so the O(N log N) storage and
multiply growth is visible next to the completeness and rank flags:

    python3 scripts/protocol_report.py --protocol CHORD --sizes 16 64 256
"""

import argparse
import sys

from chainmix.harness import main


def run() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--protocol", choices=["CHORD", "CDIL"], default="CHORD")
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[8, 16, 32, 64, 128, 256])
    args = parser.parse_args()
    for n in args.sizes:
        rc = main(["analyze", "--protocol", args.protocol, "--n", str(n)])
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(run())
