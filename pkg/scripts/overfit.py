#!/usr/bin/env python3
"""Overfit a small DOSTransformer on 64 synthetic crystals and report the final training loss."""

import argparse
import json
import logging

from dos_transformer.experiments import OverfitConfig, overfit_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", help="optional path for history.csv")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    res = overfit_run(OverfitConfig())
    hist = res.pop("history")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(hist.to_csv())
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
