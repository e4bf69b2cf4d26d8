"""Run every fixture config through the CLI and print one status line each.

Usage: python scripts/run_fixtures.py [--out-dir out] [--threads N] [names ...]
"""

import argparse
import json
import time
from pathlib import Path

from sdelab import cli

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*", help="fixture stems (default: all)")
    ap.add_argument("--out-dir", default="out")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    paths = sorted((ROOT / "fixtures").glob("*.json"))
    if args.names:
        paths = [p for p in paths if p.stem in args.names]
    for p in paths:
        cfg = cli.load_config(p, json.loads(p.read_text())["subcommand"])
        t = time.perf_counter()
        report, res = cli.execute(cfg["subcommand"], cfg, args.threads)
        cli.write_outputs(report, res, Path(args.out_dir) / p.stem)
        status = {True: "pass", False: "FAIL", None: "done"}[res.passed]
        print(f"{p.stem:24s} {status:5s} {time.perf_counter() - t:7.1f}s  {cli.payload_digest(report)[:12]}")


if __name__ == "__main__":
    main()
