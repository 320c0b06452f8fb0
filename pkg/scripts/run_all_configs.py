"""Run every YAML config under configs/ through the ``lsem`` CLI.

Each config writes its tables into ``<out>/<config stem>/``.  The exit status
is the largest exit code returned by any run, so a CI job fails if one does.

    python3 scripts/run_all_configs.py --out results
"""
import argparse
import logging
import time
from pathlib import Path

from lsem import cli

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--configs", type=Path, default=ROOT / "configs")
    parser.add_argument("--out", type=Path, default=ROOT / "results")
    parser.add_argument("--only", nargs="*", default=None, help="config stems to run (default: all)")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    worst = 0
    for path in sorted(args.configs.glob("*.yaml")):
        if args.only and path.stem not in args.only:
            continue
        start = time.perf_counter()
        code = cli.main(["run", str(path), "--output-dir", str(args.out / path.stem)])
        logging.info("%-24s exit=%d  %.1fs", path.stem, code, time.perf_counter() - start)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
