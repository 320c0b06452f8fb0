"""Command line entry point: ``lsem run`` and ``lsem validate``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import Table, run_experiment
from .numerics import LSEMError, NumericalError

logger = logging.getLogger("lsem")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_table(table: Table, cfg: ExperimentConfig, stamp: bool = False) -> str:
    buf = io.StringIO()
    buf.write(f"# lsem {__version__} experiment={cfg.experiment} config_sha256={cfg.digest()} "
              f"seed={cfg.seeds.seed} stream_id={cfg.seeds.stream_id}\n")
    if stamp:
        buf.write(f"# generated={datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
    for note in table.notes:
        buf.write(f"# {note}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.header)
    for row in table.rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(cfg: ExperimentConfig, stamp: bool = False) -> list[Path]:
    """Run one experiment and write its CSV files; returns the written paths."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    tables = run_experiment(cfg)
    # render everything first so a failure leaves no partial output behind
    rendered = [(out / t.filename, render_table(t, cfg, stamp)) for t in tables]
    for path, text in rendered:
        write_atomic(path, text)
    return [p for p, _ in rendered]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsem", description="Least Squares EM experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config and write CSV outputs")
    r.add_argument("config", help="YAML experiment config")
    r.add_argument("--output-dir", help="directory for CSV outputs (overrides output_dir in the config)")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--stamp", action="store_true", help="add a generation timestamp to CSV headers")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config", help="YAML experiment config")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok ({cfg.experiment})")
            return EXIT_OK
        if args.seed is not None and args.seed < 0:
            raise ConfigError([("--seed", "must be a non-negative integer")])
        cfg = cfg.with_overrides(seed=args.seed, output_dir=args.output_dir)
        for path in run(cfg, stamp=args.stamp):
            print(path)
        return EXIT_OK
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LSEMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
