"""Command line entry point: ``qcrb <experiment> --config <path> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numeric contract violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import yaml

from .experiments import EXPERIMENTS, ConfigError, ContractViolation, Table, run

log = logging.getLogger("qcrb")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _cell(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float) or hasattr(value, "dtype"):
        value = float(value)
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def to_csv(table: Table) -> str:
    buf = io.StringIO()
    for line in table.comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def to_json(table: Table) -> str:
    def plain(v):
        if isinstance(v, bool) or v is None:
            return v
        if isinstance(v, (int, str)):
            return v
        v = float(v)
        return v if math.isfinite(v) else str(v)

    payload = {
        "comments": table.comments,
        "columns": table.columns,
        "rows": [[plain(v) for v in row] for row in table.rows],
    }
    return json.dumps(payload, indent=1) + "\n"


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data


def _set_override(cfg: dict, assignment: str):
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {part} is not a mapping")
    node[parts[-1]] = yaml.safe_load(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcrb", description=__doc__.splitlines()[0])
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="YAML or JSON experiment config")
    parser.add_argument("--seed", type=int, help="base seed (overrides the config)")
    parser.add_argument("--out", help="CSV output path (stdout if omitted)")
    parser.add_argument("--json", action="store_true", help="also write a JSON mirror")
    parser.add_argument("--workers", type=int, default=None, help="worker processes for independent cells")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set state.N=20 (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        for assignment in args.set:
            _set_override(cfg, assignment)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg["workers"] = args.workers
        out = args.out or cfg.get("output")
        log.info("running %s", args.experiment)
        _, table = run(args.experiment, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"numeric contract violation: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    text = to_csv(table)
    if out and args.experiment == "table1":
        sys.stdout.write(text)
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        if args.json:
            path.with_suffix(".json").write_text(to_json(table))
        log.info("wrote %d rows to %s", len(table.rows), path)
    elif args.json:
        sys.stdout.write(to_json(table))
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
