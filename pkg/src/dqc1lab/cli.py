"""``dqc1lab <command> --config FILE [--seed S] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import jsonschema

from . import experiments


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dqc1lab", description="Run a seeded experiment and write CSV/JSON artifacts.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in experiments.COMMANDS:
        c = sub.add_parser(name, help=f"run the {name} experiment")
        c.add_argument("--config", type=Path, help="JSON config; omitted fields take schema defaults")
        c.add_argument("--seed", type=int, default=0)
        c.add_argument("--out", type=Path, help="output directory (default runs/<command>-<config hash>)")
    r = sub.add_parser("replay", help="re-run a record.json and compare artifact hashes")
    r.add_argument("record", type=Path)
    r.add_argument("--out", type=Path, required=True)
    s = sub.add_parser("schema", help="print the JSON schema of a command's config")
    s.add_argument("name", choices=experiments.COMMANDS)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "schema":
        print(json.dumps(experiments.SCHEMAS[args.name], indent=2))
        return 0
    if args.command == "replay":
        rec, diffs = experiments.replay(args.record, args.out)
        for name in diffs:
            print(f"MISMATCH {name}")
        print(f"replay {'identical' if not diffs else 'differs'}: {len(rec.artifacts)} artifacts")
        return 0 if not diffs else 1
    config = {}
    if args.config is not None:
        try:
            config = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
            return 2
    try:
        rec = experiments.run(args.command, config, args.seed, args.out)
    except jsonschema.ValidationError as exc:
        print(f"error: invalid config: {exc.message}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for a in rec.assertions:
        print(f"{'PASS' if a['passed'] else 'FAIL'} {a['name']} {a['detail']}".rstrip())
    print(f"{rec.command}: {'passed' if rec.passed else 'FAILED'} in {rec.wall_clock_s:.1f}s "
          f"(config {rec.config_hash}, {len(rec.artifacts)} artifacts)")
    return 0 if rec.passed else 1


if __name__ == "__main__":
    sys.exit(main())
