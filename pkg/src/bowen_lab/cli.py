"""``bowen-lab <suite> --config <file> [--out-dir <dir>] [--seed N]``.

Exit codes: 0 when no check fails, 1 when some check fails, 2 on usage or
configuration errors (no files are written then).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import SUITES, load
from .errors import ConfigError
from .report import run_suite

log = logging.getLogger("bowen_lab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bowen-lab", description="Bowen-ball distortion and linearization experiments.")
    p.add_argument("suite", choices=SUITES)
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--out-dir", default=None, help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, default=None, help="seed (overrides the config)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load(args.config, suite=args.suite, out_dir=args.out_dir, seed=args.seed)
    except ConfigError as exc:
        print(f"bowen-lab: {exc}", file=sys.stderr)
        return 2
    report = run_suite(cfg)
    for name, v in sorted(report.verdicts.items()):
        log.info("%-55s %s", name, v)
    for name, msg in sorted(report.diagnostics.items()):
        log.warning("%s: %s", name, msg)
    return 1 if report.failed else 0


if __name__ == "__main__":
    sys.exit(main())
