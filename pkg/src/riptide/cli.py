"""Command line interface: ``riptide discover | diagnose | report``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from riptide import __version__
from riptide.analyzer import ABBREVIATIONS
from riptide.campaign import Campaign, CampaignError
from riptide.config import STAGES, ConfigError, load_campaign_config

EXIT_OK, EXIT_USAGE, EXIT_SUBJECT = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("project", nargs="?", default=".", help="project root (default: current directory)")
    common.add_argument("--runs", type=int, help="executions per observation (default 10)")
    common.add_argument("--timeout", type=float, help="per-test timeout in seconds (default 30)")
    common.add_argument("--workers", type=int, help="parallel workers, each with a private copy of the project")
    common.add_argument("--out", type=Path, help="output directory (default: <project>/.riptide)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="riptide", description="Explain why extreme transformations go undetected "
                                           "and suggest how to improve the tests.")
    p.add_argument("--version", action="version", version=f"riptide {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("discover", parents=[common], help="enumerate transformations and run the covering tests")
    d = sub.add_parser("diagnose", parents=[common], help="classify undetected transformations")
    d.add_argument("--only", action="append", default=[], metavar="TRANSFORMATION_ID",
                   help="diagnose only this transformation (repeatable)")
    d.add_argument("--stage", choices=STAGES, help="run only the infection or propagation stage")
    sub.add_parser("report", parents=[common], help="render suggestions and statistics")
    return p


def _campaign(args) -> Campaign:
    root = Path(args.project)
    if not root.is_dir():
        raise ConfigError(f"project directory not found: {root}")
    config = load_campaign_config(
        root, runs=args.runs, timeout=args.timeout, workers=args.workers, out=args.out,
        stage=getattr(args, "stage", None), only=tuple(getattr(args, "only", ()) or ()) or None,
    )
    return Campaign(config)


def cmd_discover(args) -> int:
    c = _campaign(args)
    disc = c.discover()
    if disc.cached:
        print(f"cache hit: {c.discover_dir}")
    for e in disc.parse_errors:
        print(f"warning: skipped {e.file}: {e.message}", file=sys.stderr)
    for t in disc.flaky:
        print(f"warning: excluded flaky test {t}", file=sys.stderr)
    for t in disc.transformations:
        extra = f"  ({t.diagnostic})" if t.detection == "unknown" and t.diagnostic else ""
        print(f"{t.detection:<10}  {t.id}{extra}")
    n = len(disc.undetected())
    print(f"{len(disc.transformations)} transformations, {n} undetected; catalog in {c.discover_dir}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    c = _campaign(args)
    diagnoses = c.diagnose()
    for d in sorted(diagnoses, key=lambda d: d.transformation_id):
        note = f"  ({d.diagnostic})" if d.diagnostic else ""
        print(f"{ABBREVIATIONS[d.symptom]:<12}  {d.transformation_id}{note}")
    print(f"{len(diagnoses)} diagnoses in {c.dir / 'diagnoses.jsonl'}")
    return EXIT_OK


def cmd_report(args) -> int:
    c = _campaign(args)
    report, summary = c.report()
    for line in summary.lines():
        print(line)
    print(f"report: {c.report_dir / 'report.md'}")
    return EXIT_OK


COMMANDS = {"discover": cmd_discover, "diagnose": cmd_diagnose, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"riptide: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CampaignError as exc:
        print(f"riptide: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
