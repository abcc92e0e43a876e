"""``gelfand-lab`` command line entry point.

Exit codes: 0 pass, 1 FAIL verdicts, 2 usage or configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import GelfandLabError, NumericalFailure

COMMANDS = {
    "predict": harness.cmd_predict,
    "solve": harness.cmd_solve,
    "spectrum": harness.cmd_spectrum,
    "verify": harness.cmd_verify,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gelfand-lab", description="Blow-up spectra of the Gel'fand problem.")
    p.add_argument("command", choices=[*COMMANDS, "selftest"])
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--jobs", type=int, help="worker processes for per-lambda analysis")
    p.add_argument("--lambda", dest="lambdas", help="comma-separated lambda list (overrides config)")
    p.add_argument("--m", type=int, help="number of peaks")
    p.add_argument("--domain", choices=["disk", "annulus"])
    p.add_argument("--inner-radius", type=float, help="annulus inner radius")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _summary_lines(report: dict) -> list:
    lines = []
    for c in report.get("checks", []) + report.get("verdicts", []):
        lines.append(f"{c['verdict']:5s} {c['check']}")
    return lines


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for h in logging.getLogger().handlers:
        h.setLevel(logging.INFO if args.verbose else logging.WARNING)
    overrides = {
        "output.dir": args.out,
        "output.jobs": args.jobs,
        "experiment.lambda_list": args.lambdas,
        "experiment.m": args.m,
        "domain.kind": args.domain,
        "domain.inner_radius": args.inner_radius,
    }
    try:
        if args.command == "selftest":
            tols = None
            out_dir = args.out
            if args.config:
                cfg = harness.load_config(args.config, overrides)
                tols, out_dir = cfg.tolerances, args.out or cfg.output_dir
            report, code = harness.cmd_selftest(tols, out_dir)
        else:
            cfg = harness.load_config(args.config, overrides)
            from pathlib import Path
            handler = harness.attach_log(Path(cfg.output_dir))
            try:
                report, code = COMMANDS[args.command](cfg)
            finally:
                logging.getLogger("gelfand_lab").removeHandler(handler)
                handler.close()
    except NumericalFailure as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (GelfandLabError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for line in _summary_lines(report):
        print(line)
    print(f"status: {report.get('status')}")
    if report.get("error"):
        print(report["error"], file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
