import argparse
import logging
import sys

from .commands import GenerateMixin, OracleMixin, PlanningMixin, ReportMixin
from .exceptions import (InfeasibleError, PlannerError, PlannerIOError,
                         SpecError, UsageError)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_INFEASIBLE = 2
EXIT_IO = 3


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def configure_logging(verbose=False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s",
                        force=True)


class Planner(GenerateMixin, PlanningMixin, ReportMixin, OracleMixin):
    """Latency-aware structured pruning planner"""

    def __init__(self):
        self.log = logging.getLogger(__name__)
        self.parser = self.build_parser()

    def build_parser(self):
        parser = ArgumentParser(
            prog="latprune",
            description="Plan which channels to keep under a latency or "
            "FLOPs budget")
        parser.add_argument("-v", "--verbose", action="store_true")
        subparsers = parser.add_subparsers(dest="command", metavar="command")
        subparsers.required = True
        self.register_generate(subparsers)
        self.register_planning(subparsers)
        self.register_report(subparsers)
        self.register_oracle(subparsers)
        return parser

    def error_handler(self, exc):
        if isinstance(exc, UsageError):
            sys.stderr.write(self.parser.format_usage())
            self.log.error("%s", exc)
            return EXIT_INVALID
        if isinstance(exc, InfeasibleError):
            self.log.error("Infeasible: %s", exc)
            for key, value in sorted(exc.diagnostics.items()):
                self.log.error("  %s: %s", key, value)
            return EXIT_INFEASIBLE
        if isinstance(exc, PlannerIOError):
            self.log.error("%s", exc)
            return EXIT_IO
        if isinstance(exc, SpecError):
            self.log.error("%s", exc)
            for violation in exc.violations:
                self.log.error("  %s", violation)
            return EXIT_INVALID
        self.log.error("%s", exc)
        return EXIT_INVALID

    def dispatch(self, argv=None):
        configure_logging()
        try:
            args = self.parser.parse_args(argv)
            if args.verbose:
                configure_logging(verbose=True)
            return args.handler(args) or EXIT_OK
        except PlannerError as e:
            return self.error_handler(e)


def parse_and_dispatch(argv=None):
    return Planner().dispatch(argv)


def main():
    sys.exit(parse_and_dispatch())
