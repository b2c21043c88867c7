import argparse

from ..engine import (CONSTRAINT_KINDS, PruneConfig, load_config, plan_once,
                      run_pruning)
from ..engine import sweep as run_sweep
from ..exceptions import UsageError
from ..importance import load_scores
from ..latency import load_lut, network_latency, validate_table
from ..netmodel import ChannelAssignment, network_flops, resolve_spec
from ..utils.io import write_json, write_text

RUN_OVERRIDES = ("spec", "lut", "trace", "constraint_kind", "target_fraction",
                 "steps", "window", "seed", "solver", "group_size_override",
                 "min_groups", "first_keep_fraction")


def group_size(value):
    if value == "auto":
        return None
    try:
        size = int(value)
    except ValueError:
        size = 0
    if size < 1:
        raise argparse.ArgumentTypeError(
            "group sizes are positive integers or `auto`, got {!r}".format(
                value))
    return size


def add_keep_rules(parser, min_groups=None):
    parser.add_argument("--min-groups", type=int, default=min_groups,
                        help="Groups every prunable chain keeps")
    parser.add_argument("--first-keep-fraction", type=float,
                        help="Floor on the width of the input-side "
                        "coupled set")


def add_run_overrides(parser):
    parser.add_argument("--config", help="Flat JSON config file")
    parser.add_argument("--out")
    parser.add_argument("--spec")
    parser.add_argument("--lut")
    parser.add_argument("--trace")
    parser.add_argument("--constraint", dest="constraint_kind",
                        choices=CONSTRAINT_KINDS)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--window", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--solver", choices=("exact", "paper"))
    add_keep_rules(parser)


class PlanningMixin:
    def register_planning(self, subparsers):
        plan = subparsers.add_parser(
            "plan", help="Solve one grouped selection at a fixed budget")
        plan.add_argument("--spec", required=True)
        plan.add_argument("--lut", help="LUT CSV (required for latency)")
        plan.add_argument("--scores", required=True,
                          help="JSON mapping layer ids to channel scores")
        budget = plan.add_mutually_exclusive_group(required=True)
        budget.add_argument("--budget-ms", type=float)
        budget.add_argument("--budget-macs", type=float)
        budget.add_argument("--budget-fraction", type=float,
                            help="Fraction of the dense latency or MACs")
        plan.add_argument("--constraint", choices=CONSTRAINT_KINDS,
                          default="latency")
        plan.add_argument("--solver", choices=("exact", "paper"),
                          default="exact")
        plan.add_argument("--group-size", type=int)
        add_keep_rules(plan, min_groups=0)
        plan.add_argument("--out")
        plan.set_defaults(handler=self.plan)

        run = subparsers.add_parser(
            "run", help="Prune iteratively over k milestones")
        add_run_overrides(run)
        run.add_argument("--target-fraction", type=float)
        run.add_argument("--group-size", dest="group_size_override",
                         type=int)
        run.set_defaults(handler=self.run)

        grid = subparsers.add_parser(
            "sweep",
            help="Run every target fraction under every group size")
        add_run_overrides(grid)
        grid.add_argument("--targets", type=float, nargs="+", required=True)
        grid.add_argument("--group-sizes", type=group_size, nargs="+",
                          default=[None],
                          help="Fixed group sizes; `auto` is latency-aware "
                          "grouping")
        grid.set_defaults(handler=self.sweep)

    def plan(self, args):
        """Solve one grouped selection at a fixed budget"""
        spec = resolve_spec(args.spec)
        config = PruneConfig(constraint_kind=args.constraint,
                             solver=args.solver,
                             group_size_override=args.group_size,
                             min_groups=args.min_groups,
                             first_keep_fraction=args.first_keep_fraction)
        flops_mode = config.constraint_kind == "flops"
        table = None
        if args.lut:
            table = load_lut(args.lut)
            validate_table(spec, table)
        elif not flops_mode:
            raise UsageError("plan needs --lut under a latency constraint")
        if flops_mode and args.budget_ms is not None:
            raise UsageError("use --budget-macs under a flops constraint")
        if not flops_mode and args.budget_macs is not None:
            raise UsageError("use --budget-ms under a latency constraint")
        scores = load_scores(args.scores)

        budget = args.budget_macs if flops_mode else args.budget_ms
        if args.budget_fraction is not None:
            dense = ChannelAssignment.dense(spec)
            if flops_mode:
                budget = args.budget_fraction * network_flops(spec, dense)
            else:
                budget = args.budget_fraction * network_latency(
                    spec, dense, table)
        report = plan_once(spec, table, scores, budget, config)
        write_text(report.to_json(), args.out)
        self.log.info("Plan keeps %s of %s channels",
                      sum(report.kept_counts.values()),
                      sum(l.out_channels for l in spec.layers))
        return 0

    def overrides(self, args):
        return {name: getattr(args, name, None) for name in RUN_OVERRIDES}

    def run(self, args):
        """Prune iteratively over k milestones"""
        config = load_config(args.config, self.overrides(args))
        report = run_pruning(config)
        write_text(report.to_json(), args.out)
        self.log.info("Final latency %s ms, %s MACs",
                      report.final["latency_ms"], report.final["macs"])
        return 0

    def sweep(self, args):
        """Run every target fraction under every group size"""
        config = load_config(args.config, self.overrides(args))
        rows = run_sweep(config, args.targets, args.group_sizes)
        write_json({"constraint_kind": config.constraint_kind, "rows": rows},
                   args.out)
        self.log.info("Swept %s runs, %s feasible", len(rows),
                      sum(row["status"] == "ok" for row in rows))
        return 0
