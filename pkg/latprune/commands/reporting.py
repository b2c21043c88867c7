from ..exceptions import ConfigError
from ..utils.io import read_json, write_json


class ReportMixin:
    def register_report(self, subparsers):
        report = subparsers.add_parser(
            "report", help="Summarize a plan or run report")
        report.add_argument("--plan", required=True)
        report.add_argument("--groups", action="store_true",
                            help="Dump the neuron groups of a plan")
        report.add_argument("--out")
        report.set_defaults(handler=self.report)

    def summarize(self, plan):
        try:
            counts = plan["kept_counts"]
            milestones = plan["milestones"]
            budget_key = ("budget_macs" if plan["constraint_kind"] == "flops"
                          else "budget_ms")
            return {
                "constraint_kind": plan["constraint_kind"],
                "layers": len(counts),
                "kept_channels": sum(counts.values()),
                "final": plan["final"],
                "steps": len(milestones),
                "latency_vs_macs": [[m["achieved_ms"], m["macs"]]
                                    for m in milestones],
                "budgets": [m[budget_key] for m in milestones]
            }
        except (AttributeError, KeyError, TypeError):
            raise ConfigError("Not a plan or run report") from None

    def report(self, args):
        """Summarize a plan or run report"""
        plan = read_json(args.plan, ConfigError)
        if not args.groups:
            write_json(self.summarize(plan), args.out)
            return 0
        if not isinstance(plan, dict) or "groups" not in plan:
            raise ConfigError("{} has no group dump; it comes from "
                              "`plan`".format(args.plan))
        write_json(plan["groups"], args.out)
        return 0
