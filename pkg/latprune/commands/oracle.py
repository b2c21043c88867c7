from ..exceptions import SolverError
from ..knapsack import SOLVERS, instance_from_dict, solve
from ..utils.io import read_json, write_json


class OracleMixin:
    def register_oracle(self, subparsers):
        oracle = subparsers.add_parser(
            "oracle", help="Solve a knapsack instance from JSON")
        oracle.add_argument("--instance", required=True)
        oracle.add_argument("--solver", choices=SOLVERS, default="exact")
        oracle.add_argument("--out")
        oracle.set_defaults(handler=self.oracle)

    def oracle(self, args):
        """Solve a knapsack instance from JSON"""
        items, budget = instance_from_dict(
            read_json(args.instance, SolverError))
        solution = solve(items, budget, args.solver)
        self.log.debug("%s solver kept %s of %s items", args.solver,
                       len(solution.kept_item_ids), len(items))
        write_json(solution.to_dict(), args.out)
        return 0
