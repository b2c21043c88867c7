from ..exceptions import ConfigError, UsageError
from ..importance import accumulate, save_scores, write_trace
from ..latency import (gen_staircase_lut, params_from_dict, save_lut,
                       staircase_params_for)
from ..netmodel import resolve_spec
from ..trace_gen import ToyNet, iter_trace, load_toy_net
from ..utils.io import read_json, write_json


class GenerateMixin:
    def register_generate(self, subparsers):
        lut = subparsers.add_parser(
            "gen-lut", help="Synthesize a staircase latency table")
        lut.add_argument("--spec", required=True,
                         help="Spec file or builtin name (resnet50, "
                         "mobilenet_v1, toy)")
        lut.add_argument("--params",
                         help="Staircase params JSON with `default` and "
                         "per-layer `layers` entries")
        lut.add_argument("--in-stride", type=int, default=1)
        lut.add_argument("--reference-steps", action="store_true",
                         help="Use the reference out-channel steps of the "
                         "builtin resnet50 or mobilenet_v1")
        lut.add_argument("--out", help="CSV path, standard output if omitted")
        lut.set_defaults(handler=self.gen_lut)

        trace = subparsers.add_parser(
            "gen-trace", help="Write a synthetic importance trace")
        source = trace.add_mutually_exclusive_group(required=True)
        source.add_argument("--spec")
        source.add_argument("--net", help="Toy net dumped by --net-out")
        trace.add_argument("--steps", type=int, required=True)
        trace.add_argument("--seed", type=int, default=0)
        trace.add_argument("--amplitude", type=float, default=0.01,
                           help="Random-walk step of scales and shifts")
        trace.add_argument("--samples", type=int, default=32)
        trace.add_argument("--out")
        trace.add_argument("--net-out", help="Dump the toy net as JSON")
        trace.add_argument("--scores-out",
                           help="Write importance averaged over the trace")
        trace.set_defaults(handler=self.gen_trace)

    def gen_lut(self, args):
        """Synthesize a staircase latency table"""
        spec = resolve_spec(args.spec)
        if args.params:
            params = params_from_dict(spec,
                                      read_json(args.params, ConfigError),
                                      args.reference_steps)
        else:
            params = staircase_params_for(
                spec, reference_steps=args.reference_steps)
        table = gen_staircase_lut(spec, params, args.in_stride)
        save_lut(table, args.out)
        self.log.info("Wrote latency table for %s layers to %s",
                      len(table.layer_ids), args.out or "stdout")
        return 0

    def gen_trace(self, args):
        """Write a synthetic importance trace"""
        if args.steps < 1:
            raise UsageError("gen-trace needs at least one step")
        if args.net:
            net = load_toy_net(args.net)
        else:
            net = ToyNet.build(resolve_spec(args.spec), args.seed,
                               args.samples)
        snapshots = list(
            iter_trace(net.spec, args.seed, args.amplitude, steps=args.steps,
                       net=net))
        write_trace(snapshots, args.out)
        self.log.info("Wrote %s snapshots to %s", args.steps,
                      args.out or "stdout")
        if args.net_out:
            write_json(net.to_dict(), args.net_out)
        if args.scores_out:
            save_scores(accumulate(snapshots), args.scores_out)
        return 0
