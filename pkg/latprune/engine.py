import dataclasses
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, InfeasibleError, SpecError, TraceError
from .grouping import FlopsCost, LatencyCost, build_groups
from .importance import accumulate, rank_layer, read_trace
from .knapsack import SOLVERS, solve, to_int_costs
from .latency import (gen_staircase_lut, load_lut, network_latency,
                      staircase_params_for, validate_table)
from .netmodel import (ChannelAssignment, input_count, network_flops,
                       resolve_counts, resolve_spec, validate_assignment)
from .trace_gen import iter_trace
from .utils.io import dumps, read_json

log = logging.getLogger(__name__)

CONSTRAINT_KINDS = ("latency", "flops")
TIGHTEN_LIMIT = 100
# integer units spanning the current MAC count when flops_scale is unset
FLOPS_RESOLUTION = 100000


@dataclass(frozen=True)
class PruneConfig:
    constraint_kind: str = "latency"
    target_fraction: float = 0.5
    steps: int = 30
    window: int = 320
    group_size_override: int = None
    seed: int = 0
    spec: str = "toy"
    lut: str = None
    trace: str = None
    solver: str = "exact"
    lut_base_ms: float = 0.01
    lut_slope_ms: float = 0.002
    lut_step_in: int = 32
    lut_step_out: int = 32
    lut_noise_ms: float = 0.0
    lut_in_stride: int = 1
    lut_reference_steps: bool = False
    trace_amplitude: float = 0.01
    trace_samples: int = 32
    latency_scale: int = 1000
    flops_scale: float = None
    step_fallback: int = 32
    min_groups: int = 0
    first_keep_fraction: float = None

    def __post_init__(self):
        try:
            problems = self._problems()
        except TypeError as e:
            raise ConfigError("Config value has the wrong type: {}".format(e))
        if problems:
            raise ConfigError("Invalid config: {}".format("; ".join(problems)))

    def _problems(self):
        problems = []
        if self.constraint_kind not in CONSTRAINT_KINDS:
            problems.append("constraint_kind must be one of {}".format(
                ", ".join(CONSTRAINT_KINDS)))
        if self.solver not in SOLVERS[:2]:
            problems.append("solver must be exact or paper")
        if not 0 < self.target_fraction <= 1:
            problems.append("target_fraction must be in (0, 1]")
        for name in ("steps", "window", "lut_step_in", "lut_step_out",
                     "lut_in_stride", "trace_samples", "step_fallback"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                problems.append("{} must be a positive integer".format(name))
        if self.group_size_override is not None and (
                not isinstance(self.group_size_override, int)
                or self.group_size_override < 1):
            problems.append("group_size_override must be a positive integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            problems.append("seed must be a non-negative integer")
        if not isinstance(self.min_groups, int) or self.min_groups < 0:
            problems.append("min_groups must be a non-negative integer")
        if self.first_keep_fraction is not None and not (
                0 < self.first_keep_fraction <= 1):
            problems.append("first_keep_fraction must be in (0, 1]")
        if self.latency_scale <= 0 or (self.flops_scale is not None
                                       and self.flops_scale <= 0):
            problems.append("cost scales must be positive")
        if self.lut_noise_ms < 0 or self.trace_amplitude < 0:
            problems.append("noise amplitudes must be >= 0")
        return problems

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("Config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError("Unknown config keys {}".format(sorted(unknown)))
        return cls(**doc)

    def to_dict(self):
        return dataclasses.asdict(self)


def load_config(path=None, overrides=None):
    """Config file values with non-None overrides applied on top"""
    doc = read_json(path, ConfigError) if path else {}
    if not isinstance(doc, dict):
        raise ConfigError("Config must be a JSON object")
    doc = dict(doc)
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PruneConfig.from_dict(doc)


@dataclass(frozen=True)
class PruneState:
    spec: object
    channels: dict
    step: int = 0
    milestones: tuple = ()

    @classmethod
    def dense(cls, spec):
        return cls(spec, ChannelAssignment.dense(spec).channels)

    @property
    def counts(self):
        return {k: len(v) for k, v in self.channels.items()}

    @property
    def assignment(self):
        return ChannelAssignment.from_channels(self.channels)


@dataclass(frozen=True)
class PruneReport:
    constraint_kind: str
    kept_counts: dict
    kept_channels: dict
    milestones: tuple
    final: dict
    groups: dict = field(default=None)

    def to_dict(self):
        doc = {
            "constraint_kind": self.constraint_kind,
            "kept_counts": {str(k): v
                            for k, v in self.kept_counts.items()},
            "kept_channels": {
                str(k): list(v)
                for k, v in self.kept_channels.items()
            },
            "milestones": list(self.milestones),
            "final": self.final
        }
        if self.groups is not None:
            doc["groups"] = self.groups
        return doc

    def to_json(self):
        return dumps(self.to_dict())


def schedule_milestones(c0, c, k):
    """Geometric budgets from c0 down to exactly c"""
    if k < 1:
        raise ConfigError("Need at least one pruning step")
    if not 0 < c <= c0:
        raise ConfigError("Target {} must lie in (0, {}]".format(c, c0))
    ratio = c / c0
    milestones = [c0 * ratio**(j / k) for j in range(1, k + 1)]
    milestones[-1] = c
    return milestones


def flops_costs(spec, counts):
    """Per-channel MACs: own layer at its current in-count plus the input
    side of every successor"""
    counts = resolve_counts(spec, counts)
    costs = {}
    for layer in spec.layers:
        if layer.kind == "group_conv":
            own = layer.pair_macs
        else:
            own = input_count(spec, layer.layer_id, counts) * layer.pair_macs
        downstream = 0
        for succ_id in spec.successors[layer.layer_id]:
            succ = spec.layer(succ_id)
            if succ.kind == "group_conv":
                continue
            # an add-join counts its shared input once
            if (succ.join == "add" and len(succ.predecessor_ids) > 1
                    and layer.layer_id != min(succ.predecessor_ids)):
                continue
            downstream += counts[succ_id] * succ.pair_macs
        costs[layer.layer_id] = np.full(counts[layer.layer_id],
                                        own + downstream,
                                        dtype=np.int64)
    return costs


def apply_keep_rules(spec, config):
    """Spec with the input-side coupled set kept to at least
    first_keep_fraction of its width"""
    if config.first_keep_fraction is None:
        return spec
    first = spec.coupling_of(spec.layers[0].layer_id)
    layers = []
    for layer in spec.layers:
        if layer.layer_id in first and layer.prunable:
            floor = math.ceil(config.first_keep_fraction * layer.out_channels)
            layer = dataclasses.replace(layer,
                                        min_keep=max(layer.min_keep, floor))
        layers.append(layer)
    return dataclasses.replace(spec, layers=tuple(layers))


def _measure(spec, counts, table):
    latency = None
    if table is not None:
        latency = network_latency(spec, counts, table)
    return latency, network_flops(spec, counts)


def _surviving_scores(scores, layer, kept):
    if len(scores) == layer.out_channels:
        return scores[kept]
    if len(scores) == len(kept):
        return scores
    raise TraceError("Layer {} has {} scores for {} surviving channels".format(
        layer.layer_id, len(scores), len(kept)))


def _rankings(state, scores):
    rankings = {}
    for layer in state.spec.layers:
        kept = np.asarray(state.channels[layer.layer_id], dtype=np.int64)
        layer_scores = scores.get(layer.layer_id)
        if not len(kept):
            continue
        if layer_scores is None:
            if layer.prunable:
                raise TraceError("No scores for layer {}".format(
                    layer.layer_id))
            continue
        layer_scores = np.asarray(layer_scores, dtype=np.float64)
        rankings[layer.layer_id] = rank_layer(
            _surviving_scores(layer_scores, layer, kept), kept)
    return rankings


def _kept_importance(rankings, channels):
    total = 0.0
    for layer_id, ranking in rankings.items():
        kept = np.isin(ranking.order, channels[layer_id])
        total += float(ranking.scores[kept].sum())
    return total


def _prune_to(state, scores, table, milestone, config):
    """Remove channels until the metric meets `milestone`"""
    spec = state.spec
    flops_mode = config.constraint_kind == "flops"
    budget_key = "budget_macs" if flops_mode else "budget_ms"
    counts = state.counts
    latency, macs = _measure(spec, counts, table)
    current = macs if flops_mode else latency
    rankings = _rankings(state, scores)
    if current <= milestone:
        record = {
            budget_key: milestone,
            "achieved_ms": latency,
            "macs": macs,
            "groups": 0,
            "kept_importance": _kept_importance(rankings, state.channels)
        }
        log.info("Step %s: %s already within budget %.6g", state.step + 1,
                 current, milestone)
        return dataclasses.replace(state,
                                   step=state.step + 1,
                                   milestones=state.milestones +
                                   (record, )), None

    if flops_mode:
        scale = config.flops_scale or min(
            1.0, FLOPS_RESOLUTION / max(current, 1))
        costs = FlopsCost(flops_costs(spec, counts), scale)
    else:
        scale = config.latency_scale
        costs = LatencyCost(table, scale, config.step_fallback)
    instance = build_groups(spec, rankings, costs, counts,
                            config.group_size_override, config.min_groups)
    # keeping every surviving channel must map to the current metric
    offset = instance.total_units() - to_int_costs(current, scale)
    budget = (to_int_costs(milestone, scale) + offset -
              instance.mandatory_units())
    items = instance.to_items()
    diagnostics = {
        "step": state.step + 1,
        "milestone": milestone,
        "current": current,
        "mandatory_units": instance.mandatory_units(),
        "scaled_milestone": to_int_costs(milestone, scale)
    }
    for attempt in range(TIGHTEN_LIMIT):
        if budget < 0:
            raise InfeasibleError(
                "Milestone {:.6g} is below what mandatory groups "
                "cost".format(milestone),
                dict(diagnostics, budget_units=budget))
        solution = solve(items, budget, config.solver)
        channels = dict(state.channels)
        channels.update(instance.kept_channels(solution))
        new_counts = {k: len(v) for k, v in channels.items()}
        latency, macs = _measure(spec, new_counts, table)
        achieved = macs if flops_mode else latency
        if achieved <= milestone:
            break
        excess = max(1, math.ceil((achieved - milestone) * scale))
        log.debug("Step %s: %.6g over milestone %.6g, tightening budget "
                  "%s by %s", state.step + 1, achieved, milestone, budget,
                  excess)
        budget -= excess
    else:
        raise InfeasibleError(
            "No selection meets milestone {:.6g}".format(milestone),
            dict(diagnostics, budget_units=budget, attempts=TIGHTEN_LIMIT))

    violations = validate_assignment(
        spec, ChannelAssignment.from_channels(channels))
    if violations:
        raise SpecError("Step {} broke the channel constraints".format(
            state.step + 1), violations)
    record = {
        budget_key: milestone,
        "achieved_ms": latency,
        "macs": macs,
        "groups": instance.total_group_count,
        "kept_importance": _kept_importance(rankings, channels)
    }
    removed = sum(counts.values()) - sum(new_counts.values())
    log.info("Step %s: budget %.6g, achieved %s ms, %s MACs, %s groups, "
             "%s channels removed", state.step + 1, milestone, latency, macs,
             instance.total_group_count, removed)
    state = dataclasses.replace(state,
                                channels=channels,
                                step=state.step + 1,
                                milestones=state.milestones + (record, ))
    return state, instance


def prune_step(state, window, table, milestone, config=None):
    """Average importance over the window, regroup, solve and apply"""
    config = config or PruneConfig()
    return _prune_to(state, accumulate(window), table, milestone, config)[0]


def _report(state, table, dense, config, groups=None):
    spec = state.spec
    latency, macs = _measure(spec, state.counts, table)
    dense_latency, dense_macs = dense
    speedup = None
    if latency:
        speedup = dense_latency / latency
    final = {
        "latency_ms": latency,
        "macs": macs,
        "dense_latency_ms": dense_latency,
        "dense_macs": dense_macs,
        "speedup": speedup
    }
    return PruneReport(config.constraint_kind, state.counts,
                       dict(state.channels), state.milestones, final, groups)


def build_table(spec, config):
    if config.lut:
        table = load_lut(config.lut)
    else:
        params = staircase_params_for(spec, config.lut_base_ms,
                                      config.lut_slope_ms, config.lut_step_in,
                                      config.lut_step_out, config.lut_noise_ms,
                                      config.seed, config.lut_reference_steps)
        table = gen_staircase_lut(spec, params, config.lut_in_stride)
    validate_table(spec, table)
    return table


def run_pruning(config):
    """Prune toward target_fraction of the dense metric over k milestones"""
    spec = resolve_spec(config.spec)
    return _run(config, spec, build_table(spec, config))


def _run(config, spec, table):
    spec = apply_keep_rules(spec, config)
    state = PruneState.dense(spec)
    dense = _measure(spec, state.counts, table)
    c0 = dense[1] if config.constraint_kind == "flops" else dense[0]
    milestones = schedule_milestones(c0, config.target_fraction * c0,
                                     config.steps)
    if config.trace:
        source = iter(read_trace(config.trace))
    else:
        source = iter_trace(spec, config.seed, config.trace_amplitude,
                            config.trace_samples)
    log.info("Pruning %s layers from %.6g to %.6g (%s) over %s steps",
             len(spec.layers), c0, milestones[-1], config.constraint_kind,
             config.steps)
    for index, milestone in enumerate(milestones):
        window = list(itertools.islice(source, config.window))
        if len(window) < config.window:
            raise TraceError(
                "Trace ran out at step {}; {} steps of {} snapshots are "
                "needed".format(index + 1, config.steps, config.window))
        state = prune_step(state, window, table, milestone, config)
    return _report(state, table, dense, config)


def _sweep_row(report):
    final = report.final
    return {
        "status": "ok",
        "latency_ms": final["latency_ms"],
        "macs": final["macs"],
        "dense_latency_ms": final["dense_latency_ms"],
        "dense_macs": final["dense_macs"],
        "speedup": final["speedup"],
        "kept_neurons": sum(report.kept_counts.values()),
        "kept_importance": report.milestones[-1]["kept_importance"],
        "first_step_groups": report.milestones[0]["groups"]
    }


def sweep(config, targets, group_sizes=(None, )):
    """Full runs for every (group size, target fraction) pair; a group size
    of None is latency-aware grouping"""
    if not targets or not group_sizes:
        raise ConfigError("A sweep needs targets and group sizes")
    spec = resolve_spec(config.spec)
    table = build_table(spec, config)
    rows = []
    for group_size in group_sizes:
        for target in targets:
            row = {
                "target_fraction": target,
                "grouping": "latency-aware" if group_size is None else "fixed",
                "group_size": group_size
            }
            run_config = dataclasses.replace(config,
                                             target_fraction=target,
                                             group_size_override=group_size)
            try:
                row.update(_sweep_row(_run(run_config, spec, table)))
            except InfeasibleError as e:
                log.warning("Target %s with group size %s is infeasible: %s",
                            target, group_size, e)
                row.update(status="infeasible", reason=str(e))
            else:
                log.info("Target %s, group size %s: %s ms, %s MACs", target,
                         group_size or "latency-aware", row["latency_ms"],
                         row["macs"])
            rows.append(row)
    return rows


def plan_once(spec, table, scores, budget, config=None):
    """Single grouping and solve at `budget` (ms, or MACs in flops mode)"""
    config = config or PruneConfig()
    spec = apply_keep_rules(spec, config)
    state = PruneState.dense(spec)
    dense = _measure(spec, state.counts, table)
    state, instance = _prune_to(state, scores, table, budget, config)
    groups = instance.to_dict() if instance else {
        "metric": config.constraint_kind,
        "total_group_count": 0,
        "chains": {},
        "groups": []
    }
    return _report(state, table, dense, config, groups)
