import logging
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import SpecError, TraceError
from .knapsack import LATENCY_SCALE, Item, to_int_costs
from .latency import STEP_FALLBACK, LatencyTable, detect_step_size
from .netmodel import input_count, resolve_counts

log = logging.getLogger(__name__)


class LatencyCost:
    """Group costs from table deltas at the current in-counts"""
    metric = "latency"

    def __init__(self, table, scale=LATENCY_SCALE, fallback=STEP_FALLBACK):
        self.table = table
        self.scale = scale
        self.fallback = fallback

    def step_size(self, layer_id, p_in):
        return detect_step_size(self.table, layer_id, p_in, self.fallback)

    def curve(self, layer_id, p_in, p_out):
        return self.table.grid(layer_id).curve(p_in, p_out)

    def units(self, layer_id, p_in, p_out):
        return to_int_costs(self.curve(layer_id, p_in, p_out), self.scale)


class FlopsCost:
    """Uniform per-channel MAC costs; no staircase, so groups of one"""
    metric = "flops"

    def __init__(self, per_channel, scale=1.0):
        self.per_channel = per_channel
        self.scale = scale

    def step_size(self, layer_id, p_in):
        return 1

    def curve(self, layer_id, p_in, p_out):
        costs = self.per_channel.get(layer_id, ())
        unit = float(costs[0]) if len(costs) else 0.0
        return np.arange(p_out + 1) * unit

    def units(self, layer_id, p_in, p_out):
        return to_int_costs(self.curve(layer_id, p_in, p_out), self.scale)


@dataclass(frozen=True)
class NeuronGroup:
    group_id: int
    chain_id: int
    layer_ids: tuple
    channels: tuple
    rank_position: int
    importance: float
    cost: float
    cost_units: int
    preceding_group_id: int = None
    mandatory: bool = False

    @property
    def members(self):
        return tuple((layer_id, channel) for layer_id in self.layer_ids
                     for channel in self.channels)

    @property
    def size(self):
        return len(self.channels)

    def to_dict(self):
        return {
            "group_id": self.group_id,
            "chain_id": self.chain_id,
            "layer_ids": list(self.layer_ids),
            "channels": list(self.channels),
            "rank_position": self.rank_position,
            "importance": self.importance,
            "cost": self.cost,
            "cost_units": self.cost_units,
            "preceding_group_id": self.preceding_group_id,
            "mandatory": self.mandatory
        }


@dataclass(frozen=True, eq=False)
class GroupedInstance:
    groups: tuple
    chains: dict
    cumulative: dict
    metric: str = "latency"

    @property
    def total_group_count(self):
        return len(self.groups)

    def group(self, group_id):
        return self.groups[group_id]

    def mandatory_units(self):
        return sum(g.cost_units for g in self.groups if g.mandatory)

    def total_units(self):
        return sum(g.cost_units for g in self.groups)

    def to_items(self):
        items = []
        for group in self.groups:
            if group.mandatory:
                continue
            pred = group.preceding_group_id
            if pred is not None and self.groups[pred].mandatory:
                pred = None
            items.append(
                Item(group.group_id, group.importance, group.cost_units,
                     group.chain_id, group.rank_position, pred))
        return items

    def kept_channels(self, solution):
        kept = {}
        for group in self.groups:
            keep = group.mandatory or group.group_id in solution.kept_item_ids
            for layer_id in group.layer_ids:
                channels = kept.setdefault(layer_id, [])
                if keep:
                    channels.extend(group.channels)
        return {k: tuple(sorted(v)) for k, v in kept.items()}

    def to_dict(self):
        return {
            "metric": self.metric,
            "total_group_count": self.total_group_count,
            "chains": {str(k): list(v) for k, v in self.chains.items()},
            "groups": [g.to_dict() for g in self.groups]
        }


def group_chain_cumulative_cost(instance, chain_id):
    """Cost of keeping the first k groups of a chain, for k = 0..len"""
    try:
        return instance.cumulative[chain_id]
    except KeyError:
        raise SpecError("Unknown chain {}".format(chain_id)) from None


def _chain_members(spec):
    seen = set()
    chains = []
    for layer in spec.layers:
        if layer.layer_id in seen:
            continue
        members = tuple(sorted(spec.coupling_of(layer.layer_id)))
        seen.update(members)
        chains.append(members)
    return sorted(chains)


def _aggregate(spec, members, rankings, count):
    """Surviving channels of a chain and their summed importance"""
    channels = None
    total = np.zeros(count)
    for layer_id in members:
        ranking = rankings.get(layer_id)
        if ranking is None:
            if spec.layer(layer_id).prunable:
                raise TraceError("No ranking for layer {}".format(layer_id))
            continue
        if len(ranking) != count:
            raise TraceError("Ranking of layer {} covers {} channels, "
                             "expected {}".format(layer_id, len(ranking),
                                                  count))
        order = np.argsort(ranking.order)
        layer_channels = ranking.order[order]
        if channels is None:
            channels = layer_channels
        elif not np.array_equal(channels, layer_channels):
            raise SpecError(
                "Coupled layers {} keep different channels".format(
                    list(members)))
        total += ranking.scores[order]
    if channels is None:
        channels = np.arange(count)
    return channels, total


def build_groups(spec, rankings, costs, counts, group_size=None,
                 min_groups=0):
    """Latency-aware groups for every chain of coupled layers; the first
    `min_groups` groups of a prunable chain are mandatory"""
    if isinstance(costs, LatencyTable):
        costs = LatencyCost(costs)
    if group_size is not None and group_size < 1:
        raise SpecError("Group size must be >= 1")
    counts = resolve_counts(spec, counts)
    groups = []
    chains = {}
    cumulative = {}
    for members in _chain_members(spec):
        widths = {counts[m] for m in members}
        if len(widths) > 1:
            raise SpecError("Coupled layers {} have unequal counts {}".format(
                list(members), sorted(widths)))
        count = widths.pop()
        chain_id = members[0]
        if count == 0:
            continue
        channels, scores = _aggregate(spec, members, rankings, count)
        order = np.lexsort((channels, -scores))
        channels, scores = channels[order], scores[order]

        p_ins = {m: input_count(spec, m, counts) for m in members}
        layers = [spec.layer(m) for m in members]
        if all(layer.prunable for layer in layers):
            step = group_size or max(
                costs.step_size(m, p_ins[m]) for m in members)
            floor = max(layer.min_keep for layer in layers)
            mandatory = max(math.ceil(floor / step), min_groups)
        else:
            # whole chain is one pre-committed group
            step, mandatory = count, 1
        bounds = list(range(0, count, step)) + [count]
        curves = [costs.curve(m, p_ins[m], count) for m in members]
        units = [costs.units(m, p_ins[m], count) for m in members]
        chain_groups = []
        for rank, (start, end) in enumerate(zip(bounds, bounds[1:]), 1):
            group = NeuronGroup(
                group_id=len(groups),
                chain_id=chain_id,
                layer_ids=members,
                channels=tuple(int(c) for c in channels[start:end]),
                rank_position=rank,
                importance=float(scores[start:end].sum()),
                cost=float(sum(c[end] - c[start] for c in curves)),
                cost_units=int(sum(u[end] - u[start] for u in units)),
                preceding_group_id=chain_groups[-1] if chain_groups else None,
                mandatory=rank <= mandatory)
            groups.append(group)
            chain_groups.append(group.group_id)
        chains[chain_id] = tuple(chain_groups)
        cumulative[chain_id] = sum(c[bounds] for c in curves)
    log.debug("Built %s %s groups over %s chains", len(groups), costs.metric,
              len(chains))
    return GroupedInstance(tuple(groups), chains, cumulative, costs.metric)
