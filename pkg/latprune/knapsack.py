import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import SolverError

log = logging.getLogger(__name__)

LATENCY_SCALE = 1000
INT_LIMIT = 2**62
BRUTE_FORCE_LIMIT = 24
DP_CELL_LIMIT = 5 * 10**7
SOLVERS = ("exact", "paper", "brute")
ITEM_FIELDS = ("item_id", "importance", "cost", "chain_id", "rank_position",
               "preceding_item_id")


@dataclass(frozen=True)
class Item:
    item_id: int
    importance: float
    cost: int
    chain_id: int
    rank_position: int
    preceding_item_id: int = None

    def to_dict(self):
        return {field: getattr(self, field) for field in ITEM_FIELDS}


@dataclass(frozen=True)
class Solution:
    kept_item_ids: frozenset
    total_importance: float
    total_cost: int

    def to_dict(self):
        return {
            "kept_item_ids": sorted(self.kept_item_ids),
            "total_importance": self.total_importance,
            "total_cost": self.total_cost
        }


def to_int_costs(values, scale=LATENCY_SCALE):
    """Scale and round half away from zero"""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise SolverError("Cannot scale non-finite costs")
    scaled = values * scale
    if np.any(np.abs(scaled) >= INT_LIMIT):
        raise SolverError("Scaled costs overflow the integer range")
    result = np.copysign(np.floor(np.abs(scaled) + 0.5), scaled)
    result = result.astype(np.int64)
    if result.ndim == 0:
        return int(result)
    return result


@dataclass(frozen=True)
class _Chain:
    chain_id: int
    items: tuple
    prefix_cost: np.ndarray
    prefix_importance: np.ndarray


def _chains(items):
    ids = [item.item_id for item in items]
    if len(set(ids)) != len(ids):
        raise SolverError("Duplicate item ids")
    grouped = {}
    for item in items:
        if not np.isfinite(item.importance) or item.importance < 0:
            raise SolverError("Item {} has invalid importance {}".format(
                item.item_id, item.importance))
        grouped.setdefault(item.chain_id, []).append(item)
    chains = []
    for chain_id, members in grouped.items():
        members.sort(key=lambda item: item.rank_position)
        previous = None
        for item in members:
            if previous is not None and (item.rank_position ==
                                         previous.rank_position):
                raise SolverError("Chain {} repeats rank {}".format(
                    chain_id, item.rank_position))
            expected = None if previous is None else previous.item_id
            if item.preceding_item_id != expected:
                raise SolverError(
                    "Item {} should be preceded by {}, not {}".format(
                        item.item_id, expected, item.preceding_item_id))
            previous = item
        costs = np.array([item.cost for item in members], dtype=np.int64)
        importances = np.array([item.importance for item in members])
        chains.append(
            _Chain(chain_id, tuple(members),
                   np.concatenate(([0], np.cumsum(costs))),
                   np.concatenate(([0.0], np.cumsum(importances)))))
    return chains


def _check_budget(budget):
    try:
        integral = int(budget) == budget
    except (TypeError, ValueError):
        integral = False
    if not integral or budget < 0:
        raise SolverError("Budget must be a non-negative integer, got {}".format(
            budget))
    return int(budget)


def _solution(chains, lengths):
    kept = frozenset(item.item_id for chain, length in zip(chains, lengths)
                     for item in chain.items[:length])
    importance = sum(
        float(chain.prefix_importance[length])
        for chain, length in zip(chains, lengths))
    cost = sum(
        int(chain.prefix_cost[length])
        for chain, length in zip(chains, lengths))
    return Solution(kept, importance, cost)


def _shift(row, offset):
    shifted = np.full_like(row, -np.inf)
    if offset >= 0:
        if offset < len(row):
            shifted[offset:] = row[:len(row) - offset]
    elif -offset < len(row):
        shifted[:offset] = row[-offset:]
    return shifted


def solve_exact(items, budget):
    """Optimal prefix per chain by dynamic programming over exact cost.

    Ties on importance go to the lower total cost, then to the
    lexicographically smallest vector of prefix lengths, chains taken in
    the order they first appear in `items`. That orders kept sets by how
    many groups each chain keeps, not by sorted item ids: of two equal
    single-item chains the later one is kept.
    """
    budget = _check_budget(budget)
    chains = _chains(items)
    if not chains:
        return Solution(frozenset(), 0.0, 0)
    low = sum(min(int(chain.prefix_cost.min()), 0) for chain in chains)
    width = budget - 2 * low + 1
    if width * (len(chains) + 1) > DP_CELL_LIMIT:
        raise SolverError(
            "Budget of {} units is too large for the exact solver; lower the "
            "cost scale".format(budget))
    # index i holds total cost low + i
    rows = [None] * (len(chains) + 1)
    row = np.full(width, -np.inf)
    row[-low] = 0.0
    rows[-1] = row
    for i in reversed(range(len(chains))):
        chain = chains[i]
        best = np.full(width, -np.inf)
        for cost, importance in zip(chain.prefix_cost,
                                    chain.prefix_importance):
            np.maximum(best, _shift(row, int(cost)) + importance, out=best)
        rows[i] = row = best

    # first maximum is the cheapest
    x = int(np.argmax(rows[0][:budget - low + 1]))
    lengths = []
    for i, chain in enumerate(chains):
        target = rows[i][x]
        for length, (cost, importance) in enumerate(
                zip(chain.prefix_cost, chain.prefix_importance)):
            j = x - int(cost)
            if 0 <= j < width and rows[i + 1][j] + importance == target:
                lengths.append(length)
                x = j
                break
    solution = _solution(chains, lengths)
    log.debug("Exact solve: %s chains, budget %s, importance %.6g, cost %s",
              len(chains), budget, solution.total_importance,
              solution.total_cost)
    return solution


def solve_paper(items, budget):
    """Per-item dp with a preceding-keep check, then a prefix repair pass"""
    budget = _check_budget(budget)
    chains = _chains(items)
    if not chains:
        return Solution(frozenset(), 0.0, 0)
    chain_index = {chain.chain_id: i for i, chain in enumerate(chains)}
    ordered = sorted(items,
                     key=lambda item: (-item.importance,
                                       chain_index[item.chain_id],
                                       item.rank_position))
    position = {item.item_id: n for n, item in enumerate(ordered)}
    costs = np.array([item.cost for item in ordered], dtype=np.int64)
    capacity = budget - min(int(costs.min()), 0)
    x = np.arange(capacity + 1)
    dp = np.zeros(capacity + 1)
    keep = np.zeros((len(ordered), capacity + 1), dtype=bool)
    for n, item in enumerate(ordered):
        src = x - item.cost
        valid = (src >= 0) & (src <= capacity)
        src = np.clip(src, 0, capacity)
        value = np.where(valid, dp[src] + item.importance, -np.inf)
        allowed = valid
        if item.preceding_item_id is not None:
            pred = position[item.preceding_item_id]
            if pred < n:
                allowed = allowed & keep[pred, src]
            else:
                allowed = np.zeros_like(valid)
        take = allowed & (value > dp)
        keep[n] = take
        dp = np.where(take, value, dp)

    kept = set()
    at = budget
    for n in reversed(range(len(ordered))):
        if keep[n, at]:
            kept.add(ordered[n].item_id)
            at -= int(costs[n])

    lengths = []
    for chain in chains:
        length = 0
        while length < len(chain.items) and chain.items[length].item_id in kept:
            length += 1
        lengths.append(length)
    while True:
        spent = [int(c.prefix_cost[l]) for c, l in zip(chains, lengths)]
        if sum(spent) <= budget:
            break
        worst = max((i for i, l in enumerate(lengths) if l),
                    key=lambda i: spent[i])
        lengths[worst] -= 1
    solution = _solution(chains, lengths)
    log.debug("Per-item solve: %s items, budget %s, importance %.6g, cost %s",
              len(items), budget, solution.total_importance,
              solution.total_cost)
    return solution


def brute_force(items, budget):
    """Exhaustive reference with the tie-break of solve_exact"""
    budget = _check_budget(budget)
    if len(items) > BRUTE_FORCE_LIMIT:
        raise SolverError("Brute force is limited to {} items, got {}".format(
            BRUTE_FORCE_LIMIT, len(items)))
    chains = _chains(items)
    best = None
    for lengths in itertools.product(*(range(len(c.items) + 1)
                                       for c in chains)):
        candidate = _solution(chains, lengths)
        if candidate.total_cost > budget:
            continue
        key = (-candidate.total_importance, candidate.total_cost, lengths)
        if best is None or key < best[0]:
            best = (key, candidate)
    return best[1]


def solve(items, budget, method="exact"):
    try:
        solver = {
            "exact": solve_exact,
            "paper": solve_paper,
            "brute": brute_force
        }[method]
    except KeyError:
        raise SolverError("Unknown solver {!r}".format(method)) from None
    return solver(items, budget)


def items_from_dict(entries):
    if not isinstance(entries, list):
        raise SolverError("Instance `items` must be a list")
    items = []
    for entry in entries:
        if not isinstance(entry, dict):
            raise SolverError("Item {!r} is not an object".format(entry))
        unknown = set(entry) - set(ITEM_FIELDS)
        if unknown:
            raise SolverError("Unknown item fields {}".format(sorted(unknown)))
        try:
            items.append(
                Item(int(entry["item_id"]), float(entry["importance"]),
                     int(entry["cost"]), int(entry["chain_id"]),
                     int(entry["rank_position"]),
                     entry.get("preceding_item_id")))
        except (KeyError, TypeError, ValueError) as e:
            raise SolverError("Malformed item {}: {}".format(entry, e)) from e
    return items


def instance_from_dict(doc):
    """(items, budget) from an oracle instance document"""
    if not isinstance(doc, dict) or "items" not in doc or "budget" not in doc:
        raise SolverError("Instance needs `items` and `budget`")
    unknown = set(doc) - {"items", "budget"}
    if unknown:
        raise SolverError("Unknown instance fields {}".format(sorted(unknown)))
    return items_from_dict(doc["items"]), _check_budget(doc["budget"])
