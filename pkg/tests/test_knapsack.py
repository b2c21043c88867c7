import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import chain_items, conv, prefix_closed, random_instance
from latprune.exceptions import SolverError
from latprune.grouping import build_groups
from latprune.importance import rank_layer
from latprune.knapsack import (Item, brute_force, instance_from_dict,
                               solve, solve_exact, solve_paper, to_int_costs)
from latprune.latency import StaircaseParams, gen_staircase_lut, lut_query
from latprune.netmodel import NetworkSpec

SCALING_TABLE = [
    (0.3, 300),
    (0.0004, 0),
    (0.2996, 300),
    (0.0005, 1),
    (0.0015, 2),
    (0.0625, 63),
    (0.1875, 188),
    (0.3125, 313),
    (1.0625, 1063),
    (2.4375, 2438),
    (-0.0625, -63),
    (-0.1875, -188),
    (0.0, 0),
    (1.0, 1000),
    (12.3456, 12346),
    (0.0004999, 0),
    (-0.0004, 0),
    (-0.3, -300),
    (7.0004, 7000),
    (0.1234, 123),
]


def test_to_int_costs_table():
    values, expected = zip(*SCALING_TABLE)
    assert to_int_costs(np.array(values)).tolist() == list(expected)
    assert to_int_costs(0.3) == 300


def test_to_int_costs_errors():
    with pytest.raises(SolverError):
        to_int_costs([np.nan])
    with pytest.raises(SolverError):
        to_int_costs([1e300])


def test_exact_fixture(knapsack_items):
    solution = solve_exact(knapsack_items, 7)
    assert solution.kept_item_ids == {0, 1, 3}
    assert solution.total_importance == 22
    assert solution.total_cost == 7
    assert brute_force(knapsack_items, 7) == solution


def test_paper_fixture(knapsack_items):
    solution = solve_paper(knapsack_items, 7)
    assert prefix_closed(knapsack_items, solution.kept_item_ids)
    assert solution.total_cost <= 7
    assert solution.total_importance <= 22


def test_unconstrained_and_empty_budgets(knapsack_items):
    everything = solve_exact(knapsack_items, 100)
    assert everything.kept_item_ids == set(range(6))
    assert everything.total_importance == 31
    nothing = solve_exact(knapsack_items, 0)
    assert nothing.kept_item_ids == frozenset()
    assert nothing.total_importance == 0


def test_single_item():
    items = [Item(0, 1.5, 3, 0, 1)]
    assert solve_paper(items, 3).kept_item_ids == {0}
    assert solve_paper(items, 2).kept_item_ids == frozenset()


def test_brute_force_limits():
    assert brute_force([], 5).kept_item_ids == frozenset()
    items = chain_items([[1] * 25], [[1.0] * 25])
    with pytest.raises(SolverError):
        brute_force(items, 5)


def test_invalid_instances(knapsack_items):
    with pytest.raises(SolverError):
        solve_exact(knapsack_items, -1)
    broken = list(knapsack_items)
    broken[2] = Item(2, 1.0, 3, 0, 3, preceding_item_id=0)
    with pytest.raises(SolverError):
        solve_exact(broken, 5)
    with pytest.raises(SolverError):
        solve_paper(knapsack_items + [Item(0, 1.0, 1, 7, 1)], 5)
    with pytest.raises(SolverError):
        solve(knapsack_items, 5, "greedy")


def test_tie_break_prefers_cheaper_then_shorter():
    items = chain_items([(2, 0), (1, )], [(1.0, 0.0), (1.0, )])
    solution = solve_exact(items, 3)
    assert solution.total_importance == 2.0
    assert solution.kept_item_ids == {0, 2}
    assert brute_force(items, 3) == solution


def test_tie_break_keeps_the_later_of_equal_chains():
    items = chain_items([(3, ), (3, )], [(5.0, ), (5.0, )])
    solution = solve_exact(items, 3)
    assert solution.kept_item_ids == {1}
    assert brute_force(items, 3) == solution


def test_oracle_equivalence_and_paper_fidelity():
    rng = np.random.default_rng(2024)
    gaps = []
    for _ in range(500):
        items, budget = random_instance(rng)
        exact = solve_exact(items, budget)
        oracle = brute_force(items, budget)
        paper = solve_paper(items, budget)
        assert exact.total_importance == pytest.approx(
            oracle.total_importance, abs=1e-9)
        for solution in (exact, paper):
            assert prefix_closed(items, solution.kept_item_ids)
            assert solution.total_cost <= budget
        assert paper.total_importance <= exact.total_importance + 1e-9
        gaps.append(exact.total_importance - paper.total_importance)
    print("mean optimality gap of the per-item dp: {:.4f}".format(
        np.mean(gaps)))


def test_monotone_budget_and_scale_invariance():
    rng = np.random.default_rng(7)
    for _ in range(100):
        items, budget = random_instance(rng)
        base = solve_exact(items, budget)
        assert solve_exact(items,
                           budget + 1).total_importance >= base.total_importance
        scaled = [
            Item(i.item_id, i.importance * 7.3, i.cost, i.chain_id,
                 i.rank_position, i.preceding_item_id) for i in items
        ]
        assert solve_exact(scaled, budget).kept_item_ids == base.kept_item_ids


def test_negative_costs_stay_within_budget():
    """Both solvers respect the budget on noisy tables with negative group
    costs, checked against direct table lookups"""
    spec = NetworkSpec((conv(0, 4, 6), conv(1, 6, 6, (0, ))),
                       input_channels=4)
    p_ins = {0: 4, 1: 6}
    checked = 0
    seed = 0
    while checked < 50:
        seed += 1
        params = StaircaseParams(0.002, 0.0005, 4, 3,
                                 noise_amplitude_ms=0.002, noise_seed=seed)
        table = gen_staircase_lut(spec, params)
        rng = np.random.default_rng(seed)
        rankings = {l.layer_id: rank_layer(rng.random(6)) for l in spec.layers}
        instance = build_groups(spec, rankings, table, {0: 6, 1: 6},
                                group_size=1)
        items = instance.to_items()
        if not any(item.cost < 0 for item in items):
            continue
        checked += 1
        budget = int(rng.integers(0, instance.total_units() + 1))
        for solver in (solve_exact, solve_paper):
            kept = instance.kept_channels(solver(items, budget))
            direct = sum(
                to_int_costs(
                    lut_query(table, layer_id, p_ins[layer_id], len(channels)))
                for layer_id, channels in kept.items())
            assert direct <= budget


@st.composite
def instances(draw):
    costs = draw(
        st.lists(st.lists(st.integers(-5, 20), min_size=1, max_size=5),
                 min_size=1, max_size=4))
    importances = [
        sorted(draw(
            st.lists(st.floats(0, 10), min_size=len(c), max_size=len(c))),
               reverse=True) for c in costs
    ]
    items = chain_items(costs, importances)
    return items, draw(st.integers(0, 60))


@settings(max_examples=200, deadline=None, derandomize=True)
@given(instances())
def test_solutions_are_prefix_closed(instance):
    items, budget = instance
    exact = solve_exact(items, budget)
    paper = solve_paper(items, budget)
    for solution in (exact, paper):
        assert prefix_closed(items, solution.kept_item_ids)
        assert solution.total_cost <= budget
    assert paper.total_importance <= exact.total_importance + 1e-9
    if len(items) <= 12:
        assert exact.total_importance == pytest.approx(
            brute_force(items, budget).total_importance, abs=1e-9)


def test_instance_document(knapsack_items):
    doc = {"budget": 7, "items": [item.to_dict() for item in knapsack_items]}
    items, budget = instance_from_dict(doc)
    assert items == knapsack_items
    assert budget == 7
    with pytest.raises(SolverError):
        instance_from_dict({"items": []})
    with pytest.raises(SolverError):
        instance_from_dict({"budget": 1.5, "items": []})
