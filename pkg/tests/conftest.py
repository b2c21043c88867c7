import pytest

from helpers import chain_items, conv
from latprune.latency import (LatencyTable, LayerGrid, StaircaseParams,
                              gen_staircase_lut)
from latprune.netmodel import NetworkSpec, builtin_toy


@pytest.fixture
def toy_spec():
    return builtin_toy()


@pytest.fixture
def staircase():
    return StaircaseParams(base_ms=0.1, slope_ms=0.05, step_in=32,
                           step_out=32)


@pytest.fixture
def toy_table(toy_spec):
    return gen_staircase_lut(
        toy_spec, StaircaseParams(base_ms=0.01, slope_ms=0.002, step_in=8,
                                  step_out=8))


@pytest.fixture
def knapsack_items():
    """Chain A (9, 5, 1) at costs (4, 1, 3); chain B (8, 6, 2) at (2, 2, 2)"""
    return chain_items([(4, 1, 3), (2, 2, 2)], [(9, 5, 1), (8, 6, 2)])


@pytest.fixture
def two_layer_spec():
    return NetworkSpec((conv(0, 3, 3, kernel_size=1, spatial=1),
                        conv(1, 3, 3, (0, ), kernel_size=1, spatial=1)),
                       input_channels=3)


@pytest.fixture
def two_layer_table():
    """Latencies independent of the in-count; telescoped costs match the
    knapsack fixture in thousandths of a millisecond"""
    return LatencyTable({
        0: LayerGrid([3], [0, 1, 2, 3], [[0.0, 0.004, 0.005, 0.008]]),
        1: LayerGrid([3], [0, 1, 2, 3], [[0.0, 0.002, 0.004, 0.006]])
    })


@pytest.fixture
def residual_spec():
    """Stem and block output share channels through an add-join"""
    return NetworkSpec((conv(0, 3, 16), conv(1, 16, 8, (0, )),
                        conv(2, 8, 16, (1, )), conv(3, 16, 8, (0, 2))),
                       couplings=(frozenset((0, 2)), ),
                       input_channels=3)
