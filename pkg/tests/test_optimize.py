import itertools
import math

import numpy as np
import pytest

from altdesign.core import Design
from altdesign.errors import InfeasibleStart
from altdesign.linear import first_order_model_matrix, objective as linear_objective
from altdesign.michaelis import mm_objectives
from altdesign.numerics import RandomStream
from altdesign.optimize import (
    ExchangeConfig,
    candidate_grid,
    coordinate_exchange,
    multistart,
    random_grid_design,
)

UNIT = [[0.0, 1.0]]


def two_basin(x):
    # local basin near 0.2, deeper global basin near 0.75
    return 1.0 - 0.6 * math.exp(-((x - 0.2) / 0.08) ** 2) - math.exp(-((x - 0.75) / 0.05) ** 2)


def test_separable_quadratic_reaches_target():
    grids = candidate_grid([[-1, 1]] * 2, 21)
    target = np.array([[0.3, -0.7], [1.0, 0.0], [-0.5, 0.5]])
    obj = lambda d, s: float(np.sum((d.points - target) ** 2))  # noqa: E731
    start = Design(np.zeros((3, 2)), [[-1, 1]] * 2)
    design, trace = coordinate_exchange(obj, start, ExchangeConfig(), grids=grids)
    np.testing.assert_array_equal(design.points, target)
    assert len(trace.sweep_values) <= 2


def test_two_run_a_optimal_line():
    obj = lambda d, s: linear_objective("A", d, first_order_model_matrix)  # noqa: E731
    start = Design([[-0.5], [0.2]], [[-1, 1]])
    design, _ = coordinate_exchange(obj, start, ExchangeConfig())
    assert sorted(design.points[:, 0]) == [-1.0, 1.0]


def test_single_restart_equals_single_search():
    cfg = ExchangeConfig(restarts=1, root_seed=3)
    grids = candidate_grid(UNIT, 21)
    sampler = lambda s: random_grid_design(grids, 2, UNIT, s.generator())  # noqa: E731
    obj = lambda d, s: two_basin(d.points[0, 0]) + two_basin(d.points[1, 0])  # noqa: E731
    res = multistart(obj, sampler, cfg, grids=grids)
    init = sampler(RandomStream(3).child(2, 0))
    design, trace = coordinate_exchange(obj, init, cfg, RandomStream(3).child(1), grids)
    assert res.design == design and res.trace.value == trace.value


def test_multistart_finds_global_grid_minimum():
    grids = candidate_grid(UNIT, 21)
    # coupled two-run objective: rewards both runs in the deep basin but penalises coincidence
    def f(d, s):
        a, b = d.points[:, 0]
        return two_basin(a) + two_basin(b) + 0.3 * math.exp(-((a - b) / 0.02) ** 2)

    cfg = ExchangeConfig(restarts=10, root_seed=11, replicate_moves=False)
    sampler = lambda s: random_grid_design(grids, 2, UNIT, s.generator())  # noqa: E731
    res = multistart(f, sampler, cfg, grids=grids)
    exhaustive = min(f(Design([[a], [b]], UNIT), None) for a, b in itertools.product(grids[0], repeat=2))
    assert res.trace.value == pytest.approx(exhaustive, abs=1e-12)
    initials = [t.initial_value for t in res.traces]
    assert res.trace.value <= min(initials)


def test_search_properties():
    grids = candidate_grid([[-1, 1]] * 2, 11)
    obj = lambda d, s: linear_objective("D", d, first_order_model_matrix)  # noqa: E731
    rng = np.random.default_rng(0)
    start = random_grid_design(grids, 6, [[-1, 1]] * 2, rng)
    design, trace = coordinate_exchange(obj, start, ExchangeConfig(), grids=grids)
    # monotone, on the grid, and a fixed point of the search
    assert all(a >= b for a, b in zip([trace.initial_value] + trace.sweep_values, trace.sweep_values))
    for j in range(2):
        assert np.all(np.isin(design.points[:, j], grids[j]))
    again, trace2 = coordinate_exchange(obj, design, ExchangeConfig(), grids=grids)
    assert again == design and trace2.accepted == 0


def test_replicate_group_moves():
    # the objective only improves if both copies of the replicated run move together
    grids = candidate_grid(UNIT, 11)

    def obj(d, s):
        x = d.points[:, 0]
        if x[0] != x[1]:
            return 10.0
        return float((x[0] - 0.8) ** 2)

    start = Design([[0.2], [0.2]], UNIT)
    stuck, _ = coordinate_exchange(obj, start, ExchangeConfig(replicate_moves=False), grids=grids)
    moved, _ = coordinate_exchange(obj, start, ExchangeConfig(), grids=grids)
    assert stuck == start
    np.testing.assert_allclose(moved.points[:, 0], [0.8, 0.8])


def test_infeasible_starts():
    obj = lambda d, s: math.inf  # noqa: E731
    with pytest.raises(InfeasibleStart):
        coordinate_exchange(obj, Design([[0.5]], UNIT))
    grids = candidate_grid(UNIT, 5)
    sampler = lambda s: random_grid_design(grids, 1, UNIT, s.generator())  # noqa: E731
    with pytest.raises(InfeasibleStart):
        multistart(obj, sampler, ExchangeConfig(restarts=2), grids=grids)


def test_candidate_grid_includes_requested_values():
    g = candidate_grid([[-1, 1]], 4, include=(0.0,))[0]
    assert 0.0 in g and g[0] == -1.0 and g[-1] == 1.0 and np.all(np.diff(g) > 0)


def test_parallel_evaluation_is_deterministic():
    obj = lambda d, s: mm_objectives("ext-TV", d, 100, 100, s)  # noqa: E731
    start = Design.on_interval([0.1, 0.3, 0.6, 1.0])
    grids = candidate_grid(UNIT, 6)
    serial, t1 = coordinate_exchange(obj, start, ExchangeConfig(sweeps_max=2, threads=1), RandomStream(4), grids)
    parallel, t2 = coordinate_exchange(obj, start, ExchangeConfig(sweeps_max=2, threads=4), RandomStream(4), grids)
    assert serial == parallel
    assert t1.sweep_values == t2.sweep_values
