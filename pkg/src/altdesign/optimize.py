"""Grid coordinate exchange with common random numbers.

Each search holds one random stream fixed for every objective evaluation,
so a stochastic objective becomes a deterministic function of the design
for the duration of the search. Candidate comparisons are then paired and
the accepted objective sequence is monotone by construction.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Design
from .errors import DomainError, InfeasibleStart
from .numerics import RandomStream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExchangeConfig:
    grid_points_per_variable: int = 21
    sweeps_max: int = 20
    restarts: int = 10
    # None: 1e-9 for deterministic objectives, se_fraction * pooled SE otherwise
    improvement_tolerance: float | None = None
    se_fraction: float = 0.1
    root_seed: int = 0
    threads: int = 1
    # also move whole groups of replicated runs and transfer surplus replicates
    replicate_moves: bool = True

    def __post_init__(self):
        if self.grid_points_per_variable < 2:
            raise DomainError("grid needs at least both bounds")
        if self.sweeps_max < 1 or self.restarts < 1 or self.threads < 1:
            raise DomainError("sweeps_max, restarts and threads must be >= 1")


@dataclass
class SearchTrace:
    sweep_values: list = field(default_factory=list)
    accepted: int = 0
    design: Design | None = None
    value: float = math.inf
    converged: bool = False
    evaluations: int = 0
    initial_value: float = math.inf


def candidate_grid(bounds, points, include=()):
    """Per-column candidate values: an even grid over each bound plus ``include``.

    ``include`` values inside a column's bounds are merged in, so e.g. the
    centre of an even-length grid can be forced onto it.
    """
    grids = []
    for lo, hi in np.asarray(bounds, dtype=float).reshape(-1, 2):
        g = lo + (hi - lo) * np.arange(points) / (points - 1)
        g[0], g[-1] = lo, hi
        g = np.round(g, 12)
        extra = [v for v in include if lo <= v <= hi]
        grids.append(np.unique(np.concatenate([g, extra])))
    return grids


def random_grid_design(grids, n, bounds, rng) -> Design:
    cols = [grid[rng.integers(0, len(grid), n)] for grid in grids]
    return Design(np.column_stack(cols), bounds)


def _value_and_se(result):
    if hasattr(result, "value"):
        return float(result.value), float(getattr(result, "mc_standard_error", 0.0))
    return float(result), 0.0


class _Evaluator:
    def __init__(self, objective, stream, threads):
        self.objective = objective
        self.stream = stream
        self.pool = ThreadPoolExecutor(threads) if threads > 1 else None
        self.count = 0

    def __call__(self, designs):
        self.count += len(designs)
        call = lambda d: _value_and_se(self.objective(d, self.stream))  # noqa: E731
        if self.pool is None:
            return [call(d) for d in designs]
        return list(self.pool.map(call, designs))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def _candidates(design: Design, i, j, grids, replicate_moves):
    """Designs reachable from ``design`` by one move at coordinate ``(i, j)``.

    Order: single-coordinate changes in grid order, then (for a replicated
    run visited at its first copy) the same change applied to every copy,
    then (once per run, at its last coordinate) moving this copy onto each
    other existing treatment in lexicographic order.
    """
    current = design.points[i, j]
    cands = [design.with_value(i, j, v) for v in grids[j] if v != current]
    if not replicate_moves:
        return cands
    P = design.points
    same = np.flatnonzero(np.all(P == P[i], axis=1))
    if same.size < 2:
        return cands
    if same[0] == i:
        for v in grids[j]:
            if v != current:
                Q = P.copy()
                Q[same, j] = v
                cands.append(Design(Q, design.bounds))
    if design.k > 1 and j == design.k - 1:
        for row in np.unique(P, axis=0):
            if not np.array_equal(row, P[i]):
                Q = P.copy()
                Q[i] = row
                cands.append(Design(Q, design.bounds))
    return cands


def _tolerance(config, se_a, se_b):
    if config.improvement_tolerance is not None:
        return config.improvement_tolerance
    if se_a == 0.0 and se_b == 0.0:
        return 1e-9
    return config.se_fraction * math.sqrt(0.5 * (se_a * se_a + se_b * se_b))


def coordinate_exchange(objective, initial: Design, config: ExchangeConfig = ExchangeConfig(),
                        stream: RandomStream | None = None, grids=None):
    """Minimise ``objective(design, stream)`` one coordinate at a time.

    For every run ``i`` and variable ``j`` the objective is evaluated at each
    grid value for ``Delta[i, j]`` and the best candidate replaces the
    incumbent if it improves on it by more than the tolerance. Stops after a
    sweep with no accepted exchange or after ``sweeps_max`` sweeps.

    With ``config.replicate_moves`` a replicated run also proposes moving all
    of its copies together, and transferring itself onto another treatment,
    so replication can be rearranged without first being destroyed.

    Returns ``(design, trace)``.
    """
    stream = stream if stream is not None else RandomStream(config.root_seed).child(1)
    if grids is None:
        grids = candidate_grid(initial.bounds, config.grid_points_per_variable)
    evaluate = _Evaluator(objective, stream, config.threads)
    try:
        (value, se), = evaluate([initial])
        if not math.isfinite(value):
            raise InfeasibleStart("objective is not finite at the initial design")
        trace = SearchTrace(design=initial, value=value, initial_value=value)
        design = initial
        for sweep in range(config.sweeps_max):
            accepted = 0
            for i in range(design.n):
                for j in range(design.k):
                    cands = _candidates(design, i, j, grids, config.replicate_moves)
                    if not cands:
                        continue
                    results = evaluate(cands)
                    vals = np.array([r[0] for r in results])
                    best = int(np.argmin(vals))
                    if vals[best] < value - _tolerance(config, results[best][1], se):
                        design = cands[best]
                        value, se = results[best]
                        accepted += 1
            trace.sweep_values.append(value)
            trace.accepted += accepted
            log.info("sweep %d: value %.6g, %d exchanges", sweep + 1, value, accepted)
            if accepted == 0:
                trace.converged = True
                break
        trace.design = design
        trace.value = value
        trace.evaluations = evaluate.count
        return design, trace
    finally:
        evaluate.close()


@dataclass
class MultistartResult:
    design: Design
    trace: SearchTrace
    traces: list
    best_index: int


def multistart(objective, design_sampler, config: ExchangeConfig = ExchangeConfig(),
               stream: RandomStream | None = None, grids=None, initials=()):
    """Best of ``config.restarts`` coordinate-exchange runs.

    ``design_sampler(stream)`` draws each random initial design from its own
    substream; every run evaluates the objective under the same stream so
    final values are comparable. ``initials`` are extra starting designs
    tried after the random ones. Ties go to the earliest run.
    """
    root = RandomStream(config.root_seed)
    stream = stream if stream is not None else root.child(1)
    starts = [design_sampler(root.child(2, r)) for r in range(config.restarts)] + list(initials)
    traces = []
    best = None
    for r, init in enumerate(starts):
        try:
            design, trace = coordinate_exchange(objective, init, config, stream, grids)
        except InfeasibleStart:
            log.info("restart %d: infeasible initial design", r)
            traces.append(None)
            continue
        traces.append(trace)
        if best is None or trace.value < traces[best].value:
            best = r
    if best is None:
        raise InfeasibleStart("objective is infinite at every initial design")
    return MultistartResult(traces[best].design, traces[best], traces, best)
