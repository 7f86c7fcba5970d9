"""Greedy placement algorithms and the popularity baseline.

All greedy loops break ties by the lowest (content, cell) pair and stop
early once the best remaining marginal gain is zero.
"""

import heapq
import logging
import time

from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .catalog import Catalog, Mode, UtilityModel
from .classes import SolverResult
from .errors import ContractError, RefusalError
from .network import CoverageModel
from .objective import CAPACITY_SLACK, EvalState, Item, SatisfactionState, _StateBase, single_cell_value


logger = logging.getLogger("softcache.solvers")

PARTIAL_ENUM_LIMIT = 60

Capacities = Union[float, Sequence[float], None]


def _argmax_lowest(scores: np.ndarray) -> int:
    """Flat index of the maximum; the first occurrence wins ties."""
    return int(np.argmax(scores))


def _capacity_vector(coverage: CoverageModel, capacities: Capacities) -> np.ndarray:
    if capacities is None:
        return coverage.cache_capacities.copy()
    caps = np.broadcast_to(np.asarray(capacities, dtype=np.float64), (coverage.num_cells,)).copy()
    if np.any(caps <= 0):
        raise ContractError("capacities must be positive")
    return caps


def _item_capacities(catalog: Catalog, coverage: CoverageModel, capacities: Capacities) -> np.ndarray:
    """Per-cell capacities in items; byte budgets convert only when all sizes are equal."""
    caps = _capacity_vector(coverage, capacities)
    if coverage.capacity_unit == "bytes":
        if not catalog.has_uniform_sizes:
            raise ContractError(
                "cardinality greedy needs equal content sizes under a byte budget; use fast_greedy_knapsack"
            )
        caps = np.floor(caps / catalog.sizes[0] * (1 + CAPACITY_SLACK))
    return caps


def _byte_capacities(coverage: CoverageModel, capacities: Capacities) -> np.ndarray:
    caps = _capacity_vector(coverage, capacities)
    if capacities is None and coverage.capacity_unit != "bytes":
        raise ContractError("knapsack solvers need a byte budget (capacity_unit='bytes' or explicit budget)")
    return caps


class _GreedyRun:
    """One greedy pass over a set of cells, naive or lazy."""

    def __init__(
        self,
        state: _StateBase,
        cells: Sequence[int],
        weights: Optional[np.ndarray] = None,
        lazy: bool = False
    ):
        self.state = state
        self.cells = list(cells)
        self.weights = np.ones(state.catalog.num_contents) if weights is None else weights
        self.lazy = lazy
        self.trace: List[Tuple[Item, float]] = []
        self._rows: Dict[int, np.ndarray] = {}

    def _row(self, cell: int) -> np.ndarray:
        if cell not in self._rows:
            self._rows[cell] = self.state.gain_row(cell) / self.weights
        return self._rows[cell]

    def _feasible(self, content: int, cell: int) -> bool:
        return (content, cell) not in self.state.placement and self.state.fits((content, cell))

    def _mask(self) -> np.ndarray:
        """Scores laid out (content, cell) so flat order is lexicographic."""
        scores = np.stack([self._row(cell) for cell in self.cells], axis=1)
        return np.where(self.state.feasible(self.cells), scores, -np.inf)

    def _commit(self, content: int, cell: int) -> None:
        before = self.state.value
        self.state.commit((content, cell))
        gain = self.state.value - before
        self.trace.append(((content, cell), gain))
        self._rows.clear()
        logger.debug(f"picked content {content} for cell {cell}, gain {gain:.6g}")

    def _naive(self) -> None:
        while True:
            scores = self._mask()
            flat = _argmax_lowest(scores)
            content, position = divmod(flat, len(self.cells))
            if not scores[content, position] > 0.0:
                return
            self._commit(content, self.cells[position])

    def _lazy(self) -> None:
        heap = []
        for position, cell in enumerate(self.cells):
            row = self._row(cell)
            for content in np.flatnonzero(row > 0.0):
                if self._feasible(int(content), cell):
                    heap.append((-float(row[content]), int(content), cell))
        heapq.heapify(heap)

        while heap:
            _, content, cell = heapq.heappop(heap)
            if not self._feasible(content, cell):
                continue

            fresh = float(self._row(cell)[content])
            key = (-fresh, content, cell)
            if heap and key > heap[0]:
                if fresh > 0.0:
                    heapq.heappush(heap, key)
                continue

            if not fresh > 0.0:
                return
            self._commit(content, cell)

    def run(self) -> "_GreedyRun":
        if self.cells:
            self._lazy() if self.lazy else self._naive()
        return self


def _result(state: _StateBase, trace: List[Tuple[Item, float]], started: float, solver: str) -> SolverResult:
    result = SolverResult(
        placement=state.placement,
        objective=state.value,
        trace=trace,
        wall_time=time.perf_counter() - started,
        solver=solver,
        coverage=state.coverage.with_capacities(state.capacities, state.capacity_unit)
    )
    logger.info(
        f"{solver}: {len(result.placement)} items, objective {result.objective:.6f}, "
        f"{result.wall_ms:.1f} ms"
    )
    return result


def _active_cells(coverage: CoverageModel) -> List[int]:
    return [j for j in range(coverage.num_cells) if np.any(coverage.q[:, j] > 0)]


def greedy_single(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    capacity: Capacities = None,
    lazy: bool = False
) -> SolverResult:
    """Cardinality-constrained greedy on single-cache coverage.

    Cells of a single-cache model serve disjoint user populations, so the
    joint greedy below makes the same per-cell choices as running the
    algorithm on every cell independently.

    Args:
        catalog: contents and demand
        coverage: single-cache coverage (each covered user on one cell)
        model: Acceptance-mode utility model
        capacity: items per cell; defaults to the coverage capacities
        lazy: use the priority-queue variant

    Returns:
        The placement with its objective and per-step trace
    """
    started = time.perf_counter()
    caps = _item_capacities(catalog, coverage, capacity)

    logger.info(f"greedy_single: K={catalog.num_contents}, M={coverage.num_cells}, C={caps.tolist()}")

    state = EvalState(catalog, coverage, model, form="single", capacities=caps, capacity_unit="items")
    run = _GreedyRun(state, _active_cells(coverage), lazy=lazy).run()

    return _result(state, run.trace, started, "greedy_single")


def _knapsack_state(catalog: Catalog, coverage: CoverageModel, model: UtilityModel, budgets: np.ndarray) -> EvalState:
    return EvalState(catalog, coverage, model, form="single", capacities=budgets, capacity_unit="bytes")


def _modified_greedy(state: EvalState, cell: int, weights: np.ndarray, lazy: bool) -> List[Tuple[Item, float]]:
    return _GreedyRun(state, [cell], weights=weights, lazy=lazy).run().trace


def _replay(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    budgets: np.ndarray,
    items: Sequence[Item]
) -> Tuple[EvalState, List[Tuple[Item, float]]]:
    state = _knapsack_state(catalog, coverage, model, budgets)
    trace = []
    for item in items:
        before = state.value
        state.commit(item)
        trace.append((item, state.value - before))
    return state, trace


def _cell_runs(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    budgets: np.ndarray,
    cell: int,
    seed: Sequence[int],
    lazy: bool
) -> Tuple[float, List[Item]]:
    """Best of the size-weighted and unit-weighted ModifiedGreedy runs from ``seed``."""
    best_value, best_items = -1.0, []
    for weights in (catalog.sizes, np.ones(catalog.num_contents)):
        state = _knapsack_state(catalog, coverage, model, budgets)
        for content in seed:
            state.commit((content, cell))
        _modified_greedy(state, cell, weights, lazy)

        if state.value > best_value:
            best_value, best_items = state.value, state.placement.to_rows()

    return best_value, best_items


def fast_greedy_knapsack(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    budget: Capacities = None,
    lazy: bool = False
) -> SolverResult:
    """Budgeted greedy: best of the gain-per-byte run and the unit-weight run, per cell.

    Both runs skip contents larger than the remaining budget; the unit-weight
    run still charges true sizes against the budget.
    """
    started = time.perf_counter()
    budgets = _byte_capacities(coverage, budget)

    logger.info(f"fast_greedy_knapsack: K={catalog.num_contents}, budgets={budgets.tolist()}")

    chosen: List[Item] = []
    for cell in _active_cells(coverage):
        _, items = _cell_runs(catalog, coverage, model, budgets, cell, (), lazy)
        chosen.extend(items)

    state, trace = _replay(catalog, coverage, model, budgets, chosen)
    return _result(state, trace, started, "fast_greedy_knapsack")


def partial_enum_knapsack(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    budget: Capacities = None,
    limit: int = PARTIAL_ENUM_LIMIT,
    lazy: bool = False
) -> SolverResult:
    """Partial enumeration: all subsets below three items, plus every feasible
    three-item seed completed by ModifiedGreedy.

    Raises:
        RefusalError: the catalog is larger than ``limit``
    """
    if catalog.num_contents > limit:
        raise RefusalError(
            f"partial enumeration refuses K={catalog.num_contents} > limit {limit}; "
            f"use fast_greedy_knapsack instead",
            count=catalog.num_contents
        )

    started = time.perf_counter()
    budgets = _byte_capacities(coverage, budget)
    sizes = catalog.sizes
    contents = range(catalog.num_contents)

    logger.info(f"partial_enum_knapsack: K={catalog.num_contents}, budgets={budgets.tolist()}")

    chosen: List[Item] = []
    for cell in _active_cells(coverage):
        limit_bytes = budgets[cell] * (1 + CAPACITY_SLACK)

        small_value, small_set = 0.0, ()
        for size in (1, 2):
            for subset in combinations(contents, size):
                if sizes[list(subset)].sum() > limit_bytes:
                    continue
                value = single_cell_value(catalog, coverage, model, cell, subset)
                if value > small_value:
                    small_value, small_set = value, subset

        seeded_value, seeded_items = -1.0, []
        for seed in combinations(contents, 3):
            if sizes[list(seed)].sum() > limit_bytes:
                continue
            value, items = _cell_runs(catalog, coverage, model, budgets, cell, seed, lazy)
            if value > seeded_value:
                seeded_value, seeded_items = value, items

        if small_value > seeded_value:
            chosen.extend((content, cell) for content in small_set)
        else:
            chosen.extend(seeded_items)

    state, trace = _replay(catalog, coverage, model, budgets, chosen)
    return _result(state, trace, started, "partial_enum_knapsack")


def _matroid_greedy(state: _StateBase, lazy: bool, solver: str, started: float) -> SolverResult:
    run = _GreedyRun(state, _active_cells(state.coverage), lazy=lazy).run()
    return _result(state, run.trace, started, solver)


def greedy_femto(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    capacities: Capacities = None,
    lazy: bool = False
) -> SolverResult:
    """Greedy over (content, cell) pairs under per-cell cardinality budgets.

    A pair whose cell is already full is dropped from the candidate set and
    never added.
    """
    started = time.perf_counter()
    caps = _item_capacities(catalog, coverage, capacities)

    logger.info(f"greedy_femto: K={catalog.num_contents}, M={coverage.num_cells}, C={caps.tolist()}")

    state = EvalState(catalog, coverage, model, form="femto", capacities=caps, capacity_unit="items")
    return _matroid_greedy(state, lazy, "greedy_femto", started)


def greedy_femto_us(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    capacities: Capacities = None,
    lazy: bool = False
) -> SolverResult:
    started = time.perf_counter()
    caps = _item_capacities(catalog, coverage, capacities)

    logger.info(f"greedy_femto_us: K={catalog.num_contents}, M={coverage.num_cells}, C={caps.tolist()}")

    state = SatisfactionState(catalog, coverage, model, capacities=caps, capacity_unit="items")
    return _matroid_greedy(state, lazy, "greedy_femto_us", started)


def _evaluation_state(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    caps: np.ndarray,
    unit: str
) -> _StateBase:
    if model.mode is Mode.SATISFACTION:
        return SatisfactionState(catalog, coverage, model, capacities=caps, capacity_unit=unit)
    form = "single" if coverage.is_single_cache else "femto"
    return EvalState(catalog, coverage, model, form=form, capacities=caps, capacity_unit=unit)


def popularity_baseline(
    catalog: Catalog,
    coverage: CoverageModel,
    capacities: Capacities = None,
    model: Optional[UtilityModel] = None
) -> SolverResult:
    """Every cell stores its most requested contents, ranked by sum_i w_i q_ij p_ik.

    The placement ignores relations. Its objective is evaluated with ``model``
    (identity utilities by default): single-cache SCHR on single-cache
    coverage, femto SCHR otherwise.
    """
    started = time.perf_counter()
    caps = _capacity_vector(coverage, capacities)
    unit = coverage.capacity_unit
    model = model or UtilityModel.identity(catalog.num_contents)

    state = _evaluation_state(catalog, coverage, model, caps, unit)
    weighted = catalog.user_shares[:, None] * catalog.demand
    trace: List[Tuple[Item, float]] = []

    for cell in range(coverage.num_cells):
        scores = coverage.q[:, cell] @ weighted
        for content in np.argsort(-scores, kind="stable"):
            item = (int(content), cell)
            if state.used[cell] >= caps[cell] * (1 - CAPACITY_SLACK) and unit == "items":
                break
            if not state.fits(item):
                continue
            before = state.value
            state.commit(item)
            trace.append((item, state.value - before))

    return _result(state, trace, started, "popularity_baseline")

