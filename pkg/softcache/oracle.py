"""Brute-force optimizers and Monte-Carlo request simulation for small instances."""

import logging
import math

from concurrent.futures import ThreadPoolExecutor
from itertools import combinations, islice, product
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .catalog import Catalog, Mode, UtilityModel, Variant, dense_utility
from .classes import OracleResult, SimulationResult
from .errors import ContractError, ModeError, RefusalError
from .network import CoverageModel
from .objective import CAPACITY_SLACK, Placement, sch_us


logger = logging.getLogger("softcache.oracle")

ENUMERATION_CAP = 10 ** 7
TIE_TOLERANCE = 1e-12
MAX_LISTED = 1000
BLOCK = 4096


def _subset_count(num_contents: int, max_size: int) -> int:
    return sum(math.comb(num_contents, s) for s in range(min(max_size, num_contents) + 1))


def _max_items(sizes: np.ndarray, budget: float) -> int:
    """Largest number of contents that can fit together under ``budget``."""
    fitting = np.cumsum(np.sort(sizes)) <= budget * (1 + CAPACITY_SLACK)
    return int(np.count_nonzero(fitting))


def _subsets(num_contents: int, max_size: int) -> Iterator[Tuple[int, ...]]:
    """All subsets up to ``max_size`` in ranked order (by size, then lexicographic)."""
    for size in range(min(max_size, num_contents) + 1):
        yield from combinations(range(num_contents), size)


def _blocks(subsets: Iterator[Tuple[int, ...]]) -> Iterator[List[Tuple[int, ...]]]:
    while True:
        block = list(islice(subsets, BLOCK))
        if not block:
            return
        yield block


def _miss_factors(dense: np.ndarray, q: np.ndarray, block: List[Tuple[int, ...]]) -> np.ndarray:
    """prod_{n in S} (1 - q_i u_kn^i) for every subset S in ``block``: shape (|block|, N, K)."""
    num_users = q.shape[0]
    factors = np.ones((len(block), num_users, dense.shape[1]))
    for row, subset in enumerate(block):
        for content in subset:
            factors[row] *= 1.0 - q[:, None] * dense[:, :, content]
    return factors


def _best_factors(dense: np.ndarray, q: np.ndarray, block: List[Tuple[int, ...]]) -> np.ndarray:
    """max_{n in S} q_i u_kn^i for every subset S in ``block``: shape (|block|, N, K)."""
    num_users = q.shape[0]
    best = np.zeros((len(block), num_users, dense.shape[1]))
    for row, subset in enumerate(block):
        for content in subset:
            np.maximum(best[row], q[:, None] * dense[:, :, content], out=best[row])
    return best


class _Tracker:
    def __init__(self):
        self.optimum = -np.inf
        self.winners: List[Tuple[Tuple[int, ...], ...]] = []

    def offer(self, values: np.ndarray, labels: Sequence) -> None:
        top = float(values.max()) if values.size else -np.inf
        if top > self.optimum + TIE_TOLERANCE:
            self.optimum = top
            self.winners = []
        if top >= self.optimum - TIE_TOLERANCE:
            for index in np.flatnonzero(values >= self.optimum - TIE_TOLERANCE):
                if len(self.winners) < MAX_LISTED:
                    self.winners.append(labels[index])


def _check_acceptance(model: UtilityModel, oracle: str) -> None:
    if model.mode is not Mode.ACCEPTANCE:
        raise ModeError(f"{oracle} needs an Acceptance-mode utility model, got {model.mode.value}")


def exhaustive_single(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    capacity: Optional[float] = None,
    budget: Optional[float] = None,
    cap: int = ENUMERATION_CAP
) -> OracleResult:
    """Exact single-cache SCHR optimum under a cardinality or byte budget.

    Each cell of a single-cache model is optimized on its own; the listed
    optimal placements combine the per-cell winners (at most 1000 listed).

    Raises:
        RefusalError: more than ``cap`` subsets would be enumerated
    """
    _check_acceptance(model, "exhaustive_single")
    if not coverage.is_single_cache:
        raise ContractError("exhaustive_single needs single-cache coverage")
    if capacity is not None and budget is not None:
        raise ContractError("give either a cardinality capacity or a byte budget, not both")

    cells = [j for j in range(coverage.num_cells) if np.any(coverage.q[:, j] > 0)]
    limits = {}
    for cell in cells:
        if capacity is not None:
            limits[cell] = (int(capacity), None)
        elif budget is not None:
            limits[cell] = (_max_items(catalog.sizes, budget), float(budget))
        elif coverage.capacity_unit == "bytes":
            cell_budget = float(coverage.cache_capacities[cell])
            limits[cell] = (_max_items(catalog.sizes, cell_budget), cell_budget)
        else:
            limits[cell] = (int(coverage.cache_capacities[cell]), None)

    total = sum(_subset_count(catalog.num_contents, max_size) for max_size, _ in limits.values())
    if total > cap:
        raise RefusalError(f"exhaustive_single would enumerate {total} subsets (cap {cap})", count=total)

    dense = dense_utility(model, catalog.num_users)
    weighted = catalog.user_shares[:, None] * catalog.demand
    baseline = np.ones(catalog.num_users)

    optimum = 0.0
    per_cell: List[List[Tuple[int, ...]]] = []
    for cell in cells:
        q = coverage.q[:, cell]
        max_size, cell_budget = limits[cell]
        tracker = _Tracker()

        for block in _blocks(_subsets(catalog.num_contents, max_size)):
            if cell_budget is not None:
                ceiling = cell_budget * (1 + CAPACITY_SLACK)
                block = [s for s in block if catalog.sizes[list(s)].sum() <= ceiling]
                if not block:
                    continue
            misses = _miss_factors(dense, baseline, block)
            values = np.einsum("i,ik,bik->b", q, weighted, 1.0 - misses)
            tracker.offer(values, block)

        optimum += tracker.optimum
        per_cell.append(tracker.winners)

    placements = [
        Placement(coverage.num_cells, [(k, cell) for cell, subset in zip(cells, choice) for k in subset])
        for choice in islice(product(*per_cell), MAX_LISTED)
    ]

    logger.info(f"exhaustive_single: OPT={optimum:.6f} over {total} subsets, {len(placements)} optimal placement(s)")

    return OracleResult(optimum=optimum, placements=placements, enumerated=total)


def exhaustive_femto(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    capacities: Optional[Sequence[float]] = None,
    objective: Optional[str] = None,
    cap: int = ENUMERATION_CAP
) -> OracleResult:
    """Exact optimum over the product of per-cell subsets.

    ``objective`` is ``"schr"`` or ``"sch_us"``; by default it follows the
    utility mode. The last cell's subsets are evaluated as one vectorized
    block for every combination of the other cells.

    Raises:
        RefusalError: the product of per-cell subset counts exceeds ``cap``
    """
    objective = objective or ("schr" if model.mode is Mode.ACCEPTANCE else "sch_us")
    if objective not in ("schr", "sch_us"):
        raise ValueError(f"Unknown objective: {objective}")
    if objective == "schr":
        _check_acceptance(model, "exhaustive_femto")
    elif model.mode is not Mode.SATISFACTION:
        raise ModeError("sch_us oracle needs a Satisfaction-mode utility model")

    caps = coverage.cache_capacities if capacities is None else np.broadcast_to(
        np.asarray(capacities, dtype=np.float64), (coverage.num_cells,)
    )
    if coverage.capacity_unit == "bytes" and capacities is None:
        raise ContractError("exhaustive_femto needs per-cell item capacities")

    per_cell_subsets = [list(_subsets(catalog.num_contents, int(c))) for c in caps]
    total = int(np.prod([len(s) for s in per_cell_subsets], dtype=object))
    if total > cap:
        raise RefusalError(f"exhaustive_femto would enumerate {total} placements (cap {cap})", count=total)

    weighted = catalog.user_shares[:, None] * catalog.demand
    tracker = _Tracker()

    if model.variant is Variant.DISTRIBUTIONAL and objective == "sch_us":
        for choice in product(*per_cell_subsets):
            placement = Placement(coverage.num_cells, [(k, j) for j, s in enumerate(choice) for k in s])
            tracker.offer(np.array([sch_us(catalog, coverage, model, placement)]), [choice])
    else:
        dense = dense_utility(model, catalog.num_users)
        combine = _miss_factors if objective == "schr" else _best_factors
        factors = [combine(dense, coverage.q[:, j], subsets) for j, subsets in enumerate(per_cell_subsets)]
        last = factors[-1]

        for outer in product(*[range(len(s)) for s in per_cell_subsets[:-1]]):
            if objective == "schr":
                state = np.ones_like(weighted)
                for j, index in enumerate(outer):
                    state = state * factors[j][index]
                values = np.sum(weighted) - np.einsum("ik,bik->b", weighted * state, last)
            else:
                state = np.zeros_like(weighted)
                for j, index in enumerate(outer):
                    state = np.maximum(state, factors[j][index])
                values = np.einsum("ik,bik->b", weighted, np.maximum(state[None], last))

            labels = [tuple(per_cell_subsets[j][i] for j, i in enumerate(outer)) + (s,) for s in per_cell_subsets[-1]]
            tracker.offer(values, labels)

    placements = [
        Placement(coverage.num_cells, [(k, j) for j, subset in enumerate(choice) for k in subset])
        for choice in tracker.winners
    ]

    logger.info(
        f"exhaustive_femto ({objective}): OPT={tracker.optimum:.6f} over {total} placements, "
        f"{len(placements)} optimal placement(s)"
    )

    return OracleResult(optimum=tracker.optimum, placements=placements, enumerated=total)


def _sample_contents(rng: np.random.Generator, cumulative: np.ndarray, users: np.ndarray) -> np.ndarray:
    draws = rng.random(users.size)
    contents = np.empty(users.size, dtype=np.int64)
    for user in np.unique(users):
        rows = np.flatnonzero(users == user)
        contents[rows] = np.searchsorted(cumulative[user], draws[rows], side="right")
    return np.minimum(contents, cumulative.shape[1] - 1)


def _simulate_chunk(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    stored: np.ndarray,
    size: int,
    seed: np.random.SeedSequence
) -> int:
    rng = np.random.default_rng(seed)

    users = rng.choice(catalog.num_users, size=size, p=catalog.user_shares)
    contents = _sample_contents(rng, np.cumsum(catalog.demand, axis=1), users)

    if not stored.size:
        return 0

    if coverage.is_single_cache:
        # covered rows are distributions over cells; num_cells means unserved
        serving = np.sum(rng.random(size)[:, None] >= np.cumsum(coverage.q[users], axis=1), axis=1)
        offered = serving[:, None] == stored[None, :, 1]
    else:
        offered = rng.random((size, stored.shape[0])) < coverage.q[users][:, stored[:, 1]]

    utilities = np.zeros((size, stored.shape[0]))
    if model.is_shared:
        utilities = model.full_matrix()[contents][:, stored[:, 0]].toarray()
    else:
        for user in np.unique(users):
            rows = np.flatnonzero(users == user)
            utilities[rows] = model.full_matrix(int(user))[contents[rows]][:, stored[:, 0]].toarray()

    accepted = rng.random((size, stored.shape[0])) < utilities
    return int(np.count_nonzero(np.any(offered & accepted, axis=1)))


def simulate_requests(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    placement: Placement,
    num_requests: int,
    seed: int,
    chunk_size: int = 10000,
    workers: int = 1
) -> SimulationResult:
    """Empirical soft-hit ratio over ``num_requests`` simulated requests.

    Each request draws a user by request share and a content from that
    user's demand. A stored (content, cell) item is accepted with
    probability u_kn (1 for the requested content) and reachable with
    probability q_ij, all independently. On single-cache coverage the
    serving cell is drawn once per request, so the expected ratio is
    schr_single there and schr_femto otherwise. A rejected request is a
    single miss. Chunks use spawned seed sequences, so results do not
    depend on ``workers``.
    """
    if model.mode is not Mode.ACCEPTANCE:
        raise ModeError("simulate_requests needs an Acceptance-mode utility model")
    if num_requests < 0:
        raise ValueError("num_requests must be non-negative")
    if num_requests == 0:
        return SimulationResult(hit_ratio=0.0, stderr=0.0, num_requests=0)

    stored = np.array(placement.to_rows(), dtype=np.int64).reshape(-1, 2)
    sizes = [chunk_size] * (num_requests // chunk_size)
    if num_requests % chunk_size:
        sizes.append(num_requests % chunk_size)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def _run(args: Tuple[int, np.random.SeedSequence]) -> int:
        return _simulate_chunk(catalog, coverage, model, stored, *args)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            hits = sum(executor.map(_run, zip(sizes, seeds)))
    else:
        hits = sum(map(_run, zip(sizes, seeds)))

    ratio = hits / num_requests
    stderr = math.sqrt(ratio * (1.0 - ratio) / num_requests)

    logger.debug(f"simulated {num_requests} requests: hit ratio {ratio:.5f} +- {stderr:.5f}")

    return SimulationResult(hit_ratio=ratio, stderr=stderr, num_requests=num_requests)


def _satisfaction_chunk(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    stored: np.ndarray,
    size: int,
    seed: np.random.SeedSequence
) -> Tuple[float, float]:
    rng = np.random.default_rng(seed)

    users = rng.choice(catalog.num_users, size=size, p=catalog.user_shares)
    contents = _sample_contents(rng, np.cumsum(catalog.demand, axis=1), users)
    available = rng.random((size, coverage.num_cells)) < coverage.q[users]

    if not stored.size:
        return 0.0, 0.0

    utilities = np.zeros((size, stored.shape[0]))
    if model.is_shared:
        utilities = model.full_matrix()[contents][:, stored[:, 0]].toarray()
    else:
        for user in np.unique(users):
            rows = np.flatnonzero(users == user)
            utilities[rows] = model.full_matrix(int(user))[contents[rows]][:, stored[:, 0]].toarray()

    delivered = np.max(np.where(available[:, stored[:, 1]], utilities, 0.0), axis=1)
    return float(delivered.sum()), float(np.square(delivered).sum())


def simulate_satisfaction(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    placement: Placement,
    num_requests: int,
    seed: int,
    chunk_size: int = 10000
) -> SimulationResult:
    """Mean delivered utility when the best reachable stored item is always delivered."""
    if model.mode is not Mode.SATISFACTION:
        raise ModeError("simulate_satisfaction needs a Satisfaction-mode utility model")
    if model.variant is Variant.DISTRIBUTIONAL:
        raise ContractError("simulate_satisfaction works on expected utilities, not distributions")
    if num_requests <= 0:
        return SimulationResult(hit_ratio=0.0, stderr=0.0, num_requests=0)

    stored = np.array(placement.to_rows(), dtype=np.int64).reshape(-1, 2)
    sizes = [chunk_size] * (num_requests // chunk_size)
    if num_requests % chunk_size:
        sizes.append(num_requests % chunk_size)

    total, squares = 0.0, 0.0
    for size, chunk_seed in zip(sizes, np.random.SeedSequence(seed).spawn(len(sizes))):
        chunk_total, chunk_squares = _satisfaction_chunk(catalog, coverage, model, stored, size, chunk_seed)
        total += chunk_total
        squares += chunk_squares

    mean = total / num_requests
    variance = max(squares / num_requests - mean ** 2, 0.0)
    return SimulationResult(hit_ratio=mean, stderr=math.sqrt(variance / num_requests), num_requests=num_requests)
