"""Objective functions and incremental marginal-gain states.

Every objective weights user i by its request share w_i, so values are
fractions of all requests:

    schr_femto = sum_i w_i sum_k p_ik (1 - prod_{(n,j)} (1 - u_kn^i q_ij))
    schr_single = sum_j sum_i w_i q_ij sum_k p_ik (1 - prod_{n in X_j} (1 - u_kn^i))
    sch_us = sum_i w_i sum_k p_ik max_{(n,j)} u_kn^i q_ij
"""

import logging

from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .catalog import Catalog, Mode, UtilityModel, Variant
from .errors import CapacityError, ContractError, ModeError
from .network import CoverageModel


logger = logging.getLogger("softcache.objective")

Item = Tuple[int, int]

CAPACITY_SLACK = 1e-9


class Placement:
    """Immutable set of stored (content, cell) pairs."""

    def __init__(self, num_cells: int, items: Iterable[Item] = ()):
        self.num_cells = int(num_cells)
        seen = set()
        for content, cell in items:
            item = (int(content), int(cell))
            if item in seen:
                raise ContractError(f"duplicate placement item {item}")
            if not 0 <= item[1] < self.num_cells:
                raise IndexError(f"cell index {item[1]} out of range [0, {self.num_cells})")
            seen.add(item)
        self._items = frozenset(seen)

    @property
    def items(self) -> frozenset:
        return self._items

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, item) -> bool:
        return tuple(item) in self._items

    def __iter__(self) -> Iterator[Item]:
        return iter(sorted(self._items))

    def __eq__(self, other) -> bool:
        return isinstance(other, Placement) and self.num_cells == other.num_cells and self._items == other._items

    def __hash__(self) -> int:
        return hash((self.num_cells, self._items))

    def __repr__(self) -> str:
        return f"Placement(num_cells={self.num_cells}, items={sorted(self._items)})"

    def add(self, item: Item) -> "Placement":
        if tuple(item) in self._items:
            raise ContractError(f"item {tuple(item)} already placed")
        return Placement(self.num_cells, list(self._items) + [tuple(item)])

    def contents(self, cell: int) -> np.ndarray:
        return np.array(sorted(k for k, j in self._items if j == cell), dtype=np.int64)

    def by_cell(self) -> List[np.ndarray]:
        return [self.contents(j) for j in range(self.num_cells)]

    def used(self, cell: int, sizes: Optional[np.ndarray] = None) -> float:
        contents = self.contents(cell)
        if sizes is None:
            return float(contents.size)
        return float(np.sum(sizes[contents]))

    def check_capacity(self, coverage: CoverageModel, catalog: Catalog) -> None:
        sizes = catalog.sizes if coverage.capacity_unit == "bytes" else None
        for cell in range(self.num_cells):
            used = self.used(cell, sizes)
            if used > coverage.cache_capacities[cell] * (1 + CAPACITY_SLACK):
                raise CapacityError(
                    f"cell {cell} uses {used} {coverage.capacity_unit}, capacity {coverage.cache_capacities[cell]}"
                )

    def to_rows(self) -> List[Item]:
        return sorted(self._items)


def _check_models(catalog: Catalog, coverage: CoverageModel, model: UtilityModel) -> None:
    if catalog.num_contents != model.num_contents:
        raise ContractError(f"catalog has {catalog.num_contents} contents, utility model {model.num_contents}")
    if catalog.num_users != coverage.num_users:
        raise ContractError(f"catalog has {catalog.num_users} users, coverage model {coverage.num_users}")
    if not model.is_shared and model.num_users != catalog.num_users:
        raise ContractError(f"per-user utility model has {model.num_users} users, catalog {catalog.num_users}")
    if model.user_bound is not None and model.user_bound != catalog.num_users:
        raise ContractError(f"utility model is bound to {model.user_bound} users, catalog {catalog.num_users}")


def _require_mode(model: UtilityModel, mode: Mode, objective: str) -> None:
    if model.mode is not mode:
        raise ModeError(f"{objective} needs a {mode.value}-mode utility model, got {model.mode.value}")


def _check_placement(placement: Placement, catalog: Catalog, coverage: CoverageModel) -> None:
    if placement.num_cells != coverage.num_cells:
        raise ContractError(f"placement has {placement.num_cells} cells, coverage model {coverage.num_cells}")
    for content, _ in placement:
        if not 0 <= content < catalog.num_contents:
            raise IndexError(f"content index {content} out of range [0, {catalog.num_contents})")
    placement.check_capacity(coverage, catalog)


def _columns(model: UtilityModel, contents: np.ndarray, user: Optional[int] = None) -> np.ndarray:
    return model.full_csc(user)[:, contents].toarray()


def single_cell_value(
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    cell: int,
    contents: Sequence[int]
) -> float:
    """Contribution of one cell storing ``contents`` to the single-cache SCHR."""
    contents = np.asarray(sorted(int(k) for k in contents), dtype=np.int64)
    users = np.flatnonzero(coverage.q[:, cell] > 0)
    if not contents.size or not users.size:
        return 0.0

    weighted = catalog.user_shares[users, None] * catalog.demand[users]
    if model.is_shared:
        miss = np.prod(1.0 - _columns(model, contents), axis=1)
        hit = 1.0 - np.broadcast_to(miss, (users.size, miss.size))
    else:
        hit = np.stack([1.0 - np.prod(1.0 - _columns(model, contents, i), axis=1) for i in users])

    return float(coverage.q[users, cell] @ np.sum(weighted * hit, axis=1))


def schr_single(catalog: Catalog, coverage: CoverageModel, model: UtilityModel, placement: Placement) -> float:
    _check_models(catalog, coverage, model)
    _require_mode(model, Mode.ACCEPTANCE, "schr_single")
    if not coverage.is_single_cache:
        raise ContractError("schr_single needs a single-cache coverage model (sum_j q_ij = 1)")
    _check_placement(placement, catalog, coverage)

    return float(sum(
        single_cell_value(catalog, coverage, model, cell, contents)
        for cell, contents in enumerate(placement.by_cell())
    ))


def schr_femto(catalog: Catalog, coverage: CoverageModel, model: UtilityModel, placement: Placement) -> float:
    _check_models(catalog, coverage, model)
    _require_mode(model, Mode.ACCEPTANCE, "schr_femto")
    _check_placement(placement, catalog, coverage)

    miss = np.ones((catalog.num_users, catalog.num_contents))
    for cell, contents in enumerate(placement.by_cell()):
        if not contents.size:
            continue
        q = coverage.q[:, cell]

        if model.is_shared:
            columns = _columns(model, contents)
            miss *= np.prod(1.0 - q[:, None, None] * columns[None, :, :], axis=2)
        else:
            for user in np.flatnonzero(q > 0):
                miss[user] *= np.prod(1.0 - q[user] * _columns(model, contents, user), axis=1)

    return float(np.sum(catalog.user_shares[:, None] * catalog.demand * (1.0 - miss)))


def expected_max(components: Sequence[Tuple[np.ndarray, np.ndarray]]) -> float:
    """E[max(0, X_1, ..., X_n)] for independent discrete non-negative X_i.

    Exact: the CDF of the maximum is the product of the CDFs, evaluated on
    the union of the support points.
    """
    if not components:
        return 0.0

    grid = np.unique(np.concatenate([support for support, _ in components]))
    joint = np.ones_like(grid)
    for support, probs in components:
        order = np.argsort(support, kind="stable")
        cdf = np.cumsum(probs[order])
        position = np.searchsorted(support[order], grid, side="right")
        joint *= np.where(position > 0, cdf[np.maximum(position - 1, 0)], 0.0)

    steps = np.diff(joint, prepend=0.0)
    return float(np.dot(grid, steps))


def _effective_coverage(coverage: CoverageModel, placement: Placement) -> Tuple[np.ndarray, np.ndarray]:
    """q_eff[i, n]: best coverage of user i by a cell storing the n-th stored content."""
    columns: Dict[int, np.ndarray] = {}
    for content, cell in placement:
        current = columns.get(content, np.zeros(coverage.num_users))
        columns[content] = np.maximum(current, coverage.q[:, cell])

    if not columns:
        return np.zeros((coverage.num_users, 0)), np.zeros(0, dtype=np.int64)

    contents = sorted(columns)
    return np.stack([columns[n] for n in contents], axis=1), np.array(contents, dtype=np.int64)


def _expected_best(model: UtilityModel, requested: int, stored: np.ndarray, q_eff: np.ndarray) -> float:
    components = []
    for content, q in zip(stored, q_eff):
        if q <= 0:
            continue
        distribution = model.distribution(requested, int(content))
        if distribution is None:
            continue
        support, probs = distribution
        components.append((support * q, probs))
    return expected_max(components)


def sch_us(catalog: Catalog, coverage: CoverageModel, model: UtilityModel, placement: Placement) -> float:
    _check_models(catalog, coverage, model)
    _require_mode(model, Mode.SATISFACTION, "sch_us")
    _check_placement(placement, catalog, coverage)

    weighted = catalog.user_shares[:, None] * catalog.demand

    if model.variant is Variant.DISTRIBUTIONAL:
        q_eff, stored = _effective_coverage(coverage, placement)
        best = np.zeros_like(weighted)
        for user in range(catalog.num_users):
            if not np.any(q_eff[user] > 0):
                continue
            for requested in np.flatnonzero(weighted[user] > 0):
                best[user, requested] = _expected_best(model, int(requested), stored, q_eff[user])
        return float(np.sum(weighted * best))

    best = np.zeros_like(weighted)
    for cell, contents in enumerate(placement.by_cell()):
        if not contents.size:
            continue
        q = coverage.q[:, cell]
        if model.is_shared:
            top = _columns(model, contents).max(axis=1)
            best = np.maximum(best, q[:, None] * top[None, :])
        else:
            for user in np.flatnonzero(q > 0):
                top = _columns(model, contents, user).max(axis=1)
                best[user] = np.maximum(best[user], q[user] * top)

    return float(np.sum(weighted * best))


class _StateBase:
    def __init__(
        self,
        catalog: Catalog,
        coverage: CoverageModel,
        model: UtilityModel,
        capacities: Optional[Sequence[float]] = None,
        capacity_unit: Optional[str] = None
    ):
        _check_models(catalog, coverage, model)

        self.catalog = catalog
        self.coverage = coverage
        self.model = model
        self.weights = catalog.user_shares[:, None] * catalog.demand

        unit = capacity_unit or coverage.capacity_unit
        caps = coverage.cache_capacities if capacities is None else capacities
        self.capacities = np.broadcast_to(np.asarray(caps, dtype=np.float64), (coverage.num_cells,)).copy()
        self.capacity_unit = unit
        self.used = np.zeros(coverage.num_cells)

        self.placement = Placement(coverage.num_cells)
        self.value = 0.0

        self._users_of_cell = [np.flatnonzero(coverage.q[:, j] > 0) for j in range(coverage.num_cells)]

    def cost(self, content: int) -> float:
        return float(self.catalog.sizes[content]) if self.capacity_unit == "bytes" else 1.0

    def fits(self, item: Item) -> bool:
        content, cell = item
        return self.used[cell] + self.cost(content) <= self.capacities[cell] * (1 + CAPACITY_SLACK)

    def feasible(self, cells: Sequence[int]) -> np.ndarray:
        """(content, cell) mask of candidates that are not placed and still fit."""
        cells = [int(cell) for cell in cells]
        costs = self.catalog.sizes if self.capacity_unit == "bytes" else np.ones(self.catalog.num_contents)
        limits = self.capacities[cells] * (1 + CAPACITY_SLACK)
        mask = self.used[cells][None, :] + costs[:, None] <= limits[None, :]

        position = {cell: p for p, cell in enumerate(cells)}
        for content, cell in self.placement:
            if cell in position:
                mask[content, position[cell]] = False
        return mask

    def _check_candidate(self, item: Item) -> Item:
        content, cell = int(item[0]), int(item[1])
        if not 0 <= content < self.catalog.num_contents:
            raise IndexError(f"content index {content} out of range [0, {self.catalog.num_contents})")
        if not 0 <= cell < self.coverage.num_cells:
            raise IndexError(f"cell index {cell} out of range [0, {self.coverage.num_cells})")
        if (content, cell) in self.placement:
            raise ContractError(f"candidate {(content, cell)} already placed")
        return content, cell

    def _record(self, item: Item, gain: float) -> None:
        if not self.fits(item):
            raise CapacityError(
                f"adding content {item[0]} exceeds capacity {self.capacities[item[1]]} of cell {item[1]}"
            )
        self.used[item[1]] += self.cost(item[0])
        self.placement = self.placement.add(item)
        self.value += gain

    def gain(self, item: Item) -> float:
        raise NotImplementedError

    def commit(self, item: Item) -> "_StateBase":
        raise NotImplementedError

    def gain_row(self, cell: int) -> np.ndarray:
        raise NotImplementedError


class EvalState(_StateBase):
    """Residual miss probabilities r_ik for the product-form objectives.

    ``form="femto"`` keeps one residual per (user, content) with factors
    (1 - u q_ij); ``form="single"`` keeps one residual per cell with factors
    (1 - u) and weights gains by q_ij. The gain of (l, m) in both forms is
    sum_i q_im w_i sum_k p_ik u_kl^i r_ik.
    """

    def __init__(
        self,
        catalog: Catalog,
        coverage: CoverageModel,
        model: UtilityModel,
        form: str = "femto",
        capacities: Optional[Sequence[float]] = None,
        capacity_unit: Optional[str] = None
    ):
        _require_mode(model, Mode.ACCEPTANCE, "EvalState")
        if form not in ("femto", "single"):
            raise ValueError(f"Unknown objective form: {form}")
        if form == "single" and not coverage.is_single_cache:
            raise ContractError("single-cache form needs a single-cache coverage model")

        super().__init__(catalog, coverage, model, capacities, capacity_unit)
        self.form = form
        self._shared_residual = np.ones_like(self.weights) if form == "femto" else None
        self._cell_residuals: Dict[int, np.ndarray] = {}

    def residual(self, cell: Optional[int] = None) -> np.ndarray:
        if self.form == "femto":
            return self._shared_residual
        if cell not in self._cell_residuals:
            return np.ones_like(self.weights)
        return self._cell_residuals[cell]

    def gain(self, item: Item) -> float:
        content, cell = self._check_candidate(item)
        users = self._users_of_cell[cell]
        if not users.size:
            return 0.0

        q = self.coverage.q[users, cell]
        residual = self.residual(cell)

        if self.model.is_shared:
            ks, us = self.model.column(content)
            block = self.weights[np.ix_(users, ks)] * residual[np.ix_(users, ks)]
            return float(q @ (block @ us))

        total = 0.0
        for qi, user in zip(q, users):
            ks, us = self.model.column(content, user)
            total += qi * float(np.dot(self.weights[user, ks] * residual[user, ks], us))
        return total

    def commit(self, item: Item) -> "EvalState":
        content, cell = self._check_candidate(item)
        gain = self.gain((content, cell))
        self._record((content, cell), gain)

        users = self._users_of_cell[cell]
        if not users.size:
            return self

        if self.form == "femto":
            residual = self._shared_residual
            scale = self.coverage.q[users, cell]
        else:
            residual = self._cell_residuals.setdefault(cell, np.ones_like(self.weights))
            scale = np.ones(users.size)

        if self.model.is_shared:
            ks, us = self.model.column(content)
            residual[np.ix_(users, ks)] *= 1.0 - scale[:, None] * us[None, :]
        else:
            for s, user in zip(scale, users):
                ks, us = self.model.column(content, user)
                residual[user, ks] *= 1.0 - s * us

        return self

    def _propagated(self, weighted: np.ndarray, users: np.ndarray) -> np.ndarray:
        """Rows of weighted @ U (per user for per-user models)."""
        if self.model.is_shared:
            full = self.model.full_matrix()
            return np.asarray(full.T.dot(weighted.T)).T
        return np.stack([
            np.asarray(self.model.full_matrix(user).T.dot(weighted[row]))
            for row, user in enumerate(users)
        ])

    def gain_row(self, cell: int) -> np.ndarray:
        users = self._users_of_cell[cell]
        if not users.size:
            return np.zeros(self.catalog.num_contents)

        weighted = self.weights[users] * self.residual(cell)[users]
        return self.coverage.q[users, cell] @ self._propagated(weighted, users)

    def recompute(self) -> float:
        if self.form == "single":
            return schr_single(self.catalog, self.coverage, self.model, self.placement)
        return schr_femto(self.catalog, self.coverage, self.model, self.placement)


class SatisfactionState(_StateBase):
    """Running best delivered utility b_ik for the SCH-US objective.

    For deterministic utilities the gain of (l, m) is the ramp
    sum_i w_i sum_k p_ik max(0, u_kl^i q_im - b_ik). For distributional
    models b_ik is the current expected maximum and the gain is recomputed
    exactly over the affected (user, content) pairs.
    """

    def __init__(
        self,
        catalog: Catalog,
        coverage: CoverageModel,
        model: UtilityModel,
        capacities: Optional[Sequence[float]] = None,
        capacity_unit: Optional[str] = None
    ):
        _require_mode(model, Mode.SATISFACTION, "SatisfactionState")
        super().__init__(catalog, coverage, model, capacities, capacity_unit)

        self.best = np.zeros_like(self.weights)
        self._distributional = model.variant is Variant.DISTRIBUTIONAL
        self._q_eff: Dict[int, np.ndarray] = {}

        if not self._distributional:
            csc = model.full_csc() if model.is_shared else None
            self._entry_columns = (
                np.repeat(np.arange(model.num_contents), np.diff(csc.indptr)) if csc is not None else None
            )

    def _candidate_best(self, content: int, cell: int, users: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Affected requested contents and the expected best after adding the candidate."""
        ks, _ = self.model.column(content)
        q_new = self._q_eff.get(content, np.zeros(self.coverage.num_users)).copy()
        q_new[users] = np.maximum(q_new[users], self.coverage.q[users, cell])

        stored = sorted(set(self._q_eff) | {content})
        updated = np.zeros((users.size, ks.size))
        for row, user in enumerate(users):
            q_user = np.array([q_new[user] if n == content else self._q_eff[n][user] for n in stored])
            for col, requested in enumerate(ks):
                updated[row, col] = _expected_best(self.model, int(requested), np.array(stored), q_user)
        return ks, updated

    def gain(self, item: Item) -> float:
        content, cell = self._check_candidate(item)
        users = self._users_of_cell[cell]
        if not users.size:
            return 0.0

        if self._distributional:
            ks, updated = self._candidate_best(content, cell, users)
            delta = updated - self.best[np.ix_(users, ks)]
            return float(np.sum(self.weights[np.ix_(users, ks)] * delta))

        q = self.coverage.q[users, cell]
        if self.model.is_shared:
            ks, us = self.model.column(content)
            ramp = np.maximum(0.0, q[:, None] * us[None, :] - self.best[np.ix_(users, ks)])
            return float(np.sum(self.weights[np.ix_(users, ks)] * ramp))

        total = 0.0
        for qi, user in zip(q, users):
            ks, us = self.model.column(content, user)
            ramp = np.maximum(0.0, qi * us - self.best[user, ks])
            total += float(np.dot(self.weights[user, ks], ramp))
        return total

    def commit(self, item: Item) -> "SatisfactionState":
        content, cell = self._check_candidate(item)
        users = self._users_of_cell[cell]

        if self._distributional and users.size:
            ks, updated = self._candidate_best(content, cell, users)
            gain = float(np.sum(self.weights[np.ix_(users, ks)] * (updated - self.best[np.ix_(users, ks)])))
            self._record((content, cell), gain)
            self.best[np.ix_(users, ks)] = updated
            q_eff = self._q_eff.setdefault(content, np.zeros(self.coverage.num_users))
            q_eff[users] = np.maximum(q_eff[users], self.coverage.q[users, cell])
            return self

        gain = self.gain((content, cell))
        self._record((content, cell), gain)
        if not users.size:
            return self

        q = self.coverage.q[users, cell]
        if self.model.is_shared:
            ks, us = self.model.column(content)
            block = self.best[np.ix_(users, ks)]
            self.best[np.ix_(users, ks)] = np.maximum(block, q[:, None] * us[None, :])
        else:
            for qi, user in zip(q, users):
                ks, us = self.model.column(content, user)
                self.best[user, ks] = np.maximum(self.best[user, ks], qi * us)

        return self

    def gain_row(self, cell: int) -> np.ndarray:
        users = self._users_of_cell[cell]
        row = np.zeros(self.catalog.num_contents)
        if not users.size:
            return row

        if self._distributional or not self.model.is_shared:
            for content in range(self.catalog.num_contents):
                if (content, cell) not in self.placement:
                    row[content] = self.gain((content, cell))
            return row

        csc = self.model.full_csc()
        q = self.coverage.q[users, cell]
        ramp = np.maximum(0.0, q[:, None] * csc.data[None, :] - self.best[users][:, csc.indices])
        per_entry = np.sum(self.weights[users][:, csc.indices] * ramp, axis=0)
        return np.bincount(self._entry_columns, weights=per_entry, minlength=self.catalog.num_contents)

    def recompute(self) -> float:
        return sch_us(self.catalog, self.coverage, self.model, self.placement)


def marginal_gain(state: EvalState, candidate: Item) -> float:
    if not isinstance(state, EvalState):
        raise ContractError("marginal_gain needs an EvalState; use max_gain_sch_us for SCH-US states")
    return state.gain(candidate)


def commit(state: _StateBase, candidate: Item) -> _StateBase:
    return state.commit(candidate)


def max_gain_sch_us(state: SatisfactionState, candidate: Item) -> float:
    if not isinstance(state, SatisfactionState):
        raise ContractError("max_gain_sch_us needs a SatisfactionState")
    return state.gain(candidate)


def evaluate(
    objective: str,
    catalog: Catalog,
    coverage: CoverageModel,
    model: UtilityModel,
    placement: Placement
) -> float:
    if objective not in OBJECTIVES:
        raise ValueError(f"Unknown objective: {objective}")
    return OBJECTIVES[objective](catalog, coverage, model, placement)


OBJECTIVES = {
    "schr_single": schr_single,
    "schr_femto": schr_femto,
    "sch_us": sch_us,
}
