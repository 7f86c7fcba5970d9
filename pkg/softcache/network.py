import logging

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from scipy.spatial.distance import cdist

from .catalog import PROBABILITY_TOLERANCE, _parse, _read_table
from .errors import IngestError, ValidationError


logger = logging.getLogger("softcache.network")

CAPACITY_UNITS = ("items", "bytes")
COVERAGE_COLUMNS = ["user", "cell", "q"]


def _frozen(array: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if array is not None:
        array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class CoverageModel:
    """User-to-cell coverage probabilities q[i, j] and per-cell capacities.

    Capacities count contents (``capacity_unit="items"``) or bytes.
    Positions are kept when the model comes from a geometric snapshot so
    that nearest-cell association can be resolved later.
    """

    q: np.ndarray
    cache_capacities: np.ndarray
    capacity_unit: str = "items"
    user_positions: Optional[np.ndarray] = None
    cell_positions: Optional[np.ndarray] = None

    def __post_init__(self):
        q = np.atleast_2d(np.array(self.q, dtype=np.float64))
        capacities = np.array(self.cache_capacities, dtype=np.float64).reshape(-1)

        if capacities.size == 1 and q.shape[1] > 1:
            capacities = np.full(q.shape[1], capacities[0])

        if capacities.shape[0] != q.shape[1]:
            raise ValidationError(f"{capacities.shape[0]} capacities given for {q.shape[1]} cells")

        if not np.all(np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
            raise ValidationError("coverage probabilities must lie in [0, 1]")

        if np.any(capacities <= 0):
            raise ValidationError("cache capacities must be positive")

        if self.capacity_unit not in CAPACITY_UNITS:
            raise ValidationError(f"capacity unit must be one of {CAPACITY_UNITS}, got {self.capacity_unit!r}")

        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "cache_capacities", _frozen(capacities))

        for name in ("user_positions", "cell_positions"):
            positions = getattr(self, name)
            if positions is not None:
                object.__setattr__(self, name, _frozen(np.array(positions, dtype=np.float64)))

    @property
    def num_users(self) -> int:
        return self.q.shape[0]

    @property
    def num_cells(self) -> int:
        return self.q.shape[1]

    @property
    def covered_users(self) -> np.ndarray:
        return np.any(self.q > 0, axis=1)

    @property
    def is_single_cache(self) -> bool:
        totals = self.q.sum(axis=1)[self.covered_users]
        return bool(np.all(np.abs(totals - 1.0) <= PROBABILITY_TOLERANCE))

    def cells_per_user(self) -> float:
        return float(self.q.sum(axis=1).mean())

    @classmethod
    def uniform(
        cls,
        q: Union[np.ndarray, Sequence[Sequence[float]]],
        capacity: float,
        capacity_unit: str = "items"
    ) -> "CoverageModel":
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        return cls(q=q, cache_capacities=np.full(q.shape[1], float(capacity)), capacity_unit=capacity_unit)

    def with_capacities(self, capacities: Union[float, Sequence[float]], capacity_unit: Optional[str] = None) -> "CoverageModel":
        return CoverageModel(
            q=self.q,
            cache_capacities=np.broadcast_to(np.asarray(capacities, dtype=np.float64), (self.num_cells,)).copy(),
            capacity_unit=capacity_unit or self.capacity_unit,
            user_positions=self.user_positions,
            cell_positions=self.cell_positions
        )


def generate_geometric(
    num_cells: int,
    num_users: int,
    area_side: float,
    comm_range: float,
    seed: int,
    capacity: float = 5,
    capacity_unit: str = "items"
) -> CoverageModel:
    if num_cells < 1 or num_users < 1 or area_side <= 0 or comm_range <= 0:
        raise ValidationError("geometric scenario parameters must be positive")

    rng = np.random.default_rng(seed)
    cells = rng.uniform(0.0, area_side, size=(num_cells, 2))
    users = rng.uniform(0.0, area_side, size=(num_users, 2))

    distances = cdist(users, cells)
    q = (distances <= comm_range).astype(np.float64)

    model = CoverageModel(
        q=q,
        cache_capacities=np.full(num_cells, float(capacity)),
        capacity_unit=capacity_unit,
        user_positions=users,
        cell_positions=cells
    )

    logger.debug(
        f"Generated {num_cells} cells / {num_users} users (seed {seed}), "
        f"{model.cells_per_user():.2f} cells per user"
    )

    return model


def to_single_cache(
    model: CoverageModel,
    assignment: Union[str, Sequence[Optional[int]]] = "strongest"
) -> CoverageModel:
    """Associate every user with exactly one cell.

    ``"strongest"`` picks the nearest covering cell when positions are known,
    otherwise the covering cell with the largest q; ties go to the lowest
    cell index. Users no cell covers keep an all-zero row.
    """
    if isinstance(assignment, str):
        if assignment != "strongest":
            raise ValueError(f"Unknown assignment rule: {assignment}")

        if model.is_single_cache:
            return model

        covering = model.q > 0
        if model.user_positions is not None and model.cell_positions is not None:
            score = -cdist(model.user_positions, model.cell_positions)
        else:
            score = model.q.copy()
        score = np.where(covering, score, -np.inf)

        chosen = [int(np.argmax(row)) if covering[i].any() else None for i, row in enumerate(score)]
    else:
        chosen = list(assignment)
        if len(chosen) != model.num_users:
            raise ValidationError(f"assignment lists {len(chosen)} users, model has {model.num_users}")

    q = np.zeros_like(model.q)
    uncovered = []
    for user, cell in enumerate(chosen):
        if cell is None or int(cell) < 0:
            uncovered.append(user)
            continue
        if not 0 <= int(cell) < model.num_cells:
            raise IndexError(f"cell index {cell} out of range [0, {model.num_cells})")
        q[user, int(cell)] = 1.0

    if uncovered:
        logger.warning(
            f"{len(uncovered)} user(s) not covered by any cell, dropped from demand: {uncovered[:10]}"
        )

    return CoverageModel(
        q=q,
        cache_capacities=model.cache_capacities,
        capacity_unit=model.capacity_unit,
        user_positions=model.user_positions,
        cell_positions=model.cell_positions
    )


def load_coverage(
    path: Union[str, Path],
    capacity: Union[float, Sequence[float]],
    capacity_unit: str = "items",
    num_users: Optional[int] = None,
    num_cells: Optional[int] = None
) -> CoverageModel:
    """Read a ``user,cell,q`` CSV; unlisted pairs are uncovered."""
    frame = _read_table(path, COVERAGE_COLUMNS, "coverage", allow_empty=False)

    entries: Dict[Tuple[int, int], float] = {}
    for index, row in frame.iterrows():
        line = int(index) + 2
        user = _parse(row["user"], int, "user", line)
        cell = _parse(row["cell"], int, "cell", line)
        value = _parse(row["q"], float, "q", line)

        if user < 0 or cell < 0:
            raise IngestError(f"negative coverage index {user},{cell}", line=line)
        if num_users is not None and user >= num_users:
            raise IngestError(f"user {user} outside 0..{num_users - 1}", line=line)
        if num_cells is not None and cell >= num_cells:
            raise IngestError(f"cell {cell} outside 0..{num_cells - 1}", line=line)
        if (user, cell) in entries:
            raise IngestError(f"duplicate coverage pair {user},{cell}", line=line)
        if not 0.0 <= value <= 1.0:
            raise IngestError(f"coverage probability {value} outside [0, 1]", line=line)

        entries[(user, cell)] = value

    if not entries and (num_users is None or num_cells is None):
        raise IngestError(f"coverage file {path} has no rows; pass num_users and num_cells", line=2)

    num_users = max(user for user, _ in entries) + 1 if num_users is None else num_users
    num_cells = max(cell for _, cell in entries) + 1 if num_cells is None else num_cells

    q = np.zeros((num_users, num_cells))
    for (user, cell), value in entries.items():
        q[user, cell] = value

    return CoverageModel(
        q=q,
        cache_capacities=np.broadcast_to(np.asarray(capacity, dtype=np.float64), (num_cells,)).copy(),
        capacity_unit=capacity_unit
    )
