import logging
import re

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from scipy import sparse

from .errors import ContractError, IngestError, ValidationError


logger = logging.getLogger("softcache.catalog")

PROBABILITY_TOLERANCE = 1e-9

CONTENT_COLUMNS = ["id", "popularity", "size_bytes"]
RELATION_COLUMNS = ["src", "dst", "utility"]

Distribution = Tuple[np.ndarray, np.ndarray]


class Variant(str, Enum):
    PER_USER = "per_user"
    DISTRIBUTIONAL = "distributional"
    AVERAGE = "average"


class Mode(str, Enum):
    ACCEPTANCE = "acceptance"
    SATISFACTION = "satisfaction"


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Catalog:
    """Contents with sizes and the per-user request distribution.

    ``demand[i, k]`` is p_k^i. ``user_shares[i]`` is the fraction of all
    requests issued by user i (uniform when omitted); objectives weight
    users by it so every hit ratio stays a fraction of requests.
    """

    sizes: np.ndarray
    demand: np.ndarray
    user_shares: Optional[np.ndarray] = None

    def __post_init__(self):
        sizes = np.array(self.sizes, dtype=np.float64).reshape(-1)
        demand = np.atleast_2d(np.array(self.demand, dtype=np.float64))

        if demand.ndim != 2 or demand.shape[1] != sizes.shape[0]:
            raise ValidationError(
                f"demand shape {demand.shape} does not match {sizes.shape[0]} contents"
            )

        if sizes.shape[0] < 1:
            raise ValidationError("catalog must contain at least one content")

        if not np.all(np.isfinite(sizes)) or np.any(sizes <= 0):
            raise ValidationError("content sizes must be positive")

        if not np.all(np.isfinite(demand)) or np.any(demand < 0):
            raise ValidationError("request probabilities must be non-negative")

        row_sums = demand.sum(axis=1)
        bad = np.flatnonzero(np.abs(row_sums - 1.0) > PROBABILITY_TOLERANCE)
        if bad.size:
            raise ValidationError(
                f"request probabilities of user {int(bad[0])} sum to {row_sums[bad[0]]!r}, not 1"
            )

        if self.user_shares is None:
            shares = np.full(demand.shape[0], 1.0 / demand.shape[0])
        else:
            shares = np.array(self.user_shares, dtype=np.float64).reshape(-1)
            if shares.shape[0] != demand.shape[0]:
                raise ValidationError(
                    f"{shares.shape[0]} user shares given for {demand.shape[0]} users"
                )
            if np.any(shares < 0) or abs(shares.sum() - 1.0) > PROBABILITY_TOLERANCE:
                raise ValidationError("user shares must be non-negative and sum to 1")

        object.__setattr__(self, "sizes", _frozen(sizes))
        object.__setattr__(self, "demand", _frozen(demand))
        object.__setattr__(self, "user_shares", _frozen(shares))

    @property
    def num_contents(self) -> int:
        return self.sizes.shape[0]

    @property
    def num_users(self) -> int:
        return self.demand.shape[0]

    @property
    def popularity(self) -> np.ndarray:
        return self.user_shares @ self.demand

    @property
    def has_uniform_sizes(self) -> bool:
        return bool(np.all(self.sizes == self.sizes[0]))

    @classmethod
    def from_popularity(
        cls,
        popularity: Sequence[float],
        num_users: int = 1,
        sizes: Optional[Sequence[float]] = None
    ) -> "Catalog":
        counts = np.asarray(popularity, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise ValidationError("total popularity must be positive")

        p = counts / total
        if sizes is None:
            sizes = np.ones(counts.shape[0])

        return cls(sizes=sizes, demand=np.tile(p, (num_users, 1)))

    def with_users(self, num_users: int) -> "Catalog":
        return Catalog(sizes=self.sizes, demand=np.tile(self.popularity, (num_users, 1)))


def _sparse_from_entries(
    num_contents: int,
    entries: Union[Mapping[Tuple[int, int], float], sparse.spmatrix]
) -> sparse.csr_matrix:
    if sparse.issparse(entries):
        matrix = sparse.csr_matrix(entries, dtype=np.float64)
        if matrix.shape != (num_contents, num_contents):
            raise ValidationError(f"relation matrix shape {matrix.shape} != ({num_contents}, {num_contents})")
        if np.any(matrix.diagonal() != 0):
            raise ValidationError("diagonal utilities are implicit and must not be stored")
    else:
        rows, cols, values = [], [], []
        for (k, n), value in entries.items():
            _check_index(k, num_contents, "content")
            _check_index(n, num_contents, "content")
            if k == n:
                raise ValidationError(f"diagonal utility ({k},{k}) is implicit and must not be stored")
            rows.append(k)
            cols.append(n)
            values.append(float(value))

        matrix = sparse.csr_matrix(
            (np.asarray(values, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(num_contents, num_contents)
        )

    matrix.eliminate_zeros()
    matrix.sort_indices()
    return matrix


def _check_index(index: int, bound: int, what: str) -> None:
    if not 0 <= int(index) < bound:
        raise IndexError(f"{what} index {index} out of range [0, {bound})")


class UtilityModel:
    """Sparse content-relation model U in one of three knowledge variants.

    Diagonal utilities are never stored; they evaluate to 1 in Acceptance
    mode and to ``u_max`` in Satisfaction mode. Absent pairs evaluate to 0.
    Use the ``average``, ``per_user``, ``distributional`` and ``identity``
    constructors rather than ``__init__``.
    """

    def __init__(
        self,
        num_contents: int,
        variant: Variant,
        mode: Mode = Mode.ACCEPTANCE,
        u_max: float = 1.0,
        shared: Optional[sparse.csr_matrix] = None,
        per_user: Optional[List[sparse.csr_matrix]] = None,
        distributions: Optional[Dict[Tuple[int, int], Distribution]] = None
    ):
        self.num_contents = int(num_contents)
        self.variant = Variant(variant)
        self.mode = Mode(mode)
        self.u_max = float(u_max) if self.mode is Mode.SATISFACTION else 1.0

        if self.u_max <= 0:
            raise ValidationError("u_max must be positive")

        self._shared = shared
        self._per_user = per_user
        self.user_bound: Optional[int] = None if per_user is None else len(per_user)
        self._distributions = distributions or {}
        self._full_csr: Dict[Optional[int], sparse.csr_matrix] = {}
        self._full_csc: Dict[Optional[int], sparse.csc_matrix] = {}

        for matrix in self._matrices():
            self._validate_values(matrix.data)

    @classmethod
    def average(
        cls,
        num_contents: int,
        entries: Union[Mapping[Tuple[int, int], float], sparse.spmatrix, None] = None,
        mode: Mode = Mode.ACCEPTANCE,
        u_max: float = 1.0
    ) -> "UtilityModel":
        shared = _sparse_from_entries(num_contents, entries if entries is not None else {})
        return cls(num_contents, Variant.AVERAGE, mode, u_max, shared=shared)

    @classmethod
    def identity(cls, num_contents: int, mode: Mode = Mode.ACCEPTANCE, u_max: float = 1.0) -> "UtilityModel":
        return cls.average(num_contents, {}, mode, u_max)

    @classmethod
    def per_user(
        cls,
        num_contents: int,
        num_users: int,
        entries: Mapping[Tuple[int, int, int], float],
        mode: Mode = Mode.ACCEPTANCE,
        u_max: float = 1.0
    ) -> "UtilityModel":
        grouped: List[Dict[Tuple[int, int], float]] = [{} for _ in range(num_users)]
        for (i, k, n), value in entries.items():
            _check_index(i, num_users, "user")
            grouped[i][(k, n)] = value

        matrices = [_sparse_from_entries(num_contents, group) for group in grouped]
        return cls(num_contents, Variant.PER_USER, mode, u_max, per_user=matrices)

    @classmethod
    def distributional(
        cls,
        num_contents: int,
        distributions: Mapping[Tuple[int, int], Tuple[Sequence[float], Sequence[float]]],
        mode: Mode = Mode.ACCEPTANCE,
        u_max: float = 1.0
    ) -> "UtilityModel":
        cleaned: Dict[Tuple[int, int], Distribution] = {}
        means: Dict[Tuple[int, int], float] = {}

        for (k, n), (support, probs) in distributions.items():
            support = np.asarray(support, dtype=np.float64).reshape(-1)
            probs = np.asarray(probs, dtype=np.float64).reshape(-1)

            if support.shape != probs.shape or support.size == 0:
                raise ValidationError(f"distribution ({k},{n}) needs matching non-empty support and probabilities")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROBABILITY_TOLERANCE:
                raise ValidationError(f"probabilities of distribution ({k},{n}) must be non-negative and sum to 1")

            cleaned[(int(k), int(n))] = (_frozen(support), _frozen(probs))
            means[(k, n)] = float(np.dot(support, probs))

        model = cls(
            num_contents, Variant.DISTRIBUTIONAL, mode, u_max,
            shared=_sparse_from_entries(num_contents, means),
            distributions=cleaned
        )
        for support, _ in cleaned.values():
            model._validate_values(support)

        return model

    def _matrices(self) -> List[sparse.csr_matrix]:
        if self._per_user is not None:
            return self._per_user
        return [self._shared]

    def _validate_values(self, values: np.ndarray) -> None:
        if values.size == 0:
            return
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError("utilities must be finite and non-negative")
        if np.any(values > self.u_max):
            raise ValidationError(
                f"utilities must not exceed {self.u_max} in {self.mode.value} mode"
            )

    @property
    def is_shared(self) -> bool:
        return self._per_user is None

    @property
    def num_users(self) -> Optional[int]:
        return None if self._per_user is None else len(self._per_user)

    @property
    def diagonal(self) -> float:
        return self.u_max

    def matrix(self, user: Optional[int] = None) -> sparse.csr_matrix:
        """Expected off-diagonal utilities (row: requested, column: candidate)."""
        if self._per_user is None:
            return self._shared
        if user is None:
            raise ContractError("per-user utility model needs a user index")
        _check_index(user, len(self._per_user), "user")
        return self._per_user[user]

    def full_matrix(self, user: Optional[int] = None) -> sparse.csr_matrix:
        key = None if self.is_shared else user
        if key not in self._full_csr:
            full = self.matrix(user) + sparse.identity(self.num_contents, format="csr") * self.diagonal
            full = sparse.csr_matrix(full)
            full.sort_indices()
            self._full_csr[key] = full
        return self._full_csr[key]

    def full_csc(self, user: Optional[int] = None) -> sparse.csc_matrix:
        key = None if self.is_shared else user
        if key not in self._full_csc:
            full = sparse.csc_matrix(self.full_matrix(user))
            full.sort_indices()
            self._full_csc[key] = full
        return self._full_csc[key]

    def column(self, candidate: int, user: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Requested contents k with u_{k,candidate} > 0 and their utilities."""
        csc = self.full_csc(user)
        start, stop = csc.indptr[candidate], csc.indptr[candidate + 1]
        return csc.indices[start:stop], csc.data[start:stop]

    def utility(self, user: int, requested: int, candidate: int) -> float:
        _check_index(requested, self.num_contents, "content")
        _check_index(candidate, self.num_contents, "content")
        if self._per_user is not None:
            _check_index(user, len(self._per_user), "user")
        elif self.user_bound is not None:
            _check_index(user, self.user_bound, "user")
        elif user is not None and int(user) < 0:
            raise IndexError(f"user index {user} out of range")

        if requested == candidate:
            return self.diagonal

        return float(self.matrix(user)[requested, candidate])

    def distribution(self, requested: int, candidate: int, user: Optional[int] = None) -> Optional[Distribution]:
        """Discrete distribution of u_{requested,candidate}; None when absent."""
        if requested == candidate:
            return np.array([self.diagonal]), np.array([1.0])

        if self.variant is Variant.DISTRIBUTIONAL:
            return self._distributions.get((requested, candidate))

        value = float(self.matrix(user)[requested, candidate])
        if value == 0.0:
            return None
        return np.array([value]), np.array([1.0])

    def distributions(self) -> Dict[Tuple[int, int], Distribution]:
        return dict(self._distributions)

    def rescaled(self, level: float) -> "UtilityModel":
        """Same relation graph with every stored utility set to ``level``."""
        if self.variant is Variant.DISTRIBUTIONAL:
            points = {pair: ([level], [1.0]) for pair in self._distributions}
            model = UtilityModel.distributional(self.num_contents, points, self.mode, self.u_max)
            model.user_bound = self.user_bound
            return model

        def _relabel(matrix: sparse.csr_matrix) -> sparse.csr_matrix:
            relabelled = matrix.copy()
            relabelled.data = np.full(relabelled.data.shape, float(level))
            return _sparse_from_entries(self.num_contents, relabelled)

        if self._per_user is not None:
            matrices = [_relabel(matrix) for matrix in self._per_user]
            return UtilityModel(self.num_contents, Variant.PER_USER, self.mode, self.u_max, per_user=matrices)

        model = UtilityModel(self.num_contents, Variant.AVERAGE, self.mode, self.u_max, shared=_relabel(self._shared))
        model.user_bound = self.user_bound
        return model

    def bind_users(self, num_users: int) -> "UtilityModel":
        """Copy of a shared model whose user indices are checked against ``num_users``.

        Unbound shared models accept any non-negative user index.
        """
        if num_users < 1:
            raise ValidationError("num_users must be positive")
        if not self.is_shared and num_users != self.num_users:
            raise ContractError(f"per-user model has {self.num_users} users, cannot bind to {num_users}")
        model = self.with_mode(self.mode, self.u_max)
        model.user_bound = int(num_users)
        return model

    def with_mode(self, mode: Mode, u_max: float = 1.0) -> "UtilityModel":
        model = UtilityModel.__new__(UtilityModel)
        model.__dict__.update(self.__dict__)
        model.mode = Mode(mode)
        model.u_max = float(u_max) if model.mode is Mode.SATISFACTION else 1.0
        model._full_csr = {}
        model._full_csc = {}
        for matrix in model._matrices():
            model._validate_values(matrix.data)
        return model

    def __repr__(self) -> str:
        stored = sum(matrix.nnz for matrix in self._matrices())
        return (
            f"UtilityModel(variant={self.variant.value}, mode={self.mode.value}, "
            f"K={self.num_contents}, stored={stored})"
        )


def utility(model: UtilityModel, user: int, requested: int, candidate: int) -> float:
    return model.utility(user, requested, candidate)


def mean_related_degree(model: UtilityModel) -> float:
    if not model.is_shared:
        raise ContractError("mean related degree is defined for shared (average) utility models")

    return model.matrix().nnz / model.num_contents


def dense_utility(model: UtilityModel, num_users: Optional[int] = None) -> np.ndarray:
    """Expected utilities as a (users, K, K) array, diagonal included.

    Shared models produce a single leading slice that broadcasts over users.
    """
    if model.is_shared:
        return model.full_matrix().toarray()[None, :, :]

    users = model.num_users if num_users is None else num_users
    return np.stack([model.full_matrix(i).toarray() for i in range(users)])


_PANDAS_LINE = re.compile(r"line (\d+)")


def _read_table(path: Union[str, Path], columns: List[str], kind: str, allow_empty: bool) -> pd.DataFrame:
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skip_blank_lines=False, skipinitialspace=True
        )
    except pd.errors.EmptyDataError:
        if allow_empty:
            return pd.DataFrame(columns=columns)
        raise IngestError(f"{kind} file {path} is empty", line=1)
    except pd.errors.ParserError as e:
        match = _PANDAS_LINE.search(str(e))
        raise IngestError(
            f"malformed {kind} file {path}: {e}",
            line=int(match.group(1)) if match else None
        ) from e

    header = [str(column).strip() for column in frame.columns]
    if header != columns:
        raise IngestError(f"{kind} header must be {','.join(columns)}, got {','.join(header)}", line=1)

    frame.columns = columns
    blank = frame.apply(lambda row: all(str(value).strip() == "" for value in row), axis=1)
    return frame[~blank] if len(frame) else frame


def _parse(value: str, cast, column: str, line: int):
    text = str(value).strip()
    try:
        parsed = cast(text)
    except ValueError:
        raise IngestError(f"column {column!r}: cannot parse {text!r}", line=line)

    if isinstance(parsed, float) and not np.isfinite(parsed):
        raise IngestError(f"column {column!r}: value {text!r} is not finite", line=line)

    return parsed


def ingest_catalog(
    content_file: Union[str, Path],
    relations_file: Union[str, Path],
    num_users: int = 1,
    mode: Mode = Mode.ACCEPTANCE,
    u_max: float = 1.0
) -> Tuple[Catalog, UtilityModel]:
    """Read the content and relation CSV files into validated models.

    Args:
        content_file: CSV with header ``id,popularity,size_bytes``
        relations_file: CSV with header ``src,dst,utility`` (directed edges)
        num_users: number of users sharing the normalised popularity
        mode: how relation utilities are interpreted
        u_max: satisfaction ceiling (Satisfaction mode only)

    Returns:
        The catalog and an Average-variant utility model

    Raises:
        IngestError: malformed line (with its line number)
        ValidationError: unknown ids, duplicate edges or out-of-range values
    """
    contents = _read_table(content_file, CONTENT_COLUMNS, "content", allow_empty=False)

    ids, counts, sizes = [], [], []
    for index, row in contents.iterrows():
        line = int(index) + 2
        ids.append(_parse(row["id"], int, "id", line))
        counts.append(_parse(row["popularity"], float, "popularity", line))
        sizes.append(_parse(row["size_bytes"], float, "size_bytes", line))

        if counts[-1] < 0:
            raise IngestError("popularity must be non-negative", line=line)
        if sizes[-1] <= 0:
            raise IngestError("size_bytes must be positive", line=line)

    num_contents = len(ids)
    if num_contents == 0:
        raise ValidationError(f"content file {content_file} lists no contents")

    if sorted(ids) != list(range(num_contents)):
        raise ValidationError(f"content ids must be exactly 0..{num_contents - 1}")

    order = np.argsort(np.asarray(ids))
    catalog = Catalog.from_popularity(
        np.asarray(counts)[order], num_users=num_users, sizes=np.asarray(sizes)[order]
    )

    relations = _read_table(relations_file, RELATION_COLUMNS, "relations", allow_empty=True)
    ceiling = 1.0 if Mode(mode) is Mode.ACCEPTANCE else float(u_max)

    edges: Dict[Tuple[int, int], float] = {}
    seen = set()
    for index, row in relations.iterrows():
        line = int(index) + 2
        src = _parse(row["src"], int, "src", line)
        dst = _parse(row["dst"], int, "dst", line)
        value = _parse(row["utility"], float, "utility", line)

        for endpoint in (src, dst):
            if not 0 <= endpoint < num_contents:
                raise ValidationError(f"line {line}: relation references unknown content id {endpoint}")
        if src == dst:
            raise ValidationError(f"line {line}: self relation {src},{dst} is implicit")
        if (src, dst) in seen:
            raise ValidationError(f"line {line}: duplicate relation {src},{dst}")
        seen.add((src, dst))
        if not 0.0 <= value <= ceiling:
            raise ValidationError(f"line {line}: utility {value} outside [0, {ceiling}]")
        if value == 0.0:
            logger.warning(f"line {line}: relation {src},{dst} has zero utility and is not stored")
            continue

        edges[(src, dst)] = value

    model = UtilityModel.average(num_contents, edges, mode=mode, u_max=u_max)

    logger.info(
        f"Ingested {num_contents} contents and {len(edges)} relations "
        f"from {content_file} and {relations_file}"
    )

    return catalog, model
