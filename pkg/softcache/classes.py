import logging

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .errors import ConfigError
from .network import CoverageModel
from .objective import Item, Placement


CATALOG_KINDS = ("synthetic", "ingested", "bundle")
UTILITY_KINDS = ("sch1", "sch2", "identity", "ingested")
NETWORK_SOURCES = ("geometric", "file")
SWEEP_AXES = ("capacity", "num_cells", "mean_degree", "acceptance", "zipf_exponent")
SCHEMES = ("Single", "SingleSCH", "Femto", "FemtoSCH", "FemtoUS", "SingleSCHPartialEnum")
DEFAULT_SCHEMES = ["Single", "SingleSCH", "Femto", "FemtoSCH"]

SWEEP_COLUMNS = ["axis", "value", "scheme", "seed", "objective", "sim_hit_ratio", "sim_stderr", "solve_ms"]
EXTRA_COLUMNS = ["network_seed", "utility_seed", "error"]


def _build(cls, data: Any, path: str, base_dir: Optional[Path]):
    """Map a JSON object onto a (possibly nested) config dataclass."""
    if isinstance(data, cls):
        return data

    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")

    known = {f.name: f for f in fields(cls) if f.init}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key {path + '.' if path else ''}{unknown[0]}")

    kwargs = {}
    for name, value in data.items():
        nested = _NESTED.get((cls.__name__, name))
        key_path = f"{path}.{name}" if path else name

        if nested is not None and value is not None:
            value = _build(nested, value, key_path, base_dir)
        elif name in _PATH_FIELDS.get(cls.__name__, ()) and value is not None:
            value = str(_resolve(value, base_dir))

        kwargs[name] = value

    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or cls.__name__}: {e}") from e


def _resolve(value: str, base_dir: Optional[Path]) -> Path:
    candidate = Path(value)
    if base_dir is not None and not candidate.is_absolute():
        candidate = base_dir / candidate
    return candidate


@dataclass
class CatalogSource:
    kind: str = "synthetic"
    num_contents: int = 2098
    zipf_exponent: float = 0.8
    size_range: Optional[List[float]] = None
    contents: Optional[str] = None
    relations: Optional[str] = None
    bundle: Optional[str] = None

    def __post_init__(self):
        if self.kind not in CATALOG_KINDS:
            raise ConfigError(f"catalog.kind must be one of {CATALOG_KINDS}, got {self.kind!r}")

        if self.kind == "synthetic" and self.num_contents < 1:
            raise ConfigError("catalog.num_contents must be at least 1")

        if self.zipf_exponent < 0:
            raise ConfigError("catalog.zipf_exponent must be non-negative")

        if self.kind == "ingested" and (self.contents is None or self.relations is None):
            raise ConfigError("ingested catalog needs both contents and relations files")

        if self.kind == "bundle" and self.bundle is None:
            raise ConfigError("bundle catalog needs a bundle file")

        if self.size_range is not None:
            if len(self.size_range) != 2 or not 0 < self.size_range[0] <= self.size_range[1]:
                raise ConfigError("catalog.size_range must be [min, max] with 0 < min <= max")


@dataclass
class UtilitySource:
    kind: str = "sch1"
    mean_degree: float = 4.0
    acceptance: Optional[float] = None
    fixed_degree: bool = False

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ConfigError(f"utility.kind must be one of {UTILITY_KINDS}, got {self.kind!r}")

        if self.mean_degree <= 0:
            raise ConfigError("utility.mean_degree must be positive")

        if self.acceptance is not None and not 0.0 <= self.acceptance <= 1.0:
            raise ConfigError(f"utility.acceptance must lie in [0, 1], got {self.acceptance}")

    @property
    def level(self) -> float:
        return 1.0 if self.acceptance is None else float(self.acceptance)


@dataclass
class NetworkSpec:
    num_cells: int = 20
    num_users: int = 50
    area_side: float = 1000.0
    comm_range: float = 200.0
    capacity: float = 5
    capacity_unit: str = "items"
    source: str = "geometric"
    coverage: Optional[str] = None

    def __post_init__(self):
        if self.source not in NETWORK_SOURCES:
            raise ConfigError(f"network.source must be one of {NETWORK_SOURCES}, got {self.source!r}")

        if self.source == "file" and self.coverage is None:
            raise ConfigError("file network source needs a coverage file")

        if self.num_cells < 1 or self.num_users < 1:
            raise ConfigError("network needs at least one cell and one user")

        if self.area_side <= 0 or self.comm_range <= 0:
            raise ConfigError("network.area_side and network.comm_range must be positive")

        if self.capacity <= 0:
            raise ConfigError("network.capacity must be positive")

        if self.capacity_unit not in ("items", "bytes"):
            raise ConfigError(f"network.capacity_unit must be items or bytes, got {self.capacity_unit!r}")


@dataclass
class SweepAxis:
    axis: str
    values: List[float]

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}, got {self.axis!r}")

        if not self.values:
            raise ConfigError("sweep.values must not be empty")

        for value in self.values:
            if self.axis in ("capacity", "num_cells") and (value < 1 or int(value) != value):
                raise ConfigError(f"{self.axis} sweep values must be positive integers, got {value}")
            if self.axis == "mean_degree" and value <= 0:
                raise ConfigError(f"mean_degree sweep values must be positive, got {value}")
            if self.axis == "acceptance" and not 0.0 <= value <= 1.0:
                raise ConfigError(f"acceptance sweep values must lie in [0, 1], got {value}")
            if self.axis == "zipf_exponent" and value < 0:
                raise ConfigError(f"zipf_exponent sweep values must be non-negative, got {value}")


@dataclass
class ScenarioConfig:
    """One experiment: how to build instances, which schemes to run, what to sweep."""

    name: str = "scenario"
    catalog: CatalogSource = field(default_factory=CatalogSource)
    utility: UtilitySource = field(default_factory=UtilitySource)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    schemes: List[str] = field(default_factory=lambda: list(DEFAULT_SCHEMES))
    sweep: Optional[SweepAxis] = None
    requests: int = 20000
    seeds: List[int] = field(default_factory=lambda: [0])
    lazy: bool = False
    partial_enum_limit: int = 60
    record_timing: bool = True
    enable_logging: bool = True
    logging_level: int = logging.INFO

    def __post_init__(self):
        unknown = [scheme for scheme in self.schemes if scheme not in SCHEMES]
        if unknown:
            raise ConfigError(f"unknown scheme {unknown[0]!r}, expected one of {SCHEMES}")

        if not self.schemes:
            raise ConfigError("at least one scheme is required")

        if self.requests < 0:
            raise ConfigError("requests must be non-negative")

        if not self.seeds:
            raise ConfigError("at least one seed is required")

        if self.partial_enum_limit < 3:
            raise ConfigError("partial_enum_limit must be at least 3")

        if self.utility.kind == "ingested" and self.catalog.kind == "synthetic":
            raise ConfigError("ingested utilities need an ingested or bundle catalog")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[Path] = None) -> "ScenarioConfig":
        return _build(cls, data, "", base_dir)


_NESTED = {
    ("ScenarioConfig", "catalog"): CatalogSource,
    ("ScenarioConfig", "utility"): UtilitySource,
    ("ScenarioConfig", "network"): NetworkSpec,
    ("ScenarioConfig", "sweep"): SweepAxis,
}

_PATH_FIELDS = {
    "CatalogSource": ("contents", "relations", "bundle"),
    "NetworkSpec": ("coverage",),
}


@dataclass
class CliConfig:
    subcommand: str
    config: Optional[str] = None
    out: Optional[str] = None
    seeds: Optional[List[int]] = None
    verbosity: int = 0
    threads: Optional[int] = None
    scale: str = "small"
    replay: Optional[str] = None
    contents: Optional[str] = None
    relations: Optional[str] = None

    def __post_init__(self):
        if self.subcommand not in ("solve", "sweep", "ingest", "verify"):
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")

        if self.scale not in ("small", "full"):
            raise ConfigError(f"scale must be small or full, got {self.scale!r}")

        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be at least 1")

    @property
    def logging_level(self) -> int:
        return {0: logging.WARNING, 1: logging.INFO}.get(self.verbosity, logging.DEBUG)


@dataclass
class SolverResult:
    placement: Placement
    objective: float
    trace: List[Tuple[Item, float]] = field(default_factory=list)
    wall_time: float = 0.0
    solver: str = ""
    # coverage carrying the capacities the placement was built against
    coverage: Optional[CoverageModel] = None

    @property
    def wall_ms(self) -> float:
        return self.wall_time * 1000.0

    def __len__(self) -> int:
        return len(self.placement)


@dataclass
class OracleResult:
    optimum: float
    placements: List[Placement]
    enumerated: int

    @property
    def placement(self) -> Placement:
        return self.placements[0]


@dataclass
class SimulationResult:
    hit_ratio: float
    stderr: float
    num_requests: int


@dataclass
class SweepRow:
    axis: str
    value: float
    scheme: str
    seed: int
    objective: float = float("nan")
    sim_hit_ratio: float = float("nan")
    sim_stderr: float = float("nan")
    solve_ms: float = 0.0
    network_seed: int = 0
    utility_seed: int = 0
    error: str = ""

    @staticmethod
    def header() -> List[str]:
        return SWEEP_COLUMNS + EXTRA_COLUMNS

    def to_record(self) -> List[Any]:
        return [getattr(self, name) for name in self.header()]

    @property
    def failed(self) -> bool:
        return bool(self.error)
