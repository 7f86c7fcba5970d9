"""Synthetic scenario generators and the sweep harness."""

import logging
import math
import time

from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from scipy import sparse

from .backend.bundle import Bundle
from .catalog import Catalog, Mode, UtilityModel, ingest_catalog
from .classes import EXTRA_COLUMNS, SWEEP_COLUMNS, ScenarioConfig, SolverResult, SweepRow
from .errors import ContractError, RefusalError, ValidationError
from .network import CoverageModel, generate_geometric, load_coverage, to_single_cache
from .objective import Placement
from .oracle import simulate_requests, simulate_satisfaction
from .scheme_handler import SchemeHandler
from .solvers import (
    fast_greedy_knapsack,
    greedy_femto,
    greedy_femto_us,
    greedy_single,
    partial_enum_knapsack,
    popularity_baseline,
)
from .utils import derive_seed


logger = logging.getLogger("softcache.simkit")

ROW_BLOCK = 512


def gen_zipf_demand(num_contents: int, exponent: float, num_users: int = 1) -> np.ndarray:
    """p_k proportional to (k + 1)^-exponent, the same row for every user."""
    if exponent < 0:
        raise ValidationError(f"Zipf exponent must be non-negative, got {exponent}")
    if num_contents < 1 or num_users < 1:
        raise ValidationError("Zipf demand needs at least one content and one user")

    weights = np.arange(1, num_contents + 1, dtype=np.float64) ** -float(exponent)
    popularity = weights / weights.sum()
    return np.tile(popularity, (num_users, 1))


def _relation_model(num_contents: int, rows: List[np.ndarray], cols: List[np.ndarray], acceptance: float) -> UtilityModel:
    row = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    col = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    matrix = sparse.csr_matrix(
        (np.full(row.size, float(acceptance)), (row, col)),
        shape=(num_contents, num_contents)
    )
    return UtilityModel.average(num_contents, matrix)


def _check_generator(num_contents: int, mean_degree: float, acceptance: float) -> None:
    if not 0 < mean_degree < num_contents:
        raise ValidationError(f"mean degree must lie in (0, {num_contents}), got {mean_degree}")
    if not 0.0 <= acceptance <= 1.0:
        raise ValidationError(f"acceptance must lie in [0, 1], got {acceptance}")


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def gen_sch1(
    num_contents: int,
    mean_degree: float,
    popularity: Sequence[float],
    acceptance: float,
    seed: int,
    fixed_degree: bool = False
) -> UtilityModel:
    """Popularity-proportional relation graph.

    Every content k includes each n != k independently with probability
    min(1, E[R] p_n / sum_{m != k} p_m). With ``fixed_degree`` every content
    instead gets exactly round(E[R]) related contents drawn without
    replacement proportionally to popularity.
    """
    _check_generator(num_contents, mean_degree, acceptance)
    p = np.asarray(popularity, dtype=np.float64)
    if p.shape != (num_contents,):
        raise ValidationError(f"popularity has shape {p.shape}, expected ({num_contents},)")

    rng = np.random.default_rng(seed)
    rows, cols = [], []

    if fixed_degree:
        degree = _round_half_up(mean_degree)
        for k in range(num_contents):
            weights = p.copy()
            weights[k] = 0.0
            available = np.count_nonzero(weights)
            if not available:
                continue
            picked = rng.choice(num_contents, size=min(degree, available), replace=False, p=weights / weights.sum())
            rows.append(np.full(picked.size, k, dtype=np.int64))
            cols.append(np.sort(picked).astype(np.int64))
    else:
        total = p.sum()
        for start in range(0, num_contents, ROW_BLOCK):
            block = np.arange(start, min(start + ROW_BLOCK, num_contents))
            others = total - p[block]
            with np.errstate(divide="ignore", invalid="ignore"):
                probs = np.where(others[:, None] > 0, mean_degree * p[None, :] / others[:, None], 0.0)
            probs = np.minimum(probs, 1.0)
            probs[np.arange(block.size), block] = 0.0

            hit = rng.random(probs.shape) < probs
            r, c = np.nonzero(hit)
            rows.append(block[r])
            cols.append(c.astype(np.int64))

    model = _relation_model(num_contents, rows, cols, acceptance)
    logger.debug(f"gen_sch1: K={num_contents}, E[R]={mean_degree}, seed {seed}, {model.matrix().nnz} relations")
    return model


def gen_sch2(num_contents: int, mean_degree: float, acceptance: float, seed: int) -> UtilityModel:
    """Uniform relation graph: every content gets exactly round(E[R]) related contents."""
    if mean_degree >= num_contents:
        raise ValidationError(f"mean degree {mean_degree} must be below the catalog size {num_contents}")
    _check_generator(num_contents, mean_degree, acceptance)

    rng = np.random.default_rng(seed)
    degree = min(_round_half_up(mean_degree), num_contents - 1)

    rows, cols = [], []
    for k in range(num_contents):
        picked = rng.choice(num_contents - 1, size=degree, replace=False)
        picked = picked + (picked >= k)
        rows.append(np.full(degree, k, dtype=np.int64))
        cols.append(np.sort(picked).astype(np.int64))

    return _relation_model(num_contents, rows, cols, acceptance)


@dataclass(frozen=True)
class Scenario:
    catalog: Catalog
    utility: UtilityModel
    identity: UtilityModel
    coverage: CoverageModel
    single_coverage: CoverageModel
    network_seed: int
    utility_seed: int
    request_seed: int


@lru_cache(maxsize=8)
def _ingested(contents: str, relations: str) -> Tuple[Catalog, UtilityModel]:
    return ingest_catalog(contents, relations)


@lru_cache(maxsize=8)
def _bundled(path: str) -> Tuple[Catalog, UtilityModel]:
    bundle = Bundle.load(path)
    return bundle.catalog, bundle.utility


def apply_axis(config: ScenarioConfig, axis: Optional[str], value: Optional[float]) -> ScenarioConfig:
    """Copy of ``config`` with the sweep axis set to ``value``."""
    if axis is None:
        return config
    if axis == "capacity":
        return replace(config, network=replace(config.network, capacity=value))
    if axis == "num_cells":
        return replace(config, network=replace(config.network, num_cells=int(value)))
    if axis == "mean_degree":
        return replace(config, utility=replace(config.utility, mean_degree=float(value)))
    if axis == "acceptance":
        return replace(config, utility=replace(config.utility, acceptance=float(value)))
    if axis == "zipf_exponent":
        return replace(config, catalog=replace(config.catalog, zipf_exponent=float(value)))
    raise ValueError(f"Unknown sweep axis: {axis}")


def _base_catalog(config: ScenarioConfig, num_users: int, seed: int) -> Tuple[Catalog, Optional[UtilityModel]]:
    source = config.catalog
    if source.kind == "ingested":
        catalog, relations = _ingested(source.contents, source.relations)
        return catalog.with_users(num_users) if catalog.num_users != num_users else catalog, relations
    if source.kind == "bundle":
        catalog, relations = _bundled(source.bundle)
        return catalog.with_users(num_users) if catalog.num_users != num_users else catalog, relations

    demand = gen_zipf_demand(source.num_contents, source.zipf_exponent, num_users)
    sizes = None
    if source.size_range is not None:
        rng = np.random.default_rng(derive_seed(seed, "catalog"))
        sizes = rng.uniform(source.size_range[0], source.size_range[1], size=source.num_contents)
    return Catalog(sizes=np.ones(source.num_contents) if sizes is None else sizes, demand=demand), None


def _utility(config: ScenarioConfig, catalog: Catalog, relations: Optional[UtilityModel], seed: int) -> UtilityModel:
    source = config.utility
    num_contents = catalog.num_contents

    if source.kind == "identity":
        return UtilityModel.identity(num_contents)
    if source.kind == "sch1":
        return gen_sch1(num_contents, source.mean_degree, catalog.popularity, source.level, seed, source.fixed_degree)
    if source.kind == "sch2":
        return gen_sch2(num_contents, source.mean_degree, source.level, seed)

    if relations is None:
        raise ContractError("ingested utilities need an ingested or bundle catalog")
    return relations if source.acceptance is None else relations.rescaled(source.acceptance)


def build_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Instantiate catalog, utilities and network for one sweep point and seed."""
    network_seed = derive_seed(seed, "network")
    utility_seed = derive_seed(seed, "utility")
    spec = config.network

    if spec.source == "file":
        coverage = load_coverage(spec.coverage, 1.0)
        num_users = coverage.num_users
    else:
        coverage = None
        num_users = spec.num_users

    catalog, relations = _base_catalog(config, num_users, seed)

    capacity = float(spec.capacity)
    if spec.capacity_unit == "bytes":
        capacity *= float(np.mean(catalog.sizes))

    if coverage is None:
        coverage = generate_geometric(
            spec.num_cells, spec.num_users, spec.area_side, spec.comm_range, network_seed,
            capacity=capacity, capacity_unit=spec.capacity_unit
        )
    else:
        coverage = coverage.with_capacities(capacity, spec.capacity_unit)

    return Scenario(
        catalog=catalog,
        utility=_utility(config, catalog, relations, utility_seed).bind_users(catalog.num_users),
        identity=UtilityModel.identity(catalog.num_contents).bind_users(catalog.num_users),
        coverage=coverage,
        single_coverage=to_single_cache(coverage),
        network_seed=network_seed,
        utility_seed=utility_seed,
        request_seed=derive_seed(seed, "requests")
    )


@dataclass
class SchemeOutcome:
    result: SolverResult
    coverage: CoverageModel
    model: UtilityModel


schemes = SchemeHandler()


@schemes.reg_scheme("Single")
def run_single(scenario: Scenario, config: ScenarioConfig) -> SchemeOutcome:
    coverage = scenario.single_coverage
    result = popularity_baseline(scenario.catalog, coverage, model=scenario.identity)
    return SchemeOutcome(result, coverage, scenario.identity)


@schemes.reg_scheme("SingleSCH")
def run_single_sch(scenario: Scenario, config: ScenarioConfig) -> SchemeOutcome:
    coverage = scenario.single_coverage
    if coverage.capacity_unit == "bytes" and not scenario.catalog.has_uniform_sizes:
        result = fast_greedy_knapsack(scenario.catalog, coverage, scenario.utility, lazy=config.lazy)
    else:
        result = greedy_single(scenario.catalog, coverage, scenario.utility, lazy=config.lazy)
    return SchemeOutcome(result, coverage, scenario.utility)


@schemes.reg_scheme("SingleSCHPartialEnum")
def run_single_sch_partial_enum(scenario: Scenario, config: ScenarioConfig) -> SchemeOutcome:
    coverage = scenario.single_coverage
    budget = None
    if coverage.capacity_unit == "items":
        budget = coverage.cache_capacities * float(scenario.catalog.sizes.max())
        if not scenario.catalog.has_uniform_sizes:
            raise ContractError("partial enumeration on item capacities needs equal content sizes")
    result = partial_enum_knapsack(
        scenario.catalog, coverage, scenario.utility, budget=budget,
        limit=config.partial_enum_limit, lazy=config.lazy
    )
    return SchemeOutcome(result, coverage, scenario.utility)


@schemes.reg_scheme("Femto")
def run_femto(scenario: Scenario, config: ScenarioConfig) -> SchemeOutcome:
    result = greedy_femto(scenario.catalog, scenario.coverage, scenario.identity, lazy=config.lazy)
    return SchemeOutcome(result, scenario.coverage, scenario.identity)


@schemes.reg_scheme("FemtoSCH")
def run_femto_sch(scenario: Scenario, config: ScenarioConfig) -> SchemeOutcome:
    result = greedy_femto(scenario.catalog, scenario.coverage, scenario.utility, lazy=config.lazy)
    return SchemeOutcome(result, scenario.coverage, scenario.utility)


@schemes.reg_scheme("FemtoUS")
def run_femto_us(scenario: Scenario, config: ScenarioConfig) -> SchemeOutcome:
    model = scenario.utility.with_mode(Mode.SATISFACTION, u_max=1.0)
    result = greedy_femto_us(scenario.catalog, scenario.coverage, model, lazy=config.lazy)
    return SchemeOutcome(result, scenario.coverage, model)


def run_scheme(name: str, scenario: Scenario, config: ScenarioConfig) -> SchemeOutcome:
    return schemes.handle(name, scenario, config)


def simulate_outcome(outcome: SchemeOutcome, scenario: Scenario, num_requests: int):
    simulate = simulate_satisfaction if outcome.model.mode is Mode.SATISFACTION else simulate_requests
    return simulate(
        scenario.catalog, outcome.coverage, outcome.model, outcome.result.placement,
        num_requests, scenario.request_seed
    )


def create_error_row(axis: str, value, scheme: str, seed: int, error: Exception, scenario: Optional[Scenario] = None) -> SweepRow:
    return SweepRow(
        axis=axis,
        value=value,
        scheme=scheme,
        seed=seed,
        network_seed=scenario.network_seed if scenario is not None else derive_seed(seed, "network"),
        utility_seed=scenario.utility_seed if scenario is not None else derive_seed(seed, "utility"),
        error=f"{type(error).__name__}: {error}"
    )


def evaluate_point(config: ScenarioConfig, value, seed: int) -> List[SweepRow]:
    """Rows for every configured scheme at one sweep value and seed.

    Failures become rows with the ``error`` column set; the other schemes
    still run.
    """
    axis = config.sweep.axis if config.sweep is not None else "none"
    point = apply_axis(config, config.sweep.axis if config.sweep is not None else None, value)

    try:
        scenario = build_scenario(point, seed)
    except Exception as e:
        logger.error(f"Building scenario {axis}={value} seed {seed} failed: {e}", exc_info=True)
        return [create_error_row(axis, value, scheme, seed, e) for scheme in point.schemes]

    rows = []
    for scheme in point.schemes:
        try:
            outcome = run_scheme(scheme, scenario, point)
            simulated = simulate_outcome(outcome, scenario, point.requests)
        except RefusalError as e:
            logger.warning(f"{scheme} at {axis}={value} seed {seed} refused: {e}")
            rows.append(create_error_row(axis, value, scheme, seed, e, scenario))
            continue
        except Exception as e:
            logger.error(f"{scheme} at {axis}={value} seed {seed} failed: {e}", exc_info=True)
            rows.append(create_error_row(axis, value, scheme, seed, e, scenario))
            continue

        rows.append(SweepRow(
            axis=axis,
            value=value,
            scheme=scheme,
            seed=seed,
            objective=outcome.result.objective,
            sim_hit_ratio=simulated.hit_ratio,
            sim_stderr=simulated.stderr,
            solve_ms=round(outcome.result.wall_ms, 3) if point.record_timing else 0.0,
            network_seed=scenario.network_seed,
            utility_seed=scenario.utility_seed
        ))

    return rows


def sweep_values(config: ScenarioConfig) -> List:
    return list(config.sweep.values) if config.sweep is not None else [0]


def order_rows(rows: List[SweepRow], config: ScenarioConfig) -> List[SweepRow]:
    """Deterministic output order: axis value, then scheme, then seed."""
    values = sweep_values(config)
    return sorted(
        rows,
        key=lambda row: (values.index(row.value), config.schemes.index(row.scheme), config.seeds.index(row.seed))
    )


def run_sweep(config: ScenarioConfig, threads: int = 1) -> List[SweepRow]:
    from .runner import SweepRunner

    return SweepRunner(config, threads=threads).rows()


def load_sweep(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path)
    expected = SWEEP_COLUMNS + EXTRA_COLUMNS
    if list(frame.columns) != expected:
        raise ValidationError(f"sweep table header must be {','.join(expected)}")
    frame["error"] = frame["error"].fillna("").astype(str)
    return frame


def placement_summary(placement: Placement) -> str:
    return ", ".join(f"{content}@{cell}" for content, cell in placement)
