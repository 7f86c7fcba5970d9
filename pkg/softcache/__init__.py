from .catalog import Catalog, Mode, UtilityModel, Variant, ingest_catalog
from .network import CoverageModel, generate_geometric, to_single_cache
from .objective import EvalState, Placement, SatisfactionState, sch_us, schr_femto, schr_single
from .classes import ScenarioConfig, SolverResult, OracleResult, SweepRow
from .solvers import (
    fast_greedy_knapsack,
    greedy_femto,
    greedy_femto_us,
    greedy_single,
    partial_enum_knapsack,
    popularity_baseline,
)
from .oracle import exhaustive_femto, exhaustive_single, simulate_requests
from .simkit import gen_sch1, gen_sch2, gen_zipf_demand, run_sweep
from .backend.bundle import Bundle
from . import utils

__all__ = [
    "Catalog", "Mode", "UtilityModel", "Variant", "ingest_catalog",
    "CoverageModel", "generate_geometric", "to_single_cache",
    "EvalState", "Placement", "SatisfactionState", "sch_us", "schr_femto", "schr_single",
    "ScenarioConfig", "SolverResult", "OracleResult", "SweepRow",
    "fast_greedy_knapsack", "greedy_femto", "greedy_femto_us", "greedy_single",
    "partial_enum_knapsack", "popularity_baseline",
    "exhaustive_femto", "exhaustive_single", "simulate_requests",
    "gen_sch1", "gen_sch2", "gen_zipf_demand", "run_sweep",
    "Bundle", "utils",
]
