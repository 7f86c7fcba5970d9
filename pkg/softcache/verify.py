"""Randomized verification suites for the objective engine, the solvers and the oracles.

Every instance is generated from its own seed. A failing instance is written
out as a bundle that ``replay`` (``softcache verify --replay``) re-checks.
"""

import logging
import math

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .backend.bundle import Bundle, create_failure_bundle
from .catalog import Catalog, Mode, UtilityModel
from .network import CoverageModel
from .objective import EvalState, Placement, SatisfactionState, sch_us, schr_femto, schr_single
from .oracle import exhaustive_femto, exhaustive_single, simulate_requests
from .solvers import fast_greedy_knapsack, greedy_femto, greedy_femto_us, greedy_single, partial_enum_knapsack


logger = logging.getLogger("softcache.verify")

GREEDY_BOUND = 1.0 - 1.0 / math.e
KNAPSACK_BOUND = 0.5 * (1.0 - 1.0 / math.e)
MATROID_BOUND = 0.5
IDENTITY_TOLERANCE = 1e-12
SUBCASE_TOLERANCE = 1e-15
SIMULATION_SIGMAS = 3.0

# share of instances a statistical suite may miss and still pass
MISS_RATES = {"simulation": 0.05}

SCALES = {
    "small": {"greedy_bound": 100, "knapsack_bound": 60, "matroid_bound": 60, "identities": 200,
              "submodularity": 200, "subcases": 100, "tiebreak": 40, "lazy": 40,
              "commit_order": 200, "relabeling": 40, "simulation": 20},
    "full": {"greedy_bound": 500, "knapsack_bound": 300, "matroid_bound": 300, "identities": 1000,
             "submodularity": 1000, "subcases": 300, "tiebreak": 100, "lazy": 200,
             "commit_order": 1000, "relabeling": 200, "simulation": 100},
}


@dataclass
class Instance:
    catalog: Catalog
    coverage: CoverageModel
    model: UtilityModel
    params: Dict = field(default_factory=dict)

    @property
    def rng(self) -> np.random.Generator:
        """Randomness of the check itself, reproducible from the instance seed."""
        return np.random.default_rng([self.params.get("seed", 0), 1])


@dataclass
class SuiteReport:
    name: str
    checked: int = 0
    failures: List[str] = field(default_factory=list)
    bundles: List[Path] = field(default_factory=list)
    ratios: Dict[str, float] = field(default_factory=dict)
    allowed: int = 0

    @property
    def passed(self) -> bool:
        return len(self.failures) <= self.allowed

    def observe(self, label: str, ratio: float) -> None:
        self.ratios[label] = min(self.ratios.get(label, math.inf), ratio)

    def summary(self) -> str:
        ratios = ", ".join(f"min {label} ratio {value:.4f}" for label, value in sorted(self.ratios.items()))
        if not self.passed:
            status = f"FAIL ({len(self.failures)})"
        elif self.failures:
            status = f"PASS ({len(self.failures)} of {self.allowed} allowed misses)"
        else:
            status = "PASS"
        return f"{self.name}: {status}, {self.checked} instances" + (f", {ratios}" if ratios else "")


def random_utility(
    rng: np.random.Generator,
    num_contents: int,
    density: float = 0.3,
    num_users: Optional[int] = None
) -> UtilityModel:
    """Random sparse relations; values mix full acceptance with fractions in (0, 1)."""
    def _entries() -> Dict[Tuple[int, int], float]:
        entries = {}
        for k in range(num_contents):
            for n in range(num_contents):
                if k != n and rng.random() < density:
                    entries[(k, n)] = 1.0 if rng.random() < 0.3 else float(rng.uniform(0.05, 1.0))
        return entries

    if num_users is None:
        return UtilityModel.average(num_contents, _entries())

    per_user = {}
    for user in range(num_users):
        per_user.update({(user, k, n): value for (k, n), value in _entries().items()})
    return UtilityModel.per_user(num_contents, num_users, per_user)


def random_catalog(rng: np.random.Generator, num_contents: int, num_users: int, sizes=None) -> Catalog:
    demand = rng.dirichlet(np.ones(num_contents), size=num_users)
    demand = demand / demand.sum(axis=1, keepdims=True)
    shares = rng.dirichlet(np.ones(num_users))
    return Catalog(
        sizes=np.ones(num_contents) if sizes is None else sizes,
        demand=demand,
        user_shares=shares / shares.sum()
    )


def random_coverage(
    rng: np.random.Generator,
    num_users: int,
    num_cells: int,
    capacity: float,
    fractional: bool = True,
    capacity_unit: str = "items"
) -> CoverageModel:
    q = (rng.random((num_users, num_cells)) < 0.6).astype(np.float64)
    if fractional:
        q *= rng.uniform(0.2, 1.0, size=q.shape)
    return CoverageModel.uniform(q, capacity, capacity_unit)


def single_coverage(num_users: int, capacity: float, capacity_unit: str = "items") -> CoverageModel:
    return CoverageModel.uniform(np.ones((num_users, 1)), capacity, capacity_unit)


def _random_items(rng: np.random.Generator, num_contents: int, num_cells: int, count: int) -> List[Tuple[int, int]]:
    pool = [(k, j) for k in range(num_contents) for j in range(num_cells)]
    picked = rng.choice(len(pool), size=min(count, len(pool)), replace=False)
    return [pool[i] for i in picked]


def gen_greedy_bound(seed: int) -> Instance:
    rng = np.random.default_rng(seed)
    num_contents, num_users = int(rng.integers(4, 13)), int(rng.integers(1, 4))
    capacity = int(rng.integers(1, 5))
    return Instance(
        random_catalog(rng, num_contents, num_users),
        single_coverage(num_users, capacity),
        random_utility(rng, num_contents, density=float(rng.uniform(0.1, 0.5))),
        {"seed": seed, "capacity": capacity}
    )


def gen_knapsack_bound(seed: int) -> Instance:
    rng = np.random.default_rng(seed)
    num_contents, num_users = int(rng.integers(3, 11)), int(rng.integers(1, 3))
    sizes = rng.integers(1, 11, size=num_contents).astype(np.float64)
    budget = float(rng.integers(int(sizes.min()), max(int(sizes.min()) + 1, int(sizes.sum() // 2)) + 1))
    return Instance(
        random_catalog(rng, num_contents, num_users, sizes=sizes),
        single_coverage(num_users, budget, "bytes"),
        random_utility(rng, num_contents, density=float(rng.uniform(0.1, 0.5))),
        {"seed": seed, "budget": budget}
    )


def gen_matroid_bound(seed: int) -> Instance:
    rng = np.random.default_rng(seed)
    num_contents, num_users = int(rng.integers(3, 7)), int(rng.integers(1, 5))
    num_cells, capacity = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    return Instance(
        random_catalog(rng, num_contents, num_users),
        random_coverage(rng, num_users, num_cells, capacity, fractional=bool(rng.random() < 0.5)),
        random_utility(rng, num_contents, density=float(rng.uniform(0.2, 0.6))),
        {"seed": seed}
    )


def gen_engine(seed: int) -> Instance:
    rng = np.random.default_rng(seed)
    num_contents, num_users = int(rng.integers(5, 31)), int(rng.integers(1, 7))
    num_cells = int(rng.integers(1, 5))
    per_user = num_users if rng.random() < 0.3 else None
    return Instance(
        random_catalog(rng, num_contents, num_users),
        random_coverage(rng, num_users, num_cells, num_contents),
        random_utility(rng, num_contents, density=float(rng.uniform(0.05, 0.3)), num_users=per_user),
        {"seed": seed}
    )


def gen_tiebreak(seed: int) -> Instance:
    rng = np.random.default_rng(seed)
    num_cells, capacity = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    num_contents = int(rng.integers(num_cells * capacity, 13))
    num_users = int(rng.integers(1, 4))
    return Instance(
        Catalog(sizes=np.ones(num_contents), demand=np.full((num_users, num_contents), 1.0 / num_contents)),
        CoverageModel.uniform(np.ones((num_users, num_cells)), capacity),
        UtilityModel.identity(num_contents),
        {"seed": seed}
    )


def gen_simulation(seed: int) -> Instance:
    """K=200 contents over 10 cells and 30 users, fractional coverage and utilities."""
    rng = np.random.default_rng(seed)
    num_contents, num_users, num_cells = 200, 30, 10
    return Instance(
        random_catalog(rng, num_contents, num_users),
        random_coverage(rng, num_users, num_cells, 5),
        random_utility(rng, num_contents, density=0.02),
        {"seed": seed, "requests": 100_000}
    )


def check_greedy_bound(instance: Instance) -> Tuple[bool, Dict[str, float], str]:
    capacity = instance.params["capacity"]
    greedy = greedy_single(instance.catalog, instance.coverage, instance.model, capacity=capacity)
    oracle = exhaustive_single(instance.catalog, instance.coverage, instance.model, capacity=capacity)
    ratio = greedy.objective / oracle.optimum if oracle.optimum > 0 else 1.0
    return ratio >= GREEDY_BOUND - IDENTITY_TOLERANCE, {"greedy": ratio}, f"greedy/OPT = {ratio:.6f}"


def check_knapsack_bound(instance: Instance) -> Tuple[bool, Dict[str, float], str]:
    budget = instance.params["budget"]
    fast = fast_greedy_knapsack(instance.catalog, instance.coverage, instance.model, budget=budget)
    enum = partial_enum_knapsack(instance.catalog, instance.coverage, instance.model, budget=budget)
    oracle = exhaustive_single(instance.catalog, instance.coverage, instance.model, budget=budget)

    if oracle.optimum <= 0:
        return True, {"fast": 1.0, "partial_enum": 1.0}, "OPT = 0"

    fast_ratio, enum_ratio = fast.objective / oracle.optimum, enum.objective / oracle.optimum
    ok = (
        fast_ratio >= KNAPSACK_BOUND - IDENTITY_TOLERANCE
        and enum_ratio >= GREEDY_BOUND - IDENTITY_TOLERANCE
        and enum.objective >= fast.objective - IDENTITY_TOLERANCE
    )
    return ok, {"fast": fast_ratio, "partial_enum": enum_ratio}, (
        f"fast/OPT = {fast_ratio:.6f}, partial_enum/OPT = {enum_ratio:.6f}"
    )


def check_matroid_bound(instance: Instance) -> Tuple[bool, Dict[str, float], str]:
    catalog, coverage, model = instance.catalog, instance.coverage, instance.model
    satisfaction = model.with_mode(Mode.SATISFACTION, u_max=1.0)

    femto = greedy_femto(catalog, coverage, model)
    femto_opt = exhaustive_femto(catalog, coverage, model)
    us = greedy_femto_us(catalog, coverage, satisfaction)
    us_opt = exhaustive_femto(catalog, coverage, satisfaction)

    femto_ratio = femto.objective / femto_opt.optimum if femto_opt.optimum > 0 else 1.0
    us_ratio = us.objective / us_opt.optimum if us_opt.optimum > 0 else 1.0
    ok = femto_ratio >= MATROID_BOUND - IDENTITY_TOLERANCE and us_ratio >= MATROID_BOUND - IDENTITY_TOLERANCE
    return ok, {"femto": femto_ratio, "femto_us": us_ratio}, (
        f"greedy_femto/OPT = {femto_ratio:.6f}, greedy_femto_us/OPT = {us_ratio:.6f}"
    )


def _states(instance: Instance):
    satisfaction = instance.model.with_mode(Mode.SATISFACTION, u_max=1.0)
    return [
        ("schr_femto", lambda: EvalState(instance.catalog, instance.coverage, instance.model),
         lambda p: schr_femto(instance.catalog, instance.coverage, instance.model, p)),
        ("sch_us", lambda: SatisfactionState(instance.catalog, instance.coverage, satisfaction),
         lambda p: sch_us(instance.catalog, instance.coverage, satisfaction, p)),
    ]


def check_identities(instance: Instance) -> Tuple[bool, Dict[str, float], str]:
    rng = instance.rng
    num_contents, num_cells = instance.catalog.num_contents, instance.coverage.num_cells
    items = _random_items(rng, num_contents, num_cells, int(rng.integers(1, 8)))
    base, candidate = items[:-1], items[-1]

    worst = 0.0
    for name, make_state, evaluate in _states(instance):
        state = make_state()
        for item in base:
            state.commit(item)

        gain = state.gain(candidate)
        before = evaluate(Placement(num_cells, base))
        after = evaluate(Placement(num_cells, base + [candidate]))
        error = abs(gain - (after - before))
        drift = abs(state.value - before)
        worst = max(worst, error, drift)
        if error > IDENTITY_TOLERANCE or drift > 1e-9:
            return False, {}, f"{name}: gain {gain!r} vs delta {after - before!r}, running value drift {drift!r}"

    return True, {}, f"max deviation {worst:.3e}"


def check_submodularity(instance: Instance) -> Tuple[bool, Dict[str, float], str]:
    rng = instance.rng
    num_contents, num_cells = instance.catalog.num_contents, instance.coverage.num_cells
    items = _random_items(rng, num_contents, num_cells, int(rng.integers(2, 10)))
    candidate, larger = items[-1], items[:-1]
    smaller = larger[:int(rng.integers(0, len(larger) + 1))]

    for name, make_state, evaluate in _states(instance):
        small_state, large_state = make_state(), make_state()
        for item in smaller:
            small_state.commit(item)
        for item in larger:
            large_state.commit(item)

        small_gain, large_gain = small_state.gain(candidate), large_state.gain(candidate)
        if small_gain < large_gain - IDENTITY_TOLERANCE:
            return False, {}, f"{name}: gain on A {small_gain!r} < gain on B {large_gain!r}"

        f_small = evaluate(Placement(num_cells, smaller))
        f_large = evaluate(Placement(num_cells, larger))
        if f_large < f_small - IDENTITY_TOLERANCE:
            return False, {}, f"{name}: f(B) {f_large!r} < f(A) {f_small!r}"

    return True, {}, "ok"


def check_subcases(instance: Instance) -> Tuple[bool, Dict[str, float], str]:
    if not instance.model.is_shared:
        return True, {}, "per-user model skipped"

    rng = instance.rng
    matrix = instance.model.matrix().tocoo()
    points = {(int(k), int(n)): ([float(u)], [1.0]) for k, n, u in zip(matrix.row, matrix.col, matrix.data)}
    distributional = UtilityModel.distributional(instance.catalog.num_contents, points)

    items = _random_items(rng, instance.catalog.num_contents, instance.coverage.num_cells, int(rng.integers(0, 8)))
    placement = Placement(instance.coverage.num_cells, items)
    args = (instance.catalog, instance.coverage)

    average_schr = schr_femto(*args, instance.model, placement)
    point_schr = schr_femto(*args, distributional, placement)

    satisfied = instance.model.with_mode(Mode.SATISFACTION, u_max=1.0)
    point_satisfied = distributional.with_mode(Mode.SATISFACTION, u_max=1.0)
    average_us = sch_us(*args, satisfied, placement)
    point_us = sch_us(*args, point_satisfied, placement)

    error = max(abs(average_schr - point_schr), abs(average_us - point_us))
    return error <= SUBCASE_TOLERANCE, {}, f"max deviation {error:.3e}"


def check_tiebreak(instance: Instance) -> Tuple[bool, Dict[str, float], str]:
    catalog, coverage, model = instance.catalog, instance.coverage, instance.model
    capacity = int(coverage.cache_capacities[0])

    expected = Placement(coverage.num_cells, [(k, k // capacity) for k in range(coverage.num_cells * capacity)])
    femto = greedy_femto(catalog, coverage, model)
    if femto.placement != expected:
        return False, {}, f"greedy_femto placed {femto.placement.to_rows()}, expected {expected.to_rows()}"

    single = single_coverage(catalog.num_users, capacity)
    greedy = greedy_single(catalog, single, model)
    expected_single = Placement(1, [(k, 0) for k in range(capacity)])
    if greedy.placement != expected_single:
        return False, {}, f"greedy_single placed {greedy.placement.to_rows()}, expected {expected_single.to_rows()}"

    return True, {}, "ok"


def check_lazy(instance: Instance) -> Tuple[bool, Dict[str, float], str]:
    catalog, coverage, model = instance.catalog, instance.coverage, instance.model
    rng = instance.rng
    capacity = int(rng.integers(1, 4))
    satisfaction = model.with_mode(Mode.SATISFACTION, u_max=1.0)
    single = single_coverage(catalog.num_users, capacity)
    sizes = rng.integers(1, 6, size=catalog.num_contents).astype(np.float64)
    sized = Catalog(sizes=sizes, demand=catalog.demand, user_shares=catalog.user_shares)
    budget = float(sizes.sum() / 3)

    runs = {
        "greedy_femto": lambda lazy: greedy_femto(catalog, coverage, model, capacities=capacity, lazy=lazy),
        "greedy_femto_us": lambda lazy: greedy_femto_us(catalog, coverage, satisfaction, capacities=capacity, lazy=lazy),
        "greedy_single": lambda lazy: greedy_single(catalog, single, model, lazy=lazy),
        "fast_greedy_knapsack": lambda lazy: fast_greedy_knapsack(sized, single, model, budget=budget, lazy=lazy),
    }
    for name, run in runs.items():
        naive, lazy = run(False), run(True)
        if naive.placement != lazy.placement:
            return False, {}, f"{name}: naive {naive.placement.to_rows()} != lazy {lazy.placement.to_rows()}"

    return True, {}, "ok"


def check_commit_order(instance: Instance) -> Tuple[bool, Dict[str, float], str]:
    rng = instance.rng
    num_cells = instance.coverage.num_cells
    items = _random_items(rng, instance.catalog.num_contents, num_cells, int(rng.integers(2, 9)))
    shuffled = [items[i] for i in rng.permutation(len(items))]

    for name, make_state, evaluate in _states(instance):
        forward, backward = make_state(), make_state()
        for item in items:
            forward.commit(item)
        for item in shuffled:
            backward.commit(item)

        if forward.placement != backward.placement:
            return False, {}, f"{name}: placements differ after reordering"
        expected = evaluate(Placement(num_cells, items))
        if abs(forward.value - backward.value) > IDENTITY_TOLERANCE or abs(backward.value - expected) > 1e-9:
            return False, {}, (
                f"{name}: value {forward.value!r} in order, {backward.value!r} shuffled, {expected!r} evaluated"
            )

    return True, {}, "ok"


def check_relabeling(instance: Instance) -> Tuple[bool, Dict[str, float], str]:
    """Permuting content and cell labels moves the optimum and its placement along."""
    catalog, coverage, model = instance.catalog, instance.coverage, instance.model
    if not model.is_shared:
        return True, {}, "per-user model skipped"

    rng = instance.rng
    order, cells = rng.permutation(catalog.num_contents), rng.permutation(coverage.num_cells)
    new_content, new_cell = np.argsort(order), np.argsort(cells)

    matrix = model.matrix().toarray()[np.ix_(order, order)]
    entries = {(int(k), int(n)): float(matrix[k, n]) for k, n in zip(*np.nonzero(matrix))}
    relabeled = UtilityModel.average(catalog.num_contents, entries)
    shuffled = Catalog(sizes=catalog.sizes[order], demand=catalog.demand[:, order], user_shares=catalog.user_shares)
    moved = CoverageModel(
        q=coverage.q[:, cells],
        cache_capacities=coverage.cache_capacities[cells],
        capacity_unit=coverage.capacity_unit
    )

    original = exhaustive_femto(catalog, coverage, model)
    permuted = exhaustive_femto(shuffled, moved, relabeled)
    mapped = Placement(coverage.num_cells, [(new_content[k], new_cell[j]) for k, j in original.placement])
    mapped_value = schr_femto(shuffled, moved, relabeled, mapped)

    error = max(abs(permuted.optimum - original.optimum), abs(mapped_value - original.optimum))
    return error <= IDENTITY_TOLERANCE, {}, (
        f"OPT {original.optimum!r}, relabeled OPT {permuted.optimum!r}, mapped placement {mapped_value!r}"
    )


def check_simulation(instance: Instance) -> Tuple[bool, Dict[str, float], str]:
    catalog, coverage, model = instance.catalog, instance.coverage, instance.model
    rng = instance.rng
    capacity = int(coverage.cache_capacities.min())
    items = [
        (int(k), cell) for cell in range(coverage.num_cells)
        for k in rng.choice(catalog.num_contents, size=capacity, replace=False)
    ]
    placement = Placement(coverage.num_cells, items)

    objective = schr_single if coverage.is_single_cache else schr_femto
    expected = objective(catalog, coverage, model, placement)
    result = simulate_requests(
        catalog, coverage, model, placement, int(instance.params.get("requests", 100_000)),
        seed=int(instance.params.get("seed", 0))
    )

    deviation = abs(result.hit_ratio - expected)
    sigmas = deviation / result.stderr if result.stderr > 0 else (0.0 if deviation == 0 else math.inf)
    return sigmas <= SIMULATION_SIGMAS, {}, (
        f"simulated {result.hit_ratio:.5f} +- {result.stderr:.5f}, analytic {expected:.5f} ({sigmas:.2f} stderr)"
    )


SUITES: Dict[str, Tuple[Callable[[int], Instance], Callable[[Instance], Tuple[bool, Dict[str, float], str]]]] = {
    "greedy_bound": (gen_greedy_bound, check_greedy_bound),
    "knapsack_bound": (gen_knapsack_bound, check_knapsack_bound),
    "matroid_bound": (gen_matroid_bound, check_matroid_bound),
    "identities": (gen_engine, check_identities),
    "submodularity": (gen_engine, check_submodularity),
    "subcases": (gen_engine, check_subcases),
    "tiebreak": (gen_tiebreak, check_tiebreak),
    "lazy": (gen_engine, check_lazy),
    "commit_order": (gen_engine, check_commit_order),
    "relabeling": (gen_matroid_bound, check_relabeling),
    "simulation": (gen_simulation, check_simulation),
}


def _bundle(instance: Instance, suite: str, message: str) -> Bundle:
    return create_failure_bundle(
        suite, message, instance.catalog, instance.model, instance.coverage, **instance.params
    )


def run_suite(
    name: str,
    count: int,
    base_seed: int = 0,
    failure_dir: Optional[Union[str, Path]] = None
) -> SuiteReport:
    if name not in SUITES:
        raise ValueError(f"Unknown verification suite: {name}")

    generate, check = SUITES[name]
    report = SuiteReport(name, allowed=int(math.floor(MISS_RATES.get(name, 0.0) * count + 1e-9)))

    for index in range(count):
        seed = base_seed * 1_000_003 + index
        instance = generate(seed)
        try:
            ok, ratios, message = check(instance)
        except Exception as e:
            logger.error(f"{name} instance {seed} raised: {e}", exc_info=True)
            ok, ratios, message = False, {}, f"{type(e).__name__}: {e}"

        report.checked += 1
        for label, ratio in ratios.items():
            report.observe(label, ratio)

        if not ok:
            report.failures.append(f"{name} seed {seed}: {message}")
            logger.warning(f"{name} seed {seed} failed: {message}")
            if failure_dir is not None:
                path = Path(failure_dir) / f"{name}-{seed}.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                report.bundles.append(_bundle(instance, name, message).save(path))

    logger.info(report.summary())
    return report


def run_verification(
    scale: str = "small",
    suites: Optional[List[str]] = None,
    base_seed: int = 0,
    failure_dir: Optional[Union[str, Path]] = None
) -> List[SuiteReport]:
    if scale not in SCALES:
        raise ValueError(f"Unknown verification scale: {scale}")

    counts = SCALES[scale]
    return [run_suite(name, counts[name], base_seed, failure_dir) for name in (suites or list(counts))]


def replay(path: Union[str, Path]) -> SuiteReport:
    """Re-run the check recorded in a failure bundle on its serialized instance."""
    bundle = Bundle.load(path)
    suite = bundle.params.get("suite")
    if suite not in SUITES:
        raise ValueError(f"Bundle {path} does not name a verification suite")

    params = {key: value for key, value in bundle.params.items() if key not in ("suite", "error")}
    instance = Instance(bundle.catalog, bundle.coverage, bundle.utility, params)

    report = SuiteReport(f"{suite} (replay)", checked=1)
    ok, ratios, message = SUITES[suite][1](instance)
    for label, ratio in ratios.items():
        report.observe(label, ratio)
    if not ok:
        report.failures.append(f"{suite} seed {params.get('seed')}: {message}")

    return report
