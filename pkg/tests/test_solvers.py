import numpy as np
import pytest

from softcache import (
    Catalog,
    CoverageModel,
    Mode,
    Placement,
    UtilityModel,
    fast_greedy_knapsack,
    gen_sch1,
    gen_zipf_demand,
    generate_geometric,
    greedy_femto,
    greedy_femto_us,
    greedy_single,
    partial_enum_knapsack,
    popularity_baseline,
    schr_femto,
    schr_single,
)
from softcache.errors import ContractError, ModeError, RefusalError
from softcache.oracle import exhaustive_single
from softcache.verify import (
    check_lazy,
    check_greedy_bound,
    check_knapsack_bound,
    check_matroid_bound,
    check_tiebreak,
    gen_engine,
    gen_greedy_bound,
    gen_knapsack_bound,
    gen_matroid_bound,
    gen_tiebreak,
    random_catalog,
    random_utility,
    single_coverage,
)


def knapsack_instance(popularity):
    catalog = Catalog(sizes=[10.0, 5.0, 5.0], demand=[popularity])
    coverage = CoverageModel.uniform([[1.0]], capacity=10, capacity_unit="bytes")
    return catalog, coverage, UtilityModel.identity(3)


def test_greedy_single_prefers_related_content(tiny):
    catalog, coverage, model = tiny
    result = greedy_single(catalog, coverage, model)

    assert result.placement == Placement(1, [(0, 0)])
    assert result.objective == pytest.approx(0.9)
    assert result.trace[0][0] == (0, 0)
    assert result.solver == "greedy_single"


def test_greedy_single_identity_is_popularity():
    catalog = Catalog.from_popularity([1, 5, 2, 4, 3], num_users=3)
    coverage = single_coverage(3, 2)
    result = greedy_single(catalog, coverage, UtilityModel.identity(5))

    assert result.placement == Placement(1, [(1, 0), (3, 0)])


def test_greedy_single_fills_min_of_capacity_and_catalog():
    catalog = Catalog.from_popularity([3, 2, 1])
    result = greedy_single(catalog, single_coverage(1, 5), UtilityModel.identity(3))

    assert len(result.placement) == 3
    assert result.objective == pytest.approx(1.0)


def test_greedy_single_stops_on_zero_gain():
    catalog = Catalog.from_popularity([1, 1, 0, 0])
    result = greedy_single(catalog, single_coverage(1, 4), UtilityModel.identity(4))

    assert result.placement == Placement(1, [(0, 0), (1, 0)])


def test_greedy_single_rejects_byte_budget_with_mixed_sizes():
    catalog, coverage, model = knapsack_instance([0.5, 0.3, 0.2])
    with pytest.raises(ContractError):
        greedy_single(catalog, coverage, model)


@pytest.mark.parametrize("seed", range(30))
def test_greedy_single_bound(seed):
    ok, ratios, message = check_greedy_bound(gen_greedy_bound(seed))
    assert ok, message
    assert ratios["greedy"] >= 1 - 1 / np.e - 1e-12


def test_fast_greedy_equal_sizes_matches_greedy_single():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        unit = random_catalog(rng, 9, 2)
        model = random_utility(rng, 9, density=0.3)
        sized = Catalog(sizes=np.full(9, 2.0), demand=unit.demand, user_shares=unit.user_shares)

        greedy = greedy_single(unit, single_coverage(2, 3), model)
        knapsack = fast_greedy_knapsack(sized, single_coverage(2, 6.0, "bytes"), model)

        assert knapsack.placement == greedy.placement
        assert knapsack.objective == pytest.approx(greedy.objective, abs=1e-12)


def test_fast_greedy_returns_better_unit_run():
    # density prefers 1 then 2 (0.45 total); the single large item 0 is worth 0.55
    catalog, coverage, model = knapsack_instance([0.55, 0.3, 0.15])
    result = fast_greedy_knapsack(catalog, coverage, model)

    assert result.placement == Placement(1, [(0, 0)])
    assert result.objective == pytest.approx(0.55)


def test_fast_greedy_returns_better_density_run():
    catalog, coverage, model = knapsack_instance([0.45, 0.3, 0.25])
    result = fast_greedy_knapsack(catalog, coverage, model)

    assert result.placement == Placement(1, [(1, 0), (2, 0)])
    assert result.objective == pytest.approx(0.55)


def test_fast_greedy_nothing_fits():
    catalog, coverage, model = knapsack_instance([0.5, 0.3, 0.2])
    result = fast_greedy_knapsack(catalog, coverage, model, budget=1.0)

    assert len(result.placement) == 0
    assert result.objective == 0.0


def test_knapsack_needs_byte_budget(tiny):
    catalog, coverage, model = tiny
    with pytest.raises(ContractError):
        fast_greedy_knapsack(catalog, coverage, model)


def test_partial_enum_small_catalog_is_exact():
    catalog, coverage, model = knapsack_instance([0.45, 0.3, 0.25])
    result = partial_enum_knapsack(catalog, coverage, model, budget=20.0)
    oracle = exhaustive_single(catalog, coverage, model, budget=20.0)

    assert result.objective == pytest.approx(oracle.optimum)
    assert result.objective == pytest.approx(1.0)


def test_partial_enum_refuses_large_catalogs():
    catalog = Catalog.from_popularity(np.ones(8))
    coverage = single_coverage(1, 4.0, "bytes")

    with pytest.raises(RefusalError) as info:
        partial_enum_knapsack(catalog, coverage, UtilityModel.identity(8), limit=5)

    assert info.value.count == 8
    assert "fast_greedy_knapsack" in str(info.value)


@pytest.mark.parametrize("seed", range(20))
def test_knapsack_bounds(seed):
    ok, ratios, message = check_knapsack_bound(gen_knapsack_bound(seed))
    assert ok, message
    assert ratios["fast"] >= 0.5 * (1 - 1 / np.e) - 1e-12


def test_partial_enum_not_worse_than_fast_greedy():
    for seed in range(10):
        instance = gen_knapsack_bound(100 + seed)
        budget = instance.params["budget"]
        fast = fast_greedy_knapsack(instance.catalog, instance.coverage, instance.model, budget=budget)
        enum = partial_enum_knapsack(instance.catalog, instance.coverage, instance.model, budget=budget)

        assert enum.objective >= fast.objective - 1e-12


def test_greedy_femto_one_cell_is_greedy_single():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        catalog = random_catalog(rng, 10, 3)
        model = random_utility(rng, 10, density=0.3)
        coverage = single_coverage(3, 3)

        femto = greedy_femto(catalog, coverage, model)
        single = greedy_single(catalog, coverage, model)

        assert femto.placement == single.placement
        assert femto.objective == pytest.approx(single.objective, abs=1e-12)


def test_greedy_femto_disjoint_cells():
    rng = np.random.default_rng(8)
    catalog = random_catalog(rng, 10, 4)
    model = random_utility(rng, 10, density=0.3)
    coverage = CoverageModel.uniform([[1, 0], [1, 0], [0, 1], [0, 1]], capacity=2)

    femto = greedy_femto(catalog, coverage, model)

    for cell in range(2):
        users = np.flatnonzero(coverage.q[:, cell])
        shares = catalog.user_shares[users] / catalog.user_shares[users].sum()
        sub = Catalog(sizes=catalog.sizes, demand=catalog.demand[users], user_shares=shares)
        alone = greedy_single(sub, single_coverage(users.size, 2), model)

        np.testing.assert_array_equal(femto.placement.contents(cell), alone.placement.contents(0))


@pytest.mark.parametrize("seed", range(20))
def test_matroid_bounds(seed):
    ok, ratios, message = check_matroid_bound(gen_matroid_bound(seed))
    assert ok, message


@pytest.mark.parametrize("seed", range(20))
def test_ties_go_to_lowest_pair(seed):
    ok, _, message = check_tiebreak(gen_tiebreak(seed))
    assert ok, message


@pytest.mark.parametrize("seed", range(20))
def test_lazy_matches_naive(seed):
    ok, _, message = check_lazy(gen_engine(seed))
    assert ok, message


def test_lazy_matches_naive_on_geometric_instance():
    coverage = generate_geometric(8, 20, 1000.0, 350.0, seed=2, capacity=3)
    catalog = Catalog(sizes=np.ones(60), demand=gen_zipf_demand(60, 0.8, 20))
    model = gen_sch1(60, 3.0, catalog.popularity, 0.7, seed=5)

    naive = greedy_femto(catalog, coverage, model)
    lazy = greedy_femto(catalog, coverage, model, lazy=True)

    assert naive.placement == lazy.placement
    assert naive.objective == pytest.approx(lazy.objective, abs=1e-12)


def test_greedy_femto_respects_capacities():
    coverage = generate_geometric(6, 20, 1000.0, 400.0, seed=3, capacity=2)
    catalog = Catalog(sizes=np.ones(30), demand=gen_zipf_demand(30, 0.8, 20))
    model = gen_sch1(30, 3.0, catalog.popularity, 1.0, seed=1)

    result = greedy_femto(catalog, coverage, model, capacities=[1, 2, 3, 1, 2, 3])

    for cell, capacity in enumerate([1, 2, 3, 1, 2, 3]):
        assert result.placement.contents(cell).size <= capacity
    assert result.objective == pytest.approx(schr_femto(catalog, coverage, model, result.placement), abs=1e-9)


def test_greedy_femto_us_needs_satisfaction(tiny):
    catalog, coverage, model = tiny
    with pytest.raises(ModeError):
        greedy_femto_us(catalog, coverage, model)


def test_greedy_femto_us_without_relations_is_popularity():
    catalog = Catalog.from_popularity([0.1, 0.4, 0.3, 0.2])
    model = UtilityModel.identity(4, mode=Mode.SATISFACTION)
    result = greedy_femto_us(catalog, single_coverage(1, 2), model)

    assert result.placement == Placement(1, [(1, 0), (2, 0)])


def test_greedy_femto_us_single_slot_closed_form():
    catalog = Catalog.from_popularity([0.5, 0.3, 0.2])
    model = UtilityModel.average(3, {(0, 1): 0.9, (2, 1): 0.5, (1, 2): 0.2}, mode=Mode.SATISFACTION)
    scores = catalog.popularity @ model.full_matrix().toarray()

    result = greedy_femto_us(catalog, single_coverage(1, 1), model)

    assert result.placement == Placement(1, [(int(np.argmax(scores)), 0)])
    assert result.objective == pytest.approx(scores.max())


def test_popularity_baseline_top_c(tiny):
    catalog, coverage, model = tiny
    result = popularity_baseline(catalog, coverage.with_capacities(2))

    assert result.placement == Placement(1, [(0, 0), (1, 0)])
    assert result.objective == pytest.approx(0.7)
    assert schr_single(catalog, coverage.with_capacities(2), UtilityModel.identity(4), result.placement) == (
        pytest.approx(0.7)
    )


def test_popularity_baseline_ranks_by_covered_demand():
    catalog = Catalog(sizes=np.ones(3), demand=[[0.6, 0.3, 0.1], [0.0, 0.2, 0.8]])
    coverage = CoverageModel.uniform([[1.0, 0.0], [1.0, 1.0]], capacity=1)

    result = popularity_baseline(catalog, coverage)

    assert result.placement == Placement(2, [(2, 0), (2, 1)])


def test_popularity_baseline_ties_lowest_id():
    catalog = Catalog.from_popularity([1, 2, 2, 1])
    result = popularity_baseline(catalog, single_coverage(1, 1))

    assert result.placement == Placement(1, [(1, 0)])


def test_greedy_femto_beats_popularity_on_average():
    greedy, baseline = [], []
    for seed in range(5):
        coverage = generate_geometric(10, 30, 1000.0, 250.0, seed=seed, capacity=3)
        catalog = Catalog(sizes=np.ones(150), demand=gen_zipf_demand(150, 0.8, 30))
        model = gen_sch1(150, 4.0, catalog.popularity, 1.0, seed=seed)

        greedy.append(greedy_femto(catalog, coverage, model, lazy=True).objective)
        baseline.append(popularity_baseline(catalog, coverage, model=model).objective)

    assert np.mean(greedy) > np.mean(baseline)


def test_capacity_override_travels_with_result(tiny):
    catalog, coverage, model = tiny
    result = greedy_single(catalog, coverage, model, capacity=3)

    assert len(result.placement) == 3
    np.testing.assert_array_equal(result.coverage.cache_capacities, [3.0])
    assert schr_single(catalog, result.coverage, model, result.placement) == pytest.approx(result.objective, abs=1e-9)


def test_overrides_evaluate_against_result_coverage():
    coverage = generate_geometric(5, 15, 1000.0, 400.0, seed=4, capacity=1)
    catalog = Catalog(sizes=np.ones(20), demand=gen_zipf_demand(20, 0.8, 15))
    model = gen_sch1(20, 3.0, catalog.popularity, 1.0, seed=2)

    femto = greedy_femto(catalog, coverage, model, capacities=[2, 3, 1, 4, 2])
    assert schr_femto(catalog, femto.coverage, model, femto.placement) == pytest.approx(femto.objective, abs=1e-9)

    sized, byte_coverage, identity = knapsack_instance([0.45, 0.3, 0.25])
    knapsack = fast_greedy_knapsack(sized, byte_coverage, identity, budget=20.0)
    assert knapsack.coverage.capacity_unit == "bytes"
    assert schr_single(sized, knapsack.coverage, identity, knapsack.placement) == pytest.approx(knapsack.objective)
