import logging

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from softcache import ScenarioConfig, gen_sch1, gen_sch2, gen_zipf_demand
from softcache.catalog import mean_related_degree
from softcache.errors import ConfigError, ValidationError
from softcache.runner import SweepRunner
from softcache.simkit import apply_axis, build_scenario, evaluate_point, load_sweep
from softcache.utils import derive_seed, load_json


def small_config(**overrides) -> ScenarioConfig:
    data = {
        "name": "test",
        "catalog": {"kind": "synthetic", "num_contents": 120, "zipf_exponent": 0.8},
        "utility": {"kind": "sch1", "mean_degree": 3},
        "network": {"num_cells": 6, "num_users": 15, "comm_range": 300.0},
        "sweep": {"axis": "capacity", "values": [1, 3]},
        "requests": 2000,
        "seeds": [0, 1],
        "lazy": True,
        "record_timing": False,
        "enable_logging": False,
    }
    data.update(overrides)
    return ScenarioConfig.from_dict(data)


def frame(rows) -> pd.DataFrame:
    return pd.DataFrame([vars(row) for row in rows])


def test_zipf_uniform():
    demand = gen_zipf_demand(5, 0.0)
    np.testing.assert_allclose(demand, np.full((1, 5), 0.2))


def test_zipf_harmonic():
    demand = gen_zipf_demand(4, 1.0, num_users=3)
    harmonic = 1 + 1 / 2 + 1 / 3 + 1 / 4

    assert demand.shape == (3, 4)
    np.testing.assert_allclose(demand[2], [1 / harmonic, 1 / (2 * harmonic), 1 / (3 * harmonic), 1 / (4 * harmonic)])
    np.testing.assert_allclose(demand.sum(axis=1), 1.0)


def test_zipf_rejects_negative_exponent():
    with pytest.raises(ValidationError):
        gen_zipf_demand(10, -0.5)


def test_sch1_mean_degree():
    popularity = gen_zipf_demand(200, 0.8)[0]
    degrees = [mean_related_degree(gen_sch1(200, 4.0, popularity, 1.0, seed=seed)) for seed in range(100)]

    assert np.mean(degrees) == pytest.approx(4.0, rel=0.05)


def test_sch1_is_reproducible():
    popularity = gen_zipf_demand(100, 0.8)[0]
    a = gen_sch1(100, 3.0, popularity, 0.5, seed=9)
    b = gen_sch1(100, 3.0, popularity, 0.5, seed=9)

    assert (a.matrix() != b.matrix()).nnz == 0
    np.testing.assert_array_equal(np.unique(a.matrix().data), [0.5])


def test_sch1_fixed_degree():
    popularity = gen_zipf_demand(50, 0.8)[0]
    model = gen_sch1(50, 2.5, popularity, 1.0, seed=1, fixed_degree=True)

    np.testing.assert_array_equal(np.diff(model.matrix().indptr), 3)


def test_sch2_exact_degree():
    model = gen_sch2(30, 3.5, 1.0, seed=2)
    matrix = model.matrix()

    np.testing.assert_array_equal(np.diff(matrix.indptr), 4)
    assert np.all(matrix.diagonal() == 0)


def test_sch2_rejects_degree_at_catalog_size():
    with pytest.raises(ValidationError):
        gen_sch2(5, 5, 1.0, seed=0)


def test_zero_acceptance_gives_no_relations():
    assert gen_sch2(30, 3.0, 0.0, seed=2).matrix().nnz == 0


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_dict({"network": {"bogus": 1}})

    assert "network.bogus" in str(info.value)


def test_config_validation():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"schemes": ["Femto", "Magic"]})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"sweep": {"axis": "capacity", "values": [0]}})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"utility": {"kind": "ingested"}})


def test_apply_axis():
    config = small_config()

    assert apply_axis(config, "capacity", 7).network.capacity == 7
    assert apply_axis(config, "mean_degree", 2.0).utility.mean_degree == 2.0
    assert apply_axis(config, "acceptance", 0.3).utility.level == 0.3
    assert apply_axis(config, None, None) is config
    with pytest.raises(ValueError):
        apply_axis(config, "area", 1.0)


def test_seed_streams_are_independent():
    seeds = {derive_seed(5, stream) for stream in ("catalog", "network", "utility", "requests")}
    assert len(seeds) == 4
    assert derive_seed(5, "network") == derive_seed(5, "network")
    assert derive_seed(5, "network") != derive_seed(6, "network")


def test_build_scenario_is_deterministic():
    config = small_config()
    a, b = build_scenario(config, 3), build_scenario(config, 3)

    np.testing.assert_array_equal(a.coverage.q, b.coverage.q)
    assert (a.utility.matrix() != b.utility.matrix()).nnz == 0
    assert a.single_coverage.is_single_cache
    assert a.request_seed == b.request_seed


def test_byte_capacity_scales_with_mean_size():
    config = small_config(
        catalog={"num_contents": 50, "size_range": [1.0, 3.0]},
        network={"num_cells": 4, "num_users": 10, "capacity": 4, "capacity_unit": "bytes"}
    )
    scenario = build_scenario(config, 0)

    np.testing.assert_allclose(scenario.coverage.cache_capacities, 4 * scenario.catalog.sizes.mean())


def test_evaluate_point_rows():
    config = small_config()
    rows = evaluate_point(config, 3, 0)

    assert [row.scheme for row in rows] == config.schemes
    assert all(not row.failed for row in rows)
    assert all(row.solve_ms == 0.0 for row in rows)
    assert all(0.0 <= row.objective <= 1.0 for row in rows)


def test_partial_enum_refusal_becomes_error_row():
    config = small_config(schemes=["SingleSCHPartialEnum", "SingleSCH"], catalog={"num_contents": 80})
    rows = evaluate_point(config, 2, 0)

    assert rows[0].error.startswith("RefusalError")
    assert np.isnan(rows[0].objective)
    assert not rows[1].failed


def test_partial_enum_scheme_on_small_catalog():
    config = small_config(schemes=["SingleSCHPartialEnum", "SingleSCH"], catalog={"num_contents": 12})
    enum, greedy = evaluate_point(config, 2, 0)

    assert not enum.failed
    assert enum.objective >= greedy.objective - 1e-12


def test_sweep_csv_is_reproducible(tmp_path):
    config = small_config()
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"

    assert SweepRunner(config).run(first) == 16
    SweepRunner(config).run(second)

    assert first.read_bytes() == second.read_bytes()


def test_sweep_threads_do_not_change_rows(tmp_path):
    config = small_config()
    serial, parallel = tmp_path / "serial.csv", tmp_path / "parallel.csv"

    SweepRunner(config, threads=1).run(serial)
    SweepRunner(config, threads=2).run(parallel)

    assert serial.read_bytes() == parallel.read_bytes()


def test_sweep_rows_are_ordered(tmp_path):
    config = small_config()
    out = tmp_path / "sweep.csv"
    SweepRunner(config).run(out)

    table = load_sweep(out)
    keys = list(zip(table["value"], table["scheme"].map(config.schemes.index), table["seed"]))
    assert keys == sorted(keys)


def test_crashed_sweep_keeps_complete_rows(tmp_path, monkeypatch):
    import softcache.runner

    original = softcache.runner.evaluate_point

    def crashing(config, value, seed):
        if value == 3:
            raise RuntimeError("worker died")
        return original(config, value, seed)

    monkeypatch.setattr(softcache.runner, "evaluate_point", crashing)
    out = tmp_path / "partial.csv"

    with pytest.raises(RuntimeError):
        SweepRunner(small_config()).run(out)

    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1 + 8
    assert len(load_sweep(out)) == 8


def test_capacity_sweep_fixture(fixtures_dir):
    path = fixtures_dir / "capacity_sweep.json"
    config = ScenarioConfig.from_dict(load_json(path), base_dir=path.parent)

    assert config.sweep.values == list(range(2, 16))
    assert config.schemes == ["Single", "SingleSCH", "Femto", "FemtoSCH"]
    assert len(SweepRunner(replace(config, seeds=[0, 1, 2])).jobs()) == 14 * 3


def test_capacity_trends():
    config = small_config(
        catalog={"num_contents": 300},
        utility={"kind": "sch1", "mean_degree": 4},
        network={"num_cells": 10, "num_users": 30},
        sweep={"axis": "capacity", "values": [2, 5, 10]},
        seeds=[0, 1, 2],
        requests=1000
    )
    table = frame(SweepRunner(config).rows())
    means = table.groupby(["scheme", "value"])["objective"].mean().unstack("scheme")

    for scheme in ("Single", "SingleSCH"):
        assert means[scheme].is_monotonic_increasing
    for scheme in ("Femto", "FemtoSCH"):
        assert np.all(np.diff(means[scheme].to_numpy()) >= -0.005)

    assert np.all(means["FemtoSCH"] >= means["Femto"])
    assert np.all(means["Femto"] >= means["Single"])
    assert np.all(means["SingleSCH"] >= means["Single"])


def test_acceptance_endpoints():
    config = small_config(
        catalog={"num_contents": 200},
        utility={"kind": "sch1", "mean_degree": 4},
        network={"num_cells": 8, "num_users": 25, "capacity": 4},
        sweep={"axis": "acceptance", "values": [0.0, 0.5, 1.0]},
        seeds=[0, 1],
        requests=500
    )
    table = frame(SweepRunner(config).rows())
    at_zero = table[table["value"] == 0.0].set_index(["seed", "scheme"])["objective"]

    for seed in config.seeds:
        assert at_zero[(seed, "SingleSCH")] == pytest.approx(at_zero[(seed, "Single")], abs=1e-9)
        assert at_zero[(seed, "FemtoSCH")] == pytest.approx(at_zero[(seed, "Femto")], abs=1e-9)

    femto_sch = table[table["scheme"] == "FemtoSCH"].groupby("value")["objective"].mean()
    assert np.all(np.diff(femto_sch.to_numpy()) >= -0.005)
    assert femto_sch[1.0] > femto_sch[0.0]


def test_refusal_is_logged_once(caplog):
    config = small_config(schemes=["SingleSCHPartialEnum"], catalog={"num_contents": 80})

    with caplog.at_level(logging.DEBUG, logger="softcache"):
        evaluate_point(config, 2, 0)

    refusals = [record for record in caplog.records if "refuse" in record.getMessage()]
    assert len(refusals) == 1
    assert refusals[0].levelno == logging.WARNING
    assert not [record for record in caplog.records if record.levelno >= logging.ERROR]


def test_scenario_models_are_bound_to_users():
    scenario = build_scenario(small_config(), 0)

    assert scenario.utility.user_bound == 15
    assert scenario.identity.user_bound == 15


@pytest.mark.parametrize("name, axis, values", [
    ("cells_sweep.json", "num_cells", [5, 10, 20, 30]),
    ("degree_sweep_sch1.json", "mean_degree", [2, 4, 6, 8, 10]),
    ("degree_sweep_sch2.json", "mean_degree", [2, 4, 6, 8, 10]),
    ("acceptance_sweep.json", "acceptance", [round(0.1 * i, 1) for i in range(11)]),
])
def test_sweep_fixtures(fixtures_dir, name, axis, values):
    path = fixtures_dir / name
    config = ScenarioConfig.from_dict(load_json(path), base_dir=path.parent)

    assert config.sweep.axis == axis
    assert config.sweep.values == pytest.approx(values)
    assert len(SweepRunner(config).jobs()) == len(values)


def network_config(kind: str, **overrides) -> ScenarioConfig:
    data = {
        "catalog": {"kind": "synthetic", "num_contents": 600, "zipf_exponent": 0.8},
        "utility": {"kind": kind, "mean_degree": 4},
        "network": {"num_cells": 20, "num_users": 50, "capacity": 5},
        "schemes": ["Single", "SingleSCH", "Femto", "FemtoSCH"],
        "sweep": {"axis": "capacity", "values": [2, 5, 10]},
        "seeds": [0, 1, 2],
    }
    data.update(overrides)
    return small_config(**data)


def test_popularity_correlated_relations_gain_more():
    gains = {}
    for kind in ("sch1", "sch2"):
        table = frame(SweepRunner(network_config(kind, requests=200)).rows())
        means = table.groupby("scheme")["objective"].mean()
        gains[kind] = (means["SingleSCH"] - means["Single"], means["FemtoSCH"] - means["Femto"])

    assert gains["sch1"][0] > gains["sch2"][0] > 0
    assert gains["sch1"][1] > gains["sch2"][1] > 0


def test_uniform_popularity_makes_generators_alike():
    config = small_config(
        catalog={"kind": "synthetic", "num_contents": 300, "zipf_exponent": 0.0},
        network={"num_cells": 10, "num_users": 30, "capacity": 5},
        schemes=["Single", "SingleSCH"],
        sweep=None,
        seeds=[0, 1, 2, 3, 4],
        requests=200
    )
    degrees, means = {}, {}
    for kind in ("sch1", "sch2"):
        point = replace(config, utility=replace(config.utility, kind=kind))
        table = frame(SweepRunner(point).rows())
        means[kind] = table.groupby("scheme")["objective"].mean()
        degrees[kind] = np.mean([
            mean_related_degree(build_scenario(point, seed).utility) for seed in point.seeds
        ])

    assert degrees["sch1"] == pytest.approx(3.0, abs=0.15)
    assert degrees["sch2"] == 3.0
    assert means["sch1"]["Single"] == pytest.approx(means["sch2"]["Single"], abs=1e-12)
    assert means["sch1"]["SingleSCH"] == pytest.approx(means["sch2"]["SingleSCH"], rel=0.2)


def test_femto_sch_dominates_single_sch():
    table = frame(SweepRunner(network_config("sch1", requests=200)).rows())
    pivot = table.pivot_table(index=["value", "seed"], columns="scheme", values="objective")

    assert np.all(pivot["FemtoSCH"] >= pivot["SingleSCH"])
    assert np.all(pivot.groupby(level="value").mean()["FemtoSCH"] > pivot.groupby(level="value").mean()["SingleSCH"])


def test_simulated_hit_ratio_tracks_objective():
    table = frame(SweepRunner(network_config("sch1", requests=20000)).rows())
    deviation = (table["objective"] - table["sim_hit_ratio"]).abs()

    assert np.all(table["sim_stderr"] > 0)
    assert np.all(deviation <= 4 * table["sim_stderr"])
    # at most one row in twenty outside three standard errors
    assert np.count_nonzero(deviation > 3 * table["sim_stderr"]) <= len(table) // 20
