import numpy as np
import pytest

from softcache.simkit import schemes
from softcache.scheme_handler import SchemeHandler
from softcache.verify import SCALES, SUITES, replay, run_suite, run_verification


@pytest.mark.parametrize("name", sorted(SUITES))
def test_suites_pass_on_small_counts(name, tmp_path):
    report = run_suite(name, 5, base_seed=3, failure_dir=tmp_path)

    assert report.passed, report.failures
    assert report.checked == 5
    assert not report.bundles


def test_knapsack_ratios_are_reported():
    report = run_suite("knapsack_bound", 20)

    assert report.ratios["fast"] >= 0.5 * (1 - 1 / np.e) - 1e-12
    assert report.ratios["partial_enum"] >= 1 - 1 / np.e - 1e-12
    assert "min fast ratio" in report.summary()
    assert report.summary().startswith("knapsack_bound: PASS, 20 instances")


def test_failures_are_bundled_and_replayed(tmp_path, monkeypatch):
    import softcache.verify

    monkeypatch.setitem(
        softcache.verify.SUITES, "greedy_bound",
        (softcache.verify.gen_greedy_bound, lambda instance: (False, {}, "forced failure"))
    )
    report = run_suite("greedy_bound", 2, failure_dir=tmp_path)

    assert not report.passed
    assert len(report.bundles) == 2
    assert "FAIL (2)" in report.summary()

    monkeypatch.undo()
    replayed = replay(report.bundles[0])
    assert replayed.passed
    assert replayed.checked == 1


def test_check_errors_count_as_failures(monkeypatch):
    import softcache.verify

    def boom(instance):
        raise ZeroDivisionError("broken check")

    monkeypatch.setitem(softcache.verify.SUITES, "lazy", (softcache.verify.gen_engine, boom))
    report = run_suite("lazy", 1)

    assert "ZeroDivisionError" in report.failures[0]


def test_unknown_suite_and_scale():
    with pytest.raises(ValueError):
        run_suite("bogus_suite", 1)
    with pytest.raises(ValueError):
        run_verification("huge")


def test_scales_cover_every_suite():
    for counts in SCALES.values():
        assert set(counts) == set(SUITES)
    assert SCALES["small"]["knapsack_bound"] < SCALES["full"]["knapsack_bound"]


def test_scheme_registry():
    assert set(schemes.get_schemes()) == {
        "Single", "SingleSCH", "SingleSCHPartialEnum", "Femto", "FemtoSCH", "FemtoUS"
    }
    assert schemes.has_scheme("FemtoUS")
    with pytest.raises(ValueError):
        schemes.handle("Magic")


def test_scheme_handler_reregistration(caplog):
    handler = SchemeHandler()

    @handler.reg_scheme("x")
    def first():
        return 1

    @handler.reg_scheme("x")
    def second():
        return 2

    assert handler.handle("x") == 2
    assert "Overwriting" in caplog.text


def test_scheme_errors_propagate_without_logging(caplog):
    handler = SchemeHandler()

    @handler.reg_scheme("broken")
    def broken():
        raise RuntimeError("solver crashed")

    with pytest.raises(RuntimeError):
        handler.handle("broken")
    assert not caplog.records


def test_simulation_agrees_with_objective_on_random_placements():
    report = run_suite("simulation", 20)

    assert report.allowed == 1
    assert report.passed, report.failures
    assert len(report.failures) <= 1


def test_statistical_suite_tolerates_one_miss_in_twenty(monkeypatch):
    import softcache.verify

    monkeypatch.setitem(softcache.verify.SUITES, "simulation", (lambda seed: seed, lambda seed: (seed != 0, {}, "miss")))
    report = run_suite("simulation", 20)

    assert report.passed
    assert "1 of 1 allowed misses" in report.summary()

    monkeypatch.setitem(softcache.verify.SUITES, "simulation", (lambda seed: seed, lambda seed: (seed > 1, {}, "miss")))
    assert not run_suite("simulation", 20).passed


def test_exact_suites_allow_no_misses(monkeypatch):
    import softcache.verify

    monkeypatch.setitem(softcache.verify.SUITES, "commit_order", (lambda seed: seed, lambda seed: (seed != 0, {}, "off")))
    report = run_suite("commit_order", 40)

    assert report.allowed == 0
    assert not report.passed
