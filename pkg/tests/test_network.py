import logging
import math

import numpy as np
import pytest

from softcache import CoverageModel, generate_geometric, to_single_cache
from softcache.errors import IngestError, ValidationError
from softcache.network import load_coverage


def test_range_covering_area_gives_full_coverage():
    model = generate_geometric(1, 1, 1.0, 10.0, seed=4)
    np.testing.assert_array_equal(model.q, [[1.0]])


def test_geometric_is_deterministic():
    a = generate_geometric(20, 50, 1000.0, 200.0, seed=11)
    b = generate_geometric(20, 50, 1000.0, 200.0, seed=11)
    c = generate_geometric(20, 50, 1000.0, 200.0, seed=12)

    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.cell_positions, b.cell_positions)
    assert not np.array_equal(a.user_positions, c.user_positions)


def test_geometric_cells_per_user():
    # probability that two uniform points of the unit square lie within distance a
    a = 200.0 / 1000.0
    expected = 20 * (math.pi * a ** 2 - 8.0 / 3.0 * a ** 3 + a ** 4 / 2.0)

    means = [generate_geometric(20, 50, 1000.0, 200.0, seed=seed).cells_per_user() for seed in range(100)]

    assert np.mean(means) == pytest.approx(expected, abs=0.15)
    assert 2.0 <= np.mean(means) <= 4.0


def test_geometric_more_cells_more_coverage():
    few = np.mean([generate_geometric(5, 50, 1000.0, 200.0, seed=s).cells_per_user() for s in range(50)])
    many = np.mean([generate_geometric(30, 50, 1000.0, 200.0, seed=s).cells_per_user() for s in range(50)])
    assert few < many


def test_geometric_rejects_bad_parameters():
    with pytest.raises(ValidationError):
        generate_geometric(0, 10, 1000.0, 200.0, seed=0)
    with pytest.raises(ValidationError):
        generate_geometric(3, 10, 1000.0, -1.0, seed=0)


def test_coverage_validation():
    with pytest.raises(ValidationError):
        CoverageModel.uniform([[1.2]], capacity=1)
    with pytest.raises(ValidationError):
        CoverageModel.uniform([[1.0]], capacity=0)
    with pytest.raises(ValidationError):
        CoverageModel.uniform([[1.0]], capacity=1, capacity_unit="blocks")


def test_single_cache_flag():
    assert CoverageModel.uniform([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], 1).is_single_cache
    assert not CoverageModel.uniform([[1.0, 1.0]], 1).is_single_cache
    assert CoverageModel.uniform([[0.25, 0.75]], 1).is_single_cache


def test_strongest_ties_go_to_lowest_cell():
    cells = np.array([[3.0, 0.0], [0.0, 3.0], [1.0, 0.0], [-3.0, 0.0], [0.0, -3.0], [0.0, 1.0]])
    model = CoverageModel(
        q=np.ones((1, 6)),
        cache_capacities=np.ones(6),
        user_positions=np.zeros((1, 2)),
        cell_positions=cells
    )

    single = to_single_cache(model)

    np.testing.assert_array_equal(single.q, [[0, 0, 1, 0, 0, 0]])


def test_single_cache_model_is_unchanged():
    model = CoverageModel.uniform([[0.0, 1.0], [1.0, 0.0]], 2)
    assert to_single_cache(model) is model


def test_explicit_assignment():
    model = CoverageModel.uniform([[1.0, 1.0], [1.0, 1.0]], 2)
    single = to_single_cache(model, [1, 0])
    np.testing.assert_array_equal(single.q, [[0, 1], [1, 0]])

    with pytest.raises(ValidationError):
        to_single_cache(model, [1])


@pytest.mark.parametrize("seed", range(10))
def test_single_cache_postcondition(seed):
    model = generate_geometric(20, 50, 1000.0, 200.0, seed=seed)
    single = to_single_cache(model)

    totals = single.q.sum(axis=1)
    assert set(np.unique(totals)) <= {0.0, 1.0}
    assert single.is_single_cache
    np.testing.assert_array_equal(single.covered_users, model.covered_users)
    assert np.all(model.q[single.q > 0] > 0)


def test_uncovered_users_are_dropped_with_warning(caplog):
    model = CoverageModel.uniform([[1.0, 1.0], [0.0, 0.0]], 1)

    with caplog.at_level(logging.WARNING, logger="softcache.network"):
        single = to_single_cache(model)

    np.testing.assert_array_equal(single.q, [[1, 0], [0, 0]])
    assert "not covered" in caplog.text


def test_load_coverage(fixtures_dir):
    model = load_coverage(fixtures_dir / "tiny_coverage.csv", capacity=3)
    np.testing.assert_array_equal(model.q, [[1.0]])
    np.testing.assert_array_equal(model.cache_capacities, [3.0])


def test_with_capacities_keeps_coverage():
    model = generate_geometric(4, 10, 1000.0, 300.0, seed=1)
    resized = model.with_capacities(7, "bytes")

    np.testing.assert_array_equal(resized.q, model.q)
    np.testing.assert_array_equal(resized.cache_capacities, [7, 7, 7, 7])
    assert resized.capacity_unit == "bytes"


def _write(tmp_path, text):
    path = tmp_path / "coverage.csv"
    path.write_text(text)
    return path


def test_load_coverage_header_only(tmp_path):
    path = _write(tmp_path, "user,cell,q\n")

    with pytest.raises(IngestError, match="no rows"):
        load_coverage(path, capacity=1)

    model = load_coverage(path, capacity=1, num_users=2, num_cells=3)
    np.testing.assert_array_equal(model.q, np.zeros((2, 3)))


def test_load_coverage_rejects_duplicates(tmp_path):
    path = _write(tmp_path, "user,cell,q\n0,0,0.5\n1,0,1\n0,0,0.7\n")

    with pytest.raises(IngestError, match="duplicate") as info:
        load_coverage(path, capacity=1)
    assert info.value.line == 4


@pytest.mark.parametrize("row, line", [
    ("0,x,1", 3),
    ("0,1,1.5", 3),
    ("-1,0,1", 3),
    ("0,0,nan", 3),
])
def test_load_coverage_reports_line(tmp_path, row, line):
    path = _write(tmp_path, f"user,cell,q\n1,1,1\n{row}\n")

    with pytest.raises(IngestError) as info:
        load_coverage(path, capacity=1)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_load_coverage_checks_declared_size(tmp_path):
    path = _write(tmp_path, "user,cell,q\n0,0,1\n0,4,1\n")

    with pytest.raises(IngestError, match="cell 4") as info:
        load_coverage(path, capacity=1, num_cells=3)
    assert info.value.line == 3
