from pathlib import Path

import numpy as np
import pytest

import softcache

from softcache import Catalog, CoverageModel, UtilityModel
from softcache.verify import random_catalog, random_coverage, random_utility


FIXTURES = Path(softcache.__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def tiny():
    """K=4, one user on one cell, p=(0.4,0.3,0.2,0.1), contents 1 and 2 accept 0."""
    catalog = Catalog.from_popularity([4, 3, 2, 1])
    model = UtilityModel.average(4, {(1, 0): 1.0, (2, 0): 1.0})
    coverage = CoverageModel.uniform([[1.0]], capacity=1)
    return catalog, coverage, model


@pytest.fixture
def make_instance():
    """Seeded random (catalog, coverage, model) on fractional multi-cell coverage."""
    def _make(seed: int, num_contents: int = 8, num_users: int = 3, num_cells: int = 2,
              capacity: float = 2, fractional: bool = True, per_user: bool = False):
        rng = np.random.default_rng(seed)
        catalog = random_catalog(rng, num_contents, num_users)
        coverage = random_coverage(rng, num_users, num_cells, capacity, fractional=fractional)
        model = random_utility(rng, num_contents, density=0.3, num_users=num_users if per_user else None)
        return catalog, coverage, model

    return _make

