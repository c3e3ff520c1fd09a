"""
Test Configuration and Fixtures
Provides shared test configuration and fixtures for all test modules
"""

import pytest
import numpy as np
import scipy.sparse as sp

from ldqn.core.data import Dataset, partition
from ldqn.core.objectives import FiniteSumObjective, LogisticShard, random_quadratic_shards
from ldqn.schemas.run_schemas import RunConfig


@pytest.fixture
def rng():
    """Seeded random generator for each test."""
    return np.random.default_rng(12345)


@pytest.fixture
def quadratic_shards():
    """Four 10-dimensional quadratic shards with spectra in [1, 2]."""
    return random_quadratic_shards(n=4, d=10, eig_lo=1.0, eig_hi=2.0, seed=3)


@pytest.fixture
def quadratic_objective(quadratic_shards):
    """Finite-sum objective over the quadratic shards."""
    return FiniteSumObjective(quadratic_shards)


@pytest.fixture
def small_dataset():
    """Sample logistic dataset for testing."""
    gen = np.random.default_rng(7)
    X = gen.standard_normal((120, 8))
    X[gen.random((120, 8)) < 0.3] = 0.0
    labels = np.where(X @ np.ones(8) + 0.3 * gen.standard_normal(120) > 0, 1.0, -1.0)
    return Dataset(rows=sp.csr_matrix(X), labels=labels)


@pytest.fixture
def logistic_shard(small_dataset):
    """Single regularized logistic shard over the sample dataset."""
    return LogisticShard(small_dataset.rows, small_dataset.labels, lam=0.1)


@pytest.fixture
def logistic_shards(small_dataset):
    """Sample dataset split across three workers."""
    return partition(small_dataset, 3, seed=0, lam=0.05)


@pytest.fixture
def sample_libsvm_text():
    """Sample LIBSVM content for testing."""
    return (
        "# two features, labels in {0, 1}\n"
        "1 1:0.5 2:1.5\n"
        "0 2:-2.0\n"
        "\n"
        "1 1:3.0\n"
    )


@pytest.fixture
def run_config(tmp_path):
    """Small synthetic L-DQN run configuration."""
    return RunConfig.model_validate({
        "solver": "ldqn",
        "dataset": {"kind": "synthetic", "N": 200, "d": 6, "seed": 1},
        "workers": 3,
        "memory": 4,
        "eta": 0.8,
        "seed": 7,
        "delay": {"kind": "uniform-integer", "params": {"low": 1, "high": 3}, "seed": 2},
        "stop": {"max_updates": 60},
        "snapshot_interval": 10,
        "output_dir": str(tmp_path / "run"),
    })


@pytest.fixture(autouse=True)
def clear_output_override(monkeypatch):
    """Keep LDQN_OUTPUT_DIR from leaking into tests."""
    monkeypatch.delenv("LDQN_OUTPUT_DIR", raising=False)
