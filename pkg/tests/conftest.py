"""
Shared fixtures for the TransNN Lab test suite
"""

import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from services.network_service import NetworkKind, TransmissionNetwork  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def two_node_net():
    return TransmissionNetwork(a=np.ones((2, 2)), w=np.full((2, 2), 0.5), kind=NetworkKind.SINGLE)


@pytest.fixture
def samples_dir():
    return project_root / "samples"


@pytest.fixture
def make_single_net():
    """Factory for random single-particle networks with self-loops."""
    def build(rng: np.random.Generator, n: int, density: float = 0.3, w_scale: float = 1.0):
        a = (rng.random((n, n)) < density).astype(float)
        np.fill_diagonal(a, 1.0)
        w = w_scale * rng.random((n, n))
        return TransmissionNetwork(a=a, w=w, kind=NetworkKind.SINGLE)
    return build


@pytest.fixture
def make_star_net():
    """Factory for sparse single-particle stars: hub 0, self level 0.3, spoke level `spoke`."""
    def build(n: int, spoke: float):
        leaves = np.arange(1, n)
        hub = np.zeros(n - 1, dtype=int)
        rows = np.concatenate([np.arange(n), hub, leaves])
        cols = np.concatenate([np.arange(n), leaves, hub])
        levels = np.concatenate([np.full(n, 0.3), np.full(2 * (n - 1), spoke)])
        a = scipy.sparse.csr_array((np.ones(rows.size), (rows, cols)), shape=(n, n))
        w = scipy.sparse.csr_array((levels, (rows, cols)), shape=(n, n))
        return TransmissionNetwork(a=a, w=w, kind=NetworkKind.SINGLE)
    return build
