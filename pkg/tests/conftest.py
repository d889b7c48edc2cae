"""Test fixtures. Thread pinning must happen before numpy loads so the
single-threaded runtime claims in the acceptance suite are honest."""

import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(np.random.PCG64(12345))


@pytest.fixture(scope="session")
def experiment():
    """The full desk-scale protocol, built once per session (several minutes)."""
    from harness import build_experiment

    return build_experiment()
