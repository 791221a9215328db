import numpy as np
import pytest

from relcal.calibrate import Priorities, calibrate_weights, standardize
from relcal.sensitivity import SensitivityContext


def random_design(rng, n, K, n_pop=None):
    """A standardized design built from random raw columns and plausible targets."""
    raw = rng.normal(size=(n, K)) * rng.uniform(0.5, 3.0, K) + rng.uniform(-2, 2, K)
    n_pop = n_pop or 20.0 * n
    targets = n_pop * (raw.mean(axis=0) + rng.normal(scale=0.1, size=K))
    return standardize(raw, targets, n_pop)


def random_instance(rng, n=20, K=2, R=0.5):
    design = random_design(rng, n, K)
    w = rng.uniform(10.0, 30.0, n)
    p = rng.uniform(0.01, 1.0, K + 1)
    prio = Priorities(p, R)
    calib = calibrate_weights(design, w, prio)
    y = 1.0 + design.X[:, 1:] @ rng.normal(size=K) + rng.normal(scale=0.7, size=n)
    ctx = SensitivityContext.build(design, calib, y)
    return design, w, prio, calib, y, ctx


def dense_h(design, P):
    P = np.diag(P) if np.ndim(P) == 1 else np.asarray(P)
    return np.eye(design.n) + design.X @ P @ design.X.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
