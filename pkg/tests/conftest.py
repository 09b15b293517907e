import numpy as np
import pytest

from osc_ensemble import circle, phase_reduction
from osc_ensemble.fokker_planck import PhaseModel


@pytest.fixture(scope="session")
def fhn():
    lc, ps = phase_reduction.reduce(phase_reduction.fitzhugh_nagumo())
    return lc, ps


@pytest.fixture(scope="session")
def fhn_model(fhn):
    lc, ps = fhn
    return PhaseModel(lc.omega, ps.Z, ps.Zw, 0.007)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_trig(rng, n, K, scale=1.0, mean=0.0):
    """Random real trigonometric polynomial of order K sampled on the n-grid."""
    th = circle.grid(n)
    out = np.full(n, mean)
    for k in range(1, K + 1):
        a, b = rng.normal(size=2) * scale / k
        out += a * np.cos(k * th) + b * np.sin(k * th)
    return out


def random_density(rng, n, K=4, scale=0.5):
    return circle.as_density(np.exp(random_trig(rng, n, K, scale)), renormalize=True)


@pytest.fixture
def unit_model():
    """Zw == 1 test model with a two-mode sensitivity."""
    n = 128
    th = circle.grid(n)
    return PhaseModel(1.0, np.sin(th) + 0.4 * np.cos(2 * th), np.ones(n), 0.05)
