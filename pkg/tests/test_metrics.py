import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import i0

from osc_ensemble import circle, metrics
from osc_ensemble.circle import TWO_PI

from conftest import random_density


def wrapped_normal(mu, sigma, n):
    th = circle.grid(n)
    out = sum(np.exp(-((th - mu + TWO_PI * j) ** 2) / (2 * sigma * sigma)) for j in range(-5, 6))
    return circle.as_density(out, renormalize=True)


def lp_w2(rho1, rho2, sub=4):
    """Exact discrete OT with arc-length cost, each cell split into ``sub`` atoms."""
    n = rho1.size
    h = TWO_PI / n
    x = (np.arange(n * sub) + 0.5) / sub * h - h / 2
    a = np.repeat(np.maximum(rho1, 0) * h / sub, sub)
    b = np.repeat(np.maximum(rho2, 0) * h / sub, sub)
    m = x.size
    d = np.abs(x[:, None] - x[None, :])
    d = np.minimum(d, TWO_PI - d)
    rows = sparse.vstack([sparse.kron(sparse.eye(m), np.ones((1, m))), sparse.kron(np.ones((1, m)), sparse.eye(m))])
    res = linprog((d**2).ravel(), A_eq=rows, b_eq=np.r_[a / a.sum(), b / b.sum()], bounds=(0, None), method="highs")
    return math.sqrt(res.fun)


def test_kl_basic(rng):
    rho = random_density(rng, 64)
    assert metrics.kl(rho, rho) == 0.0
    with pytest.raises(metrics.MetricError):
        metrics.kl(rho, np.zeros(64))


def test_kl_bessel_oracle():
    th = circle.grid(256)
    vm = np.exp(np.cos(th)) / (TWO_PI * i0(1.0))
    assert metrics.kl(circle.uniform(256), vm) == pytest.approx(math.log(i0(1.0)), abs=1e-12)


def test_l1_l2_simple():
    th = circle.grid(64)
    a = (1 + 0.5 * np.cos(th)) / TWO_PI
    b = circle.uniform(64)
    assert metrics.l2(a, b) == pytest.approx(0.5 / TWO_PI * math.sqrt(math.pi), rel=1e-12)
    assert metrics.l1(a, b) == pytest.approx(0.5 / TWO_PI * 4, rel=1e-3)


def test_pinsker_on_random_pairs(rng):
    for _ in range(100):
        a = random_density(rng, 64, scale=1.0)
        b = random_density(rng, 64, scale=1.0)
        assert metrics.l1(a, b) <= math.sqrt(2 * metrics.kl(a, b)) + 1e-12


def test_fisher_zero_and_narrow_gaussian():
    rho = wrapped_normal(1.0, 0.5, 256)
    assert metrics.relative_fisher(rho, rho) == 0.0
    delta, sigma = 0.05, 0.5
    val = metrics.relative_fisher(wrapped_normal(delta, sigma, 256), wrapped_normal(0.0, sigma, 256))
    assert val == pytest.approx(delta**2 / sigma**4, rel=1e-4)


def test_lsi_holds_on_random_pairs(rng):
    for _ in range(50):
        a = random_density(rng, 128, scale=0.8)
        b = random_density(rng, 128, scale=0.8)
        lam = metrics.lsi_constant(b)
        assert metrics.relative_fisher(a, b) >= 2 * lam * metrics.kl(a, b) - 1e-12


def test_lsi_constant_examples():
    assert metrics.lsi_constant(circle.uniform(32)) == pytest.approx(1.0)
    th = circle.grid(64)
    rho = circle.as_density(1.5 + 0.5 * np.cos(th), renormalize=True)
    assert metrics.lsi_constant(rho) == pytest.approx(0.25, rel=1e-12)


def test_weighted_density_and_dz(rng, fhn_model):
    rho = random_density(rng, fhn_model.n)
    ones = np.ones(fhn_model.n)
    np.testing.assert_allclose(metrics.weighted_density(rho, ones), rho, atol=1e-15)
    assert metrics.dz_coefficient(rho, ones, 0.3) == pytest.approx(0.3)
    w = metrics.weighted_density(rho, fhn_model.Zw)
    assert circle.integrate(w) == pytest.approx(1.0, abs=1e-14)
    h = TWO_PI / fhn_model.n
    assert metrics.dz_coefficient(rho, fhn_model.Zw, 0.007) == pytest.approx(0.007 * h * np.sum(rho * fhn_model.Zw**2))
    with pytest.raises(metrics.MetricError):
        metrics.weighted_density(rho, np.zeros(fhn_model.n))


def test_w2_identity_and_rotation():
    # narrow enough that no mass is better sent the other way round
    rho = circle.von_mises(1.0, 200.0, 512)
    assert metrics.wasserstein2_circle(rho, rho) < 1e-8
    for phi in (0.3, 1.5, 2.5):
        rot = circle.shift(rho, phi)
        assert metrics.wasserstein2_circle(rho, rot) == pytest.approx(phi, abs=1e-3)


def test_w2_matches_discrete_transport():
    n = 64
    pairs = [
        (circle.von_mises(1.0, 3.0, n), circle.von_mises(2.5, 1.5, n)),
        (circle.wrapped_cauchy(0.0, 1.0, harmonic=3, n=n), circle.wrapped_cauchy(np.pi, 0.5, n=n)),
        (circle.von_mises(1.0, 20.0, n), circle.shift(circle.von_mises(1.0, 20.0, n), 3.0)),
    ]
    for a, b in pairs:
        assert metrics.wasserstein2_circle(a, b) == pytest.approx(lp_w2(a, b), abs=1e-3)


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_w2_symmetric_and_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_density(rng, 64, scale=1.0) for _ in range(3))
    ab = metrics.wasserstein2_circle(a, b)
    assert ab == pytest.approx(metrics.wasserstein2_circle(b, a), abs=1e-6)
    assert metrics.wasserstein2_circle(a, c) <= ab + metrics.wasserstein2_circle(b, c) + 1e-6


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_inequality_slacks_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a = random_density(rng, 64, scale=0.8)
    b = random_density(rng, 64, scale=0.8)
    row = metrics.inequality_checks(a, b)
    assert row.ckp_slack >= -1e-9 and row.talagrand_slack >= -1e-9
    assert row.kl >= 0 and row.fisher >= 0 and row.w2 >= 0


def test_inequality_row_identical_and_rotated():
    rho = circle.von_mises(0.0, 2.0, 128)
    row = metrics.inequality_checks(rho, rho)
    assert abs(row.ckp_slack) < 1e-9 and abs(row.talagrand_slack) < 1e-9
    for phi in (0.2, 1.0, 2.5):
        assert metrics.inequality_checks(circle.shift(rho, phi), rho).talagrand_slack > 0
    assert set(row.to_dict()) == {"kl", "l1", "l2", "fisher", "w2", "lsi_lambda", "ckp_slack", "talagrand_slack"}


def test_metrics_converge_under_refinement():
    def pair(n):
        return circle.von_mises(0.3, 2.0, n), circle.wrapped_cauchy(2.0, 0.7, n=n)

    ref = metrics.kl(*pair(1024))
    errs = [abs(metrics.kl(*pair(n)) - ref) for n in (32, 64)]
    assert errs[1] <= errs[0] / 4 + 1e-14


def test_floor_clamps_are_counted():
    before = metrics.floor_count()
    rho = circle.uniform(32).copy()
    rho[0] = 0.0
    metrics.relative_fisher(rho, circle.uniform(32))
    assert metrics.floor_count() == before + 1


def test_target_kl_bound_cases(rng, unit_model):
    n = unit_model.n
    rho_f = random_density(rng, n)
    Zw = unit_model.Zw
    D = unit_model.D
    # rho = rho_f: Fisher term vanishes, only the control term remains
    assert metrics.target_kl_bound(rho_f, rho_f, unit_model.Z, Zw, D, 0.0) == pytest.approx(0.0, abs=1e-12)
    rho = random_density(rng, n)
    c = metrics.control_coefficient(rho, rho_f, unit_model.Z)
    b0 = metrics.target_kl_bound(rho, rho_f, unit_model.Z, Zw, D, 0.0)
    b1 = metrics.target_kl_bound(rho, rho_f, unit_model.Z, Zw, D, 0.2)
    assert b1 - b0 == pytest.approx(-0.2 * c, rel=1e-12)
    # term-by-term quadrature
    I = metrics.relative_fisher(rho, rho_f)
    Iu = metrics.relative_fisher(circle.uniform(n), rho_f)
    expected = -D * math.sqrt(I) * (math.sqrt(I) - math.sqrt(TWO_PI) * rho.max() * math.sqrt(Iu))
    assert b0 == pytest.approx(expected, rel=1e-12)


def test_control_coefficient_vanishes_for_constant_sensitivity(rng):
    n = 64
    for _ in range(5):
        rho = random_density(rng, n)
        assert abs(metrics.control_coefficient(rho, circle.uniform(n), np.ones(n))) < 1e-12
