import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osc_ensemble import circle, control, metrics
from osc_ensemble import fokker_planck as fp
from osc_ensemble.circle import TWO_PI, FourierSeries
from osc_ensemble.design import PeriodicInput

from conftest import random_density, random_trig


def two_mode_input(omega, a1=0.05, a2=0.03):
    c = np.zeros(5, dtype=complex)
    c[3], c[1] = a1 / 2, a1 / 2
    c[4], c[0] = 0.5j * a2, -0.5j * a2
    return PeriodicInput(omega, FourierSeries(c))


def fine_integral(f, factor=2):
    """Rectangle rule on a refined grid after trigonometric interpolation."""
    g = circle.upsample(f, factor)
    return float(np.sum(g)) * TWO_PI / g.size


def test_proposed_vanishes_at_surrogate(rng):
    n = 64
    rho = random_density(rng, n)
    Z = random_trig(rng, n, 3)
    assert abs(control.u_fb_proposed(rho, rho, Z, 3.0)) < 1e-12
    with pytest.raises(metrics.MetricError):
        control.u_fb_proposed(rho, np.zeros(n), Z, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_proposed_sign_and_refinement(seed, k):
    rng = np.random.default_rng(seed)
    n = 64
    rho, rho_ff = random_density(rng, n), random_density(rng, n)
    Z = random_trig(rng, n, 3)
    u = control.u_fb_proposed(rho, rho_ff, Z, k)
    integral = circle.integrate(rho / rho_ff * circle.differentiate(Z * rho_ff))
    assert u * integral >= 0 and u * integral == pytest.approx(u * u / k, rel=1e-12, abs=1e-15)
    # same integrand on a doubled grid
    r2, f2, z2 = (circle.upsample(a, 2) for a in (rho, rho_ff, Z))
    oracle = k * fine_integral(r2 / f2 * circle.differentiate(z2 * f2), 1)
    assert u == pytest.approx(oracle, abs=1e-8)


def test_saturate():
    assert control.saturate(0.1, -0.2, 0.2) == 0.1
    assert control.saturate(0.5, -0.2, 0.2) == 0.2
    assert control.saturate(-0.5, -0.2, 0.2) == -0.2
    with pytest.raises(ValueError):
        control.saturate(0.0, 1.0, -1.0)


def test_baseline_l2_zero_and_refinement(rng):
    n = 64
    rho, rho_f = random_density(rng, n), random_density(rng, n)
    Z = random_trig(rng, n, 3)
    assert control.u_baseline_l2(rho_f, rho_f, Z, 2.0) == 0.0
    u = control.u_baseline_l2(rho, rho_f, Z, 2.0)
    r2, f2, z2 = (circle.upsample(a, 2) for a in (rho, rho_f, Z))
    assert u == pytest.approx(-2.0 * fine_integral(z2 * r2 * circle.differentiate(r2 - f2), 1), abs=1e-8)


def test_baseline_l2_decreases_l2_lyapunov(rng):
    n = 128
    th = circle.grid(n)
    model = fp.PhaseModel(1.0, np.sin(th) + 0.4 * np.cos(2 * th), np.ones(n), 1e-12)
    rho, rho_f = random_density(rng, n), random_density(rng, n)
    dt, k = 1e-3, 2.0
    u = control.u_baseline_l2(rho, rho_f, model.Z, k)
    prop = fp.Propagator.for_model(model, dt)
    tgt = fp.evolve_target(rho_f, model.omega, dt)

    def V(r):
        return 0.5 * metrics.l2(r, tgt) ** 2

    V0 = 0.5 * metrics.l2(rho, rho_f) ** 2
    V_ctrl = V(prop.step(rho, u))
    V_free = V(prop.step(rho, 0.0))
    # without noise the uncontrolled step only rotates both densities
    assert V_free == pytest.approx(V0, abs=1e-9)
    assert V_ctrl < V0
    # dV/dt = -u^2 / k to first order
    assert (V_ctrl - V_free) / dt == pytest.approx(-u * u / k, rel=0.02)


def test_baseline_cancel(rng, unit_model):
    n = unit_model.n
    Z, Zw, D = unit_model.Z, unit_model.Zw, unit_model.D
    rho, rho_f = random_density(rng, n), random_density(rng, n)
    assert control.u_baseline_cancel(rho_f, rho_f, Z, Zw, D, 1.0) == 0.0
    delta = rho - rho_f
    d = circle.integrate(Z * rho * circle.differentiate(delta))
    second = D * circle.integrate(delta * circle.differentiate(circle.differentiate(Zw**2 * rho)))
    raw = -1.0 * d - second / d
    assert abs(d) > control.DENOM_FLOOR
    u = control.u_baseline_cancel(rho, rho_f, Z, Zw, D, 1.0, lo=-100, hi=100)
    assert u == pytest.approx(raw, rel=1e-12)
    # a huge floor turns the cancellation term into a tiny-denominator blow-up
    assert control.u_baseline_cancel(rho, rho_f, Z, Zw, 1e6, 0.0, denom_floor=1e-300) in (-0.2, 0.2)


def test_error_aware_cases(rng):
    n = 64
    rho, rho_ff = random_density(rng, n), random_density(rng, n)
    Z = random_trig(rng, n, 3)
    assert control.u_error_aware(rho, rho_ff, Z, 1.5, 0.0) == pytest.approx(control.u_fb_proposed(rho, rho_ff, Z, 1.5))
    assert control.u_error_aware(rho_ff, rho_ff, Z, 1.5, 0.3) == 0.0
    assert control.u_error_aware(rho, rho_ff, Z, 0.0, 0.3) == 0.0


def test_error_aware_threshold_boundary(rng):
    n = 64
    rho, rho_ff = random_density(rng, n), random_density(rng, n)
    Z = random_trig(rng, n, 3)
    w = circle.differentiate(Z * rho_ff) / rho_ff
    f2, z2 = circle.upsample(rho_ff, 2), circle.upsample(Z, 2)
    w2 = circle.differentiate(z2 * f2) / f2
    rhs = math.sqrt(fine_integral(w2 * w2, 1))
    assert control.error_threshold(rho_ff, Z, 1.0) == pytest.approx(rhs, rel=1e-8)
    k = 2.0
    u_hat = abs(control.u_fb_proposed(rho, rho_ff, Z, k))
    e_crit = u_hat / k / rhs
    assert control.u_error_aware(rho, rho_ff, Z, k, e_crit * (1 - 1e-6)) != 0.0
    assert control.u_error_aware(rho, rho_ff, Z, k, e_crit * (1 + 1e-6)) == 0.0
    assert np.all(np.isfinite(w))


def test_perturb_measurement_calibration(unit_model):
    rho = circle.von_mises(1.0, 2.0, unit_model.n)
    np.testing.assert_allclose(control.perturb_measurement(rho, 0.0, 0), rho, rtol=1e-14)
    rng = np.random.default_rng(99)
    for e in (0.015, 0.3):
        errs = []
        for _ in range(1000):
            hat = control.perturb_measurement(rho, e, rng)
            assert hat.min() >= 0 and circle.integrate(hat) == pytest.approx(1.0, abs=1e-12)
            errs.append(metrics.l2(hat, rho))
        errs = np.array(errs)
        assert np.mean((errs >= 0.5 * e) & (errs <= 1.5 * e)) >= 0.99
        assert errs.max() <= e * (1 + 1e-12)


def test_uncontrollable_perturbation(fhn_model):
    rho_ref = circle.von_mises(2.0, 1.5, fhn_model.n)
    Z = fhn_model.Z
    for eps in (0.05, 0.5, 1.0):
        pert = control.uncontrollable_perturbation(rho_ref, Z, eps)
        assert not pert.degenerate
        rho = pert.rho
        assert circle.integrate(rho) == pytest.approx(1.0, abs=1e-12)
        assert rho.min() >= 0
        assert abs(circle.integrate(rho / rho_ref * circle.differentiate(Z * rho_ref))) < 1e-8
        assert abs(control.u_fb_proposed(rho, rho_ref, Z, 1.0)) < 1e-8
    flat = control.uncontrollable_perturbation(circle.uniform(32), np.ones(32), 0.5)
    assert flat.degenerate and np.array_equal(flat.rho, circle.uniform(32))
    with pytest.raises(ValueError):
        control.uncontrollable_perturbation(rho_ref, Z, 0.0)


def test_control_law_validation():
    ff = two_mode_input(1.0)
    with pytest.raises(ValueError):
        control.ControlLaw.proposed(ff, k=-1.0)
    with pytest.raises(ValueError):
        control.ControlLaw(control.Variant.PROPOSED)
    with pytest.raises(ValueError, match="saturation"):
        control.ControlLaw.proposed(ff, k=1.0, u_lo=-0.01, u_hi=0.01)
    assert control.ControlLaw.baseline_l2(1.0, e=0.1).label() == "baseline_l2,k=1,e=0.1"


def test_warmup_zero_input_is_uniform(unit_model):
    w = control.ff_warmup(unit_model, PeriodicInput.zero(unit_model.omega, 2))
    assert np.max(np.abs(w.rho - circle.uniform(unit_model.n))) < 1e-10
    with pytest.raises(ValueError):
        control.ff_warmup(unit_model, PeriodicInput.zero(2.0, 2))


def _surrogate_period(model, ff, w):
    prop = fp.Propagator.for_model(model, w.dt)
    states = [w.rho]
    for j in range(w.steps_per_period):
        states.append(prop.step(states[-1], ff((j + 0.5) * w.dt)))
    return np.array(states)


def test_warmup_is_periodic_and_refinement_stable(unit_model):
    ff = two_mode_input(unit_model.omega, 0.4, 0.3)
    w = control.ff_warmup(unit_model, ff)
    assert w.periodic_kl < 1e-10
    states = _surrogate_period(unit_model, ff, w)
    assert metrics.kl(states[-1], states[0]) < 1e-10
    # midpoint-sampled input makes the scheme second order in dt
    half = control.ff_warmup(unit_model, ff, dt=w.dt / 2)
    quarter = control.ff_warmup(unit_model, ff, dt=w.dt / 4)
    d1, d2 = metrics.l1(w.rho, half.rho), metrics.l1(half.rho, quarter.rho)
    assert d1 < 1e-5 and d1 / d2 > 3.0


@pytest.fixture(scope="module")
def loop_setup():
    n = 128
    th = circle.grid(n)
    model = fp.PhaseModel(1.0, np.sin(th) + 0.4 * np.cos(2 * th), np.ones(n), 0.05)
    ff = two_mode_input(1.0, 0.15, 0.1)
    w = control.ff_warmup(model, ff)
    rho0 = circle.wrapped_cauchy(math.pi, 0.5, n=n)
    return model, ff, w, rho0


def _kl(res):
    return res.column("KL_surrogate")


def test_feedforward_only_kl_monotone(loop_setup):
    model, ff, w, rho0 = loop_setup
    res = control.run_closed_loop(model, control.ControlLaw.feedforward_only(ff), rho0, w.rho, 20.0,
                                  control.LoopConfig(dt=w.dt, log_w2=False))
    kl = _kl(res)
    assert np.all(np.diff(kl) <= 1e-9) and kl[-1] < 1e-2 * kl[0]
    assert np.all(res.column("fb_active_flag") == 0)


def test_proposed_monotone_saturated_and_within_envelope(loop_setup):
    model, ff, w, rho0 = loop_setup
    law = control.ControlLaw.proposed(ff, k=1.0, u_lo=-0.3, u_hi=0.3)
    res = control.run_closed_loop(model, law, rho0, w.rho, 20.0, control.LoopConfig(dt=w.dt, log_every=0.5))
    kl = _kl(res)
    assert np.all(np.diff(kl) <= 1e-9)
    u = res.column("u")
    assert u.min() >= -0.3 and u.max() <= 0.3
    states = _surrogate_period(model, ff, w)
    lam = (states.min() / states.max()) ** 2
    envelope = kl[0] * np.exp(-2 * model.D * lam * res.column("t"))
    assert np.all(kl <= envelope * (1 + 1e-9))


def test_larger_gain_converges_faster(loop_setup):
    model, ff, w, rho0 = loop_setup
    cfg = control.LoopConfig(dt=w.dt, log_w2=False, log_every=5.0)
    finals = []
    for k in (0.0, 1.0, 5.0):
        law = control.ControlLaw.proposed(ff, k=k, u_lo=-1.0, u_hi=1.0)
        finals.append(_kl(control.run_closed_loop(model, law, rho0, w.rho, 10.0, cfg))[-1])
    assert finals[0] > finals[1] > finals[2]


def test_error_aware_never_acts_at_fixed_point(loop_setup):
    model, ff, w, _ = loop_setup
    law = control.ControlLaw.error_aware(ff, k=1.0, e=0.05, u_lo=-1.0, u_hi=1.0)
    res = control.run_closed_loop(model, law, w.rho, w.rho, 5.0, control.LoopConfig(dt=w.dt, log_w2=False))
    # the noisy measurement moves u_hat, but never above the noise threshold
    assert np.all(res.column("fb_active_flag") == 0)
    assert np.max(_kl(res)) < 1e-12


def test_baselines_need_target_and_log(loop_setup, tmp_path):
    model, _, _, rho0 = loop_setup
    law = control.ControlLaw.baseline_l2(1.0)
    with pytest.raises(ValueError):
        control.run_closed_loop(model, law, rho0, None, 1.0)
    target = circle.von_mises(0.0, 1.0, model.n)
    res = control.run_closed_loop(model, law, rho0, None, 2.0,
                                  control.LoopConfig(rho_f0=target, snapshot_every=1.0))
    for col in ("t", "u", "KL_surrogate", "KL_target", "L1", "L2", "Fisher", "W2", "fb_active_flag"):
        assert col in res.rows[0]
    res.to_csv(tmp_path / "log.csv")
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header.startswith("t[time],u[input]")
    res.snapshots_to_csv(tmp_path / "snap.csv")
    assert len(res.snapshots) == 3
    with pytest.raises(ValueError):
        control.run_closed_loop(model, control.ControlLaw.feedforward_only(two_mode_input(1.0)), rho0, None, 1.0)
