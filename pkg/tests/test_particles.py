import math

import numpy as np
import pytest

from osc_ensemble import circle, particles
from osc_ensemble import fokker_planck as fp
from osc_ensemble.circle import TWO_PI
from osc_ensemble.phase_reduction import integrate

from conftest import random_density


def test_noise_free_rotation():
    n = 64
    m = fp.PhaseModel(1.3, np.zeros(n), np.ones(n), 1e-9)
    rho0 = circle.von_mises(0.5, 2.0, n)
    snaps = particles.simulate(m, 200, rho0, 0.7, 2.0, 0.01, seed=3, sample_times=[0.0, 2.0])
    start, end = snaps
    # tiny D: displacement is rotation plus O(sqrt(2 D T)) jitter
    diff = np.angle(np.exp(1j * (end.phases - start.phases - 1.3 * 2.0)))
    assert np.max(np.abs(diff)) < 1e-3


def test_deterministic_drift_matches_ode(unit_model):
    m = fp.PhaseModel(unit_model.omega, unit_model.Z, unit_model.Zw, 1e-12)
    rho0 = circle.uniform(m.n)
    dt = 1e-3
    snaps = particles.simulate(m, 50, rho0, 0.4, 1.0, dt, seed=1, sample_times=[0.0, 1.0])
    th = np.r_[circle.grid(m.n), TWO_PI]
    zs = np.r_[m.Z, m.Z[0]]

    def f(x, _y):
        return 1.0 + 0.4 * float(np.interp(x % TWO_PI, th, zs)), 0.0

    for a, b in zip(snaps[0].phases[:10], snaps[1].phases[:10]):
        ref, _ = integrate(f, (a, 0.0), 1.0, 1e-4)
        # Euler is first order in dt
        assert abs(np.angle(np.exp(1j * (b - ref)))) < 5e-3


def test_same_seed_is_bit_identical(unit_model):
    rho0 = circle.wrapped_cauchy(1.0, 0.5, n=unit_model.n)
    a = particles.simulate(unit_model, 1000, rho0, 0.2, 0.5, 0.01, seed=11)
    b = particles.simulate(unit_model, 1000, rho0, 0.2, 0.5, 0.01, seed=11)
    c = particles.simulate(unit_model, 1000, rho0, 0.2, 0.5, 0.01, seed=12)
    np.testing.assert_array_equal(a[0].phases, b[0].phases)
    assert not np.array_equal(a[0].phases, c[0].phases)


def test_chunking_keeps_streams_independent_of_population(unit_model):
    # the first block of a larger run equals a run of exactly one block
    rho0 = circle.uniform(unit_model.n)
    small = particles.simulate(unit_model, particles.CHUNK, rho0, 0.0, 0.1, 0.01, seed=5)
    big = particles.simulate(unit_model, particles.CHUNK + 100, rho0, 0.0, 0.1, 0.01, seed=5)
    np.testing.assert_array_equal(small[0].phases, big[0].phases[: particles.CHUNK])


def test_sampling_histogram_within_clt_band(rng):
    n, bins, N = 256, 32, 200_000
    rho = random_density(rng, n, scale=1.0)
    e = particles.Ensemble(particles.sample_density(rho, N, rng), 0)
    hist = particles.histogram(e, bins)
    p = particles.bin_average(rho, bins) * TWO_PI / bins
    width = TWO_PI / bins
    sigma = np.sqrt(N * p * (1 - p)) / (N * width)
    assert np.all(np.abs(hist - p / width) < 5 * sigma)


def test_histogram_point_mass_and_normalization():
    e = particles.Ensemble(np.full(100, 0.01), 0)
    h = particles.histogram(e, 32)
    assert h[0] == pytest.approx(32 / TWO_PI)
    assert np.count_nonzero(h) == 1
    e = particles.Ensemble(np.linspace(0, TWO_PI, 1000, endpoint=False), 0)
    assert np.sum(particles.histogram(e, 20)) * TWO_PI / 20 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        particles.histogram(e, 8)


def test_weak_agreement_with_pde(unit_model):
    rho0 = circle.wrapped_cauchy(math.pi, 0.5, n=unit_model.n)
    T, dt, N = 3.0, 0.005, 40_000

    def u(t):
        return 0.5 * math.sin(t)

    snap = particles.simulate(unit_model, N, rho0, u, T, dt, seed=7)[0]
    pde = fp.solve(unit_model, rho0, u, T, fp.SolverConfig(n=unit_model.n, dt=dt)).rho[-1]
    th = circle.grid(unit_model.n)
    for k in (1, 2):
        mc = np.mean(np.exp(1j * k * snap.phases))
        ref = circle.integrate(pde * np.cos(k * th)) + 1j * circle.integrate(pde * np.sin(k * th))
        # MC error ~ 1/sqrt(N) plus an O(dt) bias
        assert abs(mc - ref) < 5 / math.sqrt(N) + 0.01


def test_initial_snapshot_follows_rho0(unit_model):
    rho0 = circle.von_mises(2.0, 3.0, unit_model.n)
    snap = particles.simulate(unit_model, 100_000, rho0, 0.0, 0.01, 0.01, seed=2, sample_times=[0.0])[0]
    assert snap.t == 0.0
    hist = particles.histogram(snap, 32)
    assert np.max(np.abs(hist - particles.bin_average(rho0, 32))) < 0.03


def test_validation(unit_model):
    rho0 = circle.uniform(unit_model.n)
    with pytest.raises(ValueError):
        particles.simulate(unit_model, 10, rho0, 0.0, 1.0, 0.02, seed=0)
    with pytest.raises(ValueError):
        particles.simulate(unit_model, 0, rho0, 0.0, 1.0, 0.01, seed=0)
    with pytest.raises(ValueError):
        particles.simulate(unit_model, 10, rho0, 0.0, 1.005, 0.01, seed=0)
    with pytest.raises(ValueError):
        particles.bin_average(rho0, 48)


def test_csv_export(tmp_path, unit_model):
    rho0 = circle.uniform(unit_model.n)
    snaps = particles.simulate(unit_model, 500, rho0, 0.0, 0.2, 0.01, seed=0, sample_times=[0.1, 0.2])
    path = tmp_path / "h.csv"
    particles.histograms_to_csv(path, snaps, 16)
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("t[time],N,density@bin_start=0.000000[1/rad]")
    row = [float(x) for x in lines[2].split(",")]
    assert row[0] == 0.2 and row[1] == 500
    np.testing.assert_allclose(row[2:], particles.histogram(snaps[1], 16))
