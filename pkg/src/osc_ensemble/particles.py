"""Monte Carlo ensembles of independent noisy phase oscillators."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike

from . import circle
from .circle import TWO_PI, FloatArray
from .fokker_planck import PhaseModel

CHUNK = 1 << 14
MAX_DT = 1e-2


@dataclass
class Ensemble:
    phases: FloatArray
    rng_seed: int
    t: float = 0.0

    def __post_init__(self) -> None:
        self.phases = np.mod(np.asarray(self.phases, dtype=np.float64), TWO_PI)

    @property
    def N(self) -> int:
        return self.phases.size


def _periodic_interp(values: FloatArray, theta: FloatArray) -> FloatArray:
    n = values.size
    x = theta * (n / TWO_PI)
    i = np.floor(x).astype(np.int64)
    w = x - i
    i %= n
    return (1.0 - w) * values[i] + w * values[(i + 1) % n]


def sample_density(rho: ArrayLike, size: int, rng: np.random.Generator) -> FloatArray:
    """Inverse-CDF sampling from a grid density.

    The CDF is the cumulative rectangle rule at the grid points, inverted by
    linear interpolation.
    """
    rho = circle.as_density(rho)
    n = rho.size
    cdf = np.concatenate(([0.0], np.cumsum(rho) * (TWO_PI / n)))
    cdf /= cdf[-1]
    knots = TWO_PI * np.arange(n + 1) / n
    return np.mod(np.interp(rng.random(size), cdf, knots), TWO_PI)


def _chunk_rngs(seed: int, N: int) -> list[tuple[slice, np.random.Generator]]:
    """One independent generator per block of oscillators, keyed by (seed, block)."""
    n_chunks = -(-N // CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    return [(slice(c * CHUNK, min(N, (c + 1) * CHUNK)), np.random.default_rng(s)) for c, s in enumerate(children)]


def simulate(
    model: PhaseModel,
    N: int,
    rho0: ArrayLike,
    u: Callable[[float], float] | float,
    T: float,
    dt: float,
    seed: int,
    sample_times: Sequence[float] | None = None,
) -> list[Ensemble]:
    """Euler-Maruyama ensemble of the phase SDE.

    Returns snapshots at ``sample_times`` (default: only ``T``). Z and Zw are
    evaluated by periodic linear interpolation of the grid samples.
    """
    if dt > MAX_DT:
        raise ValueError(f"dt={dt} exceeds {MAX_DT}")
    if N < 1:
        raise ValueError("N must be positive")
    u_fn = u if callable(u) else (lambda _t, c=float(u): c)
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be an integer multiple of dt")
    times = [T] if sample_times is None else sorted(sample_times)
    snap_steps = {int(round(t / dt)): t for t in times}

    rngs = _chunk_rngs(seed, N)
    theta = np.empty(N)
    for sl, rng in rngs:
        theta[sl] = sample_density(rho0, sl.stop - sl.start, rng)

    noise_scale = np.sqrt(2.0 * model.D * dt)
    Z, Zw = model.Z, model.Zw
    out = []
    if 0 in snap_steps:
        out.append(Ensemble(theta.copy(), seed, 0.0))
    for step in range(1, n_steps + 1):
        t0 = (step - 1) * dt
        ut = u_fn(t0)
        drift = model.omega + _periodic_interp(Z, theta) * ut if ut != 0.0 else model.omega
        xi = np.empty(N)
        for sl, rng in rngs:
            xi[sl] = rng.standard_normal(sl.stop - sl.start)
        theta = np.mod(theta + drift * dt + noise_scale * _periodic_interp(Zw, theta) * xi, TWO_PI)
        if step in snap_steps:
            out.append(Ensemble(theta.copy(), seed, snap_steps[step]))
    return out


def histogram(e: Ensemble, n_bins: int) -> FloatArray:
    """Normalized bin counts ``count / (N * binwidth)``."""
    if n_bins < 16:
        raise ValueError("need at least 16 bins")
    counts = np.bincount(np.minimum((e.phases * (n_bins / TWO_PI)).astype(np.int64), n_bins - 1), minlength=n_bins)
    return counts / (e.N * TWO_PI / n_bins)


def bin_average(rho: ArrayLike, n_bins: int) -> FloatArray:
    """Average a grid density over ``n_bins`` equal bins (grid size must be a multiple)."""
    rho = np.asarray(rho, dtype=np.float64)
    if rho.size % n_bins:
        raise ValueError("grid size must be a multiple of n_bins")
    return rho.reshape(n_bins, -1).mean(axis=1)


def histograms_to_csv(path: str | Path, ensembles: Sequence[Ensemble], n_bins: int) -> None:
    edges = TWO_PI * np.arange(n_bins) / n_bins
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t[time]", "N"] + [f"density@bin_start={x:.6f}[1/rad]" for x in edges])
        for e in ensembles:
            w.writerow([repr(e.t), e.N] + [repr(float(v)) for v in histogram(e, n_bins)])
