"""Fokker-Planck equations for the phase density on the circle.

All generators are discretized in flux form,

    L rho = -d/dtheta [ a(theta) rho - d/dtheta( d(theta) rho ) ],

with spectral derivatives, so the discrete mass is conserved exactly up to
rounding. Time stepping is classical RK4 with the input held constant over
each step (zero-order hold, sampled at the step midpoint).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.integrate import cumulative_simpson

from . import circle
from .circle import TWO_PI, FloatArray

logger = logging.getLogger(__name__)

InputSignal = Union[float, Callable[[float], float]]


class PositivityError(RuntimeError):
    """Raised when the discrete density undershoots below the tolerance."""


@dataclass(frozen=True)
class PhaseModel:
    """Stochastic phase model ``dtheta = (omega + Z u) dt + sqrt(2D) Zw dW``."""

    omega: float
    Z: FloatArray
    Zw: FloatArray
    D: float

    def __post_init__(self) -> None:
        Z = circle.as_grid_function(self.Z).copy()
        Zw = circle.as_grid_function(self.Zw).copy()
        if Z.size != Zw.size:
            raise ValueError("Z and Zw must live on the same grid")
        if not self.D > 0:
            raise ValueError("noise intensity D must be positive")
        Z.setflags(write=False)
        Zw.setflags(write=False)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "Zw", Zw)

    @property
    def n(self) -> int:
        return self.Z.size

    @property
    def period(self) -> float:
        return TWO_PI / abs(self.omega)

    def resample(self, n: int) -> PhaseModel:
        """Same model on an n-point grid (trigonometric interpolation)."""
        if n == self.n:
            return self
        th = circle.grid(n)
        return PhaseModel(self.omega, circle.evaluate(self.Z, th), circle.evaluate(self.Zw, th), self.D)

    def to_json(self, path: str | Path | None = None) -> str:
        payload = {
            "omega": self.omega,
            "D": self.D,
            "n": self.n,
            "Z": self.Z.tolist(),
            "Zw": self.Zw.tolist(),
        }
        text = json.dumps(payload, indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source: str | Path) -> PhaseModel:
        text = Path(source).read_text() if Path(str(source)).exists() else str(source)
        data = json.loads(text)
        return cls(float(data["omega"]), np.array(data["Z"]), np.array(data["Zw"]), float(data["D"]))


@dataclass(frozen=True)
class SolverConfig:
    n: int = circle.DEFAULT_N
    dt: float | None = None
    scheme: Literal["rk4_flux"] = "rk4_flux"
    positivity_tol: float = 1e-8

    def resolve_dt(self, model: PhaseModel) -> float:
        bound = stability_bound(model)
        if self.dt is None:
            return default_dt(model)
        if self.dt > bound:
            raise ValueError(f"dt={self.dt:g} exceeds the stability bound {bound:.3g}")
        return self.dt


def stability_bound(model: PhaseModel) -> float:
    """``h^2 / (4 D max Zw^2)`` with ``h = 2 pi / n``."""
    h = TWO_PI / model.n
    zmax = float(np.max(model.Zw**2))
    return math.inf if zmax == 0 else h * h / (4.0 * model.D * zmax)


def default_dt(model: PhaseModel) -> float:
    h = TWO_PI / model.n
    zmax = max(float(np.max(model.Zw**2)), 1e-300)
    return min(0.25 * h * h / (2.0 * model.D * zmax), 1e-2)


def flux_generator(rho: ArrayLike, drift: ArrayLike, diffusion: ArrayLike) -> FloatArray:
    """``-d/dtheta [drift*rho - d/dtheta(diffusion*rho)]`` with spectral derivatives."""
    rho = np.asarray(rho, dtype=np.float64)
    flux = drift * rho - circle.differentiate(diffusion * rho)
    return -circle.differentiate(flux)


def apply_generator(model: PhaseModel, rho: ArrayLike, u: float) -> FloatArray:
    """``L_u rho = -d[(omega + Z u) rho] + D d^2[Zw^2 rho]``."""
    return flux_generator(rho, model.omega + model.Z * u, model.D * model.Zw**2)


def averaged_generator(gamma: ArrayLike, B: float, rho: ArrayLike) -> FloatArray:
    """Generator of the averaged equation ``-d[Gamma rho] + B^2 d^2 rho``."""
    gamma = np.asarray(gamma, dtype=np.float64)
    return flux_generator(rho, gamma, np.full_like(gamma, B * B))


def _rk4(f: Callable[[FloatArray], FloatArray], rho: FloatArray, dt: float) -> FloatArray:
    k1 = f(rho)
    k2 = f(rho + 0.5 * dt * k1)
    k3 = f(rho + 0.5 * dt * k2)
    k4 = f(rho + dt * k3)
    return rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _check_positive(rho: FloatArray, tol: float, t: float) -> None:
    lo = float(rho.min())
    if lo < -tol:
        raise PositivityError(
            f"density undershoot {lo:.3e} at t={t:.4g}; reduce dt / increase n"
        )


def _sample_input(u: InputSignal, t: float) -> float:
    return float(u(t)) if callable(u) else float(u)


def step(model: PhaseModel, rho: ArrayLike, u: InputSignal, t: float, dt: float,
         positivity_tol: float = 1e-8) -> FloatArray:
    """One RK4 step of the lab-frame equation with ``u`` held at ``u(t + dt/2)``."""
    u_val = _sample_input(u, t + 0.5 * dt)
    out = _rk4(lambda r: apply_generator(model, r, u_val), np.asarray(rho, dtype=np.float64), dt)
    _check_positive(out, positivity_tol, t + dt)
    return out


def averaged_step(gamma: ArrayLike, B: float, rho: ArrayLike, dt: float,
                  positivity_tol: float = 1e-8) -> FloatArray:
    out = _rk4(lambda r: averaged_generator(gamma, B, r), np.asarray(rho, dtype=np.float64), dt)
    _check_positive(out, positivity_tol, dt)
    return out


class Propagator:
    """Exact RK4 step matrices for ``L(u) = A + u B`` with u frozen over a step.

    The RK4 update ``sum_{m<=4} (dt L)^m / m!`` is a degree-4 polynomial in
    u; its matrix coefficients are precomputed so a step for any u costs one
    matrix product. Several densities (columns) can be advanced at once,
    each with its own input value.
    """

    def __init__(self, drift0: ArrayLike, drift1: ArrayLike, diffusion: ArrayLike, dt: float):
        drift0 = np.asarray(drift0, dtype=np.float64)
        n = drift0.size
        Dm = circle.derivative_matrix(n)
        A = -Dm * drift0[None, :] + Dm @ (Dm * np.asarray(diffusion, dtype=np.float64)[None, :])
        B = -Dm * np.asarray(drift1, dtype=np.float64)[None, :]
        self.n = n
        self.dt = dt
        self.A = A
        self.B = B
        # P[m][j]: sum of all words of length m in {A, B} with j factors of B
        P = [[np.eye(n)]]
        for m in range(1, 5):
            row = []
            for j in range(m + 1):
                term = np.zeros((n, n))
                if j < m:
                    term += A @ P[m - 1][j]
                if j > 0:
                    term += B @ P[m - 1][j - 1]
                row.append(term)
            P.append(row)
        C = np.zeros((5, n, n))
        for m in range(5):
            for j in range(m + 1):
                C[j] += dt**m / math.factorial(m) * P[m][j]
        # store increments only: the step is X + sum_j u^j C_j X, so rounding
        # acts on the small update rather than on X itself. Each increment is
        # a derivative, hence column sums are zero up to the roundoff removed here.
        C[0] -= np.eye(n)
        C -= C.sum(axis=1, keepdims=True) / n
        self._stacked = C.reshape(5 * n, n)

    @classmethod
    def for_model(cls, model: PhaseModel, dt: float) -> Propagator:
        return cls(np.full(model.n, model.omega), model.Z, model.D * model.Zw**2, dt)

    @classmethod
    def for_averaged(cls, gamma: ArrayLike, B: float, dt: float) -> Propagator:
        gamma = np.asarray(gamma, dtype=np.float64)
        return cls(gamma, np.zeros_like(gamma), np.full_like(gamma, B * B), dt)

    def step(self, X: FloatArray, u: float | ArrayLike = 0.0) -> FloatArray:
        Y = (self._stacked @ X).reshape((5, self.n) + X.shape[1:])
        u = np.asarray(u, dtype=np.float64)
        out = Y[4]
        for j in (3, 2, 1, 0):
            out = Y[j] + u * out
        return X + out

    def generator(self, X: FloatArray, u: float = 0.0) -> FloatArray:
        return self.A @ X + u * (self.B @ X)


@dataclass
class Trajectory:
    """Densities recorded at sample times (rows of ``rho``)."""

    times: FloatArray
    rho: FloatArray
    meta: dict = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        n = self.rho.shape[1]
        theta = circle.grid(n)
        header = "t[time]," + ",".join(f"rho@theta={th:.6f}[1/rad]" for th in theta)
        data = np.column_stack([self.times, self.rho])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path: str | Path) -> Trajectory:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(times=data[:, 0], rho=data[:, 1:])


def _sample_indices(T: float, dt: float, sample_times: ArrayLike | None) -> tuple[int, dict[int, float]]:
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"horizon T={T} is not a multiple of dt={dt}")
    if sample_times is None:
        sample_times = [0.0, T]
    wanted = {}
    for s in np.atleast_1d(sample_times):
        idx = int(round(float(s) / dt))
        if not 0 <= idx <= n_steps:
            raise ValueError(f"sample time {s} outside [0, {T}]")
        wanted[idx] = idx * dt
    return n_steps, wanted


def solve(
    model: PhaseModel,
    rho0: ArrayLike,
    u: InputSignal,
    T: float,
    config: SolverConfig | None = None,
    sample_times: ArrayLike | None = None,
    frame: Literal["lab", "rotating"] = "lab",
) -> Trajectory:
    """Integrate the Fokker-Planck equation up to time T.

    In the rotating frame ``theta -> theta - omega t`` the sensitivity
    functions become ``Z(theta + omega t)``, ``Zw(theta + omega t)`` and the
    constant drift disappears; the recorded densities are then the rotated
    ones.
    """
    config = config or SolverConfig(n=model.n)
    if config.n != model.n:
        model = model.resample(config.n)
    dt = config.resolve_dt(model)
    n_steps = int(round(T / dt))
    dt = T / n_steps if n_steps else dt
    n_steps, wanted = _sample_indices(T, dt, sample_times)
    rho = circle.as_density(rho0)
    times, rows = [], []
    if 0 in wanted:
        times.append(0.0)
        rows.append(rho.copy())

    if frame == "lab":
        prop = Propagator.for_model(model, dt)
        const_u = None if callable(u) else float(u)
        for i in range(n_steps):
            t = i * dt
            u_val = const_u if const_u is not None else float(u(t + 0.5 * dt))
            rho = prop.step(rho, u_val)
            if rho.min() < -config.positivity_tol:
                _check_positive(rho, config.positivity_tol, t + dt)
            if i + 1 in wanted:
                times.append(wanted[i + 1])
                rows.append(rho.copy())
    elif frame == "rotating":
        omega, D = model.omega, model.D
        for i in range(n_steps):
            t = i * dt
            u_val = _sample_input(u, t + 0.5 * dt)

            def gen(r: FloatArray, s: float) -> FloatArray:
                Zs = circle.shift(model.Z, -omega * s)
                Zws = circle.shift(model.Zw, -omega * s)
                return flux_generator(r, Zs * u_val, D * Zws**2)

            k1 = gen(rho, t)
            k2 = gen(rho + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = gen(rho + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = gen(rho + dt * k3, t + dt)
            rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            _check_positive(rho, config.positivity_tol, t + dt)
            if i + 1 in wanted:
                times.append(wanted[i + 1])
                rows.append(rho.copy())
    else:
        raise ValueError(f"unknown frame {frame!r}")
    return Trajectory(np.array(times), np.array(rows), meta={"dt": dt, "frame": frame})


def evolve_target(rho_f0: ArrayLike, omega: float, t: float) -> FloatArray:
    """Rigid rotation ``rho_f(t, theta) = rho_f0(theta - omega t)``."""
    return circle.shift(rho_f0, omega * t)


def stationary_integral(gamma: ArrayLike, B: float, refine: int = 16) -> FloatArray:
    """Stationary density of the averaged equation from its double-integral form.

        rho(theta) = (1/C) int_theta^{theta+2pi} exp(-int_theta^psi Gamma / B^2) dpsi

    Gamma is trigonometrically interpolated onto a grid ``refine`` times
    finer and both integrals are done with cumulative Simpson quadrature;
    no Fourier antiderivative is used. Exponents are shifted by their
    maximum before exponentiation.
    """
    if not B > 0:
        raise ValueError("B must be positive")
    gamma = circle.as_grid_function(gamma)
    n = gamma.size
    m = n * refine
    g_fine = circle.upsample(gamma, refine)
    # two periods so that psi can run from theta to theta + 2 pi
    g2 = np.concatenate([g_fine, g_fine, g_fine[:1]])
    psi = TWO_PI * np.arange(2 * m + 1) / m
    G = cumulative_simpson(g2, x=psi, initial=0.0)
    expo = -G / (B * B)
    shift_ = expo.max()
    F = np.exp(expo - shift_)
    cumF = cumulative_simpson(F, x=psi, initial=0.0)
    idx = np.arange(0, m, refine)
    inner = cumF[idx + m] - cumF[idx]
    log_rho = np.log(inner) + (G[idx] / (B * B)) + shift_
    log_rho -= log_rho.max()
    return circle.as_density(np.exp(log_rho), renormalize=True)
