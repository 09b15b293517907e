"""Phase reduction of planar limit-cycle oscillators.

Locates the attracting limit cycle of a planar ODE, parameterizes it by a
uniform phase, and computes the phase sensitivity function (PRC) by
integrating the adjoint variational equation backward in time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .circle import DEFAULT_N, TWO_PI, FloatArray

logger = logging.getLogger(__name__)

Drift = Callable[[float, float], tuple[float, float]]
Jacobian = Callable[[float, float], tuple[float, float, float, float]]


class PhaseReductionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlanarSystem:
    """Planar ODE ``(x', y') = drift(x, y)``.

    ``jacobian(x, y)`` returns the row-major entries ``(dfx/dx, dfx/dy,
    dfy/dx, dfy/dy)``. Inputs and noise both enter the x-equation.
    """

    drift: Drift
    jacobian: Jacobian
    x0: tuple[float, float] = (1.0, 0.0)
    name: str = "planar"


def fitzhugh_nagumo(a: float = 1 / 3, b: float = 1 / 4, eta: float = 1 / 4) -> PlanarSystem:
    """FitzHugh-Nagumo: x' = x - a x^3 - y, y' = eta (x + b)."""

    def drift(x: float, y: float) -> tuple[float, float]:
        return x - a * x * x * x - y, eta * (x + b)

    def jacobian(x: float, y: float) -> tuple[float, float, float, float]:
        return 1.0 - 3.0 * a * x * x, -1.0, eta, 0.0

    return PlanarSystem(drift, jacobian, x0=(1.0, 0.0), name=f"fhn(a={a:g},b={b:g},eta={eta:g})")


def stuart_landau() -> PlanarSystem:
    """Radially attracting unit circle with unit angular speed (exact PRC known)."""

    def drift(x: float, y: float) -> tuple[float, float]:
        g = 1.0 - x * x - y * y
        return -y + x * g, x + y * g

    def jacobian(x: float, y: float) -> tuple[float, float, float, float]:
        g = 1.0 - x * x - y * y
        return g - 2 * x * x, -1.0 - 2 * x * y, 1.0 - 2 * x * y, g - 2 * y * y

    return PlanarSystem(drift, jacobian, x0=(0.5, 0.0), name="stuart-landau")


def rk4_step(f: Drift, x: float, y: float, h: float) -> tuple[float, float]:
    k1x, k1y = f(x, y)
    k2x, k2y = f(x + 0.5 * h * k1x, y + 0.5 * h * k1y)
    k3x, k3y = f(x + 0.5 * h * k2x, y + 0.5 * h * k2y)
    k4x, k4y = f(x + h * k3x, y + h * k3y)
    return (
        x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
        y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y),
    )


def integrate(f: Drift, state: tuple[float, float], t_end: float, dt: float) -> tuple[float, float]:
    n_steps = max(1, math.ceil(t_end / dt))
    h = t_end / n_steps
    x, y = state
    for _ in range(n_steps):
        x, y = rk4_step(f, x, y, h)
    return x, y


def _bisect_substep(
    g: Callable[[float, float], float],
    f: Drift,
    state: tuple[float, float],
    dt: float,
    tol: float,
) -> tuple[float, tuple[float, float]]:
    """Locate the root of ``g`` within one RK4 step of length ``dt`` from ``state``."""
    lo, hi = 0.0, dt
    g_lo = g(*state)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        s = rk4_step(f, state[0], state[1], mid)
        if (g(*s) > 0) == (g_lo > 0):
            lo = mid
        else:
            hi = mid
    h = 0.5 * (lo + hi)
    return h, rk4_step(f, state[0], state[1], h)


@dataclass(frozen=True)
class LimitCycle:
    """Limit cycle sampled at uniform phase.

    ``samples[j]`` is the orbit point at phase ``2*pi*j/n``; phase 0 is the
    maximum of x on the cycle. ``dense`` holds the orbit every ``dense_dt``
    time units over one period (first and last point coincide), with
    ``stride`` dense points between consecutive phase samples.
    """

    period: float
    samples: FloatArray
    dense: FloatArray
    dense_dt: float
    stride: int
    section: float = field(default=0.0)

    @property
    def omega(self) -> float:
        return TWO_PI / self.period

    @property
    def n(self) -> int:
        return self.samples.shape[0]


def find_limit_cycle(
    sys: PlanarSystem,
    t_transient: float = 500.0,
    tol: float = 1e-10,
    dt: float = 1e-3,
    n: int = DEFAULT_N,
    section: float | None = None,
    max_crossings: int = 50,
) -> LimitCycle:
    """Locate the attracting limit cycle of ``sys``.

    The period is measured between upward crossings of the section
    ``x = section`` (default: mid-range of x after the transient), each
    crossing time refined by bisection to ``tol``.
    """
    f = sys.drift
    # the transient only needs to land on the attractor; a coarser step is enough
    state = integrate(f, sys.x0, t_transient, dt * 10)

    if section is None:
        xs = []
        x, y = state
        for _ in range(int(100.0 / dt / 10)):
            x, y = rk4_step(f, x, y, dt * 10)
            xs.append(x)
        section = 0.5 * (max(xs) + min(xs))
        state = (x, y)

    def g(x: float, y: float) -> float:
        return x - section

    crossings: list[float] = []
    periods: list[float] = []
    t = 0.0
    x, y = state
    t_horizon = max_crossings * 1e3
    while t < t_horizon:
        nx, ny = rk4_step(f, x, y, dt)
        if g(x, y) < 0.0 <= g(nx, ny):
            h, _ = _bisect_substep(g, f, (x, y), dt, tol)
            crossings.append(t + h)
            if len(crossings) >= 2:
                periods.append(crossings[-1] - crossings[-2])
            if len(periods) >= 2 and abs(periods[-1] - periods[-2]) < 10 * tol + 1e-12 * periods[-1]:
                break
            if len(crossings) > max_crossings:
                break
        x, y = nx, ny
        t += dt
    if len(periods) < 2:
        raise PhaseReductionError(
            f"no periodic crossing of x={section:.4g} detected within t={t_horizon:g} "
            f"after transient; last state=({x:.4g}, {y:.4g})"
        )
    if abs(periods[-1] - periods[-2]) > 1e-6 * periods[-1]:
        raise PhaseReductionError(f"period did not settle: last estimates {periods[-3:]}")
    period = periods[-1]

    # walk to the maximum of x: the downward zero of dx/dt
    def xdot(x: float, y: float) -> float:
        return f(x, y)[0]

    for _ in range(math.ceil(period / dt) + 1):
        nx, ny = rk4_step(f, x, y, dt)
        if xdot(x, y) > 0.0 >= xdot(nx, ny):
            _, (x, y) = _bisect_substep(xdot, f, (x, y), dt, tol)
            break
        x, y = nx, ny
    else:  # pragma: no cover - a limit cycle always has an x-maximum
        raise PhaseReductionError("could not locate the maximum of x on the cycle")

    stride = 2 * math.ceil(period / (n * dt))
    m = n * stride
    h = period / m
    dense = np.empty((m + 1, 2))
    dense[0] = (x, y)
    for j in range(1, m + 1):
        x, y = rk4_step(f, x, y, h)
        dense[j] = (x, y)
    closure = float(np.hypot(*(dense[-1] - dense[0])))
    logger.debug("limit cycle %s: T=%.12f closure=%.2e", sys.name, period, closure)
    return LimitCycle(
        period=period,
        samples=dense[:-1:stride].copy(),
        dense=dense,
        dense_dt=h,
        stride=stride,
        section=section,
    )


@dataclass(frozen=True)
class PhaseSensitivity:
    """Phase sensitivity along the cycle.

    ``Z`` is the input-direction (x) component of the adjoint solution and
    ``Zw`` the noise-direction component; both are sampled on the uniform
    phase grid. ``Zvec`` keeps both components of the adjoint solution.
    """

    Z: FloatArray
    Zw: FloatArray
    Zvec: FloatArray
    omega: float
    periods_used: int

    def normalization_residual(self, sys: PlanarSystem, lc: LimitCycle) -> float:
        F = np.array([sys.drift(x, y) for x, y in lc.samples])
        return float(np.max(np.abs(np.sum(self.Zvec * F, axis=1) - self.omega)))


def compute_adjoint(
    sys: PlanarSystem,
    lc: LimitCycle,
    tol: float = 1e-8,
    max_periods: int = 200,
) -> PhaseSensitivity:
    """Periodic solution of ``dZ/dt = -J(X0(t))^T Z`` normalized by ``Z . F = omega``.

    Integrates backward in time, where the adjoint is stable, renormalizing
    once per period until the period map converges to ``tol``.
    """
    omega = lc.omega
    dense = lc.dense
    h = 2.0 * lc.dense_dt
    n_steps = (dense.shape[0] - 1) // 2
    sample_every = lc.stride // 2
    jac = [sys.jacobian(float(x), float(y)) for x, y in dense]
    f0 = sys.drift(float(dense[0, 0]), float(dense[0, 1]))

    def rhs(J: tuple[float, float, float, float], zx: float, zy: float) -> tuple[float, float]:
        # d/ds Z = +J^T Z, with s = -t
        a, b, c, d = J
        return a * zx + c * zy, b * zx + d * zy

    zx, zy = 1.0, 0.0
    scale = omega / (zx * f0[0] + zy * f0[1]) if (zx * f0[0] + zy * f0[1]) != 0 else 1.0
    zx, zy = zx * scale, zy * scale
    prev = None
    out = np.empty((lc.n, 2))
    for period_idx in range(1, max_periods + 1):
        out[0] = (zx, zy)
        for j in range(n_steps, 0, -1):
            J0, Jm, J1 = jac[2 * j], jac[2 * j - 1], jac[2 * j - 2]
            k1 = rhs(J0, zx, zy)
            k2 = rhs(Jm, zx + 0.5 * h * k1[0], zy + 0.5 * h * k1[1])
            k3 = rhs(Jm, zx + 0.5 * h * k2[0], zy + 0.5 * h * k2[1])
            k4 = rhs(J1, zx + h * k3[0], zy + h * k3[1])
            zx += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            zy += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            idx = j - 1
            if idx % sample_every == 0 and idx > 0:
                out[idx // sample_every] = (zx, zy)
        dot = zx * f0[0] + zy * f0[1]
        if dot == 0.0:
            raise PhaseReductionError("adjoint solution became orthogonal to the flow")
        zx, zy = zx * omega / dot, zy * omega / dot
        # out[0] holds the value at the start of this backward sweep; overwrite
        # the rest with the normalized values so the sample set is one period
        current = out.copy()
        current[1:] *= omega / dot
        current[0] = (zx, zy)
        if prev is not None and np.max(np.abs(current - prev)) < tol:
            logger.debug("adjoint converged after %d periods", period_idx)
            return PhaseSensitivity(
                Z=current[:, 0].copy(),
                Zw=current[:, 0].copy(),
                Zvec=current,
                omega=omega,
                periods_used=period_idx,
            )
        prev = current
    raise PhaseReductionError(f"adjoint did not converge within {max_periods} periods")


def reduce(
    sys: PlanarSystem,
    n: int = DEFAULT_N,
    dt: float = 1e-3,
    t_transient: float = 500.0,
    tol: float = 1e-10,
) -> tuple[LimitCycle, PhaseSensitivity]:
    """Limit cycle and phase sensitivity in one call."""
    lc = find_limit_cycle(sys, t_transient=t_transient, tol=tol, dt=dt, n=n)
    return lc, compute_adjoint(sys, lc)
