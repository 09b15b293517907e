"""Divergences and distances between densities on the circle."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.typing import ArrayLike

from . import circle
from .circle import TWO_PI, FloatArray

logger = logging.getLogger(__name__)

FLOOR = 1e-12

# number of grid values clamped to FLOOR so far; see floor_count()
_floor_hits = 0


class MetricError(ValueError):
    pass


def floor_count() -> int:
    """How many density values have been clamped to the log floor in this process."""
    return _floor_hits


def _log_floored(rho: FloatArray) -> FloatArray:
    global _floor_hits
    low = rho < FLOOR
    if low.any():
        hits = int(low.sum())
        _floor_hits += hits
        logger.warning("clamped %d density values below %.0e inside log", hits, FLOOR)
    return np.log(np.maximum(rho, FLOOR))


def _positive(rho: ArrayLike, name: str) -> FloatArray:
    rho = np.asarray(rho, dtype=np.float64)
    if rho.min() <= FLOOR:
        raise MetricError(f"{name} falls below the floor {FLOOR:g} (min={rho.min():.3e})")
    return rho


def kl(rho1: ArrayLike, rho2: ArrayLike) -> float:
    """``KL(rho1 || rho2) = int rho1 log(rho1/rho2)``."""
    rho1 = np.asarray(rho1, dtype=np.float64)
    rho2 = _positive(rho2, "rho2")
    # 0 log 0 = 0: points where rho1 vanishes contribute nothing
    mask = rho1 > 0
    integrand = np.zeros_like(rho1)
    integrand[mask] = rho1[mask] * (_log_floored(rho1[mask]) - np.log(rho2[mask]))
    return max(circle.integrate(integrand), 0.0)


def l1(rho1: ArrayLike, rho2: ArrayLike) -> float:
    return circle.integrate(np.abs(np.asarray(rho1) - np.asarray(rho2)))


def l2(rho1: ArrayLike, rho2: ArrayLike) -> float:
    d = np.asarray(rho1) - np.asarray(rho2)
    return math.sqrt(circle.integrate(d * d))


def relative_fisher(rho1: ArrayLike, rho2: ArrayLike) -> float:
    """``I(rho1 || rho2) = int rho1 (d/dtheta log(rho1/rho2))^2``."""
    rho1 = np.asarray(rho1, dtype=np.float64)
    rho2 = np.asarray(rho2, dtype=np.float64)
    g = circle.differentiate(_log_floored(rho1) - _log_floored(rho2))
    return circle.integrate(rho1 * g * g)


def weighted_density(rho: ArrayLike, Zw: ArrayLike) -> FloatArray:
    """Tilted density ``rho Zw^2 / int rho Zw^2``."""
    w = np.asarray(rho, dtype=np.float64) * np.asarray(Zw, dtype=np.float64) ** 2
    mass = circle.integrate(w)
    if not mass > 0:
        raise MetricError("int rho Zw^2 vanishes")
    return w / mass


def dz_coefficient(rho: ArrayLike, Zw: ArrayLike, D: float) -> float:
    """``D int rho Zw^2``."""
    mass = circle.integrate(np.asarray(rho) * np.asarray(Zw) ** 2)
    if not mass > 0:
        raise MetricError("int rho Zw^2 vanishes")
    return D * mass


def _quantile(rho: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Knots of the piecewise-linear CDF of a cellwise-constant density."""
    n = rho.size
    h = TWO_PI / n
    cdf = np.concatenate(([0.0], np.cumsum(rho) * h))
    cdf /= cdf[-1]
    edges = h * (np.arange(n + 1) - 0.5)
    return cdf, edges


def _lifted_quantile(cdf: FloatArray, edges: FloatArray, s: FloatArray) -> FloatArray:
    """Quantile function extended by ``Q(s + 1) = Q(s) + 2 pi``."""
    whole = np.floor(s)
    return np.interp(s - whole, cdf, edges) + TWO_PI * whole


def wasserstein2_circle(rho1: ArrayLike, rho2: ArrayLike, tol: float = 1e-12) -> float:
    """Quadratic Wasserstein distance with arc-length cost.

    Each grid value is the constant density on the cell centred at ``theta_j``.
    For densities on the circle,
    ``W2^2 = min_alpha int_0^1 |Q1(s) - Q2(s + alpha)|^2 ds`` with lifted
    quantiles; the objective is convex in ``alpha``. Both quantiles are
    piecewise linear, so the integral is exact on the merged breakpoints.
    """
    rho1 = circle.as_density(rho1, renormalize=True)
    rho2 = circle.as_density(rho2, renormalize=True)
    c1, e1 = _quantile(rho1)
    c2, e2 = _quantile(rho2)

    def cost(alpha: float) -> float:
        shifted = np.concatenate((c2 - alpha, c2 + 1.0 - alpha, c2 - 1.0 - alpha))
        knots = np.union1d(c1, shifted[(shifted > 0.0) & (shifted < 1.0)])
        d = np.interp(knots, c1, e1) - _lifted_quantile(c2, e2, knots + alpha)
        ds = np.diff(knots)
        return float(np.sum(ds * (d[:-1] ** 2 + d[:-1] * d[1:] + d[1:] ** 2)) / 3.0)

    # alpha outside [-1, 1] only adds full turns
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = -1.0, 1.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = cost(c), cost(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = cost(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = cost(d)
    # near-empty tails make the cost grow like |alpha| near its minimum, so
    # the unshifted coupling is checked explicitly as well
    return math.sqrt(max(min(fc, fd, cost(0.5 * (a + b)), cost(0.0)), 0.0))


def lsi_constant(rho: ArrayLike) -> float:
    """``exp(-2 osc(log rho)) = (min rho / max rho)^2``."""
    rho = _positive(rho, "rho")
    logs = np.log(rho)
    return math.exp(-2.0 * (logs.max() - logs.min()))


@dataclass(frozen=True)
class DivergenceRow:
    kl: float
    l1: float
    l2: float
    fisher: float
    w2: float
    lsi_lambda: float
    ckp_slack: float
    talagrand_slack: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def inequality_checks(rho1: ArrayLike, rho2: ArrayLike) -> DivergenceRow:
    """All divergences plus the Pinsker and Talagrand slacks (``>= 0`` when they hold)."""
    k = kl(rho1, rho2)
    d1 = l1(rho1, rho2)
    w2 = wasserstein2_circle(rho1, rho2)
    lam = lsi_constant(rho2)
    return DivergenceRow(
        kl=k,
        l1=d1,
        l2=l2(rho1, rho2),
        fisher=relative_fisher(rho1, rho2),
        w2=w2,
        lsi_lambda=lam,
        ckp_slack=2.0 * k - d1 * d1,
        talagrand_slack=2.0 / lam * k - w2 * w2,
    )


def control_coefficient(rho: ArrayLike, rho_ref: ArrayLike, Z: ArrayLike) -> float:
    """``int (rho/rho_ref) d/dtheta[Z rho_ref]``."""
    rho_ref = _positive(rho_ref, "reference density")
    return circle.integrate(np.asarray(rho) / rho_ref * circle.differentiate(np.asarray(Z) * rho_ref))


def target_kl_bound(
    rho: ArrayLike,
    rho_f: ArrayLike,
    Z: ArrayLike,
    Zw: ArrayLike,
    D: float,
    u: float,
) -> float:
    """Upper bound on ``d/dt KL(rho || rho_f)`` (diagnostic only).

    ``-c u - D_z I_z^(1/2) (I_z^(1/2) - sqrt(2 pi) |rho_z|_inf I(1/(2 pi) || rho_fz)^(1/2))``
    with ``c = int (rho/rho_f) d[Z rho_f]``, ``rho_z`` and ``rho_fz`` the
    Zw^2-tilted densities and ``I_z = I(rho_z || rho_fz)``.
    """
    rho = np.asarray(rho, dtype=np.float64)
    rho_z = weighted_density(rho, Zw)
    rho_fz = weighted_density(rho_f, Zw)
    Dz = dz_coefficient(rho, Zw, D)
    I = relative_fisher(rho_z, rho_fz)
    I_unif = relative_fisher(circle.uniform(rho.size), rho_fz)
    c = control_coefficient(rho, rho_f, Z)
    return -c * u - Dz * math.sqrt(I) * (math.sqrt(I) - math.sqrt(TWO_PI) * rho_z.max() * math.sqrt(I_unif))
