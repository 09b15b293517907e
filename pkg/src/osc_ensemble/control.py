"""Closed-loop control of an oscillator density.

The plant density ``rho`` and the surrogate ``rho_ff`` (driven by the
feedforward input alone) are advanced together; feedback laws act on the
plant only.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from . import circle, metrics
from .circle import TWO_PI, FloatArray
from .design import PeriodicInput
from .fokker_planck import PhaseModel, PositivityError, Propagator, default_dt, evolve_target

logger = logging.getLogger(__name__)

FLOOR = metrics.FLOOR
DENOM_FLOOR = 1e-6


class Variant(enum.Enum):
    FEEDFORWARD_ONLY = "feedforward_only"
    PROPOSED = "proposed"
    BASELINE_L2 = "baseline_l2"
    BASELINE_CANCEL = "baseline_cancel"
    ERROR_AWARE = "error_aware"


@dataclass(frozen=True)
class ControlLaw:
    """A control law plus its parameters.

    ``feedforward`` is required for the surrogate-based variants; the two
    baselines track the rotating target and use no feedforward.
    """

    variant: Variant
    feedforward: PeriodicInput | None = None
    k: float = 0.0
    u_lo: float = -math.inf
    u_hi: float = math.inf
    denom_floor: float = DENOM_FLOOR
    e: float = 0.0
    noise_seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError("gain k must be nonnegative")
        if self.u_lo > self.u_hi:
            raise ValueError("u_lo must not exceed u_hi")
        if self.e < 0:
            raise ValueError("measurement error bound e must be nonnegative")
        if self.uses_surrogate and self.feedforward is None:
            raise ValueError(f"{self.variant.value} needs a feedforward input")
        if self.uses_surrogate and (math.isfinite(self.u_lo) or math.isfinite(self.u_hi)):
            t = np.linspace(0.0, self.feedforward.period, 2048, endpoint=False)
            u = self.feedforward(t)
            if u.min() < self.u_lo - 1e-12 or u.max() > self.u_hi + 1e-12:
                raise ValueError("feedforward input leaves the saturation band")

    @property
    def uses_surrogate(self) -> bool:
        return self.variant in (Variant.FEEDFORWARD_ONLY, Variant.PROPOSED, Variant.ERROR_AWARE)

    @classmethod
    def feedforward_only(cls, ff: PeriodicInput) -> ControlLaw:
        return cls(Variant.FEEDFORWARD_ONLY, ff)

    @classmethod
    def proposed(cls, ff: PeriodicInput, k: float, u_lo: float = -0.2, u_hi: float = 0.2) -> ControlLaw:
        return cls(Variant.PROPOSED, ff, k=k, u_lo=u_lo, u_hi=u_hi)

    @classmethod
    def baseline_l2(cls, k: float, e: float = 0.0, noise_seed: int = 0) -> ControlLaw:
        return cls(Variant.BASELINE_L2, k=k, e=e, noise_seed=noise_seed)

    @classmethod
    def baseline_cancel(cls, k: float, u_lo: float = -0.2, u_hi: float = 0.2,
                        denom_floor: float = DENOM_FLOOR, e: float = 0.0, noise_seed: int = 0) -> ControlLaw:
        return cls(Variant.BASELINE_CANCEL, k=k, u_lo=u_lo, u_hi=u_hi, denom_floor=denom_floor,
                   e=e, noise_seed=noise_seed)

    @classmethod
    def error_aware(cls, ff: PeriodicInput, k: float, e: float, u_lo: float = -0.2, u_hi: float = 0.2,
                    noise_seed: int = 0) -> ControlLaw:
        return cls(Variant.ERROR_AWARE, ff, k=k, u_lo=u_lo, u_hi=u_hi, e=e, noise_seed=noise_seed)

    def label(self) -> str:
        parts = [self.variant.value, f"k={self.k:g}"]
        if self.e > 0:
            parts.append(f"e={self.e:g}")
        return ",".join(parts)


def saturate(u: float, lo: float, hi: float) -> float:
    if lo > hi:
        raise ValueError("lo must not exceed hi")
    return min(max(u, lo), hi)


def _check_floor(rho_ff: FloatArray) -> FloatArray:
    rho_ff = np.asarray(rho_ff, dtype=np.float64)
    if rho_ff.min() <= FLOOR:
        raise metrics.MetricError(f"reference density below floor {FLOOR:g} (min={rho_ff.min():.3e})")
    return rho_ff


def u_fb_proposed(rho: ArrayLike, rho_ff: ArrayLike, Z: ArrayLike, k: float) -> float:
    """``k int (rho/rho_ff) d/dtheta[Z rho_ff]``."""
    rho_ff = _check_floor(rho_ff)
    return k * circle.integrate(np.asarray(rho) / rho_ff * circle.differentiate(np.asarray(Z) * rho_ff))


def _l2_coefficient(rho: FloatArray, rho_f: FloatArray, Z: FloatArray) -> float:
    """``int Z rho d/dtheta(rho - rho_f)``."""
    return circle.integrate(Z * rho * circle.differentiate(rho - rho_f))


def u_baseline_l2(rho: ArrayLike, rho_f: ArrayLike, Z: ArrayLike, k: float) -> float:
    """``-k int Z rho d/dtheta Delta`` with ``Delta = rho - rho_f``."""
    rho, rho_f, Z = (np.asarray(a, dtype=np.float64) for a in (rho, rho_f, Z))
    return -k * _l2_coefficient(rho, rho_f, Z)


def u_baseline_cancel(
    rho: ArrayLike,
    rho_f: ArrayLike,
    Z: ArrayLike,
    Zw: ArrayLike,
    D: float,
    k: float,
    denom_floor: float = DENOM_FLOOR,
    lo: float = -0.2,
    hi: float = 0.2,
) -> float:
    """L2 law with a term cancelling the diffusion contribution to ``d/dt |Delta|^2/2``.

    The denominator ``d = int Z rho d/dtheta Delta`` is replaced by
    ``sign(d) max(|d|, denom_floor)`` and the output is saturated.
    """
    rho, rho_f, Z, Zw = (np.asarray(a, dtype=np.float64) for a in (rho, rho_f, Z, Zw))
    delta = rho - rho_f
    if not np.any(delta):
        return 0.0
    d = _l2_coefficient(rho, rho_f, Z)
    diff_term = D * circle.integrate(delta * circle.differentiate(circle.differentiate(Zw**2 * rho)))
    denom = math.copysign(max(abs(d), denom_floor), d if d != 0 else 1.0)
    return saturate(-k * d - diff_term / denom, lo, hi)


def error_threshold(rho_ff: ArrayLike, Z: ArrayLike, e: float) -> float:
    """``e [int (d/dtheta[Z rho_ff] / rho_ff)^2]^(1/2)``."""
    rho_ff = _check_floor(rho_ff)
    w = circle.differentiate(np.asarray(Z) * rho_ff) / rho_ff
    return e * math.sqrt(circle.integrate(w * w))


def u_error_aware(rho_hat: ArrayLike, rho_ff: ArrayLike, Z: ArrayLike, k: float, e: float) -> float:
    """Feedback from a noisy measurement, applied only when it provably helps."""
    u_hat = u_fb_proposed(rho_hat, rho_ff, Z, k)
    if k == 0:
        return 0.0
    return u_hat if abs(u_hat) / k >= error_threshold(rho_ff, Z, e) else 0.0


def perturb_measurement(rho: ArrayLike, e: float, seed: int | np.random.Generator) -> FloatArray:
    """Noisy density measurement with ``|rho_hat - rho|_2 <= e``.

    i.i.d. Gaussian grid noise is scaled to L2 norm ``e``, added, clipped to
    be nonnegative and renormalized. If clipping pushed the error above ``e``
    the result is pulled back toward ``rho`` along the segment between them.
    """
    rho = circle.as_density(rho)
    if e == 0:
        return rho.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    xi = rng.standard_normal(rho.size)
    xi *= e / math.sqrt(circle.integrate(xi * xi))
    rho_hat = np.clip(rho + xi, 0.0, None)
    rho_hat /= circle.integrate(rho_hat)
    err = metrics.l2(rho_hat, rho)
    if err > e:
        rho_hat = rho + (e / err) * (rho_hat - rho)
    return rho_hat


@dataclass(frozen=True)
class Perturbation:
    rho: FloatArray
    degenerate: bool


def uncontrollable_perturbation(rho_ref: ArrayLike, Z: ArrayLike, eps: float, margin: float = 0.1) -> Perturbation:
    """A density near ``rho_ref`` on which the feedback integral vanishes.

    With ``g = d^2/dtheta^2[rho_ref Z]``, returns
    ``rho_ref (1 + eps (a1 g + a2))`` where ``a2/a1 = -int g rho_ref`` and
    ``a1 > 0`` puts ``min(a1 g + a2)`` at ``-(1 - margin)``.
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    rho_ref = circle.as_density(rho_ref)
    g = circle.differentiate(circle.differentiate(rho_ref * np.asarray(Z, dtype=np.float64)))
    mean_g = circle.integrate(g * rho_ref)
    spread = mean_g - g.min()
    if spread <= 1e-14 * max(1.0, float(np.abs(g).max())):
        logger.warning("g is constant on the support; returning the reference density")
        return Perturbation(rho_ref.copy(), True)
    a1 = (1.0 - margin) / spread
    a2 = -a1 * mean_g
    return Perturbation(rho_ref * (1.0 + eps * (a1 * g + a2)), False)


def period_grid(model: PhaseModel, dt: float | None = None) -> tuple[float, int]:
    """Step size dividing the period exactly and the number of steps per period."""
    dt = default_dt(model) if dt is None else dt
    steps = math.ceil(model.period / dt - 1e-9)
    return model.period / steps, steps


@dataclass
class Warmup:
    rho: FloatArray
    dt: float
    steps_per_period: int
    periodic_kl: float
    power_iterations: int


def ff_warmup(
    model: PhaseModel,
    inp: PeriodicInput,
    tol: float = 1e-10,
    dt: float | None = None,
    max_periods: int = 200,
) -> Warmup:
    """Periodic steady state of the surrogate under the feedforward input.

    The one-period map of the discrete scheme is assembled as a matrix
    product, its fixed point is taken as a starting guess, and periods are
    then simulated from there until the period-to-period KL is below ``tol``.
    The returned density corresponds to ``t = 0 mod period``.
    """
    if abs(abs(inp.omega) - model.omega) > 1e-9 * model.omega:
        raise ValueError("input period does not match the oscillator period")
    dt, steps = period_grid(model, dt)
    prop = Propagator.for_model(model, dt)
    n = model.n
    C = prop._stacked.reshape(5, n, n)
    u = inp((np.arange(steps) + 0.5) * dt)
    Phi = np.eye(n)
    for j in range(steps):
        uj = u[j]
        S = C[4]
        for c in (3, 2, 1, 0):
            S = C[c] + uj * S
        Phi = Phi + S @ Phi
    # every RK4 increment is a spectral derivative, so mass and the Nyquist
    # content are both invariant; pin them to those of the uniform density
    rows = [Phi - np.eye(n), np.full((1, n), TWO_PI / n)]
    if n % 2 == 0:
        rows.append(np.cos(np.pi * np.arange(n))[None, :])
    A = np.vstack(rows)
    b = np.zeros(A.shape[0])
    b[n] = 1.0
    rho = np.linalg.lstsq(A, b, rcond=None)[0]
    rho = np.clip(rho, 0.0, None)
    rho /= circle.integrate(rho)

    def period_map(r: FloatArray) -> FloatArray:
        for j in range(steps):
            r = prop.step(r, u[j])
        return r

    gap = math.inf
    for it in range(1, max_periods + 1):
        nxt = period_map(rho)
        gap = metrics.kl(nxt, rho)
        rho = nxt
        if gap < tol:
            return Warmup(circle.as_density(rho), dt, steps, gap, it)
    raise RuntimeError(f"surrogate did not reach a periodic state: last period KL {gap:.3e}")


@dataclass
class LoopConfig:
    dt: float | None = None
    log_every: float = 1.0
    log_w2: bool = True
    rho_f0: FloatArray | None = None
    positivity_tol: float = 1e-8
    snapshot_every: float | None = None


@dataclass
class LoopResult:
    law: ControlLaw
    rows: list[dict[str, float]]
    rho: FloatArray
    rho_ff: FloatArray
    dt: float
    runtime: float
    meta: dict = field(default_factory=dict)
    snapshots: list[tuple[float, FloatArray]] = field(default_factory=list)

    def column(self, name: str) -> FloatArray:
        return np.array([r[name] for r in self.rows])

    def snapshots_to_csv(self, path: str | Path) -> None:
        if not self.snapshots:
            return
        n = self.snapshots[0][1].size
        header = "t[time]," + ",".join(f"rho@theta={th:.6f}[1/rad]" for th in circle.grid(n))
        data = np.array([np.concatenate(([t], r)) for t, r in self.snapshots])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    def to_csv(self, path: str | Path) -> None:
        if not self.rows:
            return
        keys = list(self.rows[0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"{k}[{LOG_UNITS.get(k, '1')}]" for k in keys])
            for r in self.rows:
                w.writerow([repr(float(r[k])) for k in keys])


LOG_UNITS = {"t": "time", "u": "input", "u_ff": "input", "u_fb": "input", "W2": "rad", "W2_surrogate": "rad",
             "L2": "1/sqrt(rad)", "Fisher": "1/rad^2"}


def run_closed_loop(
    model: PhaseModel,
    law: ControlLaw,
    rho0: ArrayLike,
    rho_ff_init: ArrayLike | None,
    T: float,
    config: LoopConfig | None = None,
) -> LoopResult:
    """Advance plant and surrogate together under ``law`` up to time ``T``.

    Feedback is computed from the state at the start of each step and held
    over the step; the feedforward is sampled at the step midpoint for both
    densities. Logged columns compare ``rho`` with the surrogate and with the
    rotating target ``rho_f0(theta - omega t)``.
    """
    config = config or LoopConfig()
    start = time.perf_counter()
    if config.dt is None:
        dt, _ = period_grid(model)
    else:
        dt = config.dt
    n_steps = int(round(T / dt))
    log_stride = max(1, int(round(config.log_every / dt)))
    snap_stride = None if config.snapshot_every is None else max(1, int(round(config.snapshot_every / dt)))
    snapshots: list[tuple[float, FloatArray]] = []
    prop = Propagator.for_model(model, dt)
    Z, Zw, D = model.Z, model.Zw, model.D
    ff = law.feedforward
    rho_f0 = None if config.rho_f0 is None else circle.as_density(config.rho_f0)
    if rho_ff_init is None and law.uses_surrogate:
        raise ValueError("surrogate-based laws need the periodic surrogate state")

    X = np.empty((model.n, 2))
    X[:, 0] = circle.as_density(rho0)
    X[:, 1] = circle.as_density(rho_ff_init) if rho_ff_init is not None else circle.uniform(model.n)
    rng = np.random.default_rng(law.noise_seed)
    rows: list[dict[str, float]] = []

    def log(step: int, u_val: float, u_ff: float, u_fb: float, active: float) -> None:
        t = step * dt
        rho, rho_ff = X[:, 0], X[:, 1]
        row = {"t": t, "u": u_val, "u_ff": u_ff, "u_fb": u_fb, "fb_active_flag": active}
        sur = metrics.inequality_checks(rho, rho_ff) if config.log_w2 else None
        row["KL_surrogate"] = sur.kl if sur else metrics.kl(rho, rho_ff)
        if sur:
            row["W2_surrogate"] = sur.w2
            row["ckp_slack_surrogate"] = sur.ckp_slack
            row["talagrand_slack_surrogate"] = sur.talagrand_slack
            row["lsi_lambda_surrogate"] = sur.lsi_lambda
        if rho_f0 is not None:
            rho_f = evolve_target(rho_f0, model.omega, t)
            row["KL_target"] = metrics.kl(rho, rho_f)
            row["L1"] = metrics.l1(rho, rho_f)
            row["L2"] = metrics.l2(rho, rho_f)
            row["Fisher"] = metrics.relative_fisher(rho, rho_f)
            if config.log_w2:
                tgt = metrics.inequality_checks(rho, rho_f)
                row["W2"] = tgt.w2
                row["ckp_slack_target"] = tgt.ckp_slack
                row["talagrand_slack_target"] = tgt.talagrand_slack
        rows.append(row)

    def control(step: int) -> tuple[float, float, float, float]:
        t = step * dt
        rho, rho_ff = X[:, 0], X[:, 1]
        u_ff = float(ff(t + 0.5 * dt)) if ff is not None else 0.0
        v = law.variant
        if v is Variant.FEEDFORWARD_ONLY:
            return u_ff, u_ff, 0.0, 0.0
        if v is Variant.PROPOSED:
            u_fb = u_fb_proposed(rho, rho_ff, Z, law.k)
            u = saturate(u_ff + u_fb, law.u_lo, law.u_hi)
            return u, u_ff, u - u_ff, float(u_fb != 0.0)
        if v is Variant.ERROR_AWARE:
            rho_hat = perturb_measurement(rho, law.e, rng)
            u_fb = u_error_aware(rho_hat, rho_ff, Z, law.k, law.e)
            u = saturate(u_ff + u_fb, law.u_lo, law.u_hi)
            return u, u_ff, u - u_ff, float(u_fb != 0.0)
        if rho_f0 is None:
            raise ValueError("baseline laws need the target density rho_f0")
        rho_f = evolve_target(rho_f0, model.omega, t)
        if law.e > 0:
            # baselines see the same kind of noisy measurement
            rho = perturb_measurement(rho, law.e, rng)
        if v is Variant.BASELINE_L2:
            u = saturate(u_baseline_l2(rho, rho_f, Z, law.k), law.u_lo, law.u_hi)
        else:
            u = u_baseline_cancel(rho, rho_f, Z, Zw, D, law.k, law.denom_floor, law.u_lo, law.u_hi)
        return u, u_ff, u, 1.0

    for step in range(n_steps):
        u_val, u_ff, u_fb, active = control(step)
        if step % log_stride == 0:
            log(step, u_val, u_ff, u_fb, active)
        if snap_stride is not None and step % snap_stride == 0:
            snapshots.append((step * dt, X[:, 0].copy()))
        X = prop.step(X, np.array([u_val, u_ff]))
        if X.min() < -config.positivity_tol:
            raise PositivityError(f"density undershoot {X.min():.3e} at t={(step + 1) * dt:.4g}")
    u_val, u_ff, u_fb, active = control(n_steps)
    log(n_steps, u_val, u_ff, u_fb, active)
    if snap_stride is not None:
        snapshots.append((n_steps * dt, X[:, 0].copy()))
    runtime = time.perf_counter() - start
    logger.info("%s: %d steps in %.1fs", law.label(), n_steps, runtime)
    return LoopResult(law, rows, X[:, 0].copy(), X[:, 1].copy(), dt, runtime, {"T": T, "n": model.n}, snapshots)


__all__ = [
    "ControlLaw",
    "LoopConfig",
    "LoopResult",
    "Perturbation",
    "Variant",
    "Warmup",
    "error_threshold",
    "ff_warmup",
    "perturb_measurement",
    "period_grid",
    "run_closed_loop",
    "saturate",
    "u_baseline_cancel",
    "u_baseline_l2",
    "u_error_aware",
    "u_fb_proposed",
    "uncontrollable_perturbation",
]
