"""Periodic feedforward input design under the averaging approximation.

A 2*pi/omega-periodic input ``u(t) = sum_k v_k exp(i k omega t)`` acting on
the phase model produces, after averaging, the drift
``Gamma(theta) = sum_k z_k v_{-k} exp(i k theta)`` and the Gibbs stationary
density ``exp(-V/B^2)/C`` with ``V = -int_0^theta Gamma``. Matching
``Gamma / B^2`` to the Fourier series ``p_k`` of ``d/dtheta log rho_target``
mode by mode gives the design problems solved here.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np
from numpy.typing import ArrayLike

from . import circle, metrics
from .circle import TWO_PI, FloatArray, FourierSeries
from .fokker_planck import PhaseModel

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-12


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class PeriodicInput:
    """Real periodic input with Fourier coefficients ``coeffs[k] = v_k``."""

    omega: float
    coeffs: FourierSeries
    allow_dc: bool = False

    def __post_init__(self) -> None:
        if not self.coeffs.is_hermitian(tol=1e-12 * max(1.0, float(np.abs(self.coeffs.coeffs).max(initial=0)))):
            raise ValueError("input coefficients must be Hermitian (real input)")
        if not self.allow_dc and abs(self.coeffs[0]) > 0:
            raise ValueError("v_0 must vanish unless allow_dc=True")

    @classmethod
    def zero(cls, omega: float, K: int = 0) -> PeriodicInput:
        return cls(omega, FourierSeries(np.zeros(2 * K + 1, dtype=complex)))

    @property
    def K(self) -> int:
        return self.coeffs.K

    @property
    def period(self) -> float:
        return TWO_PI / abs(self.omega)

    def __call__(self, t: ArrayLike) -> FloatArray | float:
        t_arr = np.asarray(t, dtype=np.float64)
        phase = np.multiply.outer(t_arr * self.omega, self.coeffs.modes)
        out = np.real(np.exp(1j * phase) @ self.coeffs.coeffs)
        return float(out) if out.ndim == 0 else out

    def energy(self) -> float:
        """``||u(./omega)||_2^2 = 2 pi sum |v_k|^2``."""
        return TWO_PI * float(np.sum(np.abs(self.coeffs.coeffs) ** 2))

    def amplitude_bound(self) -> float:
        """``sum |v_k|``, an upper bound on ``max |u|``."""
        return float(np.sum(np.abs(self.coeffs.coeffs)))

    def scaled(self, factor: float) -> PeriodicInput:
        return PeriodicInput(self.omega, FourierSeries(self.coeffs.coeffs * factor), self.allow_dc)

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "K_max": self.K,
            "v": [[int(k), float(c.real), float(c.imag)] for k, c in zip(self.coeffs.modes, self.coeffs.coeffs)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> PeriodicInput:
        K = int(data["K_max"])
        c = np.zeros(2 * K + 1, dtype=complex)
        for k, re, im in data["v"]:
            c[int(k) + K] = complex(re, im)
        return cls(float(data["omega"]), FourierSeries(c))


def noise_strength(model: PhaseModel) -> float:
    """``B = sqrt(D/(2 pi) int Zw^2)``."""
    return math.sqrt(model.D / TWO_PI * circle.integrate(model.Zw**2))


def sensitivity_series(model: PhaseModel, K: int | None = None) -> FourierSeries:
    K = model.n // 2 - 1 if K is None else K
    return circle.analyze(model.Z, K)


def gamma_of(inp: PeriodicInput, z: FourierSeries, n: int = circle.DEFAULT_N) -> FloatArray:
    """Averaged drift ``Gamma(theta) = sum_k z_k v_{-k} exp(i k theta)``."""
    K = min(inp.K, z.K, n // 2 - 1)
    g = {k: z[k] * inp.coeffs[-k] for k in range(-K, K + 1)}
    return circle.synthesize(FourierSeries.from_dict(g, K), n)


def potential(gamma: ArrayLike, tol: float = 1e-10) -> FloatArray:
    """``V(theta) = -int_0^theta Gamma``; Gamma must have zero circulation."""
    gamma = circle.as_grid_function(gamma)
    circulation = circle.integrate(gamma)
    if abs(circulation) > tol:
        raise DesignError(f"Gamma has nonzero circulation {circulation:.3e}; V would not be periodic")
    return -circle.antiderivative(gamma)


def gibbs_stationary(gamma: ArrayLike, B: float) -> FloatArray:
    """Gibbs density ``exp(-V/B^2)/C`` of the averaged equation."""
    if not B > 0:
        raise ValueError("B must be positive")
    expo = -potential(gamma) / (B * B)
    return circle.as_density(np.exp(expo - expo.max()), renormalize=True)


def target_log_gradient(rho_f0: ArrayLike, K: int | None = None, tol: float = 1e-10) -> FourierSeries:
    """Fourier series ``p_k`` of ``d/dtheta log rho_f0``."""
    rho = circle.as_density(rho_f0)
    if rho.min() <= DENSITY_FLOOR:
        raise DesignError("target density must be strictly positive")
    n = rho.size
    K = n // 2 - 1 if K is None else K
    p = circle.analyze(circle.differentiate(np.log(rho)), K)
    if abs(p[0]) > tol:
        raise DesignError(f"log-gradient has a mean {abs(p[0]):.3e}; expected 0")
    return p


def exact_input(
    p: FourierSeries,
    z: FourierSeries,
    B: float,
    omega: float,
    zero_tol: float = 1e-10,
) -> PeriodicInput:
    """Coefficients ``v_k = B^2 p_{-k} / z_{-k}`` that make the target stationary."""
    K = p.K
    v = np.zeros(2 * K + 1, dtype=complex)
    for k in range(-K, K + 1):
        if k == 0:
            continue
        pk, zk = p[-k], z[-k]
        if abs(pk) > zero_tol and abs(zk) <= zero_tol:
            raise DesignError(f"mode k={-k} of the target is not covered by Z (z_{-k}={zk:.3e})")
        if abs(zk) > zero_tol:
            v[k + K] = B * B * pk / zk
    # enforce exact Hermitian symmetry against rounding
    v = 0.5 * (v + np.conj(v[::-1]))
    return PeriodicInput(omega, FourierSeries(v))


@dataclass
class DesignReport:
    """Reachability bounds and the measured quantities they control."""

    l1_bound: float
    l2_value: float
    kl_bound: float
    fisher_bound: float
    measured_l1: float
    measured_l2: float
    measured_kl: float
    measured_fisher: float
    residual_l1: float
    residual_l2: float
    objective: float = float("nan")
    energy: float = float("nan")
    energy_budget: float = float("nan")
    multiplier: float = 0.0
    energy_binding: bool = False
    amplitude_binding: bool = False
    support: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def residuals(p: FourierSeries, z: FourierSeries, inp: PeriodicInput, B: float) -> NDArrayComplex:
    """``z_k v_{-k} / B^2 - p_k`` for ``|k| <= p.K``."""
    K = p.K
    return np.array([z[k] * inp.coeffs[-k] / (B * B) - p[k] for k in range(-K, K + 1)])


NDArrayComplex = np.ndarray


def reachability_bounds(
    p: FourierSeries,
    z: FourierSeries,
    inp: PeriodicInput,
    B: float,
    rho_f0: ArrayLike,
) -> DesignReport:
    """Evaluate the four coefficient bounds and the quantities they bound."""
    if abs(inp.coeffs[0]) > 0:
        raise DesignError("bounds require v_0 = 0")
    rho_f0 = circle.as_density(rho_f0)
    n = rho_f0.size
    r = residuals(p, z, inp, B)
    s1 = float(np.sum(np.abs(r)))
    s2 = float(np.sum(np.abs(r) ** 2))
    sup = float(rho_f0.max())
    rho_st = gibbs_stationary(gamma_of(inp, z, n), B)
    g = np.log(rho_st) - np.log(rho_f0)
    return DesignReport(
        l1_bound=TWO_PI**2 * s1,
        l2_value=TWO_PI**1.5 * math.sqrt(s2),
        kl_bound=sup * TWO_PI**2 * s1,
        fisher_bound=sup * TWO_PI**3 * s2,
        measured_l1=circle.integrate(np.abs(g)),
        measured_l2=math.sqrt(circle.integrate(g * g)),
        measured_kl=metrics.kl(rho_f0, rho_st),
        measured_fisher=metrics.relative_fisher(rho_f0, rho_st),
        residual_l1=s1,
        residual_l2=math.sqrt(s2),
    )


@dataclass(frozen=True)
class DesignProblem:
    """Convex design of the input coefficients.

    The data-fit term of mode k is ``|z_{-k} v_k - B^2 p_{-k}|^r``, i.e. the
    residual in real/imaginary split form with ``B^2`` cleared from the
    denominator, so ``lam`` weighs the penalty against that scale.
    ``r`` is the exponent of the per-mode residual, ``E`` the energy budget
    (``2 pi sum |v_k|^2 <= E``), ``lam`` the weight of the l1 penalty
    ``|Re v| + |Im v|`` and ``amplitude`` an optional bound ``sum |v_k| <= U``.
    """

    r: Literal[1, 2] = 2
    E: float = 0.02
    lam: float = 0.0
    K_max: int = 20
    zero_tol: float = 1e-10
    amplitude: float | None = None

    def __post_init__(self) -> None:
        if self.r not in (1, 2):
            raise ValueError("r must be 1 or 2")
        if not self.E > 0:
            raise ValueError("energy budget E must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.amplitude is not None and not self.amplitude > 0:
            raise ValueError("amplitude bound must be positive")

    def index_set(self, p: FourierSeries, z: FourierSeries) -> list[int]:
        """Modes k with both p_{-k} and z_{-k} numerically nonzero."""
        return [
            k
            for k in range(-self.K_max, self.K_max + 1)
            if k != 0 and abs(p[-k]) > self.zero_tol and abs(z[-k]) > self.zero_tol
        ]


def design_objective(problem: DesignProblem, inp: PeriodicInput, p: FourierSeries, z: FourierSeries, B: float) -> float:
    total = 0.0
    for k in problem.index_set(p, z):
        vk = inp.coeffs[k]
        total += abs(z[-k] * vk - B * B * p[-k]) ** problem.r
        total += problem.lam * (abs(vk.real) + abs(vk.imag))
    return total


def _soft(x: FloatArray, thresh: float) -> FloatArray:
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def _golden(h, lo: float, hi: float, tol: float = 1e-14, max_iter: int = 200) -> float:
    """Minimizer of a convex scalar function on [lo, hi] by golden-section search."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = h(c), h(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = h(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = h(d)
    candidates = [(h(a), a), (fc, c), (fd, d), (h(b), b)]
    return min(candidates)[1]


def _solve_mode_r1(a: float, q: FloatArray, lam: float, mu: float) -> FloatArray:
    """Exact minimizer over x in R^2 of ``a|x - q| + lam |x|_1 + mu |x|^2``.

    The minimizer lies on one of: the kink x = q, a stationary point inside
    an open quadrant (closed form), or one of the coordinate axes (convex
    1-D problems, golden section). All candidates are compared.
    """

    def f(x: FloatArray) -> float:
        return a * math.hypot(x[0] - q[0], x[1] - q[1]) + lam * (abs(x[0]) + abs(x[1])) + mu * (x[0] ** 2 + x[1] ** 2)

    candidates = [np.array(q, dtype=float)]
    if mu > 0:
        for s in ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)):
            s_arr = np.array(s)
            w = lam * s_arr + 2.0 * mu * q
            t = (math.hypot(*w) / a - 1.0) / (2.0 * mu)
            if t > 0:
                x = (q - t * lam * s_arr) / (1.0 + 2.0 * mu * t)
                if np.all(np.sign(x) == s_arr):
                    candidates.append(x)
    for axis in (0, 1):
        other = 1 - axis
        lo, hi = min(0.0, q[axis]), max(0.0, q[axis])

        def h(y: float, axis: int = axis, other: int = other) -> float:
            x = np.zeros(2)
            x[axis] = y
            return f(x)

        y = _golden(h, lo, hi) if hi > lo else 0.0
        x = np.zeros(2)
        x[axis] = y
        candidates.append(x)
    return min(candidates, key=f)


def _project_both(V: NDArrayComplex, radius2: float, radius1: float) -> NDArrayComplex:
    """Project onto ``{sum |v|^2 <= radius2} & {sum |v| <= radius1}``.

    Both sets only constrain the moduli, so the projection keeps every phase
    and maps the moduli to ``max(n - tau, 0) / (1 + xi)``; tau and xi come
    from scalar bisections depending on which constraints are active.
    """
    n = np.abs(V)
    if n.sum() <= radius1 and float(np.sum(n * n)) <= radius2:
        return V

    def rescaled(new: FloatArray) -> NDArrayComplex:
        return V * np.divide(new, n, out=np.zeros_like(n), where=n > 0)

    def shrink(tau: float) -> FloatArray:
        return np.maximum(n - tau, 0.0)

    def bisect(too_small: Callable[[float], bool]) -> tuple[float, float]:
        lo, hi = 0.0, float(n.max())
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if too_small(mid):
                lo = mid
            else:
                hi = mid
        return lo, hi

    e = float(np.sum(n * n))
    if e > radius2:
        new = n * math.sqrt(radius2 / e)
        if new.sum() <= radius1 * (1 + 1e-15):
            return rescaled(new)
    if n.sum() > radius1:
        _, hi = bisect(lambda tau: shrink(tau).sum() > radius1)
        new = shrink(hi)
        if float(np.sum(new * new)) <= radius2 * (1 + 1e-15):
            return rescaled(new)
    # both active: tau fixes the shape ratio, xi the overall scale
    ratio = radius2 / radius1**2

    def too_small(tau: float) -> bool:
        sh = shrink(tau)
        s1 = sh.sum()
        return s1 > 0 and float(np.sum(sh * sh)) / s1**2 < ratio

    lo, _ = bisect(too_small)
    new = shrink(lo)
    return rescaled(new * radius1 / new.sum())


def solve_design(
    problem: DesignProblem,
    p: FourierSeries,
    z: FourierSeries,
    B: float,
    omega: float,
    rho_f0: ArrayLike | None = None,
) -> tuple[PeriodicInput, DesignReport]:
    """Solve the convex coefficient design problem.

    Modes outside the index set get ``v_k = 0``. Both signs of each index are
    optimized jointly by solving for ``k > 0`` and setting ``v_{-k}`` to the
    conjugate, which is optimal because the problem is conjugation invariant.
    The energy ball is handled with a scalar multiplier ``mu`` found by
    bisection; every per-mode subproblem is solved exactly for given ``mu``.
    """
    Kset = problem.index_set(p, z)
    if not Kset:
        raise DesignError("index set is empty: no mode of the target is reachable")
    pos = [k for k in Kset if k > 0]
    if sorted(Kset) != sorted(pos + [-k for k in pos]):
        raise DesignError("index set is not symmetric; p or z is not Hermitian")
    B2 = B * B
    c = np.array([z[-k] for k in pos])
    target = np.array([B2 * p[-k] for k in pos])
    budget = problem.E / TWO_PI
    lam = problem.lam

    if problem.r == 2:
        alpha = np.conj(c) * target
        soft = _soft(alpha.real, lam / 2) + 1j * _soft(alpha.imag, lam / 2)
        a = np.abs(c) ** 2

        def solve_mu(mu: float) -> NDArrayComplex:
            return soft / (a + mu)

        bound_num = 2.0 * float(np.sum(np.abs(soft) ** 2))
    else:
        a_abs = np.abs(c)
        q = target / c

        def solve_mu(mu: float) -> NDArrayComplex:
            out = np.empty(len(pos), dtype=complex)
            for i in range(len(pos)):
                x = _solve_mode_r1(float(a_abs[i]), np.array([q[i].real, q[i].imag]), lam, mu)
                out[i] = complex(x[0], x[1])
            return out

        bound_num = 2.0 * float(np.sum((a_abs + lam * math.sqrt(2.0)) ** 2)) / 4.0

    def energy(V: NDArrayComplex) -> float:
        return 2.0 * float(np.sum(np.abs(V) ** 2))  # both k and -k

    mu = 0.0
    V = solve_mu(0.0)
    if energy(V) > budget:
        lo, hi = 0.0, math.sqrt(bound_num / budget)
        V_hi = solve_mu(hi)
        if energy(V_hi) > budget * (1 + 1e-12):
            raise DesignError("failed to bracket the energy multiplier")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            V_mid = solve_mu(mid)
            if energy(V_mid) > budget:
                lo = mid
            else:
                hi, V_hi = mid, V_mid
            if hi - lo <= 1e-15 * hi:
                break
        mu, V = hi, V_hi

    amplitude_binding = False
    if problem.amplitude is not None and 2.0 * float(np.sum(np.abs(V))) > problem.amplitude:
        V = _amplitude_constrained(problem, c, target, V, budget)
        amplitude_binding = True

    coeffs = np.zeros(2 * problem.K_max + 1, dtype=complex)
    for k, vk in zip(pos, V):
        coeffs[k + problem.K_max] = vk
        coeffs[-k + problem.K_max] = np.conj(vk)
    inp = PeriodicInput(omega, FourierSeries(coeffs))

    if rho_f0 is not None:
        report = reachability_bounds(p, z, inp, B, rho_f0)
    else:
        r = residuals(p, z, inp, B)
        s1, s2 = float(np.sum(np.abs(r))), float(np.sum(np.abs(r) ** 2))
        nan = float("nan")
        report = DesignReport(TWO_PI**2 * s1, TWO_PI**1.5 * math.sqrt(s2), nan, nan, nan, nan, nan, nan,
                              s1, math.sqrt(s2))
    report.objective = design_objective(problem, inp, p, z, B)
    report.energy = inp.energy()
    report.energy_budget = problem.E
    report.multiplier = mu
    report.energy_binding = mu > 0
    report.amplitude_binding = amplitude_binding
    report.support = [int(k) for k in inp.coeffs.modes if abs(inp.coeffs[int(k)]) > 0]
    logger.info("design r=%d E=%g lam=%g: objective=%.6g energy=%.6g mu=%.3g",
                problem.r, problem.E, lam, report.objective, report.energy, mu)
    return inp, report


def _amplitude_constrained(
    problem: DesignProblem,
    c: NDArrayComplex,
    target: NDArrayComplex,
    V0: NDArrayComplex,
    budget: float,
    max_iter: int = 50000,
    tol: float = 1e-14,
) -> NDArrayComplex:
    """Primal-dual (Chambolle-Pock) iteration with the extra constraint ``sum |v_k| <= U``.

    The data fit and the l1 penalty are dualized, each with a closed-form
    prox; the primal step is the exact projection onto the energy and
    amplitude balls. Only ``k > 0`` is stored, so both radii are halved.
    """
    lam, r = problem.lam, problem.r
    half_U = problem.amplitude / 2.0
    half_budget = budget / 2.0
    step = 0.99 / math.sqrt(float(np.max(np.abs(c) ** 2)) + 1.0)

    def prox_fit(w: NDArrayComplex, a: float) -> NDArrayComplex:
        if r == 2:
            return w / (1.0 + 2.0 * a)
        mag = np.abs(w)
        return w * np.maximum(0.0, 1.0 - a / np.maximum(mag, 1e-300))

    def soft(w: NDArrayComplex, a: float) -> NDArrayComplex:
        return _soft(w.real, a) + 1j * _soft(w.imag, a)

    x = _project_both(V0, half_budget, half_U)
    x_bar = x.copy()
    y1 = np.zeros_like(x)
    y2 = np.zeros_like(x)
    for _ in range(max_iter):
        y1_old, y2_old = y1, y2
        w1 = y1 + step * c * x_bar
        w2 = y2 + step * x_bar
        y1 = w1 - step * (target + prox_fit(w1 / step - target, 1.0 / step))
        y2 = w2 - step * soft(w2 / step, lam / step)
        x_new = _project_both(x - step * (np.conj(c) * y1 + y2), half_budget, half_U)
        x_bar = 2.0 * x_new - x
        # the primal can sit still on the boundary while the duals move
        change = max(float(np.max(np.abs(x_new - x))), float(np.max(np.abs(y1 - y1_old))),
                     float(np.max(np.abs(y2 - y2_old))))
        x = x_new
        if change < tol:
            break
    return x


def averaging_error_bound(
    gamma: ArrayLike,
    inp: PeriodicInput,
    Z: ArrayLike,
    rho_st: ArrayLike,
    D: float,
    m: float,
    M: float,
    omega: float | None = None,
    n_phases: int = 128,
    Zw: ArrayLike | None = None,
) -> float:
    """Upper bound on ``limsup KL(rho_st || rho_FF rotated)`` from the averaging error.

    ``sup_s int (Gamma - Z(theta + omega s) u(s))^2 rho_st dtheta / ((m/M)^2 D^2)``
    with ``s`` sampled at ``n_phases`` points of one period.
    """
    if m <= 0:
        raise ValueError("lower density bound m must be positive")
    if M < m:
        raise ValueError("M must be >= m")
    if Zw is not None and not np.allclose(Zw, 1.0, atol=1e-12):
        raise ValueError("the averaging bound assumes Zw == 1")
    if n_phases < 64:
        raise ValueError("sample the period at >= 64 phases")
    omega = inp.omega if omega is None else omega
    gamma = np.asarray(gamma, dtype=np.float64)
    rho_st = np.asarray(rho_st, dtype=np.float64)
    period = TWO_PI / abs(omega)
    worst = 0.0
    for s in period * np.arange(n_phases) / n_phases:
        A = circle.shift(Z, -omega * s) * inp(s)
        worst = max(worst, circle.integrate((gamma - A) ** 2 * rho_st))
    return worst / ((m / M) ** 2 * D * D)


def stationary_l2_objective(inp: PeriodicInput, z: FourierSeries, B: float, rho_f0: ArrayLike) -> float:
    """``||rho_st - rho_f0||_2^2`` (the nonconvex baseline objective, evaluation only)."""
    rho_f0 = np.asarray(rho_f0, dtype=np.float64)
    rho_st = gibbs_stationary(gamma_of(inp, z, rho_f0.size), B)
    return metrics.l2(rho_st, rho_f0) ** 2


def save_design(path: str | Path, inp: PeriodicInput, report: DesignReport) -> None:
    payload = inp.to_dict()
    payload["bounds"] = {
        "l1_bound": report.l1_bound,
        "l2_value": report.l2_value,
        "kl_bound": report.kl_bound,
        "fisher_bound": report.fisher_bound,
    }
    payload["objective"] = report.objective
    payload["report"] = report.to_dict()
    Path(path).write_text(json.dumps(payload, indent=1, default=float))


def load_design(path: str | Path) -> PeriodicInput:
    return PeriodicInput.from_dict(json.loads(Path(path).read_text()))
