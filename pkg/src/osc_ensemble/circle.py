"""Function algebra on the unit circle.

Real functions on S^1 are stored as samples on the uniform periodic grid
``theta_j = 2*pi*j/n`` (no duplicated endpoint) and passed around as plain
1-D float arrays. Spectral operations round-trip through the discrete
Fourier transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

FloatArray = NDArray[np.float64]

TWO_PI = 2.0 * np.pi
DEFAULT_N = 256
MIN_N = 8

# tolerances used when validating densities
NEG_TOL = 1e-10
MASS_TOL = 1e-8


def grid(n: int = DEFAULT_N) -> FloatArray:
    """Uniform periodic grid on [0, 2*pi) with ``n`` points."""
    if n < MIN_N:
        raise ValueError(f"grid size must be >= {MIN_N}, got {n}")
    return TWO_PI * np.arange(n) / n


def as_grid_function(f: ArrayLike) -> FloatArray:
    """Validate samples of a real periodic function and return them as an array."""
    values = np.asarray(f, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("grid function must be one-dimensional")
    if values.size < MIN_N:
        raise ValueError(f"grid size must be >= {MIN_N}, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise ValueError("grid function has non-finite values")
    return values


def as_density(f: ArrayLike, renormalize: bool = False) -> FloatArray:
    """Validate a probability density on the grid.

    Values slightly below zero (down to ``-NEG_TOL``) are clipped. With
    ``renormalize=False`` the rectangle-rule mass must already be 1 within
    ``MASS_TOL``; the result is always rescaled to unit mass exactly.
    """
    values = as_grid_function(f)
    if values.min() < -NEG_TOL:
        raise ValueError(f"density has negative values (min={values.min():.3e})")
    values = np.clip(values, 0.0, None)
    mass = integrate(values)
    if mass <= 0.0:
        raise ValueError("density has zero mass")
    if not renormalize and abs(mass - 1.0) > MASS_TOL:
        raise ValueError(f"density integrates to {mass!r}, not 1")
    return values / mass


def uniform(n: int = DEFAULT_N) -> FloatArray:
    return np.full(n, 1.0 / TWO_PI)


def integrate(f: ArrayLike) -> float:
    """Rectangle rule over [0, 2*pi); spectrally accurate for smooth periodic f."""
    f = np.asarray(f)
    return float(TWO_PI / f.shape[-1] * np.sum(f, axis=-1))


@dataclass(frozen=True)
class FourierSeries:
    """Truncated complex Fourier coefficients ``c_k`` for ``k = -K..K``.

    ``coeffs[k + K]`` holds ``c_k``; use ``series[k]`` for direct access.
    """

    coeffs: NDArray[np.complex128]

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim != 1 or c.size % 2 != 1:
            raise ValueError("coefficient array must have odd length 2K+1")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self) -> int:
        return (self.coeffs.size - 1) // 2

    @property
    def modes(self) -> NDArray[np.int64]:
        return np.arange(-self.K, self.K + 1)

    def __getitem__(self, k: int) -> complex:
        if abs(k) > self.K:
            return 0j
        return complex(self.coeffs[k + self.K])

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.coeffs, np.conj(self.coeffs[::-1]), atol=tol, rtol=0))

    def truncate(self, K: int) -> FourierSeries:
        if K >= self.K:
            return self.pad(K)
        return FourierSeries(self.coeffs[self.K - K : self.K + K + 1])

    def pad(self, K: int) -> FourierSeries:
        extra = K - self.K
        if extra < 0:
            return self.truncate(K)
        return FourierSeries(np.pad(self.coeffs, extra))

    @classmethod
    def from_dict(cls, mapping: dict[int, complex], K: int | None = None) -> FourierSeries:
        if K is None:
            K = max((abs(k) for k in mapping), default=0)
        c = np.zeros(2 * K + 1, dtype=np.complex128)
        for k, v in mapping.items():
            c[k + K] = v
        return cls(c)


def analyze(f: ArrayLike, K: int) -> FourierSeries:
    """Coefficients ``c_k = (1/2pi) int f(theta) exp(-i k theta) dtheta`` for ``|k| <= K``."""
    f = as_grid_function(f)
    n = f.size
    if K >= n / 2:
        raise ValueError(f"order K={K} aliases on a grid of size {n} (need K < n/2)")
    fk = np.fft.fft(f) / n
    idx = np.arange(-K, K + 1) % n
    return FourierSeries(fk[idx])


def synthesize(c: FourierSeries, n: int = DEFAULT_N) -> FloatArray:
    """Evaluate ``sum_k c_k exp(i k theta)`` on the n-point grid (real part)."""
    if c.K >= n / 2:
        raise ValueError(f"order K={c.K} aliases on a grid of size {n} (need K < n/2)")
    full = np.zeros(n, dtype=np.complex128)
    full[c.modes % n] = c.coeffs
    return np.real(np.fft.ifft(full) * n)


def wavenumbers(n: int) -> FloatArray:
    """Integer wavenumbers in FFT order, with the Nyquist mode zeroed.

    Zeroing the unpaired Nyquist mode keeps first derivatives of real
    functions real and makes ``differentiate`` antisymmetric.
    """
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return k


def differentiate(f: ArrayLike) -> FloatArray:
    """Spectral derivative d/dtheta."""
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[-1]
    return np.fft.irfft(1j * np.fft.rfftfreq(n, d=1.0 / n) * _nyquist_mask(n) * np.fft.rfft(f), n=n)


def _nyquist_mask(n: int) -> FloatArray:
    mask = np.ones(n // 2 + 1)
    if n % 2 == 0:
        mask[-1] = 0.0
    return mask


def antiderivative(f: ArrayLike) -> FloatArray:
    """Spectral antiderivative ``F(theta) = int_0^theta f`` of a zero-mean function."""
    f = np.asarray(f, dtype=np.float64)
    n = f.size
    fk = np.fft.rfft(f)
    k = np.fft.rfftfreq(n, d=1.0 / n)
    Fk = np.zeros_like(fk)
    Fk[1:] = fk[1:] / (1j * k[1:])
    if n % 2 == 0:
        Fk[-1] = 0.0
    F = np.fft.irfft(Fk, n=n)
    return F - F[0]


def shift(f: ArrayLike, phi: float) -> FloatArray:
    """Return ``theta -> f(theta - phi)`` by exact spectral translation."""
    f = np.asarray(f, dtype=np.float64)
    n = f.size
    k = np.fft.rfftfreq(n, d=1.0 / n)
    fk = np.fft.rfft(f) * np.exp(-1j * k * phi)
    if n % 2 == 0:
        # the Nyquist mode cannot be translated exactly; project it out
        fk[-1] = fk[-1].real * np.cos(k[-1] * phi)
    return np.fft.irfft(fk, n=n)


def evaluate(f: ArrayLike, theta: ArrayLike) -> FloatArray:
    """Trigonometric interpolation of grid samples at arbitrary phases."""
    f = np.asarray(f, dtype=np.float64)
    n = f.size
    c = analyze(f, (n - 1) // 2)
    th = np.asarray(theta, dtype=np.float64)
    return np.real(np.exp(1j * np.multiply.outer(th, c.modes)) @ c.coeffs)


def upsample(f: ArrayLike, factor: int) -> FloatArray:
    """Fourier zero-padding onto a grid ``factor`` times finer."""
    f = np.asarray(f, dtype=np.float64)
    n = f.size
    m = n * factor
    fk = np.fft.rfft(f)
    if n % 2 == 0:
        fk[-1] *= 0.5
    out = np.zeros(m // 2 + 1, dtype=np.complex128)
    out[: fk.size] = fk
    return np.fft.irfft(out, n=m) * factor


def derivative_matrix(n: int) -> FloatArray:
    """Dense matrix of the spectral first derivative on the n-point grid."""
    return np.stack([differentiate(e) for e in np.eye(n)], axis=1)


def wrapped_cauchy(mu: float, gamma: float, harmonic: int = 1, n: int = DEFAULT_N) -> FloatArray:
    """Wrapped Cauchy density ``theta -> w(m*theta, mu, gamma)``.

    ``w(x, mu, gamma) = sinh(gamma) / (2*pi*(cosh(gamma) - cos(x - mu)))``.
    For integer ``m >= 1`` the composition already has unit mass; the result
    is renormalized on the grid anyway.
    """
    if gamma <= 0:
        raise ValueError("scale parameter gamma must be positive")
    if harmonic < 1:
        raise ValueError("harmonic must be a positive integer")
    theta = grid(n)
    vals = np.sinh(gamma) / (TWO_PI * (np.cosh(gamma) - np.cos(harmonic * theta - mu)))
    return as_density(vals, renormalize=True)


def von_mises(mu: float, kappa: float, n: int = DEFAULT_N) -> FloatArray:
    """Von Mises density normalized on the grid (used in tests and examples)."""
    theta = grid(n)
    return as_density(np.exp(kappa * (np.cos(theta - mu) - 1.0)), renormalize=True)
