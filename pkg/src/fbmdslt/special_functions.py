"""Combinatorial and analytic primitives for the chaos-series machinery.

Double and rising factorials, the Gauss hypergeometric series with its Euler
transformation, the terminating reduction coefficients for half-integer
parameter pairs, probabilists' Hermite polynomials, and derivatives of the
centred Gaussian density evaluated both in closed (Hermite) form and through
the Fourier representation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import mpmath
import numpy as np

__all__ = [
    "DerivOrder",
    "GaussianDensity",
    "NonConvergenceWarning",
    "double_factorial",
    "rising_factorial",
    "falling_factorial",
    "gauss_2f1",
    "coeff_c",
    "coeff_d",
    "hermite_prob",
    "gaussian_density",
    "gaussian_density_deriv",
    "gaussian_density_deriv_fourier",
]

SERIES_TERM_CAP = 10_000
SERIES_TAIL_TOL = 1e-14
EULER_THRESHOLD = 0.9
FOURIER_ORDER_CAP = 12

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class NonConvergenceWarning(UserWarning):
    """A series or quadrature hit its evaluation cap short of tolerance."""


@dataclass(frozen=True)
class DerivOrder:
    """Order of the local-time derivative.

    Parity drives every chaos formula: odd orders only populate odd chaos
    levels, even orders only even ones.  k = 0 is admitted as the plain
    (underived) local-time test mode used by the Monte Carlo sanity checks.
    """

    k: int

    def __post_init__(self):
        if not isinstance(self.k, int) or self.k < 0:
            raise ValueError(f"derivative order must be an integer >= 0, got {self.k}")

    @property
    def parity(self) -> str:
        return "odd" if self.k % 2 else "even"

    @property
    def is_odd(self) -> bool:
        return self.k % 2 == 1


@dataclass(frozen=True)
class GaussianDensity:
    """Centred Gaussian mollifier with variance ``eps``."""

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"mollifier variance must be positive, got {self.eps}")

    def __call__(self, x):
        return gaussian_density(self.eps, x)

    def deriv(self, k: int, x):
        return gaussian_density_deriv(k, self.eps, x)


def double_factorial(m: int) -> int:
    """m!! = m (m-2) (m-4) ... 1 as an exact integer.

    (-1)!! = 1 and 0!! = 1 by the empty-product convention.  Positive even
    arguments are rejected: only odd products arise in the chaos constants.
    """
    if not isinstance(m, int):
        raise TypeError(f"double_factorial expects an integer, got {type(m).__name__}")
    if m < -1:
        raise ValueError(f"double_factorial undefined for m = {m}")
    if m in (-1, 0):
        return 1
    if m % 2 == 0:
        raise ValueError(f"even argument {m} rejected; only odd products arise here")
    return math.prod(range(m, 0, -2))


def rising_factorial(a: float, d: int) -> float:
    """a^(rising d) = a (a+1) ... (a+d-1), with the empty product equal to 1."""
    if d < 0:
        raise ValueError("rising_factorial needs d >= 0")
    out = 1.0
    for j in range(d):
        out *= a + j
    return out


def falling_factorial(a: float, d: int) -> float:
    """a (a-1) ... (a-d+1); equals a^(rising d) with reversed steps."""
    return rising_factorial(a - d + 1, d)


def _log_double_factorial_odd(m: int) -> float:
    # (2j-1)!! = (2j)! / (2^j j!) evaluated in log space; m must be odd or -1/0.
    if m in (-1, 0):
        return 0.0
    j = (m + 1) // 2
    return math.lgamma(2 * j + 1) - j * math.log(2.0) - math.lgamma(j + 1)


def _2f1_series(a: float, b: float, c: float, z: float) -> tuple[float, bool]:
    total = 1.0
    term = 1.0
    settled = 0
    for d in range(SERIES_TERM_CAP):
        term *= (a + d) * (b + d) / ((c + d) * (d + 1.0)) * z
        if term == 0.0:
            return total, True
        total += term
        if abs(term) <= SERIES_TAIL_TOL * abs(total):
            settled += 1
            if settled >= 2:
                return total, True
        else:
            settled = 0
    return total, False


def gauss_2f1(a: float, b: float, c: float, z: float, *, method: str = "auto") -> float:
    """Gauss hypergeometric function 2F1(a, b; c; z) for real |z| < 1.

    Summed directly from its defining series; for |z| > 0.9 the Euler
    transformation ``(1-z)^(c-a-b) 2F1(c-a, c-b; c; z)`` is applied first,
    which terminates whenever c-a (or c-b) is a non-positive integer, as it
    is for every half-integer pair used by the variance closed forms.

    ``method`` is one of "auto", "series", "euler".
    """
    if not abs(z) < 1.0:
        raise ValueError(f"gauss_2f1 requires |z| < 1, got z = {z}")
    if c <= 0 and float(c).is_integer():
        raise ValueError(f"gauss_2f1 pole: c = {c} is a non-positive integer")
    if method not in ("auto", "series", "euler"):
        raise ValueError(f"unknown method {method!r}")
    if z == 0.0:
        return 1.0

    use_euler = method == "euler" or (method == "auto" and abs(z) > EULER_THRESHOLD)
    if use_euler:
        value, ok = _2f1_series(c - a, c - b, c, z)
        value *= (1.0 - z) ** (c - a - b)
    else:
        value, ok = _2f1_series(a, b, c, z)
    if not ok:
        warnings.warn(
            f"2F1({a},{b};{c};{z}) did not settle within {SERIES_TERM_CAP} terms; "
            f"returning partial value {value!r}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return value


def coeff_c(d: int, k_hat: int) -> float:
    """Coefficient of z^d in the terminating Euler-reduced form of
    2F1(k_hat + 1/2, k_hat + 1/2; 3/2; z).

    Equal to [(1-k_hat)^(rising d)]^2 / ((3/2)^(rising d) d!); vanishes for
    d >= k_hat, so values outside 0 <= d <= k_hat - 1 return 0.
    """
    if k_hat < 1:
        raise ValueError("k_hat must be >= 1")
    if d < 0 or d > k_hat - 1:
        return 0.0
    num = rising_factorial(1.0 - k_hat, d) ** 2
    return num / (rising_factorial(1.5, d) * math.factorial(d))


def coeff_d(d: int, k_prime: int) -> float:
    """Coefficient of z^d, d >= 1, in the terminating Euler-reduced form of
    2F1(k_prime + 1/2, k_prime + 1/2; 1/2; z).

    The reduction reads 2F1 = (1-z)^(-(4k'+1)/2) * (1 + sum_{d=1}^{k'} D_d z^d)
    with D_d = [k' (k'-1) ... (k'-d+1)]^2 / ((1/2)^(rising d) d!), a squared
    falling factorial, so the sum truncates at d = k'.  Arguments outside
    1 <= d <= k_prime return 0.
    """
    if k_prime < 1:
        raise ValueError("k_prime must be >= 1")
    if d < 1 or d > k_prime:
        return 0.0
    num = falling_factorial(float(k_prime), d) ** 2
    return num / (rising_factorial(0.5, d) * math.factorial(d))


def hermite_prob(n: int, x):
    """Probabilists' Hermite polynomial He_n(x) by the three-term recurrence.

    Accepts scalars or arrays; the recurrence is exact in sign so that
    He_n(-x) = (-1)^n He_n(x) holds bit-for-bit.
    """
    if n < 0:
        raise ValueError("Hermite order must be >= 0")
    scalar = np.isscalar(x)
    xv = np.asarray(x, dtype=float)
    h_prev = np.ones_like(xv)
    if n == 0:
        return float(h_prev) if scalar else h_prev
    h = xv.copy()
    for m in range(1, n):
        h, h_prev = xv * h - m * h_prev, h
    return float(h) if scalar else h


def gaussian_density(eps: float, x):
    """Centred Gaussian density with variance eps."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    xv = np.asarray(x, dtype=float)
    out = np.exp(-(xv * xv) / (2.0 * eps)) / math.sqrt(2.0 * math.pi * eps)
    return float(out) if np.isscalar(x) else out


def gaussian_density_deriv(k: int, eps: float, x):
    """k-th derivative of the variance-eps Gaussian density.

    Closed form (-1)^k eps^(-k/2) He_k(x / sqrt(eps)) f_eps(x), preferred over
    the Fourier route for stability and speed.
    """
    if k < 0:
        raise ValueError("derivative order must be >= 0")
    if not eps > 0:
        raise ValueError("eps must be positive")
    sqeps = math.sqrt(eps)
    sign = -1.0 if k % 2 else 1.0
    scale = sign * eps ** (-k / 2.0)
    xv = np.asarray(x, dtype=float)
    out = scale * hermite_prob(k, xv / sqeps) * np.exp(-(xv * xv) / (2.0 * eps)) / math.sqrt(2.0 * math.pi * eps)
    return float(out) if np.isscalar(x) else out


def gaussian_density_deriv_fourier(
    k: int,
    eps: float,
    x: float,
    *,
    rel_tol: float = 1e-12,
    imag_tol: float = 1e-12,
) -> float:
    """k-th Gaussian density derivative via its Fourier integral.

    Evaluates (i^k / 2 pi) * int p^k e^{ipx} e^{-eps p^2/2} dp in extended
    precision.  Retained purely as an independent cross-check oracle for
    gaussian_density_deriv; the imaginary part must vanish to ``imag_tol``.
    """
    if k < 0:
        raise ValueError("derivative order must be >= 0")
    if k > FOURIER_ORDER_CAP:
        raise ValueError(f"Fourier route capped at k <= {FOURIER_ORDER_CAP}")
    if not eps > 0:
        raise ValueError("eps must be positive")

    with mpmath.workdps(40):
        eps_m = mpmath.mpf(eps)
        x_m = mpmath.mpf(x)

        def integrand(p):
            return p**k * mpmath.expj(p * x_m) * mpmath.e ** (-eps_m * p * p / 2)

        val, err = mpmath.quad(integrand, [-mpmath.inf, 0, mpmath.inf], error=True)
        val = val * mpmath.mpc(0, 1) ** k / (2 * mpmath.pi)
        scale = max(abs(val), mpmath.mpf(1))
        if err > rel_tol * scale:
            warnings.warn(
                f"Fourier quadrature error estimate {float(err):.3e} exceeds "
                f"tolerance at k={k}, eps={eps}, x={x}",
                NonConvergenceWarning,
                stacklevel=2,
            )
        if abs(mpmath.im(val)) > imag_tol * scale:
            raise ArithmeticError(
                f"imaginary part {complex(val).imag:.3e} of the Fourier integral "
                "failed to vanish"
            )
        return float(mpmath.re(val))
