"""Covariance geometry of increment pairs over the two-interval simplex.

The triple (lambda, rho, mu) of variances and covariance of two fBm
increments, their correlation gamma, the three-region partition of the
pair domain, local-nondeterminism lower-bound expressions, and 1-D / 2-D
integral representations of mu used as independent cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IntervalPair",
    "CovTriple",
    "RegionTag",
    "cov_triple",
    "classify_region",
    "lnd_bound_expression",
    "mu_integral_rep_r2",
    "mu_integral_rep_r3",
    "mu_closed_form",
    "region_cov_arrays",
]


@dataclass(frozen=True)
class IntervalPair:
    """Two sub-intervals [r, s] and [r_p, s_p] of [0, t]."""

    r: float
    s: float
    r_p: float
    s_p: float
    t: float

    def __post_init__(self):
        if not (0.0 <= self.r <= self.s <= self.t):
            raise ValueError(f"first interval violates 0 <= r <= s <= t: {self}")
        if not (0.0 <= self.r_p <= self.s_p <= self.t):
            raise ValueError(f"second interval violates 0 <= r' <= s' <= t: {self}")

    def swapped(self) -> "IntervalPair":
        return IntervalPair(self.r_p, self.s_p, self.r, self.s, self.t)


@dataclass(frozen=True)
class CovTriple:
    """Variances of the two increments, their covariance, and correlation.

    ``gamma`` is None when either increment is degenerate (lam * rho == 0);
    an explicit undefined state, never a NaN.
    """

    lam: float
    rho: float
    mu: float
    gamma: float | None

    @property
    def gamma_defined(self) -> bool:
        return self.gamma is not None


@dataclass(frozen=True)
class RegionTag:
    """Region of the pair partition plus its gap variables (a, b, c).

    R1: r < r' < s < s' (staggered overlap), R2: r < r' < s' < s (nested),
    R3: r < s < r' < s' (disjoint).  Any tie is tagged "boundary" and is
    excluded from strict-region arguments.  ``swapped`` records whether the
    intervals were exchanged to reach the canonical order r <= r'.
    """

    region: str
    a: float
    b: float
    c: float
    swapped: bool = False

    def __post_init__(self):
        if self.region not in ("R1", "R2", "R3", "boundary"):
            raise ValueError(f"unknown region {self.region!r}")
        if self.region != "boundary" and min(self.a, self.b, self.c) < 0:
            raise ValueError("gap variables must be non-negative")


def mu_closed_form(h: float, r, s, r_p, s_p):
    """Covariance of the increments over [r, s] and [r_p, s_p] (vectorized)."""
    two_h = 2.0 * h
    return 0.5 * (
        np.abs(s - r_p) ** two_h
        + np.abs(r - s_p) ** two_h
        - np.abs(s - s_p) ** two_h
        - np.abs(r - r_p) ** two_h
    )


def cov_triple(h, p: IntervalPair) -> CovTriple:
    """Closed-form (lambda, rho, mu) and gamma for one interval pair.

    A degenerate interval (s == r) gives lam == 0 and an undefined gamma;
    this is returned, not raised, so integrands can treat the diagonal
    deliberately.
    """
    hv = float(getattr(h, "h", h))
    two_h = 2.0 * hv
    lam = (p.s - p.r) ** two_h
    rho = (p.s_p - p.r_p) ** two_h
    mu = float(mu_closed_form(hv, p.r, p.s, p.r_p, p.s_p))
    lr = lam * rho
    gamma = mu / math.sqrt(lr) if lr > 0.0 else None
    return CovTriple(lam=lam, rho=rho, mu=mu, gamma=gamma)


def classify_region(p: IntervalPair) -> RegionTag:
    """Assign the pair to R1/R2/R3 with its gap variables.

    The pair is first put in canonical order r <= r' (mu and lam*rho are
    symmetric under the swap).  Exact ties between any of the four ordering
    comparisons are tagged "boundary".
    """
    swapped = False
    q = p
    if q.r_p < q.r or (q.r_p == q.r and q.s_p < q.s):
        q = p.swapped()
        swapped = True
    r, s, rp, sp = q.r, q.s, q.r_p, q.s_p

    def boundary():
        return RegionTag("boundary", 0.0, 0.0, 0.0, swapped)

    if r == s or rp == sp or r == rp:
        return boundary()
    # now r < rp and both intervals are non-degenerate
    if rp > s:
        return RegionTag("R3", s - r, rp - s, sp - rp, swapped)
    if rp == s:
        return boundary()
    # overlap: r < rp < s
    if sp > s:
        return RegionTag("R1", rp - r, s - rp, sp - s, swapped)
    if sp == s:
        return boundary()
    # nested: r < rp < sp < s
    return RegionTag("R2", rp - r, sp - rp, s - sp, swapped)


def lnd_bound_expression(h, tag: RegionTag) -> float:
    """Local-nondeterminism lower-bound bracket for lam*rho - mu^2.

    Returns the region-specific expression without its unspecified positive
    constant: R1 -> (a+b)^{2H} c^{2H} + a^{2H} (b+c)^{2H},
    R2 -> b^{2H} (a^{2H} + c^{2H}), R3 -> a^{2H} c^{2H}.
    """
    hv = float(getattr(h, "h", h))
    two_h = 2.0 * hv
    a, b, c = tag.a, tag.b, tag.c
    if tag.region == "R1":
        return (a + b) ** two_h * c**two_h + a**two_h * (b + c) ** two_h
    if tag.region == "R2":
        return b**two_h * (a**two_h + c**two_h)
    if tag.region == "R3":
        return a**two_h * c**two_h
    raise ValueError("boundary tag has no bound expression")


def _graded_01(n_panels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    # composite Gauss-Legendre on (0, 1], panels shrinking geometrically to 0
    gx, gw = np.polynomial.legendre.leggauss(order)
    gx = 0.5 * (gx + 1.0)
    gw = 0.5 * gw
    edges = np.concatenate(([0.0], 2.0 ** np.arange(-n_panels, 1, dtype=float)))
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        xs.append(lo + (hi - lo) * gx)
        ws.append((hi - lo) * gw)
    return np.concatenate(xs), np.concatenate(ws)


def mu_integral_rep_r2(h, a: float, b: float, c: float, *, n_panels: int = 30, order: int = 10) -> float:
    """mu on a nested (R2) configuration via its 1-D integral representation.

    mu = H b * int_0^1 ((a + b u)^{2H-1} + (c + b u)^{2H-1}) du, evaluated with
    panels graded toward u = 0 where the integrand may carry an integrable
    endpoint power when a or c vanishes and H < 1/2.
    """
    hv = float(getattr(h, "h", h))
    if min(a, b, c) < 0:
        raise ValueError("gaps must be non-negative")
    if b == 0.0:
        return 0.0
    u, w = _graded_01(n_panels, order)
    vals = (a + b * u) ** (2.0 * hv - 1.0) + (c + b * u) ** (2.0 * hv - 1.0)
    return hv * b * float(np.dot(w, vals))


def mu_integral_rep_r3(h, a: float, b: float, c: float, *, n_panels: int = 24, order: int = 8) -> float:
    """mu on a disjoint (R3) configuration via its 2-D integral representation.

    mu = H (2H-1) a c * int_0^1 int_0^1 (b + a u + c v)^{2H-2} du dv with both
    axes graded toward 0 to absorb the corner power when b = 0.
    """
    hv = float(getattr(h, "h", h))
    if min(a, b, c) < 0:
        raise ValueError("gaps must be non-negative")
    if a == 0.0 or c == 0.0:
        return 0.0
    u, wu = _graded_01(n_panels, order)
    base = b + a * u[:, None] + c * u[None, :]
    vals = base ** (2.0 * hv - 2.0)
    inner = wu @ vals @ wu
    return hv * (2.0 * hv - 1.0) * a * c * float(inner)


def region_cov_arrays(h, region: int | str, a, b, c):
    """Vectorized (lam, rho, mu) on one partition region from gap variables.

    ``region`` is 1, 2 or 3 (or "R1"/"R2"/"R3").  Gap meanings follow the
    per-region conventions of :func:`classify_region`.
    """
    hv = float(getattr(h, "h", h))
    two_h = 2.0 * hv
    if isinstance(region, str):
        region = int(region[1])
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if region == 1:
        lam = (a + b) ** two_h
        rho = (b + c) ** two_h
        mu = 0.5 * ((a + b + c) ** two_h + b**two_h - a**two_h - c**two_h)
    elif region == 2:
        lam = (a + b + c) ** two_h
        rho = b**two_h
        mu = 0.5 * ((a + b) ** two_h - a**two_h + (b + c) ** two_h - c**two_h)
    elif region == 3:
        lam = a**two_h
        rho = c**two_h
        mu = 0.5 * ((a + b + c) ** two_h + b**two_h - (a + b) ** two_h - (b + c) ** two_h)
    else:
        raise ValueError(f"region must be 1, 2 or 3, got {region}")
    return lam, rho, mu
