"""Chaos-series moments of the mollified local-time derivatives.

Squared norms of the chaos coefficients, the exact mean, the variance
series at positive mollifier width, the hypergeometric closed form of the
variance integrand at width zero, the (n+1)-weighted first-derivative
regularity series, and the exact rational convergence thresholds.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .fbm import as_hurst
from .quadrature import QuadConfig, QuadratureResult, stream_region_chunks
from .special_functions import (
    DerivOrder,
    NonConvergenceWarning,
    coeff_c,
    coeff_d,
    gauss_2f1,
    _log_double_factorial_odd,
)
from . import quadrature as _quad

__all__ = [
    "ChaosTermSpec",
    "SeriesResult",
    "DivergenceError",
    "chaos_coeff_norm_sq",
    "mean_alpha",
    "variance_series",
    "variance_integrand_closed_form",
    "d12_series",
    "threshold",
    "THRESHOLD_KINDS",
]

THRESHOLD_KINDS = ("existence_raw", "existence_renormalized", "d12")

CHAOS_LEVELS = 11
CHAOS_ORDER = 6
CHAOS_GEXP = 2.0
SERIES_TOL = 1e-6
DECAY_FIT_MARGIN = 0.1


class DivergenceError(ArithmeticError):
    """The requested quantity diverges for this Hurst / order combination."""


@dataclass(frozen=True)
class ChaosTermSpec:
    """One chaos level of one derivative order at one mollifier width."""

    n: int
    k: DerivOrder | int
    eps: float
    t: float
    h: float

    def __post_init__(self):
        k = self.k if isinstance(self.k, DerivOrder) else DerivOrder(int(self.k))
        object.__setattr__(self, "k", k)
        if self.n < 0:
            raise ValueError("chaos level must be >= 0")
        if self.eps < 0:
            raise ValueError("mollifier width must be >= 0")
        if self.t <= 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "h", as_hurst(self.h).h)

    @property
    def parity_ok(self) -> bool:
        return (self.n + self.k.k) % 2 == 0


@dataclass(frozen=True)
class SeriesResult:
    """Partial sums, per-level terms and tail diagnostics of a chaos series."""

    params: dict
    terms: tuple[tuple[int, float], ...]
    term_errors: tuple[float, ...]
    partial_sums: tuple[float, ...]
    tail_estimate: float
    converged: bool
    n_max: int
    verdict: str

    @property
    def value(self) -> float:
        return self.partial_sums[-1] if self.partial_sums else 0.0

    def to_json_dict(self) -> dict:
        return {
            "params": dict(self.params),
            "terms": [
                {"n": n, "value": v, "quad_error": e}
                for (n, v), e in zip(self.terms, self.term_errors)
            ],
            "partial_sums": list(self.partial_sums),
            "tail_estimate": self.tail_estimate,
            "converged": self.converged,
            "verdict": self.verdict,
            "n_max": self.n_max,
        }


def threshold(k, kind: str) -> Fraction:
    """Exact rational Hurst threshold for the given convergence notion.

    existence_raw: 2/(2k+1) for odd k, 1/(k+1) for even k.
    existence_renormalized (even k only): 2/(2k+1).
    d12: 2/(2k+3) for either parity.
    """
    kk = k.k if isinstance(k, DerivOrder) else int(k)
    if kk < 1:
        raise ValueError("threshold needs k >= 1")
    if kind not in THRESHOLD_KINDS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {THRESHOLD_KINDS}")
    if kind == "existence_raw":
        return Fraction(2, 2 * kk + 1) if kk % 2 else Fraction(1, kk + 1)
    if kind == "existence_renormalized":
        if kk % 2:
            raise ValueError("renormalization applies to even orders only")
        return Fraction(2, 2 * kk + 1)
    return Fraction(2, 2 * kk + 3)


def _log_chaos_const(n: int, k: int) -> float:
    # [(n+k-1)!!]^2 / (n! 2 pi) in log space; n+k even so n+k-1 is odd
    return (
        2.0 * _log_double_factorial_odd(n + k - 1)
        - math.lgamma(n + 1)
        - math.log(2.0 * math.pi)
    )


def _term_finite_at_zero(h: float, k: int, n: int) -> bool:
    # gap exponent of the width-zero integrand near a lone vanishing interval
    return h * (k + 1) - n * (1.0 - h) < 1.0


class _TermEngine:
    """Cached grid data turning chaos-norm integrals into moment sums.

    For each quadrature node the reduced correlation gamma_eps and the
    weight w * ((lam+eps)(rho+eps))^{-(k+1)/2} are precomputed; the n-th
    chaos integral is then sum(V * gamma_eps^n), evaluated through powers of
    A = gamma_eps^2 with the nodes sorted so large powers can skip the bulk.
    """

    def __init__(self, h: float, t: float, k: int, eps: float, levels: int, order: int):
        a_parts, ve_parts, vo_parts = [], [], []
        for lam, rho, mu, wt in stream_region_chunks(h, t, levels, order, CHAOS_GEXP):
            d = (lam + eps) * (rho + eps)
            base = wt * d ** (-(k + 1) / 2.0)
            a = (mu * mu) / d
            a_parts.append(a)
            ve_parts.append(base)
            vo_parts.append(base * mu / np.sqrt(d))
        a = np.concatenate(a_parts)
        a = np.clip(a, 0.0, 1.0 - 1e-16)
        v_even = np.concatenate(ve_parts)
        v_odd = np.concatenate(vo_parts)
        idx = np.argsort(a)[::-1]
        self.a = a[idx]
        self.v_even = v_even[idx]
        self.v_odd = v_odd[idx]
        self.n_nodes = int(a.size)

    def gamma_moment(self, n: int) -> float:
        """Integral of gamma_eps^n * ((lam+eps)(rho+eps))^{-(k+1)/2}."""
        if n % 2 == 0:
            v, power = self.v_even, n // 2
        else:
            v, power = self.v_odd, (n - 1) // 2
        if power == 0:
            return float(v.sum())
        thr = math.exp(-46.0 / power)
        ix = int(np.searchsorted(-self.a, -thr))
        if ix == 0:
            return 0.0
        return float(np.dot(v[:ix], self.a[:ix] ** power))


def _engines(h: float, t: float, k: int, eps: float, cfg: QuadConfig | None):
    levels = cfg.levels if cfg is not None else CHAOS_LEVELS
    order = cfg.order if cfg is not None else CHAOS_ORDER
    base = _TermEngine(h, t, k, eps, levels, order)
    fine = _TermEngine(h, t, k, eps, levels + 2, order + 1)
    return base, fine


def _term_value(engines, n: int, k: int) -> tuple[float, float]:
    const = math.exp(_log_chaos_const(n, k))
    v0 = const * engines[0].gamma_moment(n)
    v1 = const * engines[1].gamma_moment(n)
    return v1, abs(v1 - v0)


def chaos_coeff_norm_sq(spec: ChaosTermSpec, quad_cfg: QuadConfig | None = None) -> QuadratureResult:
    """Second moment of the n-th chaos term, n! times the squared kernel norm.

    Equals [(n+k-1)!!]^2/(n! 2 pi) times the pair-domain integral of
    mu^n / ((lam+eps)(rho+eps))^{(k+n+1)/2}; identically zero when n + k is
    odd.  At eps = 0 the term must be individually integrable, else a
    DivergenceError is raised rather than a value guessed.
    """
    if not spec.parity_ok:
        return QuadratureResult(value=0.0, error_estimate=0.0, n_evals=0)
    k = spec.k.k
    if spec.eps == 0.0 and not _term_finite_at_zero(spec.h, k, spec.n):
        raise DivergenceError(
            f"chaos term n={spec.n}, k={k} diverges at eps=0 for H={spec.h}"
        )
    engines = _engines(spec.h, spec.t, k, spec.eps, quad_cfg)
    value, err = _term_value(engines, spec.n, k)
    return QuadratureResult(
        value=value, error_estimate=err, n_evals=engines[0].n_nodes + engines[1].n_nodes
    )


# ---------------------------------------------------------------------------
# mean


def _mean_integral(h: float, t: float, eps: float, k: int) -> float:
    # int_0^t (t - tau) (tau^{2H} + eps)^{-(k+1)/2} dtau with the tau -> 0
    # power absorbed by an exponent-8 map plus geometric panels
    x, w = _quad.graded_rule_01(40, 12, 8.0)
    tau = t * x
    vals = (t - tau) * (tau ** (2.0 * h) + eps) ** (-(k + 1) / 2.0)
    return t * float(np.dot(w, vals))


def mean_alpha(h, t: float, eps: float, k) -> float:
    """Expectation of the order-k mollified local-time derivative.

    Zero for odd k by symmetry.  For even k the expectation reduces to a
    one-dimensional integral by stationarity of the increment law; at
    eps = 0 it exists only for H < 1/(k+1) and a DivergenceError is raised
    beyond that range.
    """
    hv = as_hurst(h).h
    kk = k.k if isinstance(k, DerivOrder) else int(k)
    if kk < 0:
        raise ValueError("order must be >= 0")
    if t <= 0:
        raise ValueError("horizon must be positive")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if kk % 2 == 1:
        return 0.0
    if eps == 0.0 and hv * (kk + 1) >= 1.0:
        raise DivergenceError(
            f"mean of order {kk} diverges at eps=0 for H={hv} >= 1/(k+1)"
        )
    from .special_functions import double_factorial

    sign = -1.0 if (kk // 2) % 2 else 1.0
    const = sign * double_factorial(kk - 1) / math.sqrt(2.0 * math.pi)
    return const * _mean_integral(hv, t, eps, kk)


# ---------------------------------------------------------------------------
# series


def _fit_term_decay(ns, values) -> float | None:
    pts = [(n, v) for n, v in zip(ns, values) if v > 0]
    if len(pts) < 4:
        return None
    tail = pts[-max(4, len(pts) // 3) :]
    ln = np.log([p[0] for p in tail])
    lv = np.log([p[1] for p in tail])
    return -float(np.polyfit(ln, lv, 1)[0])


def _tail_from_ratios(values: list[float]) -> float:
    pos = [v for v in values if v > 0]
    if len(pos) < 3:
        return math.inf
    ratios = [b / a for a, b in zip(pos[-3:-1], pos[-2:]) if a > 0]
    if not ratios:
        return math.inf
    r = float(np.median(ratios))
    if r >= 1.0:
        return math.inf
    return pos[-1] * r / (1.0 - r)


def _series_verdict(ns, weighted, converged, eps) -> str:
    if converged:
        return "convergent"
    psi = _fit_term_decay(ns, weighted)
    if psi is None:
        return "inconclusive"
    if psi > 1.0 + DECAY_FIT_MARGIN:
        return "convergent"
    if psi < 1.0 - DECAY_FIT_MARGIN:
        return "divergent"
    return "inconclusive"


def _run_series(
    h: float,
    t: float,
    eps: float,
    k: int,
    n_start: int,
    n_max: int,
    weight_fn,
    quad_cfg,
    tol: float,
    params: dict,
) -> SeriesResult:
    engines = _engines(h, t, k, eps, quad_cfg)
    ns: list[int] = []
    terms: list[float] = []
    errors: list[float] = []
    weighted: list[float] = []
    partial: list[float] = []
    total = 0.0
    tail = math.inf
    converged = False
    scale = None
    for n in range(n_start, n_max + 1, 2):
        value, err = _term_value(engines, n, k)
        wv = weight_fn(n) * value
        werr = weight_fn(n) * err
        if scale is None:
            scale = max(abs(wv), 1e-300)
        if wv < 0.0:
            if wv < -1e-8 * scale:
                raise RuntimeError(
                    f"chaos term n={n} came out significantly negative "
                    f"({wv:.3e}); quadrature resolution is insufficient"
                )
            wv = 0.0
        ns.append(n)
        terms.append(wv)
        errors.append(werr)
        weighted.append(wv)
        total += wv
        partial.append(total)
        if len(terms) >= 4:
            tail = _tail_from_ratios(weighted)
            if tail <= tol * total:
                converged = True
                break
    verdict = _series_verdict(ns, weighted, converged, eps)
    return SeriesResult(
        params=params,
        terms=tuple(zip(ns, terms)),
        term_errors=tuple(errors),
        partial_sums=tuple(partial),
        tail_estimate=tail,
        converged=converged,
        n_max=ns[-1] if ns else n_start,
        verdict=verdict,
    )


def variance_series(
    h,
    t: float,
    eps: float,
    k,
    n_max: int = 600,
    renormalized: bool = False,
    quad_cfg: QuadConfig | None = None,
    tol: float = SERIES_TOL,
) -> SeriesResult:
    """Chaos series of the second moment of the order-k derivative.

    At eps > 0 the sum over the parity class of k is the exact second
    moment; with ``renormalized`` the zeroth level (the squared mean, even k
    only) is dropped, which turns the sum into the variance proper.  For odd
    k the flag is a no-op since the zeroth level is absent.  At eps = 0 the
    Hurst parameter must lie below the corresponding existence threshold,
    else a DivergenceError is raised.
    """
    hv = as_hurst(h).h
    kk = k.k if isinstance(k, DerivOrder) else int(k)
    if kk < 1:
        raise ValueError("variance series needs k >= 1")
    odd = kk % 2 == 1
    n_start = 1 if odd else (2 if renormalized else 0)
    if eps == 0.0:
        kind = "existence_renormalized" if (renormalized and not odd) else "existence_raw"
        bound = float(threshold(kk, kind))
        if hv >= bound:
            raise DivergenceError(
                f"series at eps=0 diverges: H={hv} >= {bound:.6g} ({kind}, k={kk})"
            )
    params = {
        "h": hv,
        "t": t,
        "eps": eps,
        "k": kk,
        "renormalized": bool(renormalized),
        "weighted": False,
    }
    return _run_series(hv, t, eps, kk, n_start, n_max, lambda n: 1.0, quad_cfg, tol, params)


def d12_series(
    h,
    t: float,
    k,
    n_max: int = 20000,
    quad_cfg: QuadConfig | None = None,
    tol: float = SERIES_TOL,
) -> SeriesResult:
    """(n+1)-weighted chaos series governing first-order differentiability.

    Runs at eps = 0 on the parity class of k (starting at level 2 for even
    k, i.e. implicitly renormalized).  Terms decay polynomially here, so the
    verdict field carries the decay-fit classification even when the tail
    tolerance is not reached within n_max.
    """
    hv = as_hurst(h).h
    kk = k.k if isinstance(k, DerivOrder) else int(k)
    if kk < 1:
        raise ValueError("d12 series needs k >= 1")
    odd = kk % 2 == 1
    n_start = 1 if odd else 2
    if not _term_finite_at_zero(hv, kk, n_start):
        raise DivergenceError(
            f"individual chaos terms already diverge at eps=0 for H={hv}, k={kk}"
        )
    params = {"h": hv, "t": t, "eps": 0.0, "k": kk, "renormalized": not odd, "weighted": True}
    return _run_series(
        hv, t, 0.0, kk, n_start, n_max, lambda n: float(n + 1), quad_cfg, tol, params
    )


# ---------------------------------------------------------------------------
# closed form


def variance_integrand_closed_form(
    k,
    trip,
    *,
    use_reduction: bool = True,
    gamma_guard: float = 1e-9,
) -> float:
    """Pointwise width-zero variance integrand summed over the parity class.

    Odd k = 2K-1:  ((2K-1)!/(sqrt2 (K-1)!))^2 gamma 2F1(K+1/2,K+1/2;3/2;g^2)
                   * 2^{-(k-1)} / pi / (lam rho)^{(k+1)/2};
    even k = 2K (renormalized): ((2K-1)!/(K-1)!)^2 (2F1(K+1/2,K+1/2;1/2;g^2)-1)
                   * 2^{-(k-1)} / pi / (lam rho)^{k/2+1/2}.

    ``use_reduction`` evaluates the hypergeometric factor through its
    terminating Euler-transformed polynomial, which stays stable as
    |gamma| -> 1.  Points with |gamma| >= 1 - gamma_guard are rejected;
    integrate those through the cutoff machinery instead.
    """
    kk = k.k if isinstance(k, DerivOrder) else int(k)
    if kk < 1:
        raise ValueError("closed form needs k >= 1")
    if trip.gamma is None:
        raise ValueError("gamma undefined (degenerate interval); closed form needs lam*rho > 0")
    g = trip.gamma
    if abs(g) >= 1.0 - gamma_guard:
        raise ValueError(
            f"|gamma| = {abs(g):.12f} too close to 1; use the singular quadrature route"
        )
    g2 = g * g
    lr = trip.lam * trip.rho
    if kk % 2 == 1:
        big_k = (kk + 1) // 2
        const = (
            math.factorial(2 * big_k - 1) / (math.sqrt(2.0) * math.factorial(big_k - 1))
        ) ** 2
        if use_reduction:
            poly = sum(coeff_c(d, big_k) * g2**d for d in range(0, big_k))
            hyp = (1.0 - g2) ** (-(4 * big_k - 1) / 2.0) * poly
        else:
            hyp = gauss_2f1(big_k + 0.5, big_k + 0.5, 1.5, g2)
        series_sum = const * g * hyp
    else:
        big_k = kk // 2
        const = (math.factorial(2 * big_k - 1) / math.factorial(big_k - 1)) ** 2
        if use_reduction:
            poly = 1.0 + sum(coeff_d(d, big_k) * g2**d for d in range(1, big_k + 1))
            f_val = (1.0 - g2) ** (-(4 * big_k + 1) / 2.0) * poly
        else:
            f_val = gauss_2f1(big_k + 0.5, big_k + 0.5, 0.5, g2)
        series_sum = const * (f_val - 1.0)
    return series_sum * 2.0 ** (-(kk - 1)) / math.pi / lr ** ((kk + 1) / 2.0)
