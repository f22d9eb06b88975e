"""Monte Carlo estimation of the mollified local-time derivatives.

Per-path values are double Riemann sums of the density derivative over the
discretized simplex with exact midpoint-cell areas; one path set is reused
across the whole mollifier-width sweep so that width comparisons are
coupled.  Path blocks and their random streams are fixed by (n_paths, seed)
alone, making every estimate bit-reproducible for any worker count.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .chaos_variance import SeriesResult, mean_alpha
from .fbm import HurstParam, PathBatch, TimeGrid, as_hurst, covariance_rh, run_path_blocks
from .special_functions import gaussian_density_deriv

__all__ = [
    "McConfig",
    "McEstimate",
    "VarianceComparison",
    "DiscretizationBiasWarning",
    "EPS_GRID_SAFETY",
    "alpha_samples",
    "estimate_alpha",
    "richardson_bias",
    "cauchy_diagnostic",
    "compare_variance",
    "estimates_to_rows",
]

EPS_GRID_SAFETY = 4.0
BOOTSTRAP_RESAMPLES = 1000


class DiscretizationBiasWarning(UserWarning):
    """The mollifier width is not resolved by the path grid."""


@dataclass(frozen=True)
class McConfig:
    n_paths: int
    grid_points: int
    seed: int
    eps_list: tuple[float, ...]
    k: int
    h: float | HurstParam
    t: float
    renormalize: bool = False
    n_workers: int | None = None

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("need n_paths >= 2")
        if self.grid_points < 16:
            raise ValueError("need grid_points >= 16")
        eps = tuple(float(e) for e in self.eps_list)
        if not eps or any(e <= 0 for e in eps):
            raise ValueError("eps_list must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_list must decrease strictly")
        object.__setattr__(self, "eps_list", eps)
        if self.k < 0:
            raise ValueError("order k must be >= 0")
        object.__setattr__(self, "h", as_hurst(self.h))
        if self.t <= 0:
            raise ValueError("horizon must be positive")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.regular(self.t, self.grid_points)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    variance: float
    std_error: float
    n: int
    discretization: int
    seed: int

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be >= 0")


@dataclass(frozen=True)
class VarianceComparison:
    mc_variance: float
    mc_std_error: float
    ci_low: float
    ci_high: float
    series_value: float
    bias_estimate: float
    passed: bool
    n_paths: int
    eps: float


def _simplex_weights(n_nodes: int, step: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Upper-triangle pair indices and exact midpoint-cell areas.

    Node i owns the 1-D cell of length step (half at both ends); the area of
    cell(i) x cell(j) clipped to {r <= s} is the full product for i < j and
    half the square for i = j, so the weights sum to t^2/2 exactly.
    """
    ell = np.full(n_nodes, step)
    ell[0] = ell[-1] = step / 2.0
    iu0, iu1 = np.triu_indices(n_nodes, k=0)
    w = ell[iu0] * ell[iu1]
    w = np.where(iu0 == iu1, 0.5 * w, w)
    return iu0, iu1, w


def _warn_eps_grid(cfg: McConfig) -> None:
    res = (cfg.t / cfg.grid_points) ** (2.0 * cfg.h.h)
    for eps in cfg.eps_list:
        if eps < EPS_GRID_SAFETY * res:
            warnings.warn(
                f"eps={eps} is below {EPS_GRID_SAFETY} x grid resolution scale "
                f"{res:.4g}; expect discretization bias (H={cfg.h.h}, "
                f"m={cfg.grid_points})",
                DiscretizationBiasWarning,
                stacklevel=3,
            )


def _block_samples(values: np.ndarray, cfg: McConfig, coarse: bool):
    """alpha samples for one block of path rows, one array per eps.

    ``values`` holds the paths on the grid without t = 0; the zero node is
    prepended here.  With ``coarse`` the same paths are also summed on the
    half-resolution grid (every other node), reusing the f evaluations.
    """
    m = cfg.grid_points
    full = np.concatenate([np.zeros((values.shape[0], 1)), values], axis=1)
    iu0, iu1, w = _simplex_weights(m + 1, cfg.t / m)
    sign = -1.0 if cfg.k % 2 else 1.0

    coarse_cols = coarse_w = None
    if coarse:
        if m % 2:
            raise ValueError("grid_points must be even for the coarse-grid check")
        keep = np.arange(0, m + 1, 2)
        ci0, ci1, cw = _simplex_weights(keep.size, 2.0 * cfg.t / m)
        # map coarse pairs onto columns of the full upper triangle
        offs = np.cumsum(np.concatenate(([0], np.arange(m + 1, 1, -1))))
        coarse_cols = offs[keep[ci0]] + (keep[ci1] - keep[ci0])
        coarse_w = cw

    out = {eps: [] for eps in cfg.eps_list}
    out_coarse = {eps: [] for eps in cfg.eps_list} if coarse else None
    chunk = max(1, int(6_000_000 // max(iu0.size, 1)))
    for lo in range(0, full.shape[0], chunk):
        rows = full[lo : lo + chunk]
        diffs = rows[:, iu1] - rows[:, iu0]
        for eps in cfg.eps_list:
            f = gaussian_density_deriv(cfg.k, eps, diffs)
            out[eps].append(sign * (f @ w))
            if coarse:
                out_coarse[eps].append(sign * (f[:, coarse_cols] @ coarse_w))
    samples = {eps: np.concatenate(parts) for eps, parts in out.items()}
    coarse_samples = (
        {eps: np.concatenate(parts) for eps, parts in out_coarse.items()} if coarse else None
    )
    return samples, coarse_samples


def alpha_samples(
    cfg: McConfig,
    paths: PathBatch | None = None,
    *,
    with_coarse: bool = False,
):
    """Coupled per-path samples of the order-k derivative, one array per eps.

    Simulates paths from cfg when none are given; a supplied PathBatch must
    match (h, t, grid_points) and decouples simulation from estimation.
    Returns (samples, coarse_samples, seed); the coarse samples (present
    with ``with_coarse``) use the half-resolution grid on the same paths.
    """
    _warn_eps_grid(cfg)
    if paths is not None:
        if paths.grid.n != cfg.grid_points or not math.isclose(paths.grid.t_max, cfg.t):
            raise ValueError("provided paths do not match the config grid")
        if paths.h.h != cfg.h.h:
            raise ValueError("provided paths have a different Hurst parameter")
        if paths.n_paths < cfg.n_paths:
            raise ValueError("provided batch has fewer paths than requested")
        seed = paths.seed

        blocks = []
        for lo in range(0, cfg.n_paths, 256):
            blocks.append(_block_samples(paths.values[lo : lo + 256], cfg, with_coarse))
    else:
        seed = cfg.seed
        pts = cfg.grid.points
        cov = covariance_rh(cfg.h, pts[:, None], pts[None, :])
        chol = scipy.linalg.cholesky(cov, lower=True)

        def worker(_idx, size, stream):
            rng = np.random.default_rng(stream)
            z = rng.standard_normal((size, cfg.grid_points))
            return _block_samples(z @ chol.T, cfg, with_coarse)

        blocks = run_path_blocks(worker, cfg.n_paths, cfg.seed, cfg.n_workers)

    samples = {
        eps: np.concatenate([b[0][eps] for b in blocks]) for eps in cfg.eps_list
    }
    coarse = None
    if with_coarse:
        coarse = {
            eps: np.concatenate([b[1][eps] for b in blocks]) for eps in cfg.eps_list
        }
    if cfg.renormalize:
        for eps in cfg.eps_list:
            shift = mean_alpha(cfg.h, cfg.t, eps, cfg.k)
            samples[eps] = samples[eps] - shift
            if coarse is not None:
                coarse[eps] = coarse[eps] - shift
    return samples, coarse, seed


def _estimate(sample: np.ndarray, discretization: int, seed: int) -> McEstimate:
    n = sample.size
    var = float(np.var(sample, ddof=1))
    return McEstimate(
        mean=float(np.mean(sample)),
        variance=var,
        std_error=math.sqrt(var / n),
        n=n,
        discretization=discretization,
        seed=seed,
    )


def estimate_alpha(cfg: McConfig, paths: PathBatch | None = None) -> dict[float, McEstimate]:
    """Monte Carlo mean/variance of the order-k derivative per mollifier width."""
    samples, _, seed = alpha_samples(cfg, paths)
    return {eps: _estimate(s, cfg.grid_points, seed) for eps, s in samples.items()}


def richardson_bias(cfg: McConfig, paths: PathBatch | None = None) -> dict[float, dict[str, float]]:
    """Grid-halving differences of the estimates on a fixed path set.

    For each eps, reports |mean - mean_coarse| and |variance -
    variance_coarse| computed from the same paths on the full and
    half-resolution grids; the scale of these differences is the
    discretization-bias proxy used by the comparison gates.
    """
    samples, coarse, _ = alpha_samples(cfg, paths, with_coarse=True)
    out = {}
    for eps in cfg.eps_list:
        out[eps] = {
            "mean": abs(float(np.mean(samples[eps]) - np.mean(coarse[eps]))),
            "variance": abs(float(np.var(samples[eps], ddof=1) - np.var(coarse[eps], ddof=1))),
        }
    return out


def cauchy_diagnostic(cfg: McConfig, paths: PathBatch | None = None) -> list[dict]:
    """Pairwise mean-square differences between widths on coupled paths.

    Rows carry (eps_i, eps_j, msd, std_error) for i <= j; the diagonal rows
    are exactly zero and serve as the coupling check.
    """
    if len(cfg.eps_list) < 3:
        raise ValueError("the width sweep needs at least 3 eps values")
    samples, _, seed = alpha_samples(cfg, paths)
    rows = []
    eps = cfg.eps_list
    for i in range(len(eps)):
        for j in range(i, len(eps)):
            d2 = (samples[eps[i]] - samples[eps[j]]) ** 2
            rows.append(
                {
                    "eps_i": eps[i],
                    "eps_j": eps[j],
                    "msd": float(np.mean(d2)),
                    "std_error": float(np.std(d2, ddof=1) / math.sqrt(d2.size)),
                    "seed": seed,
                }
            )
    return rows


def compare_variance(
    cfg: McConfig,
    series: SeriesResult,
    paths: PathBatch | None = None,
) -> VarianceComparison:
    """Gate the chaos-series variance against the MC sample variance.

    Refuses mismatched parameters and unconverged series.  The pass
    criterion is |mc - series| <= 3 x bootstrap SE + grid-bias allowance,
    the allowance being the grid-halving variance difference.
    """
    p = series.params
    if not series.converged:
        raise ValueError("series has not converged; refusing the comparison")
    if p.get("weighted"):
        raise ValueError("weighted (regularity) series is not a variance")
    eps = float(p["eps"])
    if eps not in cfg.eps_list:
        raise ValueError(f"series eps={eps} absent from the MC width sweep")
    if p["k"] != cfg.k or not math.isclose(p["t"], cfg.t) or not math.isclose(p["h"], cfg.h.h):
        raise ValueError("series parameters do not match the MC config")
    if cfg.k % 2 == 0 and not p["renormalized"]:
        raise ValueError(
            "raw even-order series is a second moment; compare the renormalized one"
        )
    samples, coarse, seed = alpha_samples(cfg, paths, with_coarse=True)
    s = samples[eps]
    mc_var = float(np.var(s, ddof=1))
    bias = abs(mc_var - float(np.var(coarse[eps], ddof=1)))
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB007)))
    idx = rng.integers(0, s.size, size=(BOOTSTRAP_RESAMPLES, s.size))
    boot = np.var(s[idx], axis=1, ddof=1)
    se = float(np.std(boot, ddof=1))
    lo, hi = np.percentile(boot, [2.5, 97.5])
    passed = abs(mc_var - series.value) <= 3.0 * se + bias
    return VarianceComparison(
        mc_variance=mc_var,
        mc_std_error=se,
        ci_low=float(lo),
        ci_high=float(hi),
        series_value=series.value,
        bias_estimate=bias,
        passed=passed,
        n_paths=s.size,
        eps=eps,
    )


def estimates_to_rows(estimates: dict[float, McEstimate]) -> list[dict]:
    """Flatten the per-eps estimates into long-format rows for CSV."""
    rows = []
    for eps, est in estimates.items():
        for stat in ("mean", "variance", "std_error"):
            rows.append({"eps": eps, "stat": stat, "value": getattr(est, stat)})
    return rows
