"""Confidence sets for the streaming amplitude.

Two routes: inverting the pinned-minus-free weighted SSE (likelihood-ratio
type) and a smoothed residual bootstrap around the kernel-smoothed fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from tidalstream import rng
from tidalstream.isotonic import (CosineFit, SmoothLambda, fit_cosine_model, fit_pinned,
                                  fit_weights, smooth_lambda, unconstrained_sse)
from tidalstream.streaming import run_replicates

DSSE_Q90 = 1.61
DSSE_Q95 = 2.29


@dataclass(frozen=True)
class IntervalSet:
    """Union of disjoint closed intervals, ascending."""

    intervals: tuple
    level: Optional[float] = None

    def __post_init__(self):
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        for a, b in ivs:
            if a > b:
                raise ValueError(f"interval [{a}, {b}] has L > U")
        for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
            if a1 <= b0:
                raise ValueError("intervals must be disjoint and ascending")
        object.__setattr__(self, "intervals", ivs)

    def __contains__(self, x):
        return any(a <= x <= b for a, b in self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self):
        return len(self.intervals)

    @property
    def is_empty(self):
        return not self.intervals

    @property
    def hull(self):
        return (self.intervals[0][0], self.intervals[-1][1]) if self.intervals else None

    def issubset(self, other, tol=0.0):
        return all(any(c - tol <= a and b <= d + tol for c, d in other.intervals)
                   for a, b in self.intervals)

    def to_list(self):
        return [[a, b] for a, b in self.intervals]


def sublevel_intervals(x, f, c, lo=None, hi=None):
    """``{x : f(x) <= c}`` from samples of ``f`` on an ascending grid.

    Crossings are located by linear interpolation; a set touching the first
    or last grid point is extended to ``lo`` / ``hi`` when given.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    ok = np.isfinite(f)
    x, f = x[ok], f[ok]
    inside = f <= c
    out = []
    k = 0
    while k < x.size:
        if not inside[k]:
            k += 1
            continue
        j = k
        while j + 1 < x.size and inside[j + 1]:
            j += 1
        if k == 0:
            a = x[0] if lo is None else min(lo, x[0])
        else:
            a = x[k - 1] + (c - f[k - 1]) * (x[k] - x[k - 1]) / (f[k] - f[k - 1])
        if j == x.size - 1:
            b = x[-1] if hi is None else max(hi, x[-1])
        else:
            b = x[j] + (c - f[j]) * (x[j + 1] - x[j]) / (f[j + 1] - f[j])
        out.append((a, b))
        k = j + 1
    return _merge(out)


def _merge(ivs):
    merged = []
    for a, b in sorted(ivs):
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(b, merged[-1][1]))
        else:
            merged.append((a, b))
    return merged


class DeltaSSE:
    """``xi -> pinned SSE - free SSE`` at radius ``r0`` with the fitted dispersion held fixed."""

    def __init__(self, sample, fit: CosineFit, r0, sigma2=None):
        self.sample = sample
        self.r0 = float(r0)
        self.sigma2 = fit.sigma2_hat if sigma2 is None else float(sigma2)
        self.nu_start = fit.nu_hat
        self.sse_free = unconstrained_sse(sample, self.sigma2, nu_start=fit.nu_hat)

    def __call__(self, xi0):
        pinned = fit_pinned(self.sample, self.r0, float(xi0), self.sigma2, nu_start=self.nu_start)
        d = pinned.sse - self.sse_free
        return 0.0 if d < 1e-10 * max(1.0, self.sse_free) else d


def delta_sse(sample, fit: CosineFit, r0, xi0) -> float:
    return DeltaSSE(sample, fit, r0)(xi0)


def ci_from_delta_sse(sample, fit: CosineFit, r0, quantile=DSSE_Q90, xi_max=None, xi_step=0.05,
                      tol=1e-3, level=None, profile=None) -> IntervalSet:
    """``{xi : DeltaSSE(r0, xi) <= quantile}`` by grid scan plus bisection at each crossing."""
    if xi_max is None:
        xi_max = 2.0 * float(np.max(fit.lambda_hat.values)) + 5.0
    if np.isinf(quantile):
        return IntervalSet([(0.0, xi_max)], level)
    prof = profile or DeltaSSE(sample, fit, r0)
    grid = np.arange(0.0, xi_max + 0.5 * xi_step, xi_step)
    grid[-1] = min(grid[-1], xi_max)
    vals = np.array([prof(x) for x in grid])
    inside = vals <= quantile

    def refine(a, b, a_inside):
        while b - a > tol:
            m = 0.5 * (a + b)
            if (prof(m) <= quantile) == a_inside:
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    out = []
    k = 0
    while k < grid.size:
        if not inside[k]:
            k += 1
            continue
        j = k
        while j + 1 < grid.size and inside[j + 1]:
            j += 1
        lo = grid[0] if k == 0 else refine(grid[k - 1], grid[k], False)
        hi = grid[-1] if j == grid.size - 1 else refine(grid[j], grid[j + 1], True)
        out.append((lo, hi))
        k = j + 1
    return IntervalSet(_merge(out), level)


@dataclass(frozen=True)
class BootstrapConfig:
    n_boot: int = 1000
    bandwidth: float = 0.1
    seed: int = 0
    center_residuals: bool = False
    refit_dispersion: bool = True

    def __post_init__(self):
        if self.n_boot < 1:
            raise ValueError("n_boot must be >= 1")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")


def bootstrap_residuals(sample, fit: CosineFit, smooth: SmoothLambda, center=False):
    e = sample.y - fit.nu_hat - smooth(sample.r) * sample.cos
    if center:
        w = fit_weights(sample, fit)
        e = e - np.sum(w * e) / np.sum(w)
    return e


def bootstrap_resample(sample, fit: CosineFit, cfg: BootstrapConfig, index=0, smooth=None):
    """One smoothed-bootstrap replicate: positions fixed, ``(sigma_i, e_i)`` pairs drawn with replacement."""
    smooth = smooth or smooth_lambda(fit.lambda_hat, cfg.bandwidth)
    e = bootstrap_residuals(sample, fit, smooth, cfg.center_residuals)
    pick = rng.generator(cfg.seed, "bootstrap", index).integers(0, sample.n, sample.n)
    y_star = fit.nu_hat + smooth(sample.r) * sample.cos + e[pick]
    return sample.with_pairs(y_star, sample.sigma[pick])


@dataclass(frozen=True, eq=False)
class BootstrapRun:
    """Refits on ``n_boot`` replicates; row ``k`` of every array belongs to replicate ``k``."""

    cfg: BootstrapConfig
    smooth: SmoothLambda
    nu: np.ndarray
    sigma2: np.ndarray
    lambda_obs: np.ndarray
    fit_kwargs: dict = field(default_factory=dict)

    def replicate(self, sample, fit, k):
        return bootstrap_resample(sample, fit, self.cfg, k, self.smooth)

    def replicate_fit(self, sample, fit, k):
        s = self.replicate(sample, fit, k)
        return s, fit_cosine_model(s, **self._kw(fit))

    def _kw(self, fit):
        kw = dict(self.fit_kwargs)
        kw.setdefault("spike_window", fit.spike_window)
        if not self.cfg.refit_dispersion:
            kw["sigma2"] = fit.sigma2_hat
        return kw


def run_bootstrap(sample, fit: CosineFit, cfg: BootstrapConfig, *, fit_kwargs=None,
                  n_jobs=1) -> BootstrapRun:
    """Refit the truncated isotonic estimator on every replicate."""
    smooth = smooth_lambda(fit.lambda_hat, cfg.bandwidth)
    run = BootstrapRun(cfg, smooth, np.empty(0), np.empty(0), np.empty((0, sample.n)),
                       dict(fit_kwargs or {}))
    kw = run._kw(fit)

    def chunk(indices):
        rows = np.empty((len(indices), sample.n + 2))
        for j, k in enumerate(indices):
            f = fit_cosine_model(bootstrap_resample(sample, fit, cfg, k, smooth), **kw)
            rows[j, 0], rows[j, 1], rows[j, 2:] = f.nu_hat, f.sigma2_hat, f.lambda_obs
        return rows

    rows = run_replicates(chunk, cfg.n_boot, n_jobs)
    return BootstrapRun(cfg, smooth, rows[:, 0], rows[:, 1], rows[:, 2:], dict(fit_kwargs or {}))


def _column_at(r, r0):
    # observation index whose value the left-continuous step function takes at r0
    knots_last = np.flatnonzero(np.r_[r[1:] != r[:-1], True])
    j = min(int(np.searchsorted(r[knots_last], r0, side="left")), knots_last.size - 1)
    return knots_last[j]


def _level_key(level):
    return float(level)


def bootstrap_pointwise_ci(sample, fit: CosineFit, r0, levels=(0.9, 0.95), cfg=None, *, run=None,
                           method="basic", n_jobs=1):
    """Pointwise intervals for ``lambda(r0)`` from the law of ``lambda*(r0) - lambda_s(r0)``.

    ``method='basic'`` reflects the bootstrap errors around the estimate;
    ``method='percentile'`` uses quantiles of ``lambda*(r0)`` directly.
    Intervals are intersected with ``[0, inf)``.
    """
    run = run or run_bootstrap(sample, fit, cfg, n_jobs=n_jobs)
    lam_star = run.lambda_obs[:, _column_at(sample.r, r0)]
    centre = float(run.smooth(r0))
    est = float(fit.lambda_hat(r0))
    delta = lam_star - centre
    out = {}
    for level in levels:
        alpha = 1.0 - level
        if method == "basic":
            lo = est - np.quantile(delta, 1.0 - alpha / 2)
            hi = est - np.quantile(delta, alpha / 2)
        elif method == "percentile":
            lo, hi = np.quantile(lam_star, [alpha / 2, 1.0 - alpha / 2])
        else:
            raise ValueError("method must be 'basic' or 'percentile'")
        lo, hi = max(0.0, float(lo)), float(hi)
        out[_level_key(level)] = IntervalSet([(lo, hi)] if hi >= lo else [], level)
    return out


def d_star_samples(sample, run: BootstrapRun):
    """``sup_r |lambda*(r) - lambda_s(r)|`` over the data range, exactly, per replicate.

    Between knots the replicate is constant and the smooth curve monotone, so
    the supremum is attained at a knot using either one-sided value.
    """
    last = np.flatnonzero(np.r_[sample.r[1:] != sample.r[:-1], True])
    v = run.lambda_obs[:, last]
    s = run.smooth(sample.r[last])
    left = np.abs(v - s)
    right = np.abs(v[:, 1:] - s[:-1])
    return np.maximum(left.max(axis=1), right.max(axis=1) if right.size else 0.0)


@dataclass(frozen=True, eq=False)
class Band:
    level: float
    half_width: float
    lower: object
    upper: object


def bootstrap_band(sample, fit: CosineFit, cfg=None, levels=(0.9, 0.95), *, run=None, n_jobs=1):
    """Simultaneous bands ``lambda_hat +/- q(D*)``; returns ``(d_star, {level: Band})``."""
    run = run or run_bootstrap(sample, fit, cfg, n_jobs=n_jobs)
    d = d_star_samples(sample, run)
    bands = {}
    for level in levels:
        q = float(np.quantile(d, level))
        lam = fit.lambda_hat
        bands[_level_key(level)] = Band(level, q, lam.with_values(np.maximum(0.0, lam.values - q)),
                                        lam.with_values(lam.values + q))
    return d, bands


@dataclass(frozen=True)
class CoverageEstimate:
    probability: float
    mc_se: float
    n_boot: int
    quantile: float
    r0: float


def coverage_values(sample, fit: CosineFit, r0, cfg=None, *, run=None, n_jobs=1):
    """``DeltaSSE*[r0, lambda_s(r0)]`` on every replicate."""
    run = run or run_bootstrap(sample, fit, cfg, n_jobs=n_jobs)
    xi = float(run.smooth(r0))
    kw = run._kw(fit)

    def chunk(indices):
        out = np.empty(len(indices))
        for j, k in enumerate(indices):
            s = run.replicate(sample, fit, k)
            f = fit_cosine_model(s, **kw)
            out[j] = DeltaSSE(s, f, r0)(xi)
        return out

    return run_replicates(chunk, run.cfg.n_boot, n_jobs)


def coverage_estimate(sample, fit: CosineFit, r0, quantile=DSSE_Q90, cfg=None, *, run=None,
                      values=None, n_jobs=1) -> CoverageEstimate:
    """Bootstrap estimate of ``P{DeltaSSE[r0, lambda(r0)] <= quantile}``."""
    if values is None:
        values = coverage_values(sample, fit, r0, cfg, run=run, n_jobs=n_jobs)
    p = float(np.mean(values <= quantile))
    return CoverageEstimate(p, float(np.sqrt(p * (1 - p) / values.size)), int(values.size),
                            float(quantile), float(r0))
