"""Threshold radius estimation: segmented regression and the best-stump split point."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import optimize, stats

from tidalstream.errors import BadWeight, DegenerateRegressor, FlatKappa
from tidalstream.intervals import (BootstrapConfig, IntervalSet, run_bootstrap,
                                   sublevel_intervals)
from tidalstream.isotonic import CosineFit, fit_weights
from tidalstream.stepfunc import StepFunction

PSI = {
    "indicator": lambda x: (x > 0).astype(float),
    "hinge": lambda x: np.maximum(0.0, x),
}


def _psi(kind):
    try:
        return PSI[kind]
    except KeyError:
        raise ValueError(f"psi_kind must be one of {sorted(PSI)}, got {kind!r}") from None


def _wls(X, y, w):
    """Weighted simple regression of ``y`` on each row of ``X``; returns (nu, beta, sse, degenerate)."""
    W = w.sum()
    xbar = X @ w / W
    ybar = w @ y / W
    Xc = X - xbar[:, None]
    sxx = (Xc * Xc) @ w
    sxy = Xc @ (w * (y - ybar))
    scale = (X * X) @ w
    degenerate = sxx <= 1e-12 * np.maximum(scale, 1e-300)
    beta = np.where(degenerate, np.nan, sxy / np.where(degenerate, 1.0, sxx))
    nu = ybar - beta * xbar
    resid = y[None, :] - nu[:, None] - beta[:, None] * X
    sse = (resid * resid) @ w
    return nu, beta, sse, degenerate


def default_grid(r, refine=0):
    """Distinct radii strictly inside the data range, with ``refine`` extra points per gap."""
    u = np.unique(r)
    inner = u[1:-1]
    if refine <= 0 or u.size < 2:
        return inner
    frac = np.arange(1, refine + 1) / (refine + 1)
    extra = (u[:-1, None] + frac[None, :] * np.diff(u)[:, None]).ravel()
    return np.unique(np.r_[inner, extra])


@dataclass(frozen=True, eq=False)
class SSEProfile:
    psi_kind: str
    grid: np.ndarray
    sse: np.ndarray
    beta: np.ndarray
    nu: np.ndarray
    degenerate: np.ndarray
    rho_hat: float
    beta_hat: float
    nu_hat: float
    sse_min: float
    domain: tuple

    @property
    def excess(self):
        """``SSE_r - SSE_rho_hat`` on the grid (NaN at skipped points)."""
        return self.sse - self.sse_min

    def to_csv_rows(self):
        return [(float(r), float(v)) for r, v in zip(self.grid, self.excess)]


def sse_at(sample, weights, psi_kind, rho):
    """Weighted SSE and coefficients of the segmented fit at a single ``rho``."""
    X = (_psi(psi_kind)(sample.r - rho) * sample.cos)[None, :]
    nu, beta, sse, deg = _wls(X, sample.y, weights)
    if deg[0]:
        raise DegenerateRegressor(f"regressor vanishes at rho={rho}")
    return float(sse[0]), float(nu[0]), float(beta[0])


def sse_profile(sample, fit: Union[CosineFit, float], psi_kind="hinge", grid=None, *, refine=0,
                polish=False, domain=None) -> SSEProfile:
    """Profile the weighted SSE of the segmented model over candidate thresholds.

    Degenerate grid points (regressor identically zero) get NaN and are
    flagged rather than raising. ``polish`` runs a bounded scalar search
    around the best hinge grid point.
    """
    psi = _psi(psi_kind)
    w = fit_weights(sample, fit)
    grid = default_grid(sample.r, refine) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty threshold grid")
    X = psi(sample.r[None, :] - grid[:, None]) * sample.cos[None, :]
    nu, beta, sse, deg = _wls(X, sample.y, w)
    sse = np.where(deg, np.nan, sse)
    if np.all(deg):
        raise DegenerateRegressor("regressor vanishes at every grid point")
    k = int(np.nanargmin(sse))
    rho, b, v, s = float(grid[k]), float(beta[k]), float(nu[k]), float(sse[k])
    if polish and psi_kind == "hinge":
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, grid.size - 1)]
        if hi > lo:
            def obj(x):
                try:
                    return sse_at(sample, w, psi_kind, x)[0]
                except DegenerateRegressor:
                    return np.inf
            res = optimize.minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-6 * max(1.0, abs(hi))})
            if res.fun < s:
                s, v, b = sse_at(sample, w, psi_kind, float(res.x))
                rho = float(res.x)
    if domain is None:
        domain = (float(sample.r[0]), float(sample.r[-1]))
    return SSEProfile(psi_kind, grid, sse, beta, nu, deg, rho, b, v, s, tuple(domain))


def changepoint_conf_set(profile: SSEProfile, chi2_quantile, level=None) -> IntervalSet:
    """Sublevel set ``{r : SSE_r - SSE_rho_hat <= c}``.

    Hinge profiles are continuous, so crossings are linearly interpolated.
    Indicator profiles are constant on ``[g_k, g_{k+1})`` and the set is a
    union of such cells.
    """
    lo, hi = profile.domain
    ex = profile.excess
    if profile.psi_kind == "hinge":
        return IntervalSet(sublevel_intervals(profile.grid, ex, chi2_quantile, lo, hi), level)
    g = profile.grid
    ok = np.isfinite(ex) & (ex <= chi2_quantile)
    ends = np.r_[g[1:], max(hi, g[-1])]
    cells = []
    for k in np.flatnonzero(ok):
        if cells and cells[-1][1] == g[k]:
            cells[-1] = (cells[-1][0], ends[k])
        else:
            cells.append((g[k], ends[k]))
    return IntervalSet(cells, level)


@dataclass(frozen=True, eq=False)
class ChangepointFit:
    psi_kind: str
    rho_hat: float
    beta_hat: float
    nu_hat: float
    sse_profile: SSEProfile
    conf_set: Optional[IntervalSet]
    level: float


def fit_changepoint(sample, fit, psi_kind="hinge", grid=None, level=0.9, *, refine=0,
                    polish=False) -> ChangepointFit:
    """Segmented-regression threshold fit; a chi-square(1) set is attached for the hinge only."""
    prof = sse_profile(sample, fit, psi_kind, grid, refine=refine, polish=polish)
    conf = None
    if psi_kind == "hinge":
        conf = changepoint_conf_set(prof, float(stats.chi2.ppf(level, 1)), level)
    return ChangepointFit(psi_kind, prof.rho_hat, prof.beta_hat, prof.nu_hat, prof, conf, level)


class Kappa0:
    """``kappa0(r) = int_0^tau lam^2 h - [Lam(tau) - Lam(r)]^2 / [H(tau) - H(r)]``.

    ``Lam`` and ``H`` are cumulative integrals of ``lam*h`` and ``h``. When
    ``lam`` and ``h`` are step functions all integrals are exact finite sums;
    otherwise they are trapezoid sums on ``n_quad`` uniform points.
    """

    def __init__(self, lam, h=None, tau=1.0, n_quad=20001):
        self.tau = float(tau)
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        self.exact = isinstance(lam, StepFunction) and (h is None or isinstance(h, StepFunction))
        self.lam, self.h = lam, h
        if self.exact:
            inner = [k.knots[(k.knots > 0) & (k.knots < self.tau)]
                     for k in (lam, h) if isinstance(k, StepFunction)]
            pts = np.unique(np.concatenate([[0.0, self.tau], *inner]))
            mids = pts[1:]  # left-continuous: value on (p_{j-1}, p_j] is f(p_j)
            lv = lam(mids)
            hv = np.ones_like(mids) if h is None else h(mids)
            dx = np.diff(pts)
            self._slopes = (hv, lv * hv, lv * lv * hv)
        else:
            pts = np.linspace(0.0, self.tau, n_quad)
            lv = np.asarray(lam(pts), dtype=float)
            hv = np.ones_like(pts) if h is None else np.broadcast_to(
                np.asarray(h(pts), dtype=float), pts.shape)
            dx = np.diff(pts)
            trap = lambda f: 0.5 * (f[1:] + f[:-1]) * dx
            self._slopes = None
            self._inc = (trap(hv), trap(lv * hv), trap(lv * lv * hv))
        if np.any(hv <= 0):
            raise BadWeight("h must be > 0 on [0, tau]")
        self.points = pts
        if self.exact:
            incs = [s * dx for s in self._slopes]
        else:
            incs = self._inc
        self._cum = [np.r_[0.0, np.cumsum(v)] for v in incs]
        self.H_tau, self.Lam_tau, self.I2_tau = (c[-1] for c in self._cum)

    def _cumulative(self, r):
        r = np.clip(np.asarray(r, dtype=float), 0.0, self.tau)
        pts = self.points
        j = np.clip(np.searchsorted(pts, r, side="left"), 1, pts.size - 1)
        out = []
        for idx, c in enumerate(self._cum):
            if self.exact:
                slope = self._slopes[idx][j - 1]
            else:
                slope = (c[j] - c[j - 1]) / (pts[j] - pts[j - 1])
            out.append(c[j - 1] + slope * (r - pts[j - 1]))
        return out

    def beta_at(self, r):
        """Best upper stump level ``[Lam(tau) - Lam(r)] / [H(tau) - H(r)]``."""
        H, Lam, _ = self._cumulative(r)
        dH = self.H_tau - H
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(dH > 0, (self.Lam_tau - Lam) / np.where(dH > 0, dH, 1.0),
                            self.lam(np.asarray(r, dtype=float)))

    def __call__(self, r):
        H, Lam, _ = self._cumulative(r)
        dH = self.H_tau - H
        dL = self.Lam_tau - Lam
        with np.errstate(invalid="ignore", divide="ignore"):
            second = np.where(dH > 1e-300, dL * dL / np.where(dH > 1e-300, dH, 1.0), 0.0)
        return self.I2_tau - second


def kappa0(lam, h=None, tau=None, grid=None, *, refine=0, n_quad=20001):
    """Evaluate ``kappa0`` on its default grid; returns ``(r, values, Kappa0)``."""
    tau = _default_tau(lam, tau)
    k = Kappa0(lam, h, tau, n_quad)
    r = evaluation_grid(k, refine) if grid is None else np.asarray(grid, dtype=float)
    return r, k(r), k


def _default_tau(lam, tau):
    if tau is not None:
        return float(tau)
    if isinstance(lam, StepFunction):
        return float(lam.knots[-1])
    raise ValueError("tau is required when lam is not a step function")


def evaluation_grid(k: Kappa0, refine=0):
    """Integration breakpoints (all knots in ``[0, tau]``) plus ``refine`` uniform points."""
    base = k.points
    if refine > 0:
        base = np.union1d(base, np.linspace(0.0, k.tau, refine))
    return base


@dataclass(frozen=True, eq=False)
class SplitFit:
    gamma_hat: float
    beta_hat: float
    r: np.ndarray
    kappa0_curve: np.ndarray
    kappa_min: float
    kappa_max: float
    weight_kind: str
    flat: bool
    kappa: Kappa0

    def kappa00(self, r):
        """Rescaled ``(kappa0(r) - min) / (max - min)``, in ``[0, 1]`` on the evaluation grid."""
        if self.flat:
            raise FlatKappa("kappa0 is constant; the rescaled curve is undefined")
        return (self.kappa(r) - self.kappa_min) / (self.kappa_max - self.kappa_min)

    @property
    def kappa00_curve(self):
        return self.kappa00(self.r)


def split_point(lam, h=None, tau=None, *, grid=None, refine=0, weight_kind=None,
                n_quad=20001, rtol=1e-12) -> SplitFit:
    """Best stump approximation of ``lam`` under weight ``h``.

    ``gamma_hat`` is the smallest grid minimizer of ``kappa0``; near-ties
    within ``rtol`` of the curve's range count as minimizers. For step
    ``lam`` and ``h`` the default grid (all knots) contains an exact
    minimizer.
    """
    r, vals, k = kappa0(lam, h, tau, grid, refine=refine, n_quad=n_quad)
    lo, hi = float(np.min(vals)), float(np.max(vals))
    scale = max(abs(lo), abs(hi), 1e-300)
    flat = hi - lo <= rtol * scale or hi == lo
    if flat:
        g = float(r[0])
    else:
        g = float(r[np.flatnonzero(vals <= lo + rtol * scale)[0]])
    beta = float(k.beta_at(g))
    kind = weight_kind or ("uniform" if h is None else "custom")
    return SplitFit(g, beta, r, vals, lo, hi, kind, bool(flat), k)


def density_weight(r, tau=None, bins=20):
    """Histogram estimate of the radius density as a positive step-function weight."""
    r = np.asarray(r, dtype=float)
    tau = float(r.max()) if tau is None else float(tau)
    counts, edges = np.histogram(r, bins=bins, range=(0.0, tau))
    dens = (counts + 0.5) / ((r.size + 0.5 * bins) * np.diff(edges))
    return StepFunction(edges[1:], dens)


@dataclass(frozen=True, eq=False)
class SplitBootstrapResult:
    conf_set: IntervalSet
    quantile: float
    samples: np.ndarray
    gamma_smooth: float
    fit: SplitFit
    n_flat: int
    level: float


def split_bootstrap_ci(sample, fit: CosineFit, cfg: BootstrapConfig, h=None, tau=None, level=0.9,
                       *, run=None, refine=2000, n_jobs=1) -> SplitBootstrapResult:
    """Bootstrap confidence set for the split point.

    Replicates whose refit is identically flat have an undefined rescaled
    curve; they are dropped and counted in ``n_flat``.
    """
    tau = float(sample.r[-1]) if tau is None else float(tau)
    run = run or run_bootstrap(sample, fit, cfg, n_jobs=n_jobs)
    sf = split_point(fit.lambda_hat, h, tau, refine=refine)
    smooth_fit = split_point(run.smooth, h, tau, refine=refine)
    g_s = smooth_fit.gamma_hat
    vals = []
    for row in run.lambda_obs:
        rep = split_point(StepFunction.from_points(sample.r, row), h, tau)
        if rep.flat:
            continue
        vals.append(float(rep.kappa00(g_s)))
    vals = np.asarray(vals)
    n_flat = run.lambda_obs.shape[0] - vals.size
    q = float(np.quantile(vals, level)) if vals.size else float("nan")
    if sf.flat:
        raise FlatKappa("fitted lambda is flat; no split-point confidence set")
    conf = IntervalSet(sublevel_intervals(sf.r, sf.kappa00_curve, q), level)
    return SplitBootstrapResult(conf, q, vals, g_s, sf, int(n_flat), level)
