"""Tests for streaming motion: bisector statistics, F-like statistics and permutation tests.

Under no streaming, positions ``(r, theta)`` are independent of the pairs
``(y, sigma)``, so the conditional null distribution of any statistic is
obtained by permuting the pairs with positions held fixed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from tidalstream import rng
from tidalstream.data import cosd, reduce_angle
from tidalstream.errors import BadStatistic, EmptySide, NoConvergence
from tidalstream.isotonic import CosineFit, fit_cosine_model, fit_weights

STATISTICS = ("B1", "absDelta1V0", "F", "F_untruncated", "F_rho")


@dataclass(frozen=True)
class NullEstimates:
    nu0: float
    sigma0_sq: float


def _null_estimates(y, s2, tol=1e-8, max_iter=1000):
    sig2 = max(0.0, float(np.var(y) - np.mean(s2)))
    nu = float(np.mean(y))
    for _ in range(max_iter):
        w = 1.0 / (sig2 + s2)
        nu_new = float(np.sum(w * y) / np.sum(w))
        d = y - nu_new
        sig2_new = max(0.0, float(np.mean(d * d - s2)))
        done = abs(nu_new - nu) < tol and abs(sig2_new - sig2) < tol
        nu, sig2 = nu_new, sig2_new
        if done:
            return NullEstimates(nu, sig2)
    raise NoConvergence("null estimates did not converge", NullEstimates(nu, sig2))


def null_estimates(sample) -> NullEstimates:
    """Precision-weighted mean velocity and moment estimate of the dispersion, assuming no streaming."""
    return _null_estimates(sample.y, sample.sigma ** 2)


def _region(sample, r0, side):
    if side == "above":
        return sample.r > r0
    if side == "below":
        return sample.r < r0
    raise ValueError("side must be 'above' or 'below'")


def _side_weights(sample, null, weights):
    s2 = sample.sigma ** 2
    return 1.0 / s2 if weights == "raw" else 1.0 / (null.sigma0_sq + s2)


def delta1_v(sample, omega, r0, null: Optional[NullEstimates] = None, *, side="above",
             weights="corrected") -> float:
    """Difference of weighted mean velocities across the bisector ``cos(theta - omega) = 0``.

    Only stars beyond ``r0`` (``side='below'``: inside ``r0``) take part. With
    ``weights='raw'`` the weights are ``1/sigma_i^2`` instead of
    ``1/(sigma0^2 + sigma_i^2)``.
    """
    null = null if null is not None else null_estimates(sample)
    keep = _region(sample, r0, side)
    w = _side_weights(sample, null, weights)[keep]
    y = sample.y[keep]
    pos = np.cos(np.deg2rad(sample.theta[keep] - omega)) > 0
    if not pos.any() or pos.all():
        raise EmptySide(f"bisector at omega={omega} leaves one side empty")
    return float(np.sum(w[pos] * y[pos]) / np.sum(w[pos])
                 - np.sum(w[~pos] * y[~pos]) / np.sum(w[~pos]))


class _Bisector:
    # Delta1V(omega) is constant between the breakpoints theta_i +/- 90, so one
    # midpoint per arc suffices; side membership depends only on positions.
    def __init__(self, theta):
        if theta.size == 0:
            raise EmptySide("no stars in the selected region")
        bps = np.unique(reduce_angle(np.r_[theta + 90.0, theta - 90.0]))
        nxt = np.r_[bps[1:], bps[0] + 360.0]
        mids = reduce_angle(0.5 * (bps + nxt))
        order = np.argsort(mids, kind="stable")
        self.mids = mids[order]
        self.pos = np.cos(np.deg2rad(theta[None, :] - self.mids[:, None])) > 0

    def curve(self, y, w):
        pos = self.pos.astype(float)
        neg = 1.0 - pos
        wy = w * y
        wp, wn = pos @ w, neg @ w
        with np.errstate(invalid="ignore", divide="ignore"):
            vals = (pos @ wy) / wp - (neg @ wy) / wn
        vals[(wp <= 0) | (wn <= 0)] = np.nan
        return vals


def bisector_B1(sample, r0, null: Optional[NullEstimates] = None, *, side="above",
                weights="corrected"):
    """Exact maximum of ``Delta1V`` over the bisector direction.

    Returns ``(B1, omega_argmax)``; ties go to the smallest arc midpoint in [-180, 180).
    """
    null = null if null is not None else null_estimates(sample)
    keep = _region(sample, r0, side)
    bis = _Bisector(sample.theta[keep])
    vals = bis.curve(sample.y[keep], _side_weights(sample, null, weights)[keep])
    if np.all(np.isnan(vals)):
        raise EmptySide("every bisector leaves one side empty")
    k = int(np.nanargmax(vals))
    return float(vals[k]), float(bis.mids[k])


def f_statistic(sample, fit: CosineFit, *, truncated=True) -> float:
    """``sum w_i cos^2(theta_i) lambda(r_i)^2`` with the fitted weights."""
    lam = fit.lambda_obs if truncated else fit.lambda_obs_raw
    w = fit_weights(sample, fit)
    return float(np.sum(w * sample.cos ** 2 * lam ** 2))


def f_rho(sample, fit: CosineFit, rho0) -> float:
    """Partial F statistic over stars with ``r <= rho0``."""
    keep = sample.r <= rho0
    w = fit_weights(sample, fit)[keep]
    return float(np.sum(w * sample.cos[keep] ** 2 * fit.lambda_obs[keep] ** 2))


@dataclass(frozen=True)
class PermutationResult:
    statistic: str
    params: dict
    stat_observed: float
    n_perm: int
    n_exceed_strict: int
    n_geq: int
    p_strict: float
    p_conservative: float
    seed: int
    permuted_stats: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("permuted_stats")
        return d


def make_statistic(sample, name, *, r0=None, rho0=None, side="above", weights="corrected",
                   fit_kwargs=None):
    """Return ``T(y, sigma)`` for fixed positions; plug-in estimates are recomputed per call."""
    fit_kwargs = dict(fit_kwargs or {})
    if name in ("B1", "absDelta1V0"):
        if r0 is None:
            raise BadStatistic(f"{name} needs r0")
        keep = _region(sample, r0, side)
        theta = sample.theta[keep]
        if name == "B1":
            bis = _Bisector(theta)
        else:
            pos = cosd(theta) > 0
            if not pos.any() or pos.all():
                raise EmptySide("major-axis bisector leaves one side empty")

        def stat(y, sigma):
            s2 = sigma ** 2
            null = _null_estimates(y, s2)
            w = (1.0 / s2 if weights == "raw" else 1.0 / (null.sigma0_sq + s2))[keep]
            yk = y[keep]
            if name == "B1":
                vals = bis.curve(yk, w)
                return float(np.nanmax(vals)) if not np.all(np.isnan(vals)) else np.nan
            return abs(float(np.sum(w[pos] * yk[pos]) / np.sum(w[pos])
                             - np.sum(w[~pos] * yk[~pos]) / np.sum(w[~pos])))
        return stat

    if name in ("F", "F_untruncated", "F_rho"):
        if name == "F_rho" and rho0 is None:
            raise BadStatistic("F_rho needs rho0")

        def stat(y, sigma):
            s = sample.with_pairs(y, sigma)
            fit = fit_cosine_model(s, **fit_kwargs)
            if name == "F_rho":
                return f_rho(s, fit, rho0)
            return f_statistic(s, fit, truncated=(name == "F"))
        return stat

    raise BadStatistic(f"unknown statistic {name!r}; choose from {', '.join(STATISTICS)}")


def _perm_chunk(stat, y, sigma, m, seed, indices):
    out = np.empty(len(indices))
    for j, idx in enumerate(indices):
        perm = np.arange(y.size)
        perm[:m] = rng.generator(seed, "permutation", idx).permutation(m)
        out[j] = stat(y[perm], sigma[perm])
    return out


def run_replicates(func, n, n_jobs=1, chunk=None):
    """Evaluate ``func(indices) -> array`` over ``range(n)``; order and parallelism do not matter."""
    if n_jobs == 1 or n < 2:
        return func(list(range(n)))
    chunk = chunk or max(1, -(-n // (4 * abs(n_jobs) if n_jobs > 0 else 8)))
    parts = [list(range(i, min(n, i + chunk))) for i in range(0, n, chunk)]
    res = Parallel(n_jobs=n_jobs)(delayed(func)(p) for p in parts)
    return np.concatenate(res)


def permutation_test(sample, statistic, *, n_perm, seed, scope="all", r0=None, rho0=None,
                     side="above", weights="corrected", fit_kwargs=None, n_jobs=1,
                     tie_rtol=1e-9) -> PermutationResult:
    """Monte Carlo permutation test of no streaming.

    ``scope='all'`` permutes all ``(y, sigma)`` pairs; ``scope='first_m'``
    permutes only the pairs with ``r <= rho0``. Permutation ``k`` is drawn
    from the stream keyed by ``(seed, k)``. Statistics within ``tie_rtol``
    (relative) of the observed value count as ties.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    stat = make_statistic(sample, statistic, r0=r0, rho0=rho0, side=side, weights=weights,
                          fit_kwargs=fit_kwargs)
    if scope == "all":
        m = sample.n
    elif scope == "first_m":
        if rho0 is None:
            raise ValueError("scope='first_m' needs rho0")
        m = int(np.searchsorted(sample.r, rho0, side="right"))
    else:
        raise ValueError("scope must be 'all' or 'first_m'")
    y, sigma = np.array(sample.y), np.array(sample.sigma)
    t_obs = stat(y, sigma)
    perm_stats = run_replicates(lambda idx: _perm_chunk(stat, y, sigma, m, seed, idx),
                                n_perm, n_jobs)
    tol = tie_rtol * max(1.0, abs(t_obs))
    n_gt = int(np.sum(perm_stats > t_obs + tol))
    n_geq = int(np.sum(perm_stats >= t_obs - tol))
    params = {k: v for k, v in (("r0", r0), ("rho0", rho0), ("scope", scope)) if v is not None}
    if statistic in ("B1", "absDelta1V0"):
        params.update(side=side, weights=weights)
    return PermutationResult(statistic, params, float(t_obs), int(n_perm), n_gt, n_geq,
                             n_gt / n_perm, (1 + n_geq) / (1 + n_perm), int(seed), perm_stats)


@dataclass(frozen=True)
class ThresholdBound:
    grid: np.ndarray
    p_values: np.ndarray
    accepted: np.ndarray
    alpha: float
    upper_bound: Optional[float]
    first_rejection: Optional[float]
    results: list = field(repr=False, compare=False)

    @property
    def acceptance_set(self):
        return [float(g) for g, a in zip(self.grid, self.accepted) if a]

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "grid": [float(g) for g in self.grid],
            "p_conservative": [float(p) for p in self.p_values],
            "accepted": [bool(a) for a in self.accepted],
            "acceptance_set": self.acceptance_set,
            "upper_bound": self.upper_bound,
            "first_rejection": self.first_rejection,
        }


def threshold_upper_bound(sample, alpha, n_perm, grid, seed, *, fit_kwargs=None, n_jobs=1):
    """Upper confidence bound for the streaming threshold.

    At each grid radius ``rho0`` the hypothesis ``threshold >= rho0`` is tested
    with ``F_rho`` permuting only the stars inside ``rho0``. ``upper_bound`` is
    the smallest rejected radius beyond which every grid radius is also
    rejected; ``first_rejection`` is the smallest rejected radius outright.
    """
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    results = [permutation_test(sample, "F_rho", n_perm=n_perm, seed=rng.derive_seed(seed, "rho0", k),
                                scope="first_m", rho0=float(g), fit_kwargs=fit_kwargs, n_jobs=n_jobs)
               for k, g in enumerate(grid)]
    p = np.array([res.p_conservative for res in results])
    accepted = p > alpha
    rejected = ~accepted
    first = float(grid[np.argmax(rejected)]) if rejected.any() else None
    upper = None
    if rejected[-1]:
        k = grid.size - 1
        while k > 0 and rejected[k - 1]:
            k -= 1
        upper = float(grid[k])
    return ThresholdBound(grid, p, accepted, float(alpha), upper, first, results)
