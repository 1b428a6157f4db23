"""Weighted isotonic regression and the monotone cosine model.

The cosine model says ``E[y | r, theta] = nu + lambda(r) cos(theta)`` with
``lambda`` nonnegative and nondecreasing. For fixed ``nu`` and dispersion
``sigma2`` the least-squares ``lambda`` is the left slope of the greatest convex
minorant of the cumulative-sum diagram

    T_k = sum_{i<=k} w_i cos^2(theta_i),   L_k = sum_{i<=k} w_i cos(theta_i) (y_i - nu),

clipped at zero, with ``w_i = 1 / (sigma2 + sigma_i^2)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from tidalstream.errors import AllZeroWeights, BadPin, NoConvergence, NonPositiveKnot
from tidalstream.kernels import pava
from tidalstream.stepfunc import StepFunction

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CusumDiagram:
    abscissae: np.ndarray
    ordinates: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.abscissae, dtype=float)
        y = np.asarray(self.ordinates, dtype=float)
        if x.shape != y.shape or x.ndim != 1 or x.size < 2:
            raise ValueError("diagram needs at least two points")
        if x[0] != 0.0 or y[0] != 0.0:
            raise ValueError("diagram must start at (0, 0)")
        if np.any(np.diff(x) < 0):
            raise ValueError("abscissae must be nondecreasing")
        object.__setattr__(self, "abscissae", x)
        object.__setattr__(self, "ordinates", y)

    @classmethod
    def from_increments(cls, dx, dy):
        return cls(np.r_[0.0, np.cumsum(dx)], np.r_[0.0, np.cumsum(dy)])


def cusum_diagram(sample, nu, sigma2):
    w = 1.0 / (sigma2 + sample.sigma ** 2)
    c = sample.cos
    return CusumDiagram.from_increments(w * c * c, w * c * (sample.y - nu))


def gcm_left_slopes(diagram: CusumDiagram) -> np.ndarray:
    """Left-hand slopes of the greatest convex minorant at ``T_1..T_n``.

    A point with zero abscissa increment takes the slope of the minorant
    segment leaving its abscissa (the previous one if none follows).
    """
    dx = np.diff(diagram.abscissae)
    dy = np.diff(diagram.ordinates)
    try:
        return pava(dx, dy)
    except ValueError:
        raise AllZeroWeights("diagram has no positive abscissa increment") from None


def weighted_isotonic(z, w) -> np.ndarray:
    """Minimise ``sum w_i (z_i - u_i)^2`` over nondecreasing ``u``."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if z.shape != w.shape:
        raise ValueError("z and w must have the same length")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and >= 0")
    if not np.any(w > 0):
        raise AllZeroWeights("all weights are zero")
    return pava(w, w * z)


def maxmin_isotonic(dx, dy) -> np.ndarray:
    """Reference ``max_{i<=k} min_{j>=k} sum(dy[i..j]) / sum(dx[i..j])``, O(n^2).

    Blocks with zero total weight are skipped. Used to cross-check the fast
    path; do not call it on long inputs.
    """
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    n = dx.size
    cx = np.r_[0.0, np.cumsum(dx)]
    cy = np.r_[0.0, np.cumsum(dy)]
    den = cx[None, 1:] - cx[:n, None]
    num = cy[None, 1:] - cy[:n, None]
    upper = np.triu(np.ones((n, n), dtype=bool))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(upper & (den > 0), num / np.where(den > 0, den, 1.0), np.nan)
    # suffix min over j >= k for each i, then prefix max over i <= k
    suffix_min = np.fmin.accumulate(ratio[:, ::-1], axis=1)[:, ::-1]
    masked = np.where(upper, suffix_min, np.nan)
    return np.fmax.accumulate(masked, axis=0)[np.arange(n), np.arange(n)]


def truncate_spike(values, window=13):
    """Replace the last value by the mean of the last ``window`` values.

    The replacement is clamped so it is never below the preceding value.
    """
    values = np.array(values, dtype=float)
    if values.size == 0 or window <= 1:
        return values
    tail = values[-min(window, values.size):]
    new = tail.mean()
    if values.size > 1:
        new = max(new, values[-2])
    values[-1] = new
    return values


@dataclass(frozen=True, eq=False)
class CosineFit:
    nu_hat: float
    sigma2_hat: float
    lambda_hat: StepFunction
    lambda_raw: StepFunction
    iterations: int
    converged: bool
    spike_window: int
    lambda_obs: np.ndarray
    lambda_obs_raw: np.ndarray
    degenerate_variance: bool = False


def fit_weights(sample, fit_or_sigma2):
    s2 = fit_or_sigma2.sigma2_hat if isinstance(fit_or_sigma2, CosineFit) else fit_or_sigma2
    return 1.0 / (s2 + sample.sigma ** 2)


def _lambda_given_nu(y, c, w, nu):
    return np.maximum(0.0, pava(w * c * c, w * c * (y - nu)))


def fit_cosine_model(sample, *, tol=1e-8, max_iter=100, spike_window=13, sigma2=None,
                     strict=False) -> CosineFit:
    """Joint estimate of the systemic velocity, dispersion and streaming amplitude.

    Iterates the weighted mean for ``nu``, the clipped isotonic fit for
    ``lambda`` and the moment equation for ``sigma2`` (floored at 0) until the
    largest change is below ``tol``. Passing ``sigma2`` holds the dispersion
    fixed. The final value of the fitted curve is then replaced by the average
    of the last ``spike_window`` values to curb boundary spiking.

    If the iteration cap is hit the last iterate is returned with
    ``converged=False``; with ``strict=True`` a :class:`NoConvergence` carrying
    it is raised instead.
    """
    from tidalstream.streaming import null_estimates

    y, c, s2 = sample.y, sample.cos, sample.sigma ** 2
    if sigma2 is None:
        start = null_estimates(sample)
        nu, sig2 = start.nu0, start.sigma0_sq
    else:
        sig2 = float(sigma2)
        w = 1.0 / (sig2 + s2)
        nu = float(np.sum(w * y) / np.sum(w))
    lam = np.zeros_like(y)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = 1.0 / (sig2 + s2)
        lam_new = _lambda_given_nu(y, c, w, nu)
        nu_new = float(np.sum(w * (y - lam_new * c)) / np.sum(w))
        if sigma2 is None:
            resid = y - nu_new - lam_new * c
            sig2_new = max(0.0, float(np.mean(resid * resid - s2)))
        else:
            sig2_new = sig2
        delta = max(abs(nu_new - nu), abs(sig2_new - sig2), float(np.max(np.abs(lam_new - lam))))
        nu, sig2, lam = nu_new, sig2_new, lam_new
        if delta < tol:
            converged = True
            break
    truncated = truncate_spike(lam, spike_window)
    fit = CosineFit(
        nu_hat=nu,
        sigma2_hat=sig2,
        lambda_hat=StepFunction.from_points(sample.r, truncated),
        lambda_raw=StepFunction.from_points(sample.r, lam),
        iterations=it,
        converged=converged,
        spike_window=spike_window,
        lambda_obs=truncated,
        lambda_obs_raw=lam,
        degenerate_variance=(sigma2 is None and sig2 == 0.0),
    )
    if not converged:
        if strict:
            raise NoConvergence(f"cosine fit did not converge in {max_iter} iterations", fit)
        log.debug("cosine fit stopped at max_iter=%d without converging", max_iter)
    return fit


@dataclass(frozen=True, eq=False)
class PinnedFit:
    lambda_fit: StepFunction
    nu: float
    sse: float
    values: np.ndarray
    iterations: int


def _solve_fixed_dispersion(sample, w, r0=None, xi0=None, nu=None, tol=1e-12, max_iter=5000):
    # Coordinate descent on (nu, u); u optionally pinned at u(r0) = xi0.
    y, c, r = sample.y, sample.cos, sample.r
    if nu is None:
        nu = float(np.sum(w * y) / np.sum(w))
    a, b = w * c * c, w * c
    if r0 is not None:
        left = np.searchsorted(r, r0, side="left")   # r < r0
        right = np.searchsorted(r, r0, side="right")  # r > r0 from here
    u = np.zeros_like(y)
    W = np.sum(w)
    it = 0
    for it in range(1, max_iter + 1):
        s = b * (y - nu)
        if r0 is None:
            u_new = np.maximum(0.0, pava(a, s))
        else:
            u_new = np.empty_like(u)
            if left > 0:
                u_new[:left] = np.clip(_pava_or_zero(a[:left], s[:left]), 0.0, xi0)
            u_new[left:right] = xi0
            if right < y.size:
                u_new[right:] = np.maximum(_pava_or_zero(a[right:], s[right:]), xi0)
        nu_new = float(np.sum(w * (y - u_new * c)) / W)
        delta = max(abs(nu_new - nu), float(np.max(np.abs(u_new - u))))
        nu, u = nu_new, u_new
        if delta < tol:
            break
    resid = y - nu - u * c
    return u, nu, float(np.sum(w * resid * resid)), it


def _pava_or_zero(a, s):
    if not np.any(a > 0):
        return np.zeros_like(a)
    return pava(a, s)


def fit_pinned(sample, r0, xi0, sigma2, *, nu_start=None, tol=1e-12, max_iter=5000) -> PinnedFit:
    """Weighted least squares with ``u`` nonnegative, nondecreasing and ``u(r0) = xi0``.

    ``sigma2`` is held fixed; ``nu`` is re-optimised jointly with ``u``. Stars
    left of ``r0`` get slopes capped at ``xi0``, stars right of it slopes
    floored at ``xi0``, and stars exactly at ``r0`` are set to ``xi0``.
    """
    if not xi0 >= 0:
        raise BadPin(f"pin value must be >= 0, got {xi0}")
    if not sample.r[0] <= r0 <= sample.r[-1]:
        raise BadPin(f"r0={r0} outside data range [{sample.r[0]}, {sample.r[-1]}]")
    w = fit_weights(sample, sigma2)
    u, nu, sse, it = _solve_fixed_dispersion(sample, w, r0, float(xi0), nu_start, tol, max_iter)
    return PinnedFit(StepFunction.from_points(sample.r, u), nu, sse, u, it)


def unconstrained_sse(sample, sigma2, *, nu_start=None, tol=1e-12, max_iter=5000):
    """Minimum weighted SSE over ``nu`` and nonnegative nondecreasing ``u`` at fixed dispersion."""
    w = fit_weights(sample, sigma2)
    return _solve_fixed_dispersion(sample, w, None, None, nu_start, tol, max_iter)[2]


class SmoothLambda:
    """Gaussian-kernel smoothing of a step function in log radius.

    Because the input is a step function in ``u = log r``, the convolution is
    ``v_1 + sum_j (v_{j+1} - v_j) Phi((log r - log k_j) / b)``.
    """

    def __init__(self, step: StepFunction, bandwidth: float):
        if not bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        if np.any(step.knots <= 0):
            raise NonPositiveKnot("log-scale smoothing needs positive knots")
        self.step = step
        self.bandwidth = float(bandwidth)
        self._logk = np.log(step.knots[:-1])
        self._jumps = np.diff(step.values)
        self._base = float(step.values[0])

    def _z(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            lr = np.log(r)
        return (lr[..., None] - self._logk) / self.bandwidth

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self._jumps.size == 0:
            return np.full(r.shape, self._base)
        return self._base + ndtr(self._z(r)) @ self._jumps

    def derivative(self, r):
        """d/dr of the smoothed curve."""
        r = np.asarray(r, dtype=float)
        if self._jumps.size == 0:
            return np.zeros(r.shape)
        z = self._z(r)
        dens = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
        return (dens @ self._jumps) / (self.bandwidth * r)


def smooth_lambda(step: StepFunction, bandwidth: float = 0.1) -> SmoothLambda:
    return SmoothLambda(step, bandwidth)


def weighted_sse(sample, nu, lam_obs, sigma2):
    w = fit_weights(sample, sigma2)
    resid = sample.y - nu - lam_obs * sample.cos
    return float(np.sum(w * resid * resid))
