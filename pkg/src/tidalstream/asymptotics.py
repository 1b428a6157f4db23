"""Monte Carlo for the limiting laws of the monotone estimators.

Paths are ``X_{c,d}(t) = c W(t) + d t^2`` on the grid ``t_i = (i - N) dt``
with two-sided Brownian motion ``W`` pinned at ``W(0) = 0``. Slopes of a
path's convex minorant live on the ``2N`` cells ``(t_j, t_{j+1}]``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from tidalstream import rng
from tidalstream.errors import BadGrid, NonPositiveArg, NonPositiveCurvature
from tidalstream.kernels import d_statistic, pava
from tidalstream.streaming import run_replicates

GUARD_CELLS = 50


class TruncationWarning(UserWarning):
    """Some replicates had activity too close to the ends of ``[-L, L]``."""


def _half_count(L, dt):
    if not (L > 0 and dt > 0):
        raise BadGrid("L and dt must be > 0")
    n = int(round(L / dt))
    if n < 1 or abs(n * dt - L) > 1e-9 * L:
        raise BadGrid(f"L={L} is not a multiple of dt={dt}")
    return n


def _check_cd(c, d):
    if not (c > 0 and d > 0):
        raise BadGrid("c and d must be > 0")


def _brownian(gen, n, dt):
    z = gen.standard_normal(2 * n) * math.sqrt(dt)
    w = np.empty(2 * n + 1)
    w[n] = 0.0
    w[n + 1:] = np.cumsum(z[:n])
    w[:n] = np.cumsum(z[n:])[::-1]
    return w


@dataclass(frozen=True, eq=False)
class MCPath:
    grid: np.ndarray
    values: np.ndarray
    c: float
    d: float
    seed: int
    index: int = 0

    @property
    def dt(self):
        return float(self.grid[1] - self.grid[0])

    @property
    def izero(self):
        return (self.grid.size - 1) // 2


def _grid(n, dt):
    return (np.arange(2 * n + 1) - n) * dt


def simulate_path(c=1.0, d=1.0, L=8.0, dt=0.005, seed=0, index=0, stage="path") -> MCPath:
    _check_cd(c, d)
    n = _half_count(L, dt)
    t = _grid(n, dt)
    w = _brownian(rng.generator(seed, stage, index), n, dt)
    x = c * w + d * t * t
    x[n] = 0.0
    return MCPath(t, x, float(c), float(d), int(seed), int(index))


def _cell_slopes(x, dt):
    return pava(np.full(x.size - 1, dt), np.diff(x))


def slogcm_path(path: MCPath, interval=None):
    """Left slopes of the convex minorant of the path restricted to ``interval``.

    Returns ``(t, slopes)`` where ``slopes[k]`` is the slope on ``(t[k]-dt, t[k]]``.
    """
    t, x = path.grid, path.values
    if interval is not None:
        lo, hi = interval
        keep = (t >= lo - 1e-12) & (t <= hi + 1e-12)
        t, x = t[keep], x[keep]
    return t[1:], _cell_slopes(x, path.dt)


def slogcm0_path(path: MCPath):
    """Constrained slopes: left half capped at 0, right half floored at 0."""
    n, x, dt = path.izero, path.values, path.dt
    left = np.minimum(_cell_slopes(x[:n + 1], dt), 0.0)
    right = np.maximum(_cell_slopes(x[n:], dt), 0.0)
    return path.grid[1:], np.r_[left, right]


def gcm_values(path: MCPath):
    """Convex minorant of the path at the grid points, anchored at the left end."""
    s = _cell_slopes(path.values, path.dt)
    return path.values[0] + np.r_[0.0, np.cumsum(s * path.dt)]


@dataclass(frozen=True, eq=False)
class MCSamples:
    name: str
    values: np.ndarray
    flags: np.ndarray
    params: dict
    seed: int

    @property
    def n_flagged(self):
        return int(self.flags.sum())

    def quantiles(self, levels):
        return np.quantile(self.values, levels)


def _warn_if_flagged(name, flags):
    k = int(flags.sum())
    if k:
        warnings.warn(f"{name}: {k} of {flags.size} replicates hit the truncation guard",
                      TruncationWarning, stacklevel=3)


def sample_D(c=1.0, d=1.0, n_reps=10_000, L=8.0, dt=0.005, seed=0, *, n_jobs=1,
             guard=GUARD_CELLS) -> MCSamples:
    """Draws of the squared-slope discrepancy between free and zero-pinned minorant slopes."""
    _check_cd(c, d)
    n = _half_count(L, dt)
    t2 = _grid(n, dt) ** 2

    def chunk(indices):
        out = np.empty((len(indices), 2))
        for j, k in enumerate(indices):
            x = c * _brownian(rng.generator(seed, "sample_D", k), n, dt) + d * t2
            out[j] = d_statistic(x, dt, n, guard)
        return out

    res = run_replicates(chunk, n_reps, n_jobs)
    flags = res[:, 1].astype(bool)
    _warn_if_flagged("sample_D", flags)
    return MCSamples("D", res[:, 0], flags, {"c": c, "d": d, "L": L, "dt": dt}, int(seed))


def sample_chernoff(n_reps=10_000, L=8.0, dt=0.005, seed=0, *, c=1.0, d=1.0, n_jobs=1,
                    guard=GUARD_CELLS) -> MCSamples:
    """Grid argmin of ``c W(t) + d t^2`` (smallest index on ties)."""
    _check_cd(c, d)
    n = _half_count(L, dt)
    t = _grid(n, dt)

    def chunk(indices):
        out = np.empty((len(indices), 2))
        for j, k in enumerate(indices):
            x = c * _brownian(rng.generator(seed, "chernoff", k), n, dt) + d * t * t
            i = int(np.argmin(x))
            out[j] = t[i], (i < guard or i > 2 * n - guard)
        return out

    res = run_replicates(chunk, n_reps, n_jobs)
    flags = res[:, 1].astype(bool)
    _warn_if_flagged("chernoff", flags)
    return MCSamples("chernoff", res[:, 0], flags, {"c": c, "d": d, "L": L, "dt": dt},
                     int(seed))


def chernoff_pivot_constant(lambda_prime, C, fcos2_integral):
    """Scale ``2 |lambda' / (2 C int f cos^2)|^(1/3)`` of the cube-root pivot."""
    for name, v in (("lambda_prime", lambda_prime), ("C", C), ("fcos2_integral", fcos2_integral)):
        if not v > 0:
            raise NonPositiveArg(f"{name} must be > 0, got {v}")
    return 2.0 * abs(lambda_prime / (2.0 * C * fcos2_integral)) ** (1.0 / 3.0)


@dataclass(frozen=True)
class LimitParams:
    """Constants of the split-point limit at the split radius ``gamma``.

    ``a`` scales the Brownian part and ``b`` the drift of ``X_{a,b}``.
    """

    a: float
    b: float
    beta: float
    gamma: float
    lambda_g: float
    lambda_g_prime: float
    h_g: float
    H_tau_minus_H_gamma: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.H_tau_minus_H_gamma > 0):
            raise NonPositiveArg("a, b and H(tau) - H(gamma) must be > 0")

    @classmethod
    def from_model(cls, beta, gamma, lambda_g, lambda_g_prime, h_g, H_tau_minus_H_gamma,
                   C, fcos2_integral):
        """``a = (C int f cos^2)^(-1/2)``, ``b = lambda'(gamma) / 2``."""
        if not (C > 0 and fcos2_integral > 0):
            raise NonPositiveArg("C and fcos2_integral must be > 0")
        return cls(1.0 / math.sqrt(C * fcos2_integral), 0.5 * lambda_g_prime, beta, gamma,
                   lambda_g, lambda_g_prime, h_g, H_tau_minus_H_gamma)

    @property
    def V(self):
        h, lam, dH = self.h_g, self.lambda_g, self.H_tau_minus_H_gamma
        v11 = 2.0 * dH
        v12 = -2.0 * lam * h
        v22 = 4.0 * lam * self.lambda_g_prime * h
        return np.array([[v11, v12], [v12, v22]])

    @property
    def c_simplified(self):
        lam, h, dH = self.lambda_g, self.h_g, self.H_tau_minus_H_gamma
        return 0.5 * (self.lambda_g_prime - 0.5 * lam * h / dH)


@dataclass(frozen=True, eq=False)
class SplitLimitSamples:
    form: str
    t2: np.ndarray
    t1: Optional[np.ndarray]
    params: LimitParams
    flags: np.ndarray
    seed: int


def sample_split_limit(params: LimitParams, n_reps=2000, L=8.0, dt=0.005, seed=0,
                       form="simplified", *, n_jobs=1, guard=GUARD_CELLS) -> SplitLimitSamples:
    """Argmin of the split-point limit process.

    ``joint`` minimizes ``2 beta h [G(t2) - G(0) - b t2^2] + t'Vt/2``, with
    ``t1`` eliminated in closed form (``t1 = -V12 t2 / V11``); ``simplified``
    minimizes ``G(t2) - b t2^2 + c t2^2``. ``G`` is the convex minorant of
    ``a W(t) + b t^2``; both forms use the same paths for the same seed.
    """
    if form not in ("joint", "simplified"):
        raise ValueError("form must be 'joint' or 'simplified'")
    p = params
    V = p.V
    schur = V[1, 1] - V[0, 1] ** 2 / V[0, 0]
    if form == "simplified" and p.c_simplified <= 0:
        raise NonPositiveCurvature(f"c = {p.c_simplified} <= 0; the limit is ill-posed")
    if form == "joint" and schur <= 0:
        raise NonPositiveCurvature("V is not positive definite; the limit is ill-posed")
    n = _half_count(L, dt)
    t = _grid(n, dt)
    scale = 2.0 * p.beta * p.h_g

    def chunk(indices):
        out = np.empty((len(indices), 2))
        for j, k in enumerate(indices):
            x = p.a * _brownian(rng.generator(seed, "split_limit", k), n, dt) + p.b * t * t
            s = _cell_slopes(x, dt)
            G = x[0] + np.r_[0.0, np.cumsum(s * dt)]
            if form == "joint":
                obj = scale * (G - G[n] - p.b * t * t) + 0.5 * schur * t * t
            else:
                obj = G - p.b * t * t + p.c_simplified * t * t
            i = int(np.argmin(obj))
            out[j] = t[i], (i < guard or i > 2 * n - guard)
        return out

    res = run_replicates(chunk, n_reps, n_jobs)
    t2 = res[:, 0]
    t1 = -V[0, 1] * t2 / V[0, 0] if form == "joint" else None
    flags = res[:, 1].astype(bool)
    _warn_if_flagged("split_limit", flags)
    return SplitLimitSamples(form, t2, t1, p, flags, int(seed))


QUANTILE_HEADER = ["name", "params", "level", "quantile", "n_reps", "mc_se"]


def _params_text(params):
    return ";".join(f"{k}={params[k]!r}" for k in sorted(params))


def quantile_se(values, level, z=1.959963984540054):
    """Standard error of an empirical quantile from the order-statistic confidence interval."""
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    half = z * math.sqrt(n * level * (1 - level))
    lo = min(max(int(math.floor(n * level - half)), 0), n - 1)
    hi = min(max(int(math.ceil(n * level + half)), 0), n - 1)
    return float((x[hi] - x[lo]) / (2 * z))


def quantile_table(samples: MCSamples, levels=(0.9, 0.95)):
    rows = []
    for level in levels:
        rows.append({"name": samples.name, "params": _params_text(samples.params),
                     "level": float(level), "quantile": float(np.quantile(samples.values, level)),
                     "n_reps": int(samples.values.size),
                     "mc_se": quantile_se(samples.values, level)})
    return rows


def write_quantile_table(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QUANTILE_HEADER)
        for r in rows:
            w.writerow([r["name"], r["params"], repr(r["level"]), repr(r["quantile"]),
                        r["n_reps"], repr(r["mc_se"])])


def read_quantile_table(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != QUANTILE_HEADER:
            raise ValueError(f"expected header {','.join(QUANTILE_HEADER)}")
        return [{"name": r["name"], "params": r["params"], "level": float(r["level"]),
                 "quantile": float(r["quantile"]), "n_reps": int(r["n_reps"]),
                 "mc_se": float(r["mc_se"])} for r in reader]


def lookup_quantile(rows, level, name="D"):
    """Quantile for ``level`` from a table, for use as a confidence-set cutoff."""
    for r in rows:
        if r["name"] == name and abs(r["level"] - level) < 1e-12:
            return r["quantile"]
    raise KeyError(f"no {name} quantile at level {level}")
