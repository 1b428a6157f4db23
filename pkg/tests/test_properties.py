"""Property-based checks of the invariants the estimators rely on."""

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_isotonic, lower_hull_slopes
from tidalstream import _purepy
from tidalstream.data import StarRecord, trim_members, validate_and_order
from tidalstream.intervals import DeltaSSE, IntervalSet, sublevel_intervals
from tidalstream.isotonic import (CusumDiagram, fit_cosine_model, gcm_left_slopes,
                                  maxmin_isotonic, smooth_lambda, truncate_spike,
                                  weighted_isotonic)
from tidalstream.kernels import pava
from tidalstream.stepfunc import StepFunction

finite = st.floats(-100, 100, allow_nan=False, width=64)
posw = st.floats(0.05, 10.0, allow_nan=False)


@st.composite
def zw(draw, min_size=1, max_size=40, allow_zero=True):
    n = draw(st.integers(min_size, max_size))
    z = draw(arrays(float, n, elements=finite))
    wel = st.one_of(st.just(0.0), posw) if allow_zero else posw
    w = draw(arrays(float, n, elements=wel))
    assume(np.any(w > 0))
    return z, w


@st.composite
def star_records(draw, min_size=2, max_size=14, with_p=False):
    n = draw(st.integers(min_size, max_size))
    recs = []
    for _ in range(n):
        recs.append(StarRecord(
            r=draw(st.floats(1.0, 1000.0)),
            theta=draw(st.floats(-720.0, 720.0)),
            y=draw(st.floats(-300.0, 300.0)),
            sigma=draw(st.floats(0.5, 20.0)),
            p_member=draw(st.floats(0.0, 1.0)) if with_p else None))
    return recs


@given(zw())
def test_isotonic_is_monotone_and_preserves_weighted_mean(data):
    z, w = data
    u = weighted_isotonic(z, w)
    assert np.all(np.diff(u) >= -1e-9 * (1 + np.abs(u[1:])))
    assert np.isclose(np.sum(w * u), np.sum(w * z), atol=1e-8 * (1 + np.sum(w * np.abs(z))))


@given(zw(max_size=9, allow_zero=False))
def test_isotonic_matches_exhaustive_search(data):
    z, w = data
    np.testing.assert_allclose(weighted_isotonic(z, w), brute_isotonic(z, w), atol=1e-8)


@given(zw())
def test_compiled_and_python_kernels_agree(data):
    z, w = data
    np.testing.assert_allclose(pava(w, w * z), _purepy.pava(w, w * z), rtol=1e-12, atol=1e-12)


@given(zw(max_size=25))
def test_maxmin_equals_gcm_slopes(data):
    y, x = data
    d = CusumDiagram.from_increments(x, x * y)
    np.testing.assert_allclose(gcm_left_slopes(d), maxmin_isotonic(x, x * y), atol=1e-8)


@given(zw(min_size=2, max_size=25, allow_zero=False))
def test_gcm_slopes_match_hull(data):
    y, dx = data
    d = CusumDiagram.from_increments(dx, dx * y)
    np.testing.assert_allclose(gcm_left_slopes(d),
                               lower_hull_slopes(d.abscissae, d.ordinates), atol=1e-7)


@given(arrays(float, st.integers(1, 30), elements=finite), st.integers(1, 20))
def test_truncate_spike_keeps_order(v, window):
    v = np.sort(v)
    out = truncate_spike(v, window)
    assert np.all(np.diff(out) >= 0)
    np.testing.assert_array_equal(out[:-1], v[:-1])
    assert out[-1] <= v[-1] + 1e-12


@given(arrays(float, st.integers(1, 8), elements=st.floats(0.0, 50.0)),
       st.floats(0.02, 1.0))
def test_smoothing_preserves_monotonicity(steps, bw):
    vals = np.cumsum(steps)
    knots = np.arange(1, vals.size + 1) * 10.0
    sm = smooth_lambda(StepFunction(knots, vals), bw)
    r = np.geomspace(0.5, 200.0, 400)
    f = sm(r)
    assert np.all(np.diff(f) >= -1e-9)
    assert np.all(f >= vals[0] - 1e-9) and np.all(f <= vals[-1] + 1e-9)


@given(star_records(), st.floats(0.0, 3.0), st.integers(0, 13))
def test_delta_sse_nonnegative(recs, xi, k):
    s = validate_and_order(recs)
    fit = fit_cosine_model(s)
    d = DeltaSSE(s, fit, s.r[k % s.n])
    scale = float(np.max(np.abs(fit.lambda_hat.values))) + 1.0
    assert d(xi * scale) >= 0.0


@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(0, 10)), max_size=6))
def test_interval_set_invariants(raw):
    ivs = sorted((a, a + w) for a, w in raw)
    merged = []
    for a, b in ivs:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    s = IntervalSet(merged)
    assert s.to_list() == [list(p) for p in merged]
    for a, b in merged:
        assert a in s and b in s and 0.5 * (a + b) in s
        assert IntervalSet([(a, b)]).issubset(s)
    if merged:
        assert s.hull == (merged[0][0], merged[-1][1])
    assert s.issubset(IntervalSet([(-1e3, 1e3)]))


@given(arrays(float, st.integers(2, 40), elements=st.floats(-5, 5)), st.floats(-5, 5))
def test_sublevel_set_contains_grid_points_below(f, c):
    x = np.arange(f.size, dtype=float)
    s = IntervalSet(sublevel_intervals(x, f, c))
    for xi, fi in zip(x, f):
        if fi < c:
            assert xi in s


@given(star_records())
def test_validate_and_order_idempotent(recs):
    s = validate_and_order(recs)
    assert np.all(np.diff(s.r) >= 0)
    assert np.all((s.theta >= -180) & (s.theta < 180))
    assert validate_and_order(s) == s
    assert validate_and_order(s.records) == s


@given(star_records(min_size=0, with_p=True), st.floats(0.01, 0.99))
def test_trim_partitions(recs, cutoff):
    kept, dropped = trim_members(recs, cutoff)
    assert len(kept) + len(dropped) == len(recs)
    assert all(r.p_member >= cutoff for r in kept)
    assert all(r.p_member < cutoff for r in dropped)
    assert [r for r in recs if r in kept] == kept
