import os
import subprocess
import sys

import numpy as np
import pytest

from tidalstream import _purepy, kernels
from oracles import d_statistic_oracle, lower_hull_slopes

compiled = pytest.importorskip("tidalstream._kernels")


@pytest.mark.skipif(os.environ.get("TIDALSTREAM_PURE_PYTHON", "") not in ("", "0"),
                    reason="fallback forced")
def test_backend_is_compiled_when_built():
    assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    code = "from tidalstream import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, TIDALSTREAM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("impl", [compiled, _purepy], ids=["cython", "python"])
class TestPava:
    def test_sorted_input_unchanged(self, impl):
        w = np.ones(4)
        np.testing.assert_array_equal(impl.pava(w, np.array([1.0, 2.0, 3.0, 4.0])), [1, 2, 3, 4])

    def test_pooling(self, impl):
        np.testing.assert_allclose(impl.pava(np.ones(3), np.array([3.0, 1.0, 2.0])), [2, 2, 2])

    def test_weighted_pool(self, impl):
        # (2*1 + 1*0) / 3 pooled slope for the first two cells
        got = impl.pava(np.array([2.0, 1.0, 1.0]), np.array([2.0, 0.0, 5.0]))
        np.testing.assert_allclose(got, [2 / 3, 2 / 3, 5.0])

    def test_zero_weight_takes_next_block(self, impl):
        got = impl.pava(np.array([1.0, 0.0, 1.0]), np.array([1.0, 0.0, 3.0]))
        np.testing.assert_allclose(got, [1.0, 3.0, 3.0])

    def test_trailing_zero_weight_takes_last_block(self, impl):
        got = impl.pava(np.array([1.0, 1.0, 0.0]), np.array([1.0, 3.0, 7.0]))
        np.testing.assert_allclose(got, [1.0, 3.0, 3.0])

    def test_all_zero_weights(self, impl):
        with pytest.raises(ValueError):
            impl.pava(np.zeros(3), np.ones(3))

    def test_single(self, impl):
        np.testing.assert_allclose(impl.pava(np.array([2.0]), np.array([3.0])), [1.5])

    def test_matches_hull(self, impl, rng):
        for _ in range(50):
            n = int(rng.integers(2, 60))
            dx = rng.uniform(0.05, 2.0, n)
            dy = rng.normal(size=n)
            x = np.r_[0.0, np.cumsum(dx)]
            y = np.r_[0.0, np.cumsum(dy)]
            np.testing.assert_allclose(impl.pava(dx, dy), lower_hull_slopes(x, y), atol=1e-10)


def _path(rng, n, dt, c=1.0, d=1.0):
    t = (np.arange(2 * n + 1) - n) * dt
    w = np.r_[np.cumsum(rng.normal(0, dt ** 0.5, n))[::-1], 0.0,
              np.cumsum(rng.normal(0, dt ** 0.5, n))]
    return c * w + d * t * t


@pytest.mark.parametrize("impl", [compiled, _purepy], ids=["cython", "python"])
def test_d_statistic_matches_hull_oracle(impl, rng):
    for _ in range(20):
        x = _path(rng, 200, 0.02)
        d, _ = impl.d_statistic(x, 0.02, 200, 5)
        assert d >= 0.0
        assert d == pytest.approx(d_statistic_oracle(x, 0.02), abs=1e-9)


def test_backends_agree(rng):
    for _ in range(30):
        n = int(rng.integers(1, 300))
        w = rng.uniform(0, 1, n) * (rng.random(n) > 0.2)
        if not np.any(w > 0):
            w[0] = 1.0
        s = rng.normal(size=n)
        np.testing.assert_allclose(compiled.pava(w, s), _purepy.pava(w, s), rtol=1e-12,
                                   atol=1e-12)
    for _ in range(5):
        x = _path(rng, 400, 0.01)
        a = compiled.d_statistic(x, 0.01, 400, 50)
        b = _purepy.d_statistic(x, 0.01, 400, 50)
        assert a[1] == b[1]
        assert a[0] == pytest.approx(b[0], rel=1e-12, abs=1e-14)


def test_boundary_flag_raised_when_slopes_differ_near_edge():
    # Slope -1 everywhere: the right half is floored to 0, the left half is untouched.
    n, dt = 100, 0.01
    t = (np.arange(2 * n + 1) - n) * dt
    d, flag = kernels.d_statistic(-t, dt, n, 10)
    assert flag
    assert d == pytest.approx(dt * n)
