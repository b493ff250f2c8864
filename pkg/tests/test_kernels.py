import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinpurify import _kernels_py, kernels

try:
    from twinpurify import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

needs_ext = pytest.mark.skipif(_kernels_c is None, reason="compiled extension not built")


def _surv(seed, n):
    rng = np.random.default_rng(seed)
    time = np.round(rng.exponential(5.0, n), 0) + 1.0  # plenty of ties
    event = rng.random(n) < 0.7
    return rng, time, event


class TestBackendSelection:
    def test_backend_name(self):
        assert kernels.BACKEND in ("cython", "python")
        if _kernels_c is not None and not os.environ.get("TWINPURIFY_PURE_PYTHON"):
            assert kernels.BACKEND == "cython"

    def test_env_forces_python(self):
        env = dict(os.environ, TWINPURIFY_PURE_PYTHON="1")
        out = subprocess.run([sys.executable, "-c", "from twinpurify import kernels; print(kernels.BACKEND)"],
                             env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"


@needs_ext
class TestAgreement:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 60), st.integers(1, 4))
    def test_cox(self, seed, n, p):
        rng, time, event = _surv(seed, n)
        X, beta = rng.standard_normal((n, p)), rng.normal(0, 0.5, p)
        a = _kernels_py.cox_breslow(X, time, event, beta, True)
        b = _kernels_c.cox_breslow(X, time, event, beta, True)
        assert abs(a[0] - b[0]) <= 1e-10 * max(1.0, abs(a[0]))
        assert np.allclose(a[1], b[1], rtol=1e-10, atol=1e-10)
        assert np.allclose(a[2], b[2], rtol=1e-10, atol=1e-10)
        assert _kernels_c.cox_breslow(X, time, event, beta, False)[2] is None

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 80))
    def test_concordance(self, seed, n):
        rng, time, event = _surv(seed, n)
        scores = np.round(rng.standard_normal(n), 1)
        assert _kernels_py.concordance_counts(time, event, scores) == _kernels_c.concordance_counts(time, event, scores)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_unique_fractions(self, seed, k):
        rng = np.random.default_rng(seed)
        G = 50
        sets = [rng.choice(G, rng.integers(0, 20), replace=False) for _ in range(k)]
        members = np.concatenate(sets).astype(np.int64)
        offsets = np.concatenate([[0], np.cumsum([len(s) for s in sets])]).astype(np.int64)
        assert np.array_equal(_kernels_py.unique_fractions(members, offsets, G),
                              _kernels_c.unique_fractions(members, offsets, G))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 80))
    def test_risk_table(self, seed, n):
        _, time, event = _surv(seed, n)
        grid = np.unique(np.concatenate([time, [0.5, 100.0]]))
        a, b = _kernels_py.risk_table(time, event, grid), _kernels_c.risk_table(time, event, grid)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 5))
    def test_adam(self, seed, t):
        rng = np.random.default_rng(seed)
        shape = (7, 3)
        p, g, m = (rng.standard_normal(shape) for _ in range(3))
        v = np.abs(rng.standard_normal(shape))
        state = [(p.copy(), m.copy(), v.copy()) for _ in range(2)]
        c1, c2 = 1 - 0.9**t, 1 - 0.999**t
        for mod, (pp, mm, vv) in zip((_kernels_py, _kernels_c), state):
            mod.adam_update(pp, g, mm, vv, 1e-3, 0.9, 0.999, c1, c2, 1e-8, np.empty(shape))
        for x, y in zip(state[0], state[1]):
            assert np.allclose(x, y, rtol=1e-14, atol=1e-16)


class TestPurePythonSuite:
    def test_statistics_match_under_fallback(self):
        """The fallback backend gives the same survival and uniqueness numbers."""
        code = (
            "import numpy as np\n"
            "from twinpurify import kernels\n"
            "from twinpurify.survival import fit_cox, c_index\n"
            "rng = np.random.default_rng(0)\n"
            "X = rng.standard_normal((300, 2)); t = rng.exponential(1.0, 300); e = rng.random(300) < 0.8\n"
            "m = fit_cox(X, t, e)\n"
            "print(kernels.BACKEND, repr(float(m.coef[0])), repr(float(m.coef[1])), repr(c_index(X[:, 0], t, e)))\n"
        )
        outs = []
        for flag in ("1", "0"):
            env = dict(os.environ, TWINPURIFY_PURE_PYTHON=flag)
            outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                       text=True, check=True).stdout.split())
        assert outs[0][0] == "python"
        assert np.allclose([float(x) for x in outs[0][1:]], [float(x) for x in outs[1][1:]], rtol=1e-10)
