import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magnn import _kernels_py, kernels

try:
    from magnn import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

needs_ext = pytest.mark.skipif(_kernels_c is None, reason="compiled extension not built")

from oracles import naive_conv1d


@needs_ext
@settings(max_examples=40, deadline=None)
@given(b=st.integers(1, 3), c_in=st.integers(1, 4), c_out=st.integers(1, 4), k=st.integers(1, 5),
       stride=st.integers(1, 3), dil=st.integers(1, 3), extra=st.integers(0, 12), seed=st.integers(0, 10 ** 6))
def test_conv_backends_agree(b, c_in, c_out, k, stride, dil, extra, seed):
    rng = np.random.default_rng(seed)
    lp = (k - 1) * dil + 1 + extra
    x, w = rng.normal(size=(b, c_in, lp)), rng.normal(size=(c_out, c_in, k))
    out_py = _kernels_py.conv1d_forward(x, w, stride, dil)
    out_c = _kernels_c.conv1d_forward(x, w, stride, dil)
    np.testing.assert_allclose(out_c, out_py, rtol=1e-12, atol=1e-12)
    g = rng.normal(size=out_py.shape)
    for a, c in zip(_kernels_py.conv1d_backward(g, x, w, stride, dil), _kernels_c.conv1d_backward(g, x, w, stride, dil)):
        np.testing.assert_allclose(c, a, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("impl", [_kernels_py, _kernels_c], ids=["numpy", "cython"])
def test_conv_matches_naive_loops(impl):
    if impl is None:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(0)
    x, w = rng.normal(size=(2, 11)), rng.normal(size=(3, 2, 3))
    got = impl.conv1d_forward(x[None], w, 2, 2)[0]
    np.testing.assert_allclose(got, naive_conv1d(x, w, None, 2, 0, 0, dilation=2), atol=1e-12)


@needs_ext
def test_pool_and_topk_backends_agree():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 4, 17))
    x[0, 0, :4] = 1.0  # ties go to the earlier position in both
    (o1, p1), (o2, p2) = _kernels_py.maxpool1d_forward(x, 2, 2), _kernels_c.maxpool1d_forward(x, 2, 2)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(p1, p2)
    g = rng.normal(size=o1.shape)
    np.testing.assert_array_equal(_kernels_py.maxpool1d_backward(g, p1, 17), _kernels_c.maxpool1d_backward(g, p2, 17))
    for _ in range(20):
        a = rng.integers(0, 4, size=(6, 9)).astype(float)  # many ties
        k = int(rng.integers(1, 10))
        np.testing.assert_array_equal(_kernels_py.topk_mask(a, k), _kernels_c.topk_mask(a, k))


def test_dispatch_reports_a_backend():
    assert kernels.BACKEND in ("cython", "numpy")
    if _kernels_c is not None:
        assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    env = dict(os.environ, MAGNN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import magnn.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


@needs_ext
@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 6), m=st.integers(1, 12), k=st.integers(1, 13), levels=st.integers(1, 5),
       seed=st.integers(0, 10 ** 6))
def test_topk_backends_agree_with_ties(n, m, k, levels, seed):
    # few distinct levels forces ties at the k-th place
    a = np.random.default_rng(seed).integers(0, levels, size=(n, m)).astype(float)
    np.testing.assert_array_equal(_kernels_py.topk_mask(a, k), _kernels_c.topk_mask(a, k))
