import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magnn import tensor as tt
from magnn.config import ModelConfig
from magnn.errors import ConfigError
from magnn.pyramid import branch_padding, init_pyramid, pyramid_forward, scale_lengths


def make(cfg, seed=0):
    cfg = cfg.resolve()
    params = {k: tt.Tensor(v) for k, v in init_pyramid(cfg, np.random.default_rng(seed)).items()}
    return cfg, params


def test_scale_lengths_default():
    assert scale_lengths(168, 4, 2) == [168, 84, 42, 21]


def test_scale_lengths_single_and_odd():
    assert scale_lengths(32, 1) == [32]
    assert scale_lengths(33, 3, 2) == [33, 16, 8]


def test_scale_lengths_too_short():
    with pytest.raises(ConfigError):
        scale_lengths(7, 4, 2)


def test_small_example_lengths():
    cfg, p = make(ModelConfig(N=2, T=8, K=2, kernels=(3,), channels=3))
    feats = pyramid_forward(np.random.default_rng(0).normal(size=(2, 8)), cfg, p)
    assert [f.shape for f in feats] == [(2, 3, 8), (2, 3, 4)]


def test_default_config_lengths():
    cfg, p = make(ModelConfig(N=3))
    feats = pyramid_forward(np.zeros((1, 3, 168)), cfg, p)
    assert [f.shape[-1] for f in feats] == [168, 84, 42, 21]


def test_zero_input_zero_bias_gives_zero():
    cfg, p = make(ModelConfig(N=2, T=16, K=3, channels=4))
    for k, v in p.items():
        if k.endswith("bias"):
            v.data[:] = 0.0
    for f in pyramid_forward(np.zeros((2, 16)), cfg, p):
        assert np.all(f.data == 0.0)


def test_parallel_branch_is_additive():
    base = ModelConfig(N=3, T=32, K=3, channels=4, seed=2)
    cfg_par, p = make(base, seed=2)
    cfg_seq = ModelConfig(N=3, T=32, K=3, channels=4, seed=2, pyramid_parallel=False).resolve()
    for k in list(p):
        if ".norm." in k:
            p[k].data[:] = 0.0
    x = np.random.default_rng(1).normal(size=(3, 32))
    a = pyramid_forward(x, cfg_par, p)
    b = pyramid_forward(x, cfg_seq, {k: v for k, v in p.items() if ".norm." not in k})
    for fa, fb in zip(a, b):
        np.testing.assert_array_equal(fa.data, fb.data)


def test_variables_stay_independent():
    cfg, p = make(ModelConfig(N=4, T=32, K=3, channels=3))
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 32))
    y = x.copy()
    y[2] += rng.normal(size=32)
    fa, fb = pyramid_forward(x, cfg, p), pyramid_forward(y, cfg, p)
    for a, b in zip(fa, fb):
        changed = np.any(a.data != b.data, axis=(1, 2))
        assert list(changed) == [False, False, True, False]


def test_lengths_strictly_decrease():
    lens = scale_lengths(168, 4)
    assert all(a > b for a, b in zip(lens, lens[1:]))


@settings(max_examples=40, deadline=None)
@given(T=st.integers(16, 512), kernel=st.integers(2, 9), pool=st.sampled_from(["max", "avg"]))
def test_branch_lengths_agree(T, kernel, pool):
    cfg, p = make(ModelConfig(N=1, T=T, K=2, kernels=(kernel,), channels=2, pool=pool))
    feats = pyramid_forward(np.ones((1, T)), cfg, p)
    assert feats[1].shape[-1] == T // 2


@pytest.mark.parametrize("kernel,stride,expected", [(7, 2, (3, 2)), (6, 2, (2, 2)), (3, 2, (1, 0)), (2, 2, (0, 0))])
def test_branch_padding(kernel, stride, expected):
    assert branch_padding(kernel, stride) == expected
