import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magnn import tensor as tt
from magnn.config import ABLATIONS, ModelConfig
from magnn.errors import CheckpointError, ConfigError, DimensionError
from magnn.model import MAGNN, init_state_keys, load_checkpoint, loss, save_checkpoint

SMALL = dict(N=4, T=32, K=3, channels=4, d_s=4, tau=2)

# N=8, c=d_s=16, K=4: pyramid 4992 + graph 104 + 4 x (1024 + 4 x 784) + fusion 1068 + head 289
DEFAULT_EXCHANGE_PARAMS = 23093
# frozen from a fresh build; any change to init order, shapes or RNG use shows up here
SEED42_DIGEST = "cf7645477d75c4b5407a2fca460e805ca47a68b037be0c9e01c65e4c432fec9b"


def test_output_shapes():
    m = MAGNN(ModelConfig(**SMALL))
    x = np.random.default_rng(0).normal(size=(3, 4, 32))
    assert m(x).shape == (3, 4)
    assert m(x[0]).shape == (4,)
    pred, alpha = m(x, return_alpha=True)
    assert alpha.shape == (3, 3)


@settings(max_examples=15, deadline=None)
@given(N=st.integers(1, 5), K=st.integers(1, 3), c=st.integers(1, 4), fusion=st.sampled_from(["gated", "concat", "mean_pool"]))
def test_output_shape_property(N, K, c, fusion):
    cfg = ModelConfig(N=N, T=16, K=K, channels=c, tau=1, fusion=fusion)
    m = MAGNN(cfg)
    assert m.predict(np.ones((N, 16))).shape == (N,)


def test_inference_is_bit_identical():
    m = MAGNN(ModelConfig(**SMALL))
    x = np.random.default_rng(1).normal(size=(2, 4, 32))
    assert np.array_equal(m.predict(x), m.predict(x))


def test_dropout_only_in_training():
    m = MAGNN(ModelConfig(**SMALL, dropout=0.5))
    x = np.random.default_rng(1).normal(size=(2, 4, 32))
    with tt.no_grad():
        a = m(x, training=True).data
    assert not np.array_equal(a, m.predict(x))


def test_input_shape_error_names_stage():
    m = MAGNN(ModelConfig(**SMALL))
    with pytest.raises(DimensionError, match="input"):
        m(np.zeros((2, 5, 32)))


def test_loss_examples():
    assert loss(np.ones((2, 3)), np.ones((2, 3))).item() == 0.0
    assert loss([[1.0, 2.0]], [[0.0, 0.0]]).item() == 5.0
    rng = np.random.default_rng(0)
    p, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    acc = 0.0
    for i in range(5):
        for j in range(3):
            acc += (p[i, j] - t[i, j]) ** 2
    assert abs(loss(p, t).item() - acc / 5) < 1e-12
    perm = rng.permutation(5)
    assert abs(loss(p[perm], t[perm]).item() - loss(p, t).item()) < 1e-12
    with pytest.raises(DimensionError):
        loss(np.zeros((2, 3)), np.zeros((3, 2)))


def test_variant_reachability():
    base = ModelConfig(**SMALL, seed=3)
    x = np.random.default_rng(4).normal(size=(2, 4, 32))
    ref = MAGNN(base).predict(x)
    for name in ABLATIONS:
        if name == "standard":
            continue
        out = MAGNN(base.with_variant(name)).predict(x)
        assert not np.allclose(out, ref, rtol=0, atol=1e-12), name


def test_unknown_variant():
    with pytest.raises(ConfigError, match="valid"):
        ModelConfig(**SMALL).with_variant("nope")


def test_key_set_depends_only_on_config():
    a = ModelConfig(**SMALL, seed=1)
    b = ModelConfig(**SMALL, seed=2)
    assert sorted(MAGNN(a).state) == sorted(MAGNN(b).state) == sorted(init_state_keys(a.resolve()))
    assert MAGNN(a).param_count() == MAGNN(b).param_count()


def test_default_exchange_rate_param_count():
    cfg = ModelConfig(N=8)
    assert cfg.resolve().tau == 8
    assert MAGNN(cfg).param_count() == DEFAULT_EXCHANGE_PARAMS


def test_checkpoint_round_trip(tmp_path):
    m = MAGNN(ModelConfig(**SMALL, seed=5))
    x = np.random.default_rng(0).normal(size=(2, 4, 32))
    path = tmp_path / "m.npz"
    save_checkpoint(m.state, m.cfg, path)
    state, cfg = load_checkpoint(path)
    assert cfg == m.cfg
    m2 = MAGNN(cfg, state)
    assert np.array_equal(m2.predict(x), m.predict(x))
    for k in m.state:
        assert np.array_equal(m.state[k].data, state[k].data)


def test_checkpoint_config_mismatch(tmp_path):
    m = MAGNN(ModelConfig(**SMALL))
    path = tmp_path / "m.npz"
    save_checkpoint(m.state, m.cfg, path)
    with pytest.raises(CheckpointError, match="channels"):
        load_checkpoint(path, expect=ModelConfig(**{**SMALL, "channels": 5}))


def test_checkpoint_corrupt_and_missing_key(tmp_path):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    m = MAGNN(ModelConfig(**SMALL))
    state = dict(m.state)
    state.pop("head.1.bias")
    path = tmp_path / "m.npz"
    save_checkpoint(state, m.cfg, path)
    with pytest.raises(CheckpointError, match="head.1.bias"):
        load_checkpoint(path)


def test_seed42_digest_is_pinned():
    d = MAGNN(ModelConfig(N=8, seed=42)).digest()
    assert d == MAGNN(ModelConfig(N=8, seed=42)).digest()
    assert d == SEED42_DIGEST
