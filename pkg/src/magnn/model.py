"""Model assembly: pyramid -> graphs -> temporal GNN per scale -> fusion -> head."""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import tensor as tt
from .config import ModelConfig
from .errors import CheckpointError, DimensionError
from .fusion import fuse, init_fusion
from .graph import init_graph, learn_graphs, snapshot_graphs
from .pyramid import init_pyramid, pyramid_forward
from .temporal import init_temporal, scale_representation
from .tensor import Tensor

CHECKPOINT_VERSION = "magnn-checkpoint/1"


@contextmanager
def _stage(name):
    try:
        yield
    except DimensionError as e:
        raise DimensionError(f"[{name}] {e}") from e


def _init_head(cfg: ModelConfig, rng) -> dict:
    width = cfg.K * cfg.d_s if cfg.fusion == "concat" else cfg.d_s
    d_out = cfg.d_s
    b1, b2 = 1.0 / np.sqrt(width), 1.0 / np.sqrt(d_out)
    return {
        "head.0.weight": rng.uniform(-b1, b1, size=(width, d_out)),
        "head.0.bias": rng.uniform(-b1, b1, size=(d_out,)),
        "head.1.weight": rng.uniform(-b2, b2, size=(d_out, 1)),
        "head.1.bias": rng.uniform(-b2, b2, size=(1,)),
    }


def init_state(cfg: ModelConfig) -> dict:
    """Fresh parameters; the key set and values depend only on ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    arrays = {}
    for part in (init_pyramid, init_graph, init_temporal, init_fusion, _init_head):
        arrays.update(part(cfg, rng))
    return {name: Tensor(a, requires_grad=True, name=name) for name, a in arrays.items()}


def state_digest(state: dict) -> str:
    """SHA-256 over sorted parameter names, shapes and little-endian bytes."""
    h = hashlib.sha256()
    for name in sorted(state):
        a = np.ascontiguousarray(state[name].data, dtype="<f8")
        h.update(name.encode())
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


class MAGNN:
    """The multi-scale adaptive graph forecaster.

    ``state`` maps stable parameter names to leaf tensors. Graphs are
    rebuilt from the embeddings on every forward pass.
    """

    def __init__(self, cfg: ModelConfig, state: dict | None = None):
        self.cfg = cfg.resolve()
        self.state = init_state(self.cfg) if state is None else state
        expected = set(init_state_keys(self.cfg))
        if set(self.state) != expected:
            missing = sorted(expected - set(self.state))
            extra = sorted(set(self.state) - expected)
            raise CheckpointError(f"parameter set mismatch; first missing {missing[:1]}, first unexpected {extra[:1]}")
        self.dropout_rng = np.random.default_rng(self.cfg.seed + 1)

    def parameters(self):
        return [self.state[k] for k in sorted(self.state)]

    def named_parameters(self):
        return [(k, self.state[k]) for k in sorted(self.state)]

    def param_count(self) -> int:
        return int(sum(t.size for t in self.state.values()))

    def zero_grad(self):
        for t in self.state.values():
            t.grad = None

    def forward(self, x, training=False, return_alpha=False):
        """Predict x_{T+h} for a (B, N, T) batch or a single (N, T) window.

        Returns (B, N) or (N,); with ``return_alpha`` also the gated
        fusion scores (B, K) or None.
        """
        cfg = self.cfg
        x = tt.as_tensor(x)
        unbatched = x.ndim == 2
        if unbatched:
            x = tt.reshape(x, (1,) + x.shape)
        if x.ndim != 3 or x.shape[1:] != (cfg.N, cfg.T):
            raise DimensionError(f"[input] expected (B, {cfg.N}, {cfg.T}) or ({cfg.N}, {cfg.T}), got {x.shape}")
        rng = self.dropout_rng if training else None
        with _stage("pyramid"):
            feats = pyramid_forward(x, cfg, self.state)
        with _stage("graph"):
            graphs = learn_graphs(self.state, cfg)
        with _stage("temporal"):
            reps = [scale_representation(f, a, self.state, k + 1, cfg, training, rng)
                    for k, (f, a) in enumerate(zip(feats, graphs))]
        with _stage("fusion"):
            h_m, alpha = fuse(reps, self.state, cfg)
        with _stage("head"):
            s = self.state
            hid = tt.relu(tt.add(tt.matmul(h_m, s["head.0.weight"]), s["head.0.bias"]))
            out = tt.add(tt.matmul(hid, s["head.1.weight"]), s["head.1.bias"])
            pred = tt.reshape(out, out.shape[:2])
        if unbatched:
            pred = tt.reshape(pred, (cfg.N,))
            alpha = None if alpha is None else tt.reshape(alpha, (cfg.K,))
        return (pred, alpha) if return_alpha else pred

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        with tt.no_grad():
            return self.forward(x, training=False).data

    def graphs(self):
        return snapshot_graphs(self.state, self.cfg)

    def digest(self) -> str:
        return state_digest(self.state)

    def snapshot(self) -> dict:
        return {k: t.data.copy() for k, t in self.state.items()}

    def restore(self, arrays: dict) -> None:
        for k, a in arrays.items():
            self.state[k].data = a.copy()


def init_state_keys(cfg: ModelConfig) -> list:
    rng = np.random.default_rng(0)
    keys = []
    for part in (init_pyramid, init_graph, init_temporal, init_fusion, _init_head):
        keys.extend(part(cfg, rng))
    return keys


def loss(pred, target) -> Tensor:
    """Squared error summed over variables, averaged over the batch."""
    pred, target = tt.as_tensor(pred), tt.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"loss: prediction {pred.shape} vs target {target.shape}")
    if pred.ndim == 1:
        pred, target = tt.reshape(pred, (1, -1)), tt.reshape(target, (1, -1))
    diff = tt.sub(pred, target)
    return tt.scale(tt.tsum(tt.mul(diff, diff)), 1.0 / pred.shape[0])


def save_checkpoint(state: dict, cfg: ModelConfig, path, extra: dict | None = None) -> None:
    """Write a zip container of little-endian float64 arrays plus a JSON header."""
    meta = {"version": CHECKPOINT_VERSION, "config": cfg.to_dict(), "keys": sorted(state)}
    if extra:
        meta["extra"] = extra
    buf = io.BytesIO()
    arrays = {name: np.ascontiguousarray(state[name].data, dtype="<f8") for name in sorted(state)}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Return (state, cfg); with ``expect`` the stored config must match it."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            files = set(z.files)
            if "__meta__" not in files:
                raise CheckpointError(f"{path}: missing header")
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: version {meta.get('version')!r}, expected {CHECKPOINT_VERSION!r}")
            cfg = ModelConfig.from_dict(meta["config"]).resolve()
            arrays = {k: np.array(z[k], dtype=np.float64) for k in files - {"__meta__"}}
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from e
    if expect is not None:
        want = expect.resolve().to_dict()
        got = cfg.to_dict()
        for key in sorted(want):
            if want[key] != got[key]:
                raise CheckpointError(f"{path}: config field {key!r} is {got[key]!r}, expected {want[key]!r}")
    expected = init_state_keys(cfg)
    for key in sorted(expected):
        if key not in arrays:
            raise CheckpointError(f"{path}: missing parameter {key!r}")
    for key in sorted(arrays):
        if key not in expected:
            raise CheckpointError(f"{path}: unexpected parameter {key!r}")
    ref = init_state(cfg)
    for key in sorted(expected):
        if arrays[key].shape != ref[key].shape:
            raise CheckpointError(f"{path}: parameter {key!r} has shape {arrays[key].shape}, expected {ref[key].shape}")
    state = {k: Tensor(arrays[k], requires_grad=True, name=k) for k in expected}
    return state, cfg
