"""Scale-wise fusion of the K per-scale representations.

The gated form averages the scales, flattens the (N, d_s) pool node-major
into one vector, and maps it through two dense layers to a sigmoid score
per scale; the scores weight a sum of the scales followed by ReLU. The
scores are independent sigmoids and do not sum to one.
"""
from __future__ import annotations

import numpy as np

from . import tensor as tt
from .config import ModelConfig
from .errors import ContractError, DimensionError
from .tensor import Tensor


def init_fusion(cfg: ModelConfig, rng) -> dict:
    if cfg.fusion != "gated":
        return {}
    fan1, fan2 = cfg.N * cfg.d_s, cfg.d_1
    b1, b2 = 1.0 / np.sqrt(fan1), 1.0 / np.sqrt(fan2)
    return {
        "fusion.W1": rng.uniform(-b1, b1, size=(fan1, cfg.d_1)),
        "fusion.b1": rng.uniform(-b1, b1, size=(cfg.d_1,)),
        "fusion.W2": rng.uniform(-b2, b2, size=(cfg.d_1, cfg.K)),
        "fusion.b2": rng.uniform(-b2, b2, size=(cfg.K,)),
    }


def _batched(h_list):
    h_list = [tt.as_tensor(h) for h in h_list]
    if not h_list:
        raise DimensionError("fuse needs at least one scale representation")
    shape = h_list[0].shape
    if any(h.shape != shape for h in h_list):
        raise DimensionError(f"scale representations differ in shape: {[h.shape for h in h_list]}")
    if len(shape) == 2:
        return [tt.reshape(h, (1,) + shape) for h in h_list], True
    return h_list, False


def _alpha(h_list, params, cfg):
    B, N, d_s = h_list[0].shape
    pooled = tt.mean(tt.stack(h_list, axis=0), axis=0)
    flat = tt.reshape(pooled, (B, N * d_s))
    hidden = tt.relu(tt.add(tt.matmul(flat, params["fusion.W1"]), params["fusion.b1"]))
    return tt.sigmoid(tt.add(tt.matmul(hidden, params["fusion.W2"]), params["fusion.b2"]))


def fuse(h_list, params: dict, cfg: ModelConfig):
    """Return (h_m, alpha); alpha is (B, K) for the gated form, else None.

    concat gives (B, N, K * d_s); gated and mean_pool give (B, N, d_s).
    Unbatched (N, d_s) inputs give unbatched outputs.
    """
    h_list, unbatched = _batched(h_list)
    if len(h_list) != cfg.K:
        raise DimensionError(f"expected {cfg.K} scale representations, got {len(h_list)}")
    alpha = None
    if cfg.fusion == "gated":
        alpha = _alpha(h_list, params, cfg)
        B, K = alpha.shape
        total = None
        for k, h in enumerate(h_list):
            a_k = tt.reshape(tt.getitem(alpha, (slice(None), slice(k, k + 1))), (B, 1, 1))
            term = tt.mul(h, a_k)
            total = term if total is None else tt.add(total, term)
        h_m = tt.relu(total)
    elif cfg.fusion == "concat":
        h_m = tt.concat(h_list, axis=2)
    else:
        h_m = tt.relu(tt.mean(tt.stack(h_list, axis=0), axis=0))
    if unbatched:
        h_m = tt.reshape(h_m, h_m.shape[1:])
        alpha = None if alpha is None else tt.reshape(alpha, alpha.shape[1:])
    return h_m, alpha


def fusion_weights(h_list, params: dict, cfg: ModelConfig) -> Tensor:
    """The per-scale importance scores of the gated fusion."""
    if cfg.fusion != "gated":
        raise ContractError(f"fusion weights exist only for gated fusion, not {cfg.fusion!r}")
    h_list, unbatched = _batched(h_list)
    alpha = _alpha(h_list, params, cfg)
    return tt.reshape(alpha, alpha.shape[1:]) if unbatched else alpha
