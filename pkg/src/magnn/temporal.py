"""Per-scale graph convolution over every timestep, then a causal TCN.

Inputs per scale are (B, N, c, L); the GNN runs on all L timesteps at
once as a (B, L, N, c) stack and the TCN reads out the last step.
"""
from __future__ import annotations

import numpy as np

from . import tensor as tt
from .config import ModelConfig, receptive_field, tcn_dilations
from .errors import DimensionError
from .tensor import Tensor


def normalize_adjacency(a) -> Tensor:
    """D^-1/2 (I + A) D^-1/2 with D the row sums of I + A (always >= 1)."""
    a = tt.as_tensor(a)
    n = a.shape[0]
    a_tilde = tt.add(a, np.eye(n))
    d = tt.power(tt.tsum(a_tilde, axis=1), -0.5)
    return tt.mul(tt.mul(tt.reshape(d, (n, 1)), a_tilde), tt.reshape(d, (1, n)))


def graph_conv(x, p, w) -> Tensor:
    """relu(P x W); x is (..., N, d_in), P is N x N, W is d_in x d_out."""
    x, p, w = tt.as_tensor(x), tt.as_tensor(p), tt.as_tensor(w)
    if p.ndim != 2 or p.shape[0] != p.shape[1] or x.shape[-2] != p.shape[1]:
        raise DimensionError(f"graph_conv: propagation {p.shape} does not match nodes of x {x.shape}")
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"graph_conv: features {x.shape} do not match weight {w.shape}")
    return tt.relu(tt.matmul(tt.matmul(p, x), w))


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_temporal(cfg: ModelConfig, rng) -> dict:
    c, d_s, kt = cfg.channels, cfg.d_s, cfg.tcn_kernel
    dirs = ("in",) if cfg.gnn == "one" else ("in", "out")
    p = {}
    for k in range(1, cfg.K + 1):
        for direction in dirs:
            for layer in range(cfg.gnn_depth):
                p[f"mtg.{k}.{direction}.{layer}.weight"] = _uniform(rng, (c, c), c)
        d_in = c
        for layer, _ in enumerate(tcn_dilations(cfg)):
            p[f"tcn.{k}.{layer}.weight"] = _uniform(rng, (d_s, d_in, kt), d_in * kt)
            p[f"tcn.{k}.{layer}.bias"] = _uniform(rng, (d_s,), d_in * kt)
            d_in = d_s
    return p


def gnn_stack(x, p, weights) -> Tensor:
    for w in weights:
        x = graph_conv(x, p, w)
    return x


def mtg_step(x_t, a_k, params, k: int, cfg: ModelConfig, training=False, rng=None) -> Tensor:
    """Incoming-direction GNN on A plus outgoing-direction GNN on A^T.

    ``x_t`` may hold one timestep (N, c) or a whole stack (..., N, c);
    ``k`` is the 1-based scale index used in parameter names. With the
    one-GNN variant only the incoming term is used.
    """
    def direction(name, adj):
        ws = [params[f"mtg.{k}.{name}.{layer}.weight"] for layer in range(cfg.gnn_depth)]
        h = gnn_stack(x_t, normalize_adjacency(adj), ws)
        return tt.dropout(h, cfg.dropout, rng, training)

    h = direction("in", a_k)
    if cfg.gnn == "two":
        h = tt.add(h, direction("out", tt.swapaxes(a_k, 0, 1)))
    return h


def tcn(seq, params, k: int, cfg: ModelConfig) -> Tensor:
    """Dilated causal conv stack over (B', c, L); returns (B', d_s, L)."""
    h = seq
    for layer, dil in enumerate(tcn_dilations(cfg)):
        pad = (cfg.tcn_kernel - 1) * dil
        h = tt.relu(tt.conv1d(h, params[f"tcn.{k}.{layer}.weight"], params[f"tcn.{k}.{layer}.bias"],
                              pad_left=pad, dilation=dil))
    return h


def scale_representation(feat, a_k, params, k: int, cfg: ModelConfig, training=False, rng=None) -> Tensor:
    """(B, N, c, L) scale feature -> (B, N, d_s) representation."""
    feat = tt.as_tensor(feat)
    B, N, c, L = feat.shape
    # the causal stack's last output only sees its receptive field, so older steps are dead work
    span = receptive_field(cfg.tcn_kernel, tcn_dilations(cfg))
    if L > span:
        feat = tt.getitem(feat, (Ellipsis, slice(L - span, L)))
        L = span
    steps = tt.transpose(feat, (0, 3, 1, 2))  # (B, L, N, c)
    h = mtg_step(steps, a_k, params, k, cfg, training, rng)
    seq = tt.reshape(tt.transpose(h, (0, 2, 3, 1)), (B * N, c, L))
    out = tcn(seq, params, k, cfg)
    last = tt.getitem(out, (slice(None), slice(None), L - 1))
    return tt.reshape(last, (B, N, cfg.d_s))
