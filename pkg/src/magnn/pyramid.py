"""Multi-scale pyramid: raw N x T windows -> K feature maps of halving length.

Feature maps are laid out (B, N, c, L_k). Convolutions run along time
with kernels shared across variables, so variables never mix here.
"""
from __future__ import annotations

import numpy as np

from . import tensor as tt
from .config import ModelConfig
from .errors import ConfigError, DimensionError
from .tensor import Tensor


def scale_lengths(T: int, K: int, stride: int = 2) -> list[int]:
    if K < 1 or T < stride ** (K - 1):
        raise ConfigError(f"T={T} cannot support K={K} scales at stride {stride}")
    return [T // stride ** k for k in range(K)]


def branch_padding(kernel: int, stride: int) -> tuple[int, int]:
    """Zero padding that makes the strided conv emit floor(L / stride) steps."""
    total = max(0, kernel - stride)
    return (total + 1) // 2, total // 2


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_pyramid(cfg: ModelConfig, rng) -> dict:
    c = cfg.channels
    p = {
        "pyramid.lift.weight": _uniform(rng, (c, 1, 1), 1),
        "pyramid.lift.bias": _uniform(rng, (c,), 1),
    }
    for k, ker in enumerate(cfg.kernels, start=2):
        p[f"pyramid.{k}.rec.weight"] = _uniform(rng, (c, c, ker), c * ker)
        p[f"pyramid.{k}.rec.bias"] = _uniform(rng, (c,), c * ker)
        if cfg.pyramid_parallel:
            p[f"pyramid.{k}.norm.weight"] = _uniform(rng, (c, c, 1), c)
            p[f"pyramid.{k}.norm.bias"] = _uniform(rng, (c,), c)
    return p


def _pool(x: Tensor, cfg: ModelConfig) -> Tensor:
    if cfg.pool == "max":
        return tt.maxpool1d(x, cfg.stride, cfg.stride)
    bn, c, length = x.shape
    lo = length // cfg.stride
    trimmed = tt.getitem(x, (slice(None), slice(None), slice(0, lo * cfg.stride)))
    return tt.mean(tt.reshape(trimmed, (bn, c, lo, cfg.stride)), axis=3)


def pyramid_forward(x, cfg: ModelConfig, params: dict) -> list[Tensor]:
    """Return the K scale features for a (B, N, T) or (N, T) input.

    Scale 1 is a 1x1 channel lift of the raw series, with no activation.
    That lift is an interpretation: scale 1 keeps full length yet needs c
    channels, and a 1x1 conv is the smallest map giving both. Scale k >= 2 adds a
    strided conv + ReLU branch and (when parallel) a 1x1 conv + ReLU +
    pooling branch, both emitting floor(L_{k-1} / stride) steps.
    """
    x = tt.as_tensor(x)
    unbatched = x.ndim == 2
    if unbatched:
        x = tt.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[1:] != (cfg.N, cfg.T):
        raise DimensionError(f"pyramid input must be (B, {cfg.N}, {cfg.T}), got {x.shape}")
    B, N, T = x.shape
    c = cfg.channels
    h = tt.conv1d(tt.reshape(x, (B * N, 1, T)), params["pyramid.lift.weight"], params["pyramid.lift.bias"])
    feats = [h]
    for k, ker in enumerate(cfg.kernels, start=2):
        pl, pr = branch_padding(ker, cfg.stride)
        rec = tt.relu(tt.conv1d(h, params[f"pyramid.{k}.rec.weight"], params[f"pyramid.{k}.rec.bias"],
                                stride=cfg.stride, pad_left=pl, pad_right=pr))
        if cfg.pyramid_parallel:
            norm = _pool(tt.relu(tt.conv1d(h, params[f"pyramid.{k}.norm.weight"],
                                           params[f"pyramid.{k}.norm.bias"])), cfg)
            if norm.shape != rec.shape:
                raise AssertionError(f"pyramid branch lengths diverged at scale {k}: {rec.shape} vs {norm.shape}")
            h = tt.add(rec, norm)
        else:
            h = rec
        feats.append(h)
    out = [tt.reshape(f, (B, N, c, f.shape[-1])) for f in feats]
    if unbatched:
        out = [tt.reshape(f, f.shape[1:]) for f in out]
    return out
