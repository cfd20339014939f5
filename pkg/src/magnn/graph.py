"""Scale-specific adjacency learning from node and scale embeddings.

For scale k the pipeline is

    E_spec = E_nodes * E_scale[k]              (row-broadcast product)
    M1 = tanh(theta_k E_spec), M2 = tanh(phi_k E_spec)      (N x d_e each)
    A_full = relu(M1 M2^T - M2 M1^T)
    A = top-tau per row of softmax_rows(A_full)

M1 and M2 are both N x d_e, so the difference is an N x N
antisymmetric matrix and relu keeps at most one direction per pair.
The top-tau mask is a constant of the forward pass, so gradients reach
only the kept entries.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from . import tensor as tt
from .config import ModelConfig
from .tensor import Tensor


@dataclass(frozen=True, eq=False)
class ScaleGraph:
    """Frozen snapshot of one learned adjacency (scale_index is 1-based)."""

    A: np.ndarray
    scale_index: int
    tau: int

    def to_csv(self, path) -> None:
        with Path(path).open("w") as fh:
            fh.write(f"# scale={self.scale_index} tau={self.tau}\n")
            for row in self.A:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def init_graph(cfg: ModelConfig, rng) -> dict:
    return {
        "graph.E_nodes": rng.uniform(-0.5, 0.5, size=(cfg.N, cfg.embed_dim)),
        "graph.E_scale": rng.uniform(-0.5, 0.5, size=(cfg.K, cfg.embed_dim)),
        # distinct ranges keep receiver and sender maps apart at init
        "graph.theta": rng.uniform(0.5, 1.5, size=(cfg.K,)),
        "graph.phi": rng.uniform(1.5, 3.0, size=(cfg.K,)),
    }


def scale_specific_embedding(params: dict, k: int) -> Tensor:
    """E_nodes * E_scale[k] for a 0-based scale index."""
    e_scale = tt.getitem(params["graph.E_scale"], (slice(k, k + 1), slice(None)))
    return tt.mul(params["graph.E_nodes"], e_scale)


def raw_adjacency(e_spec, theta_k, phi_k, symmetric=False) -> Tensor:
    m1 = tt.tanh(tt.mul(e_spec, theta_k))
    if symmetric:
        return tt.relu(tt.matmul(m1, tt.swapaxes(m1, 0, 1)))
    m2 = tt.tanh(tt.mul(e_spec, phi_k))
    p = tt.matmul(m1, tt.swapaxes(m2, 0, 1))
    # p - p^T is exactly antisymmetric in floating point
    return tt.relu(tt.sub(p, tt.swapaxes(p, 0, 1)))


def sparsify(a_full, tau: int, keep_all=False) -> Tensor:
    """Row softmax, then zero everything outside each row's top-tau entries.

    Ties go to the lower column index; kept entries are not renormalized.
    """
    soft = tt.softmax_rows(a_full)
    if keep_all or tau >= soft.shape[1]:
        return soft
    mask = kernels.topk_mask(soft.data, tau)
    return tt.mul(soft, Tensor(mask))


def _one_graph(params, cfg, k):
    e_spec = scale_specific_embedding(params, k)
    theta_k = tt.getitem(params["graph.theta"], k)
    phi_k = tt.getitem(params["graph.phi"], k)
    if cfg.graph == "symmetric":
        a = sparsify(raw_adjacency(e_spec, theta_k, phi_k, symmetric=True), cfg.tau)
        return tt.scale(tt.add(a, tt.swapaxes(a, 0, 1)), 0.5)
    a_full = raw_adjacency(e_spec, theta_k, phi_k)
    return sparsify(a_full, cfg.tau, keep_all=cfg.graph == "full")


def learn_graphs(params: dict, cfg: ModelConfig) -> list[Tensor]:
    """One N x N adjacency per scale, honouring the graph variant flag."""
    if cfg.graph == "shared_one":
        a = _one_graph(params, cfg, 0)
        return [a] * cfg.K
    return [_one_graph(params, cfg, k) for k in range(cfg.K)]


def snapshot_graphs(params: dict, cfg: ModelConfig) -> list[ScaleGraph]:
    with tt.no_grad():
        mats = learn_graphs(params, cfg)
    tau = cfg.N if cfg.graph == "full" else cfg.tau
    return [ScaleGraph(m.data.copy(), k + 1, tau) for k, m in enumerate(mats)]
