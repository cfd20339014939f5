"""Model hyper-parameters and ablation variant flags."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError

KERNEL_SCHEDULE = (7, 6, 3)
GRAPH_VARIANTS = ("standard", "shared_one", "symmetric", "full")
GNN_VARIANTS = ("two", "one")
FUSION_VARIANTS = ("gated", "concat", "mean_pool")
POOL_KINDS = ("max", "avg")

# name accepted by `ablate` -> flag overrides applied on top of the base config
ABLATIONS = {
    "standard": {},
    "shared_one": {"graph": "shared_one"},
    "symmetric": {"graph": "symmetric", "gnn": "one"},
    "full": {"graph": "full"},
    "one_gnn": {"gnn": "one"},
    "concat": {"fusion": "concat"},
    "mean_pool": {"fusion": "mean_pool"},
    "no_parallel": {"pyramid_parallel": False},
    # single-resolution baseline row for the multi-scale comparison
    "single_scale": {"K": 1, "kernels": None},
}


def default_kernels(K: int) -> tuple:
    """First K-1 of the 7/6/3 schedule, extended with 3s for deeper pyramids."""
    return tuple((list(KERNEL_SCHEDULE) + [3] * max(0, K - 1 - len(KERNEL_SCHEDULE)))[: max(0, K - 1)])


def default_tau(N: int) -> int:
    """Neighbour cap: 40 for large graphs, min(N, 8) for small ones."""
    return 40 if N > 50 else min(N, 8)


@dataclass(frozen=True)
class ModelConfig:
    """Every model hyper-parameter in one record.

    Fields left as ``None`` are derived by :meth:`resolve`; the resolved
    record is what gets stored in checkpoints and manifests.
    """

    N: int
    T: int = 168
    K: int = 4
    kernels: tuple | None = None
    stride: int = 2
    channels: int = 16
    embed_dim: int = 8
    tau: int | None = None
    gnn_depth: int = 2
    d_s: int | None = None
    d_1: int | None = None
    tcn_kernel: int = 3
    horizon: int = 3
    dropout: float = 0.1
    graph: str = "standard"
    gnn: str = "two"
    fusion: str = "gated"
    pyramid_parallel: bool = True
    pool: str = "max"
    seed: int = 0

    def resolve(self) -> "ModelConfig":
        cfg = dataclasses.replace(
            self,
            kernels=tuple(default_kernels(self.K) if self.kernels is None else self.kernels),
            tau=default_tau(self.N) if self.tau is None else self.tau,
            d_s=self.channels if self.d_s is None else self.d_s,
            d_1=2 * self.K if self.d_1 is None else self.d_1,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        for name in ("N", "T", "K", "channels", "embed_dim", "gnn_depth", "tcn_kernel", "horizon"):
            need(int(getattr(self, name)) >= 1, f"{name} must be >= 1")
        need(self.stride >= 2, "stride must be >= 2")
        need(self.T >= self.stride ** (self.K - 1),
             f"T={self.T} too short for K={self.K} scales at stride {self.stride}")
        if self.kernels is not None:
            need(len(self.kernels) == self.K - 1, f"need {self.K - 1} pyramid kernels, got {len(self.kernels)}")
            need(all(k >= self.stride for k in self.kernels),
                 f"pyramid kernels must be >= stride ({self.stride}) so both branches agree in length")
        if self.tau is not None:
            need(1 <= self.tau <= self.N, f"tau must lie in [1, N={self.N}]")
        for name in ("d_s", "d_1"):
            v = getattr(self, name)
            need(v is None or v >= 1, f"{name} must be >= 1")
        need(0.0 <= self.dropout < 1.0, "dropout must lie in [0, 1)")
        need(self.graph in GRAPH_VARIANTS, f"graph must be one of {GRAPH_VARIANTS}")
        need(self.gnn in GNN_VARIANTS, f"gnn must be one of {GNN_VARIANTS}")
        need(self.fusion in FUSION_VARIANTS, f"fusion must be one of {FUSION_VARIANTS}")
        need(self.pool in POOL_KINDS, f"pool must be one of {POOL_KINDS}")

    def with_variant(self, name: str) -> "ModelConfig":
        if name not in ABLATIONS:
            raise ConfigError(f"unknown variant {name!r}; valid: {', '.join(sorted(ABLATIONS))}")
        return dataclasses.replace(self, **ABLATIONS[name])

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["kernels"] is not None:
            d["kernels"] = list(d["kernels"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        if d.get("kernels") is not None:
            d["kernels"] = tuple(d["kernels"])
        return cls(**d)


def tcn_dilations(cfg: ModelConfig) -> list:
    """Doubling dilations, just enough for the receptive field to cover the shortest scale."""
    shortest = cfg.T // cfg.stride ** (cfg.K - 1)
    dil, rf = [1], 1 + (cfg.tcn_kernel - 1)
    while rf < shortest:
        dil.append(dil[-1] * 2)
        rf += (cfg.tcn_kernel - 1) * dil[-1]
    return dil


def receptive_field(kernel: int, dilations) -> int:
    return 1 + (kernel - 1) * sum(dilations)
