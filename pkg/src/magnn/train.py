"""Mini-batch Adam training with validation-based early stopping."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .data import MtsDataset, inverse_scale, window_source
from .errors import ConfigError, ContractError, EmptySplitError, NonFiniteError
from .metrics import EvalResult, evaluate
from .model import MAGNN, loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    shuffle_train: bool = True
    # assert zeroed grads before every step; cheap, but off for speed by default
    debug: bool = False

    def validate(self) -> None:
        if not self.lr >= 0.0:
            raise ConfigError("lr must be >= 0")
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0.0:
            raise ConfigError("eps must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        # max_epochs=0 (evaluate the untrained model) is exempt from the patience bound
        if self.patience < 1 or (self.max_epochs > 0 and self.patience > self.max_epochs):
            raise ConfigError("patience must lie in [1, max_epochs]")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(d["betas"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


class Adam:
    """Adam with bias correction over a fixed, ordered list of named tensors."""

    def __init__(self, named_params, lr=0.001, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(named_params)
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]
        self.t = 0

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, (_, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_rse: list = field(default_factory=list)
    val_corr: list = field(default_factory=list)
    best_epoch: int | None = None  # 0-based; None when no epoch ran
    epochs_run: int = 0
    wall_time: float = 0.0
    test: EvalResult | None = None
    best_val: EvalResult | None = None

    def to_dict(self) -> dict:
        return {
            "train_loss": list(self.train_loss),
            "val_rse": list(self.val_rse),
            "val_corr": list(self.val_corr),
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "wall_time": self.wall_time,
            "test": None if self.test is None else self.test.to_dict(),
            "best_val": None if self.best_val is None else self.best_val.to_dict(),
        }


@dataclass
class Predictions:
    pred: np.ndarray  # (M, N) original units
    truth: np.ndarray
    target_rows: np.ndarray
    alpha: np.ndarray | None  # (M, K) gated scores


def predict_split(model: MAGNN, ds: MtsDataset, split: str, batch_size=64, with_alpha=False) -> Predictions:
    """Forecast every window of ``split`` in inference mode, in original units."""
    cfg = model.cfg
    src = window_source(ds, split, cfg.T, cfg.horizon)
    preds, alphas = [], []
    with tt.no_grad():
        for start in range(0, len(src), batch_size):
            idx = np.arange(start, min(start + batch_size, len(src)))
            out, alpha = model.forward(src.inputs(idx), training=False, return_alpha=True)
            preds.append(out.data)
            if with_alpha and alpha is not None:
                alphas.append(alpha.data)
    pred = inverse_scale(np.concatenate(preds), ds)
    rows = src.target_rows()
    truth = ds.values[rows]
    return Predictions(pred, truth, rows, np.concatenate(alphas) if alphas else None)


def evaluate_split(model: MAGNN, ds: MtsDataset, split: str, batch_size=64) -> EvalResult:
    p = predict_split(model, ds, split, batch_size)
    return evaluate(p.pred, p.truth)


def _train_epoch(model, opt, src, tcfg, rng) -> float:
    n = len(src)
    order = rng.permutation(n) if tcfg.shuffle_train else np.arange(n)
    total, batches = 0.0, 0
    for start in range(0, n, tcfg.batch_size):
        idx = order[start:start + tcfg.batch_size]
        model.zero_grad()
        if tcfg.debug and any(p.grad is not None for p in model.parameters()):
            raise ContractError("gradients not cleared before step")
        with tt.Tape() as tape:
            value = loss(model.forward(src.inputs(idx), training=True), src.targets(idx))
        tape.backward(value)
        opt.step()
        total += value.item()
        batches += 1
    return total / batches


def fit(model: MAGNN, ds: MtsDataset, tcfg: TrainConfig | None = None, on_epoch=None) -> TrainReport:
    """Train on the train split, early-stop on validation RSE, score test once.

    ``on_epoch(epoch, train_loss, val_result)`` is called after every epoch.
    """
    tcfg = tcfg or TrainConfig()
    tcfg.validate()
    cfg = model.cfg
    try:
        train_src = window_source(ds, "train", cfg.T, cfg.horizon)
        window_source(ds, "val", cfg.T, cfg.horizon)
    except EmptySplitError as e:
        raise ConfigError(str(e)) from e
    t0 = time.perf_counter()
    rng = np.random.default_rng(tcfg.seed)
    opt = Adam(model.named_parameters(), tcfg.lr, tcfg.betas, tcfg.eps)
    report = TrainReport()
    best_rse, best_state, stale = np.inf, None, 0
    for epoch in range(tcfg.max_epochs):
        train_loss = _train_epoch(model, opt, train_src, tcfg, rng)
        val = evaluate_split(model, ds, "val")
        report.train_loss.append(train_loss)
        report.val_rse.append(val.rse)
        report.val_corr.append(val.corr)
        report.epochs_run = epoch + 1
        log.info("epoch %d loss=%.6g val_rse=%.6g val_corr=%.6g", epoch, train_loss, val.rse, val.corr)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val)
        if val.rse < best_rse:
            best_rse, best_state, stale = val.rse, model.snapshot(), 0
            report.best_epoch, report.best_val = epoch, val
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    if best_state is not None:
        model.restore(best_state)
    model.zero_grad()
    report.test = evaluate_split(model, ds, "test")
    report.wall_time = time.perf_counter() - t0
    return report
