"""Root relative squared error and mean per-variable correlation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, MagnnError


class UndefinedMetricError(MagnnError, ValueError):
    """The metric's denominator vanishes for this input."""


@dataclass(frozen=True)
class EvalResult:
    rse: float
    corr: float
    n_samples: int
    skipped_variables: int = 0

    def to_dict(self) -> dict:
        return {"rse": self.rse, "corr": self.corr, "n_samples": self.n_samples,
                "skipped_variables": self.skipped_variables}


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} vs truth {truth.shape}")
    if truth.ndim == 1:
        pred, truth = pred[:, None], truth[:, None]
    if truth.ndim != 2 or truth.size == 0:
        raise DimensionError(f"expected a non-empty (M, N) array, got {truth.shape}")
    return pred, truth


def rse(pred, truth) -> float:
    """sqrt(sum (p - y)^2) / sqrt(sum (y - mean(y))^2) with the grand mean of y."""
    pred, truth = _pair(pred, truth)
    den = np.sqrt(np.sum((truth - truth.mean()) ** 2))
    if den == 0.0:
        raise UndefinedMetricError("RSE undefined: truth is globally constant")
    return float(np.sqrt(np.sum((pred - truth) ** 2)) / den)


def corr_detail(pred, truth) -> tuple[float, int]:
    """(mean Pearson over usable columns, number of skipped zero-variance columns)."""
    pred, truth = _pair(pred, truth)
    dp = pred - pred.mean(axis=0)
    dt = truth - truth.mean(axis=0)
    vp = np.sum(dp * dp, axis=0)
    vt = np.sum(dt * dt, axis=0)
    ok = (vp > 0) & (vt > 0)
    if not ok.any():
        raise UndefinedMetricError("CORR undefined: every column has zero variance")
    r = np.sum(dp * dt, axis=0)[ok] / np.sqrt(vp[ok] * vt[ok])
    return float(np.clip(r, -1.0, 1.0).mean()), int((~ok).sum())


def corr(pred, truth) -> float:
    return corr_detail(pred, truth)[0]


def evaluate(pred, truth) -> EvalResult:
    c, skipped = corr_detail(pred, truth)
    return EvalResult(rse(pred, truth), c, int(np.shape(truth)[0]), skipped)
