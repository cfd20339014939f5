"""Dataset ingestion, chronological splits, max-abs scaling and windowing."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, EmptySplitError, IngestionError

MIN_ROWS = 10
SPLITS = ("train", "val", "test")


def split_bounds(t_total: int) -> tuple[int, int]:
    """(train_end, val_end) for the 60/20/20 chronological split."""
    return int(np.floor(0.6 * t_total)), int(np.floor(0.8 * t_total))


def fit_scaler(train_rows: np.ndarray) -> np.ndarray:
    """Per-column max |x| over the training rows.

    Columns that are constant on the training rows (including all-zero)
    get factor 1 so their values pass through unchanged.
    """
    factors = np.abs(train_rows).max(axis=0)
    flat = np.ptp(train_rows, axis=0) == 0
    return np.where(flat | (factors == 0), 1.0, factors)


@dataclass(frozen=True, eq=False)
class MtsDataset:
    """Raw T_total x N observations with their split boundaries and scaler.

    ``values`` holds original units; ``scaled`` is ``values / scaler``.
    Instances are read-only after construction.
    """

    values: np.ndarray
    variable_names: tuple
    sample_rate: str = ""
    split: tuple = field(default=(0, 0))
    scaler: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"values must be T x N, got shape {values.shape}")
        t_total, n = values.shape
        if t_total < MIN_ROWS:
            raise IngestionError(f"need at least {MIN_ROWS} rows, got {t_total}")
        if len(self.variable_names) != n:
            raise DimensionError(f"{len(self.variable_names)} names for {n} columns")
        train_end, val_end = split_bounds(t_total)
        if not 0 < train_end < val_end < t_total:
            raise IngestionError(f"degenerate split for {t_total} rows")
        scaler = fit_scaler(values[:train_end])
        values.setflags(write=False)
        scaler.setflags(write=False)
        scaled = values / scaler
        scaled.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variable_names", tuple(self.variable_names))
        object.__setattr__(self, "split", (train_end, val_end))
        object.__setattr__(self, "scaler", scaler)
        object.__setattr__(self, "_scaled", scaled)

    @property
    def scaled(self) -> np.ndarray:
        return self._scaled

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    @property
    def t_total(self) -> int:
        return self.values.shape[0]

    def segment(self, split: str) -> tuple[int, int]:
        """Row range [start, stop) of a split."""
        train_end, val_end = self.split
        bounds = {"train": (0, train_end), "val": (train_end, val_end), "test": (val_end, self.t_total)}
        if split not in bounds:
            raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
        return bounds[split]

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.values, dtype="<f8").tobytes()).hexdigest()


@dataclass(frozen=True, eq=False)
class WindowSample:
    input: np.ndarray  # N x T
    target: np.ndarray  # N
    origin_index: int


@dataclass(frozen=True, eq=False)
class WindowBatchSource:
    """All windows of one split as index arrays into the scaled matrix.

    Keeps memory flat: windows are materialized on demand per batch.
    """

    data: np.ndarray
    origins: np.ndarray
    window: int
    horizon: int

    def __len__(self):
        return len(self.origins)

    def inputs(self, idx) -> np.ndarray:
        """(B, N, T) input windows for the given sample indices."""
        o = self.origins[idx]
        rows = o[:, None] + np.arange(self.window)[None, :]
        return np.ascontiguousarray(self.data[rows].transpose(0, 2, 1))

    def targets(self, idx) -> np.ndarray:
        """(B, N) targets, horizon - 1 steps after each window's last row."""
        return self.data[self.origins[idx] + self.window + self.horizon - 1]

    def target_rows(self) -> np.ndarray:
        return self.origins + self.window + self.horizon - 1


def window_count(segment_length: int, window: int, horizon: int) -> int:
    return max(0, segment_length - window - horizon + 1)


def window_source(ds: MtsDataset, split: str, window: int, horizon: int, scaled=True) -> WindowBatchSource:
    """Index every (window, target) pair whose rows lie inside ``split``."""
    if window < 1 or horizon < 1:
        raise ValueError("window and horizon must be >= 1")
    start, stop = ds.segment(split)
    n = window_count(stop - start, window, horizon)
    if n == 0:
        raise EmptySplitError(
            f"{split} split has {stop - start} rows; needs at least window + horizon = {window + horizon}")
    data = ds.scaled if scaled else ds.values
    return WindowBatchSource(data, start + np.arange(n), window, horizon)


def make_windows(ds: MtsDataset, split: str, T: int, h: int, scaled=True) -> list[WindowSample]:
    """Materialize the windows of one split as :class:`WindowSample` records."""
    src = window_source(ds, split, T, h, scaled=scaled)
    idx = np.arange(len(src))
    xs, ys = src.inputs(idx), src.targets(idx)
    return [WindowSample(xs[i], ys[i], int(src.origins[i])) for i in idx]


def inverse_scale(x_scaled, ds: MtsDataset) -> np.ndarray:
    """Map scaled values (last axis = variables) back to original units."""
    x = np.asarray(x_scaled, dtype=np.float64)
    if x.shape[-1] != ds.n_vars:
        raise DimensionError(f"expected last axis of length {ds.n_vars}, got shape {x.shape}")
    return x * ds.scaler


def scale(x, ds: MtsDataset) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != ds.n_vars:
        raise DimensionError(f"expected last axis of length {ds.n_vars}, got shape {x.shape}")
    return x / ds.scaler


def load_csv(path, delimiter=",", header=False, sample_rate="") -> MtsDataset:
    """Read a rows=timesteps, columns=variables text file.

    Errors carry 1-based row/column positions of the first bad cell.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"{path}: no such file")
    names = None
    rows = []
    width = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, rec in enumerate(reader, start=1):
            if header and lineno == 1:
                names = [c.strip() for c in rec]
                continue
            if not rec or all(not c.strip() for c in rec):
                continue
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise IngestionError(f"{path}: row {lineno} has {len(rec)} columns, expected {width}")
            vals = []
            for col, cell in enumerate(rec, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise IngestionError(f"{path}: row {lineno}, column {col}: {cell!r} is not a number") from None
            rows.append(vals)
    if len(rows) < MIN_ROWS:
        raise IngestionError(f"{path}: {len(rows)} data rows, need at least {MIN_ROWS}")
    values = np.array(rows)
    if not np.isfinite(values).all():
        r, c = np.argwhere(~np.isfinite(values))[0]
        raise IngestionError(f"{path}: data row {r + 1}, column {c + 1} is not finite")
    if names is None or len(names) != values.shape[1]:
        names = [f"v{j}" for j in range(values.shape[1])]
    return MtsDataset(values, tuple(names), sample_rate=sample_rate)


def write_csv(values, path, delimiter=",", names=None) -> None:
    """Write a T x N matrix in the format :func:`load_csv` reads."""
    values = np.asarray(values, dtype=np.float64)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        if names is not None:
            w.writerow(names)
        for row in values:
            w.writerow([repr(float(v)) for v in row])


def synth_multiscale(N, T_total, periods, coupling, noise_sd, seed) -> MtsDataset:
    """Coupled sinusoid mixture with Gaussian noise.

    Each latent source j is ``sum_p a[p, j] * sin(2 pi t / p + phase[p, j])``
    with amplitudes drawn from [0.5, 1.5] and phases from [0, 2 pi); the
    observed series are ``sources @ coupling.T + noise``.
    """
    coupling = np.asarray(coupling, dtype=np.float64)
    if coupling.ndim != 2 or coupling.shape[0] != coupling.shape[1]:
        raise DimensionError(f"coupling must be square, got shape {coupling.shape}")
    if coupling.shape[0] != N:
        raise DimensionError(f"coupling is {coupling.shape[0]}x{coupling.shape[0]} but N={N}")
    if not len(periods):
        raise ValueError("periods must be non-empty")
    rng = np.random.default_rng(seed)
    t = np.arange(T_total, dtype=np.float64)[:, None]
    amps = rng.uniform(0.5, 1.5, size=(len(periods), N))
    phases = rng.uniform(0.0, 2 * np.pi, size=(len(periods), N))
    sources = np.zeros((T_total, N))
    for p, period in enumerate(periods):
        sources += amps[p] * np.sin(2 * np.pi * t / period + phases[p])
    values = sources @ coupling.T
    if noise_sd > 0:
        values = values + rng.normal(0.0, noise_sd, size=values.shape)
    label = "periods=" + "/".join(str(p) for p in periods)
    return MtsDataset(values, tuple(f"s{j}" for j in range(N)), sample_rate=label)


def default_coupling(N, seed, strength=0.3) -> np.ndarray:
    """Identity plus a sparse random off-diagonal mix (about two links per row)."""
    rng = np.random.default_rng(seed + 7919)
    c = np.eye(N)
    for i in range(N):
        others = [j for j in range(N) if j != i]
        if not others:
            continue
        for j in rng.choice(others, size=min(2, len(others)), replace=False):
            c[i, j] = rng.uniform(-strength, strength)
    return c
