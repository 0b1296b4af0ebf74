"""Core grid, mask, graph, and dataset containers plus CSV round-trips.

A grid is an N-nodes by T-steps matrix of finite float64 readings. Missing
entries never live inside a grid as sentinels; they are carried by a
companion mask (1 = observed, 0 = missing). All containers are immutable
after construction and safe for concurrent reads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidInputError

__all__ = [
    "TrafficGrid",
    "MaskMatrix",
    "GraphSpec",
    "DatasetSplit",
    "normalize",
    "denormalize",
    "zero_fill",
    "observed_stats",
    "sliding_windows",
    "chronological_split",
    "save_grid_csv",
    "load_grid_csv",
    "save_mask_csv",
    "load_mask_csv",
]


def _frozen_matrix(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"{what} must be a nonempty 2-D matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TrafficGrid:
    """N x T matrix of readings, raw flow units or normalized z-scores.

    Attributes
    ----------
    values : np.ndarray
        Finite float64 matrix, one row per node, one column per time slice.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_matrix(self.values, "grid")
        if not np.isfinite(arr).all():
            raise DataError("grid contains non-finite entries")
        object.__setattr__(self, "values", arr)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MaskMatrix:
    """N x T observation mask; entry 1 marks an observed cell, 0 a missing one."""

    entries: np.ndarray

    def __post_init__(self):
        arr = _frozen_matrix(self.entries, "mask")
        bad = ~((arr == 0.0) | (arr == 1.0))
        if bad.any():
            raise DataError("mask entries must be exactly 0 or 1")
        object.__setattr__(self, "entries", arr)

    @property
    def n_nodes(self) -> int:
        return self.entries.shape[0]

    @property
    def n_steps(self) -> int:
        return self.entries.shape[1]

    def check_matches(self, grid: TrafficGrid) -> None:
        if self.entries.shape != grid.values.shape:
            raise DataError(
                f"mask shape {self.entries.shape} does not match grid {grid.values.shape}"
            )


@dataclass(frozen=True)
class GraphSpec:
    """Sensor graph: nonnegative weighted adjacency, optional node communities."""

    adjacency: np.ndarray
    node_communities: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        adj = _frozen_matrix(self.adjacency, "adjacency")
        if adj.shape[0] != adj.shape[1]:
            raise DataError(f"adjacency must be square, got {adj.shape}")
        if not np.isfinite(adj).all() or (adj < 0).any():
            raise DataError("adjacency must be finite and nonnegative")
        object.__setattr__(self, "adjacency", adj)
        if self.node_communities is not None:
            comms = tuple(tuple(int(i) for i in group) for group in self.node_communities)
            flat = sorted(i for group in comms for i in group)
            if flat != list(range(self.n_nodes)):
                raise DataError("communities must be disjoint and cover every node")
            object.__setattr__(self, "node_communities", comms)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class DatasetSplit:
    """Chronological train/validation/test windows plus the train normalization.

    Each split is a tuple of (TrafficGrid, MaskMatrix) windows, ordered in
    time and non-interleaved: every training window precedes every
    validation window, which precedes every test window.
    """

    train: tuple[tuple[TrafficGrid, MaskMatrix], ...]
    validation: tuple[tuple[TrafficGrid, MaskMatrix], ...]
    test: tuple[tuple[TrafficGrid, MaskMatrix], ...]
    window_length: int
    normalization: tuple[float, float]  # (mean, std)

    def __post_init__(self):
        mean, std = self.normalization
        if not (std > 0):
            raise InvalidInputError(f"normalization std must be > 0, got {std}")
        for name in ("train", "validation", "test"):
            windows = tuple(getattr(self, name))
            for grid, mask in windows:
                mask.check_matches(grid)
            object.__setattr__(self, name, windows)
        object.__setattr__(self, "normalization", (float(mean), float(std)))


def _values_of(grid) -> np.ndarray:
    return grid.values if isinstance(grid, TrafficGrid) else np.asarray(grid, dtype=np.float64)


def normalize(grid: TrafficGrid, mean: float, std: float) -> TrafficGrid:
    """Replace every entry e by (e - mean) / std."""
    if not (std > 0) or not math.isfinite(std) or not math.isfinite(mean):
        raise InvalidInputError(f"normalize needs finite mean and std > 0, got {mean}, {std}")
    return TrafficGrid((_values_of(grid) - mean) / std)


def denormalize(grid: TrafficGrid, mean: float, std: float) -> TrafficGrid:
    """Inverse of normalize; round-trips within 1e-12 relative."""
    if not (std > 0) or not math.isfinite(std) or not math.isfinite(mean):
        raise InvalidInputError(f"denormalize needs finite mean and std > 0, got {mean}, {std}")
    return TrafficGrid(_values_of(grid) * std + mean)


def zero_fill(values: np.ndarray, mask: MaskMatrix) -> TrafficGrid:
    """Zero out unobserved entries (NaN or otherwise) and wrap as a grid.

    Raw-missing source entries become 0 after normalization; this is the
    helper that enforces it.
    """
    arr = np.array(values, dtype=np.float64)
    if arr.shape != mask.entries.shape:
        raise DataError(f"values shape {arr.shape} does not match mask {mask.entries.shape}")
    arr[mask.entries == 0] = 0.0
    if not np.isfinite(arr).all():
        raise DataError("non-finite entries at observed positions")
    return TrafficGrid(arr)


def observed_stats(values: np.ndarray, mask: MaskMatrix) -> tuple[float, float]:
    """Global mean and standard deviation over the observed entries."""
    arr = np.asarray(values, dtype=np.float64)
    sel = arr[mask.entries == 1]
    if sel.size == 0:
        raise DataError("no observed entries to compute statistics from")
    return float(sel.mean()), float(sel.std())


def sliding_windows(series: np.ndarray, window: int, stride: int = 1) -> list[TrafficGrid]:
    """Cut an N x L series into floor((L-window)/stride)+1 overlapping windows."""
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"series must be 2-D, got shape {arr.shape}")
    if window < 1 or stride < 1:
        raise InvalidInputError("window and stride must be >= 1")
    length = arr.shape[1]
    if length < window:
        raise InvalidInputError(f"series length {length} shorter than window {window}")
    count = (length - window) // stride + 1
    return [TrafficGrid(arr[:, i * stride : i * stride + window]) for i in range(count)]


def chronological_split(
    series: np.ndarray, fractions: tuple[float, float] = (0.6, 0.2)
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split columns into train/validation/test by floor; remainder goes to test."""
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"series must be 2-D, got shape {arr.shape}")
    length = arr.shape[1]
    n_train = int(math.floor(fractions[0] * length))
    n_val = int(math.floor(fractions[1] * length))
    if n_train < 1 or n_val < 1 or n_train + n_val >= length:
        raise InvalidInputError(f"series length {length} too short for a {fractions} split")
    return (
        arr[:, :n_train],
        arr[:, n_train : n_train + n_val],
        arr[:, n_train + n_val :],
    )


# CSV formats. Grid: header t0,t1,..., one row per node, empty cell or a
# "nan" token marks raw-missing. Mask: same shape, 0/1 entries. UTF-8,
# comma-separated, LF line endings.


def _header(n_steps: int) -> list[str]:
    return [f"t{j}" for j in range(n_steps)]


def _open_writer(path):
    return open(path, "w", encoding="utf-8", newline="")


def save_grid_csv(path, values: np.ndarray, mask: MaskMatrix | None = None) -> None:
    """Write a grid; positions masked 0 are emitted as empty cells."""
    arr = _values_of(values)
    if arr.ndim != 2:
        raise DataError(f"grid must be 2-D, got shape {arr.shape}")
    keep = None if mask is None else mask.entries
    with _open_writer(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(arr.shape[1]))
        for i in range(arr.shape[0]):
            row = []
            for j in range(arr.shape[1]):
                if keep is not None and keep[i, j] == 0:
                    row.append("")
                else:
                    row.append(repr(float(arr[i, j])))
            writer.writerow(row)


def load_grid_csv(path) -> tuple[np.ndarray, MaskMatrix]:
    """Read a grid CSV; returns (values with NaN at raw-missing cells, raw mask)."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty grid file")
    header = rows[0]
    n_steps = len(header)
    if header != _header(n_steps):
        raise DataError(f"{path}: header must be t0,t1,..., got {header[:4]}...")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no node rows")
    values = np.empty((len(body), n_steps))
    mask = np.ones((len(body), n_steps))
    for i, row in enumerate(body):
        if len(row) != n_steps:
            raise DataError(f"{path}: row {i} has {len(row)} cells, expected {n_steps}")
        for j, cell in enumerate(row):
            token = cell.strip()
            if token == "" or token.lower() == "nan":
                values[i, j] = np.nan
                mask[i, j] = 0.0
                continue
            try:
                values[i, j] = float(token)
            except ValueError as exc:
                raise DataError(f"{path}: bad value {token!r} at row {i}, col {j}") from exc
    return values, MaskMatrix(mask)


def save_mask_csv(path, mask: MaskMatrix) -> None:
    with _open_writer(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(mask.n_steps))
        for i in range(mask.n_nodes):
            writer.writerow(str(int(v)) for v in mask.entries[i])


def load_mask_csv(path) -> MaskMatrix:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{path}: empty mask file")
    n_steps = len(rows[0])
    entries = np.empty((len(rows) - 1, n_steps))
    for i, row in enumerate(rows[1:]):
        if len(row) != n_steps:
            raise DataError(f"{path}: row {i} has {len(row)} cells, expected {n_steps}")
        for j, cell in enumerate(row):
            token = cell.strip()
            if token not in ("0", "1"):
                raise DataError(f"{path}: mask cell must be 0 or 1, got {token!r}")
            entries[i, j] = float(token)
    return MaskMatrix(entries)
