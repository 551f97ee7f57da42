"""Time-series ingestion: wide CSV parsing, gap repair, standardization,
windowing into regression samples, and train/test splitting.

Datasets are series-major: ``values[i, t]`` is series i at time step t,
with ``mask[i, t]`` false where the cell was empty.  Missing values are
stored as NaN so accidental use fails loudly downstream.
"""

from __future__ import annotations

import csv
import datetime
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "TimeSeriesDataset",
    "WindowedRegressionSet",
    "SplitSpec",
    "RepairReport",
    "StandardizeStats",
    "load_csv",
    "loads_csv",
    "save_csv",
    "repair_gaps",
    "standardize",
    "make_windows",
    "split",
]

DEFAULT_MAX_GAP = 61  # daily steps; the two-month interpolation cap


@dataclass
class TimeSeriesDataset:
    """Named series over a shared strictly-increasing time index."""

    names: list[str]
    times: np.ndarray  # (L,)
    values: np.ndarray  # (N, L), NaN where missing
    mask: np.ndarray  # (N, L) bool, True = present

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        n, l = self.values.shape
        if len(self.names) != n:
            raise DataError(f"{len(self.names)} names for {n} series")
        if n < 2:
            raise DataError(f"need at least 2 series, got {n}")
        if len(set(self.names)) != n:
            raise DataError("series names must be unique")
        if self.times.shape != (l,):
            raise DataError(f"time index length {self.times.shape} does not match {l} steps")
        if self.mask.shape != (n, l):
            raise DataError("mask shape does not match values")
        if l >= 2 and np.any(np.diff(self.times) <= 0):
            raise DataError("time index must be strictly increasing")

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def series(self, name: str) -> np.ndarray:
        return self.values[self.index_of(name)]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown series {name!r}; have {self.names}") from None


@dataclass
class RepairReport:
    """What gap repair did: interpolated runs and dropped series."""

    filled: list[tuple[str, int, int]] = field(default_factory=list)  # (name, start step, run length)
    dropped: list[tuple[str, str]] = field(default_factory=list)  # (name, reason)


@dataclass
class StandardizeStats:
    """Per-series training-range statistics used for scaling."""

    names: list[str]
    mean: np.ndarray
    std: np.ndarray

    def of(self, name: str) -> tuple[float, float]:
        i = self.names.index(name)
        return float(self.mean[i]), float(self.std[i])

    def destandardize(self, name: str, values: np.ndarray) -> np.ndarray:
        mean, std = self.of(name)
        return np.asarray(values) * std + mean


@dataclass
class WindowedRegressionSet:
    """Supervised samples: trailing windows of all series except the target.

    ``inputs[s]`` is (N-1, T) covering steps t-T+1..t in dataset channel
    order with the target series removed; ``targets[s]`` is the target at
    step t; ``times[s]`` is that step's stamp.
    """

    inputs: np.ndarray  # (S, N-1, T)
    targets: np.ndarray  # (S,)
    times: np.ndarray  # (S,)
    channel_names: list[str]
    target_name: str
    window: int
    stats: StandardizeStats | None = None

    def __post_init__(self):
        s = self.inputs.shape[0]
        if self.targets.shape != (s,) or self.times.shape != (s,):
            raise DataError("targets/times length does not match sample count")
        if self.inputs.ndim != 3 or self.inputs.shape[2] != self.window:
            raise DataError(f"inputs must be (S, C, {self.window}), got {self.inputs.shape}")
        if len(self.channel_names) != self.inputs.shape[1]:
            raise DataError("channel name count does not match input channels")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_channels(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: Sequence[int]) -> "WindowedRegressionSet":
        idx = np.asarray(list(indices), dtype=int)
        return WindowedRegressionSet(
            self.inputs[idx], self.targets[idx], self.times[idx],
            self.channel_names, self.target_name, self.window, self.stats,
        )

    def manifest(self) -> dict:
        doc = {
            "target": self.target_name,
            "window": self.window,
            "samples": int(self.n_samples),
            "channels": self.channel_names,
        }
        if self.stats is not None:
            doc["stats"] = {
                name: {"mean": float(m), "std": float(s)}
                for name, m, s in zip(self.stats.names, self.stats.mean, self.stats.std)
            }
        return doc


@dataclass
class SplitSpec:
    """How to divide samples between training and testing."""

    train_fraction: float = 0.9
    mode: str = "chronological"  # or "shuffled"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train fraction must be in (0, 1), got {self.train_fraction}")
        if self.mode not in ("chronological", "shuffled"):
            raise DataError(f"unknown split mode {self.mode!r}")


def _parse_time(token: str, line_no: int) -> float:
    token = token.strip()
    try:
        return float(token)
    except ValueError:
        pass
    try:
        return float(datetime.date.fromisoformat(token).toordinal())
    except ValueError:
        raise DataError(f"line {line_no}: cannot parse time stamp {token!r}") from None


def loads_csv(text: str) -> TimeSeriesDataset:
    """Parse wide-format CSV text: time column first, one column per series.

    Lines whose first cell starts with ``#`` are comments (provenance
    stamps and such) and are skipped wherever they appear.
    """
    reader = csv.reader(io.StringIO(text))
    rows = [
        (line_no, row)
        for line_no, row in enumerate(reader, start=1)
        if not (row and row[0].lstrip().startswith("#"))
    ]
    if not rows:
        raise DataError("empty input")
    header = [h.strip() for h in rows[0][1]]
    if len(header) < 3:
        raise DataError("need a time column plus at least 2 series columns")
    names = header[1:]
    times: list[float] = []
    columns: list[list[float]] = [[] for _ in names]
    mask_cols: list[list[bool]] = [[] for _ in names]
    for line_no, row in rows[1:]:
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {line_no}: expected {len(header)} cells, got {len(row)}")
        stamp = _parse_time(row[0], line_no)
        if times and stamp <= times[-1]:
            kind = "duplicate" if stamp == times[-1] else "non-monotone"
            raise DataError(f"line {line_no}: {kind} time stamp {row[0].strip()!r}")
        times.append(stamp)
        for i, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "":
                columns[i].append(np.nan)
                mask_cols[i].append(False)
            else:
                try:
                    columns[i].append(float(cell))
                except ValueError:
                    raise DataError(f"line {line_no}: cannot parse value {cell!r}") from None
                mask_cols[i].append(True)
    if not times:
        raise DataError("no data rows")
    return TimeSeriesDataset(
        names=names,
        times=np.array(times),
        values=np.array(columns),
        mask=np.array(mask_cols),
    )


def load_csv(path: str | Path) -> TimeSeriesDataset:
    return loads_csv(Path(path).read_text())


def dumps_csv(data: TimeSeriesDataset, time_name: str = "time") -> str:
    """Render the wide format back out; repr round-trips fp64 exactly."""
    lines = [",".join([time_name] + data.names)]
    for t in range(data.n_steps):
        cells = [repr(float(data.times[t]))]
        for i in range(data.n_series):
            cells.append(repr(float(data.values[i, t])) if data.mask[i, t] else "")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def save_csv(data: TimeSeriesDataset, path: str | Path, time_name: str = "time") -> None:
    Path(path).write_text(dumps_csv(data, time_name))


def _missing_runs(present: np.ndarray) -> list[tuple[int, int]]:
    """(start, length) of each run of False."""
    runs = []
    start = None
    for t, ok in enumerate(present):
        if not ok and start is None:
            start = t
        elif ok and start is not None:
            runs.append((start, t - start))
            start = None
    if start is not None:
        runs.append((start, len(present) - start))
    return runs


def repair_gaps(data: TimeSeriesDataset, max_gap: int = DEFAULT_MAX_GAP) -> tuple[TimeSeriesDataset, RepairReport]:
    """Fill short interior gaps by linear interpolation; drop bad series.

    A run of up to ``max_gap`` consecutive missing steps strictly inside a
    series is filled linearly between its flanking present values.  Series
    with longer runs, or with missing first/last values (nothing to anchor
    the interpolation), are dropped and named in the report.  Requires a
    fixed-step time index.  Idempotent: repaired output passes unchanged.
    """
    if max_gap < 0:
        raise DataError(f"max_gap must be >= 0, got {max_gap}")
    if data.n_steps >= 3:
        steps = np.diff(data.times)
        if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(float(steps[0]))):
            raise DataError("gap repair requires a fixed-step time index")
    report = RepairReport()
    keep: list[int] = []
    new_values = data.values.copy()
    for i, name in enumerate(data.names):
        present = data.mask[i]
        runs = _missing_runs(present)
        endpoint_gap = any(start == 0 or start + length == data.n_steps for start, length in runs)
        too_long = [run for run in runs if run[1] > max_gap]
        if endpoint_gap:
            report.dropped.append((name, "missing endpoint"))
            continue
        if too_long:
            start, length = too_long[0]
            report.dropped.append((name, f"gap of {length} steps exceeds cap {max_gap}"))
            continue
        for start, length in runs:
            lo, hi = start - 1, start + length
            left, right = new_values[i, lo], new_values[i, hi]
            for offset in range(1, length + 1):
                frac = offset / (length + 1)
                new_values[i, start + offset - 1] = left + (right - left) * frac
            report.filled.append((name, start, length))
        keep.append(i)
    if len(keep) < 2:
        raise DataError(f"gap repair left {len(keep)} usable series (need at least 2)")
    repaired = TimeSeriesDataset(
        names=[data.names[i] for i in keep],
        times=data.times.copy(),
        values=new_values[keep],
        mask=np.ones((len(keep), data.n_steps), dtype=bool),
    )
    return repaired, report


def standardize(
    data: TimeSeriesDataset, train_steps: int
) -> tuple[TimeSeriesDataset, StandardizeStats, list[str]]:
    """Scale each series by its mean/std over the leading training range.

    Statistics come only from the first ``train_steps`` steps so the test
    range stays untouched by its own distribution.  Zero-variance series
    are dropped and reported.  Requires fully-present data (repair first).
    """
    if not 1 <= train_steps <= data.n_steps:
        raise DataError(f"train range must cover 1..{data.n_steps} steps, got {train_steps}")
    if not data.mask.all():
        raise DataError("standardize requires gap-free data; run repair_gaps first")
    keep: list[int] = []
    dropped: list[str] = []
    means: list[float] = []
    stds: list[float] = []
    for i, name in enumerate(data.names):
        head = data.values[i, :train_steps]
        mean, std = float(head.mean()), float(head.std())
        if std == 0.0:
            dropped.append(name)
            continue
        keep.append(i)
        means.append(mean)
        stds.append(std)
    if len(keep) < 2:
        raise DataError(f"standardization left {len(keep)} usable series (need at least 2)")
    mean_arr, std_arr = np.array(means), np.array(stds)
    scaled = (data.values[keep] - mean_arr[:, None]) / std_arr[:, None]
    names = [data.names[i] for i in keep]
    out = TimeSeriesDataset(
        names=names,
        times=data.times.copy(),
        values=scaled,
        mask=np.ones_like(scaled, dtype=bool),
    )
    return out, StandardizeStats(names, mean_arr, std_arr), dropped


def make_windows(data: TimeSeriesDataset, target: str, window: int) -> WindowedRegressionSet:
    """One sample per step t whose trailing window is fully observed.

    Inputs are the non-target series over steps t-window+1..t; the label
    is the target series at t.  Steps where any series is missing break
    the timeline into segments, each contributing max(0, len-window+1)
    samples.
    """
    if window < 1:
        raise DataError(f"window must be >= 1, got {window}")
    if window > data.n_steps:
        raise DataError(f"window {window} exceeds series length {data.n_steps}")
    p = data.index_of(target)
    channel_idx = [i for i in range(data.n_series) if i != p]
    channel_names = [data.names[i] for i in channel_idx]
    usable = data.mask.all(axis=0)
    inputs: list[np.ndarray] = []
    targets: list[float] = []
    times: list[float] = []
    for seg_start, seg_len in _missing_runs(~usable):
        # runs of True in `usable` are runs of False in its negation
        for t in range(seg_start + window - 1, seg_start + seg_len):
            block = data.values[channel_idx, t - window + 1 : t + 1]
            inputs.append(block.copy())
            targets.append(float(data.values[p, t]))
            times.append(float(data.times[t]))
    if not inputs:
        raise DataError(f"no fully-observed stretch of {window} steps; cannot window")
    return WindowedRegressionSet(
        inputs=np.stack(inputs),
        targets=np.array(targets),
        times=np.array(times),
        channel_names=channel_names,
        target_name=target,
        window=window,
    )


def split(wset: WindowedRegressionSet, spec: SplitSpec | None = None) -> tuple[WindowedRegressionSet, WindowedRegressionSet]:
    """Divide samples into train/test per the split spec.

    Chronological mode cuts at floor(S * fraction) in time order, so
    every training target stamp precedes every test target stamp.
    """
    spec = spec or SplitSpec()
    s = wset.n_samples
    if s < 2:
        raise DataError(f"need at least 2 samples to split, got {s}")
    n_train = int(s * spec.train_fraction)
    if n_train < 1 or n_train >= s:
        raise DataError(f"degenerate split: {n_train} train of {s} total")
    if spec.mode == "chronological":
        order = np.arange(s)
    else:
        order = np.random.default_rng(spec.seed).permutation(s)
    return wset.subset(order[:n_train]), wset.subset(order[n_train:])
