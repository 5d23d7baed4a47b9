"""
Core data model: ROI time series, subject groups, FC series, and their
on-disk formats.

Time series are stored as plain CSV.  FC series (and any other float64
array that needs bit-exact persistence) go into a small binary container::

    b"RCFC" | version:u32 | header_len:u32 | JSON header | float64 payload

All integers and floats are little-endian; the payload is row-major.
"""

from __future__ import annotations

import csv
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import DimensionError, FormatError, ParseError

MAGIC = b"RCFC"
FORMAT_VERSION = 1

ROWS_ARE_ROIS = "rows-are-rois"
ROWS_ARE_TIME = "rows-are-time"


class ConstantRowWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class RoiTimeSeries:
    """An N x T matrix of ROI signals.

    Parameters
    ----------
    values : array_like
        Shape (N, T); one row per ROI.
    roi_labels : sequence of str, optional
        Unique labels, one per row.  Defaults to ``roi_0 ... roi_{N-1}``.
    sampling_period : float, optional
        Seconds per time point (TR).
    """

    values: np.ndarray
    roi_labels: tuple[str, ...] = ()
    sampling_period: float | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"expected a 2-D array, got shape {values.shape}")
        n, t = values.shape
        if n < 2 or t < 2:
            raise DimensionError(f"need at least 2 ROIs and 2 time points, got N={n}, T={t}")
        if not np.all(np.isfinite(values)):
            raise ParseError("time series contains non-finite values")
        labels = tuple(self.roi_labels) if len(self.roi_labels) else default_labels(n)
        if len(labels) != n:
            raise DimensionError(f"{len(labels)} labels for {n} ROIs")
        if len(set(labels)) != n:
            raise ParseError("ROI labels must be unique")
        if self.sampling_period is not None and not self.sampling_period > 0:
            raise ValueError("sampling_period must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "roi_labels", labels)

    @property
    def n_rois(self) -> int:
        return self.values.shape[0]

    @property
    def n_timepoints(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, RoiTimeSeries):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and self.roi_labels == other.roi_labels
            and self.sampling_period == other.sampling_period
        )

    __hash__ = None


@dataclass(frozen=True)
class SubjectGroup:
    """Subjects that share N and T and are pooled for clustering."""

    subjects: tuple[RoiTimeSeries, ...]
    group_id: str = "group_0"

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if not subjects:
            raise DimensionError("a subject group needs at least one subject")
        shape = subjects[0].values.shape
        for i, s in enumerate(subjects):
            if s.values.shape != shape:
                raise DimensionError(
                    f"subject {i} has shape {s.values.shape}, expected {shape}"
                )
        object.__setattr__(self, "subjects", subjects)

    def __len__(self):
        return len(self.subjects)


def default_labels(n: int) -> tuple[str, ...]:
    return tuple(f"roi_{i}" for i in range(n))


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, layout: str = ROWS_ARE_ROIS, sampling_period=None) -> RoiTimeSeries:
    """Read a numeric table into a :class:`RoiTimeSeries`.

    A first row without any numeric cell is taken as a header, and a first
    column whose data cells are all non-numeric is taken as ROI labels
    (``rows-are-rois``).  With ``rows-are-time`` the header row supplies the
    ROI labels and the table is transposed.  Error messages use 1-based
    file row and column numbers.
    """
    if layout not in (ROWS_ARE_ROIS, ROWS_ARE_TIME):
        raise ValueError(f"unknown layout {layout!r}")
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty file")
    rows = [[c.strip() for c in r] for r in rows]

    header = None
    if not any(_is_number(c) for c in rows[0]):
        header, rows = rows[0], rows[1:]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    row_offset = 2 if header is not None else 1

    has_label_col = all(not _is_number(r[0]) for r in rows) and len(rows[0]) > 1
    first_col = 1 if has_label_col else 0
    width = len(rows[0])
    data = np.empty((len(rows), width - first_col))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ParseError(
                f"{path}: row {i + row_offset} has {len(r)} cells, expected {width}"
            )
        for j in range(first_col, width):
            try:
                data[i, j - first_col] = float(r[j])
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric cell {r[j]!r} at row {i + row_offset} column {j + 1}"
                ) from None

    labels: Sequence[str] = ()
    if layout == ROWS_ARE_ROIS:
        if has_label_col:
            labels = [r[0] for r in rows]
    else:
        data = data.T
        if header is not None:
            labels = header[first_col:]
    if data.shape[0] < 2 or data.shape[1] < 2:
        raise DimensionError(
            f"{path}: need at least 2 ROIs and 2 time points, got N={data.shape[0]}, T={data.shape[1]}"
        )
    return RoiTimeSeries(data, tuple(labels), sampling_period)


def save_csv(path, ts: RoiTimeSeries) -> None:
    """Write rows-are-rois CSV with a label column, 17 significant digits."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for label, row in zip(ts.roi_labels, ts.values):
            writer.writerow([label] + [format(v, ".17g") for v in row])


def zscore_rows(ts: RoiTimeSeries) -> RoiTimeSeries:
    """Standardize each ROI to zero mean and unit population std.

    Constant rows become all-zero and are reported through a
    :class:`ConstantRowWarning`.
    """
    x = ts.values
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    std = np.sqrt(np.mean(centered**2, axis=1, keepdims=True))
    constant = std[:, 0] <= 1e-14 * np.maximum(1.0, np.abs(mean[:, 0]))
    out = np.zeros_like(x)
    ok = ~constant
    out[ok] = centered[ok] / std[ok]
    if constant.any():
        names = [ts.roi_labels[i] for i in np.flatnonzero(constant)]
        warnings.warn(f"constant rows set to zero: {names}", ConstantRowWarning, stacklevel=2)
    return RoiTimeSeries(out, ts.roi_labels, ts.sampling_period)


def constant_rows(ts: RoiTimeSeries) -> list[int]:
    x = ts.values
    std = x.std(axis=1)
    return [int(i) for i in np.flatnonzero(std <= 1e-14 * np.maximum(1.0, np.abs(x.mean(axis=1))))]


# ---------------------------------------------------------------------------
# FC series and binary container


@dataclass(frozen=True, eq=False)
class FcSeries:
    """Time-ordered stack of N x N connectivity matrices.

    Attributes
    ----------
    values : np.ndarray
        Shape (T', N, N).
    method : str
        ``randcon``, ``sliding-window``, ``mtd`` or ``phase-sync``.
    params : dict
        Estimator parameters (width, stride, kernel count, padding, ...).
    degenerate_pairs : int
        Number of (time, pair) entries forced to 0 because a correlation
        was undefined.
    """

    values: np.ndarray
    method: str
    params: dict = field(default_factory=dict)
    degenerate_pairs: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[1] != values.shape[2]:
            raise DimensionError(f"FC series must have shape (T', N, N), got {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_rois(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FcSeries):
            return NotImplemented
        return (
            self.method == other.method
            and self.params == other.params
            and self.degenerate_pairs == other.degenerate_pairs
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None


def write_container(path, array: np.ndarray, header: dict[str, Any]) -> None:
    """Write ``array`` (float64) and a JSON header into an RCFC container."""
    array = np.ascontiguousarray(array, dtype="<f8")
    meta = dict(header)
    meta["shape"] = list(array.shape)
    blob = json.dumps(meta, sort_keys=True, allow_nan=False).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(array.tobytes(order="C"))


def read_container(path) -> tuple[np.ndarray, dict[str, Any]]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not an RCFC container")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{path}: container version {version} is incompatible with reader version {FORMAT_VERSION}"
        )
    if len(raw) < 12 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        meta = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    shape = tuple(int(s) for s in meta.get("shape", ()))
    payload = raw[12 + hlen :]
    expected = 8 * math.prod(shape)
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, header promises {expected} (file corrupt or truncated)"
        )
    array = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return array, meta


def save_fc_series(path, fcs: FcSeries) -> None:
    if fcs.n_frames == 0:
        raise DimensionError("refusing to save an empty FC series (T'=0)")
    header = {
        "kind": "fc_series",
        "method": fcs.method,
        "params": fcs.params,
        "degenerate_pairs": int(fcs.degenerate_pairs),
    }
    write_container(path, fcs.values, header)


def load_fc_series(path) -> FcSeries:
    values, meta = read_container(path)
    if meta.get("kind") != "fc_series":
        raise FormatError(f"{path}: container holds {meta.get('kind')!r}, not an FC series")
    return FcSeries(values, meta["method"], meta.get("params", {}), meta.get("degenerate_pairs", 0))
