"""
Kernel banks and the multi-kernel 1-D convolution.

A bank of K kernels of width W is applied to every ROI of an N x T signal:

    y[k, n, t] = sum_w x[n, t + w] * C[k, w]

(correlation orientation, no kernel flip).  ``padding="valid"`` keeps only
fully overlapping positions (T' = T - W + 1); ``padding="same"`` zero-extends
the signal by ``(W - 1) // 2`` on the left and ``W // 2`` on the right so that
T' = T.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _rng
from .errors import DimensionError, ParameterError
from .timeseries import RoiTimeSeries

GAUSSIAN = "gaussian"
ONE_HOT = "one-hot"
CUSTOM = "custom"
PADDINGS = ("same", "valid")


@dataclass(frozen=True, eq=False)
class KernelBank:
    """K kernels of common width W, stored as a (K, W) array."""

    weights: np.ndarray
    kind: str = CUSTOM
    seed: int | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim == 1:
            w = w[None, :]
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ParameterError(f"kernel bank needs shape (K>=1, W>=1), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ParameterError("kernel weights must be finite")
        if self.kind not in (GAUSSIAN, ONE_HOT, CUSTOM):
            raise ParameterError(f"unknown kernel bank kind {self.kind!r}")
        if self.kind == ONE_HOT and not np.array_equal(w, np.eye(w.shape[1])):
            raise ParameterError("one-hot bank must be the W x W identity")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_kernels(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    def __len__(self):
        return self.n_kernels

    def __eq__(self, other):
        if not isinstance(other, KernelBank):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.seed == other.seed
            and self.weights.shape == other.weights.shape
            and self.weights.tobytes() == other.weights.tobytes()
        )

    __hash__ = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed, "n_kernels": self.n_kernels, "width": self.width}
        if self.kind == CUSTOM:
            d["weights"] = self.weights.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelBank":
        kind = d["kind"]
        if kind == GAUSSIAN:
            return sample_gaussian_bank(int(d["n_kernels"]), int(d["width"]), int(d["seed"]))
        if kind == ONE_HOT:
            return one_hot_bank(int(d["width"]))
        return cls(np.asarray(d["weights"], dtype=np.float64), CUSTOM, d.get("seed"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "KernelBank":
        return cls.from_dict(json.loads(text))


def sample_gaussian_bank(k_count: int, width: int, seed: int) -> KernelBank:
    """Draw K x W i.i.d. standard-normal weights.

    Kernel ``k`` comes from its own substream keyed by ``seed ^ k``, so a
    bank of K kernels is a prefix of any larger bank with the same seed.
    """
    if k_count < 1 or width < 1:
        raise ParameterError(f"need k_count >= 1 and width >= 1, got {k_count}, {width}")
    weights = np.empty((k_count, width))
    for k in range(k_count):
        weights[k] = _rng.stream(seed, k, _rng.KERNELS).standard_normal(width)
    return KernelBank(weights, GAUSSIAN, int(seed))


def one_hot_bank(width: int) -> KernelBank:
    """W kernels, kernel w has a single 1 at position w.

    Convolving with this bank reproduces the raw window samples, which is
    what makes sliding-window correlation a special case of the
    multi-kernel convolution.
    """
    if width < 1:
        raise ParameterError(f"width must be >= 1, got {width}")
    return KernelBank(np.eye(width), ONE_HOT, None)


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """Convolution output, shape (K, N, T')."""

    values: np.ndarray
    padding: str
    n_rois: int
    n_timepoints: int
    width: int

    @property
    def n_kernels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[2]

    def at(self, t: int) -> np.ndarray:
        """N x K feature matrix at output time ``t``."""
        return self.values[:, :, t].T


def pad_signal(x: np.ndarray, width: int, padding: str) -> np.ndarray:
    if padding not in PADDINGS:
        raise ParameterError(f"padding must be one of {PADDINGS}, got {padding!r}")
    if padding == "valid":
        if x.shape[-1] < width:
            raise DimensionError(
                f"valid padding needs T >= W, got T={x.shape[-1]}, W={width}"
            )
        return x
    left = (width - 1) // 2
    right = width // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    return np.pad(x, pad)


def windows(x: np.ndarray, width: int, padding: str = "valid") -> np.ndarray:
    """Read-only (N, T', W) view of the (padded) signal windows."""
    return sliding_window_view(pad_signal(x, width, padding), width, axis=-1)


def convolve(ts: RoiTimeSeries, bank: KernelBank, padding: str = "same") -> FeatureTensor:
    """Apply every kernel in ``bank`` to every ROI of ``ts``."""
    win = windows(ts.values, bank.width, padding)
    y = np.einsum("ntw,kw->knt", win, bank.weights)
    return FeatureTensor(y, padding, ts.n_rois, ts.n_timepoints, bank.width)


def output_length(n_timepoints: int, width: int, padding: str) -> int:
    if padding == "same":
        return n_timepoints
    return n_timepoints - width + 1
