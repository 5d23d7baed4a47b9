"""
Dynamic FC estimators.

All four estimators return an :class:`~randcon.timeseries.FcSeries` of shape
(T', N, N).  Undefined correlations (a zero-variance feature vector, a
zero derivative series, an all-zero ROI) are written as 0 and counted in
``FcSeries.degenerate_pairs``; NaN never leaves this module.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import hilbert

from .convolution import FeatureTensor, KernelBank, windows
from .errors import DimensionError, ParameterError
from .timeseries import FcSeries, RoiTimeSeries

RANDCON = "randcon"
SLIDING_WINDOW = "sliding-window"
MTD = "mtd"
PHASE_SYNC = "phase-sync"
METHODS = (RANDCON, SLIDING_WINDOW, MTD, PHASE_SYNC)

_CHUNK = 256


def _symmetrize_lower(r: np.ndarray) -> np.ndarray:
    # mirror the strict lower triangle so symmetry is exact, not up to rounding
    lower = np.tril(r, -1)
    out = lower + np.swapaxes(lower, -1, -2)
    idx = np.arange(r.shape[-1])
    out[..., idx, idx] = 1.0
    return out


def _degenerate_pair_count(bad: np.ndarray) -> int:
    """Pairs (m < n) per frame with at least one degenerate member, summed."""
    n = bad.shape[-1]
    d = bad.sum(axis=-1).astype(np.int64)
    return int(np.sum(d * (n - d) + d * (d - 1) // 2))


def pearson_frames(features: np.ndarray) -> tuple[np.ndarray, int]:
    """Per-frame Pearson correlation across the last axis.

    Parameters
    ----------
    features : np.ndarray
        Shape (T', N, F): F feature values for each ROI at each frame.

    Returns
    -------
    corr : np.ndarray
        Shape (T', N, N) with unit diagonal and entries clipped to [-1, 1].
    degenerate : int
        Number of off-diagonal pairs set to 0 because one side had zero
        variance.
    """
    n_frames, n, _ = features.shape
    out = np.empty((n_frames, n, n))
    degenerate = 0
    for start in range(0, n_frames, _CHUNK):
        a = features[start : start + _CHUNK]
        c = a - a.mean(axis=-1, keepdims=True)
        ss = np.einsum("tnf,tnf->tn", c, c)
        scale = np.einsum("tnf,tnf->tn", a, a)
        bad = ss <= 1e-24 * scale
        bad |= ss == 0.0
        norm = np.sqrt(np.where(bad, 1.0, ss))
        z = c / norm[..., None]
        z[bad] = 0.0
        r = np.clip(z @ np.swapaxes(z, -1, -2), -1.0, 1.0)
        out[start : start + len(a)] = _symmetrize_lower(r)
        degenerate += _degenerate_pair_count(bad)
    return out, degenerate


def randcon_fc(features: FeatureTensor, stride: int = 1, params: dict | None = None) -> FcSeries:
    """Correlate ROIs across the K kernel responses at each time point."""
    if features.n_kernels < 2:
        raise ParameterError("randcon needs at least 2 kernels (correlation over one feature is undefined)")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    feats = np.transpose(features.values[:, :, ::stride], (2, 1, 0))
    corr, degenerate = pearson_frames(feats)
    p = {"width": features.width, "n_kernels": features.n_kernels, "padding": features.padding, "stride": stride}
    p.update(params or {})
    return FcSeries(corr, RANDCON, p, degenerate)


def randcon_series(
    ts: RoiTimeSeries, bank: KernelBank, padding: str = "same", stride: int = 1
) -> FcSeries:
    """Convolve and correlate in time chunks.

    Same result as ``randcon_fc(convolve(ts, bank, padding))`` without
    materializing the full K x N x T' feature tensor, which matters for
    large banks (K=2048 on 90 x 1200 inputs is ~1.8 GB).
    """
    if bank.n_kernels < 2:
        raise ParameterError("randcon needs at least 2 kernels (correlation over one feature is undefined)")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    win = windows(ts.values, bank.width, padding)[:, ::stride, :]
    n_frames = win.shape[1]
    out = np.empty((n_frames, ts.n_rois, ts.n_rois))
    degenerate = 0
    step = max(1, (1 << 22) // max(1, bank.n_kernels * ts.n_rois))
    for start in range(0, n_frames, step):
        feats = np.einsum("ntw,kw->tnk", win[:, start : start + step, :], bank.weights)
        corr, d = pearson_frames(feats)
        out[start : start + len(feats)] = corr
        degenerate += d
    params = {
        "width": bank.width,
        "n_kernels": bank.n_kernels,
        "padding": padding,
        "stride": stride,
        "kernel_kind": bank.kind,
        "seed": bank.seed,
    }
    return FcSeries(out, RANDCON, params, degenerate)


def sliding_window_fc(ts: RoiTimeSeries, width: int, stride: int = 1) -> FcSeries:
    """Pearson correlation inside each length-``width`` window.

    Windows start at 0, stride, 2*stride, ... while fully inside the series.
    """
    if width < 2 or width > ts.n_timepoints:
        raise ParameterError(
            f"window width must satisfy 2 <= width <= T={ts.n_timepoints}, got {width}"
        )
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    win = windows(ts.values, width, "valid")[:, ::stride, :]
    corr, degenerate = pearson_frames(np.transpose(win, (1, 0, 2)))
    return FcSeries(corr, SLIDING_WINDOW, {"width": width, "stride": stride}, degenerate)


def window_count(n_timepoints: int, width: int, stride: int = 1) -> int:
    return (n_timepoints - width) // stride + 1


def _centered_mean(series: np.ndarray, at: np.ndarray, window: int) -> np.ndarray:
    """Mean of ``series[j + o]`` over in-bounds offsets o, for each j in ``at``."""
    lo, hi = -((window - 1) // 2), window // 2
    length = series.shape[0]
    total = np.zeros((len(at),) + series.shape[1:])
    count = np.zeros(len(at))
    for o in range(lo, hi + 1):
        idx = at + o
        ok = (idx >= 0) & (idx < length)
        total[ok] += series[idx[ok]]
        count[ok] += 1
    return total / count.reshape((-1,) + (1,) * (series.ndim - 1))


def mtd_fc(
    ts: RoiTimeSeries, avg_window: int, width: int | None = None, stride: int = 1
) -> FcSeries:
    """Multiplication of temporal derivatives.

    Each ROI's first difference is divided by the standard deviation of the
    whole difference series; pairwise products are smoothed with a centered
    moving average of ``avg_window`` points and sampled on the sliding-window
    grid of the given ``width``/``stride`` (frame s reads the derivative
    index at the centre of window s).  ``width`` defaults to
    ``max(avg_window, 2)``.
    """
    if ts.n_timepoints < 3:
        raise DimensionError("MTD needs T >= 3")
    if avg_window < 1:
        raise ParameterError(f"avg_window must be >= 1, got {avg_window}")
    width = max(avg_window, 2) if width is None else width
    if width < 2 or width > ts.n_timepoints:
        raise ParameterError(f"grid width must satisfy 2 <= width <= T, got {width}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")

    dt = np.diff(ts.values, axis=1)
    sigma = dt.std(axis=1)
    bad = sigma <= 1e-14 * np.maximum(1.0, np.abs(dt).max(axis=1))
    u = np.zeros_like(dt)
    u[~bad] = dt[~bad] / sigma[~bad, None]
    coupling = np.einsum("mt,nt->tmn", u, u)

    n_frames = window_count(ts.n_timepoints, width, stride)
    at = np.arange(n_frames) * stride + (width - 2) // 2
    values = _centered_mean(coupling, at, avg_window)
    degenerate = n_frames * _degenerate_pair_count(bad[None, :])
    params = {"avg_window": avg_window, "width": width, "stride": stride}
    return FcSeries(values, MTD, params, degenerate)


def instantaneous_phase(x: np.ndarray) -> np.ndarray:
    """Phase of the FFT-based analytic signal along the last axis."""
    return np.angle(hilbert(x, axis=-1))


def phase_sync_fc(ts: RoiTimeSeries, smooth: int | None = None) -> FcSeries:
    """cos of the instantaneous phase difference, one frame per time point.

    ``smooth`` optionally applies a centered moving average over that many
    frames; the default is the raw instantaneous coupling.
    """
    if ts.n_timepoints < 8:
        raise DimensionError("phase synchronization needs T >= 8")
    x = ts.values
    zero = np.all(x == 0.0, axis=1)
    phase = instantaneous_phase(x).T
    values = np.cos(phase[:, :, None] - phase[:, None, :])
    values[:, zero, :] = 0.0
    values[:, :, zero] = 0.0
    if smooth is not None and smooth > 1:
        values = _centered_mean(values, np.arange(values.shape[0]), smooth)
    values = _symmetrize_lower(np.clip(values, -1.0, 1.0))
    degenerate = values.shape[0] * _degenerate_pair_count(zero[None, :])
    params = {"smooth": smooth}
    return FcSeries(values, PHASE_SYNC, params, degenerate)


def vectorize_lower(fc: np.ndarray) -> np.ndarray:
    """Strict lower triangle in row-major order: (1,0), (2,0), (2,1), ...

    Works on a single N x N matrix or on a (..., N, N) stack.
    """
    fc = np.asarray(fc)
    if fc.ndim < 2 or fc.shape[-1] != fc.shape[-2]:
        raise DimensionError(f"expected square matrices, got shape {fc.shape}")
    rows, cols = np.tril_indices(fc.shape[-1], -1)
    return fc[..., rows, cols]


def n_from_length(length: int) -> int:
    n = (1 + math.isqrt(1 + 8 * length)) // 2
    if n * (n - 1) // 2 != length:
        raise DimensionError(f"length {length} is not N(N-1)/2 for any integer N")
    return n


def devectorize_lower(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vectorize_lower`; symmetric with unit diagonal."""
    v = np.asarray(v, dtype=np.float64)
    n = n_from_length(v.shape[-1])
    rows, cols = np.tril_indices(n, -1)
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., rows, cols] = v
    out[..., cols, rows] = v
    idx = np.arange(n)
    out[..., idx, idx] = 1.0
    return out


def frame_centers(method: str, params: dict, n_timepoints: int, n_frames: int) -> np.ndarray:
    """Source time index that each FC frame is aligned to.

    Windowed estimators map a frame to the centre of its window,
    ``start + (W - 1) // 2``; same-padded randcon and phase-sync frames are
    already on the input time grid.
    """
    stride = int(params.get("stride", 1) or 1)
    if method == PHASE_SYNC or (method == RANDCON and params.get("padding") == "same"):
        return np.arange(n_frames) * stride
    width = int(params["width"])
    return np.arange(n_frames) * stride + (width - 1) // 2


def estimate(
    ts: RoiTimeSeries,
    method: str,
    width: int = 3,
    stride: int = 1,
    n_kernels: int = 40,
    padding: str = "same",
    seed: int = 0,
    bank: KernelBank | None = None,
    avg_window: int | None = None,
    smooth: int | None = None,
) -> FcSeries:
    """Dispatch to one of the four estimators by name."""
    if method == RANDCON:
        if bank is None:
            from .convolution import sample_gaussian_bank

            bank = sample_gaussian_bank(n_kernels, width, seed)
        return randcon_series(ts, bank, padding, stride)
    if method == SLIDING_WINDOW:
        return sliding_window_fc(ts, width, stride)
    if method == MTD:
        return mtd_fc(ts, avg_window or width, width, stride)
    if method == PHASE_SYNC:
        return phase_sync_fc(ts, smooth)
    raise ParameterError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
