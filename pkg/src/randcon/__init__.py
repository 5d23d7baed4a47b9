"""Dynamic functional connectivity from random convolution kernels."""

__version__ = "0.1.0"

from .timeseries import RoiTimeSeries, SubjectGroup, load_csv, save_csv, zscore_rows
from .convolution import (
    FeatureTensor,
    KernelBank,
    convolve,
    one_hot_bank,
    sample_gaussian_bank,
)
from .connectivity import (
    FcSeries,
    devectorize_lower,
    mtd_fc,
    phase_sync_fc,
    randcon_fc,
    randcon_series,
    sliding_window_fc,
    vectorize_lower,
)

__all__ = [
    "RoiTimeSeries",
    "SubjectGroup",
    "load_csv",
    "save_csv",
    "zscore_rows",
    "FeatureTensor",
    "KernelBank",
    "convolve",
    "one_hot_bank",
    "sample_gaussian_bank",
    "FcSeries",
    "devectorize_lower",
    "mtd_fc",
    "phase_sync_fc",
    "randcon_fc",
    "randcon_series",
    "sliding_window_fc",
    "vectorize_lower",
]
