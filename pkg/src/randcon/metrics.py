"""
Measures for comparing recovered brain states with ground truth, and the
per-subject temporal/spatial DFC summaries.

State labels are 0-based integers throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .clustering import StateMatching
from .connectivity import vectorize_lower
from .errors import DegenerateError, ParameterError
from .simulate import run_lengths
from .timeseries import FcSeries

FISHER_CLIP = 1.0 - 1e-7


def contingency(labels_a, labels_b) -> np.ndarray:
    """Counts n_ij of samples with label i in ``labels_a`` and j in ``labels_b``."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ParameterError(f"label vectors must be 1-D with equal length, got {a.shape} and {b.shape}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand index from the contingency table.

    Pair counts are combined in exact integer arithmetic and divided once,
    so rational results such as -1/2 come out exact.  Returns 1.0 when both
    partitions are trivial (a single cluster each), where the
    chance-corrected formula is 0/0.
    """
    a = np.asarray(labels_a)
    if a.size < 2:
        raise ParameterError("ARI needs at least 2 samples")
    table = contingency(labels_a, labels_b)

    def comb2(counts):
        return sum(int(c) * (int(c) - 1) // 2 for c in np.ravel(counts))

    pairs = comb2([table.sum()])
    sum_ij = comb2(table)
    sum_a = comb2(table.sum(axis=1))
    sum_b = comb2(table.sum(axis=0))
    # (index - expected) / (max - expected), scaled through by 2 * pairs
    num = 2 * (sum_ij * pairs - sum_a * sum_b)
    den = (sum_a + sum_b) * pairs - 2 * sum_a * sum_b
    if den == 0:
        return 1.0
    return num / den


def overlap_ratio(labels_est, labels_true, matching: StateMatching) -> float:
    """Fraction of samples whose matched estimated label equals the truth.

    Stand-in definition: the overlap ratio is named but never given a
    formula in the source method, so this is post-matching label accuracy.
    """
    est = np.asarray(labels_est)
    tru = np.asarray(labels_true)
    if est.shape != tru.shape:
        raise ParameterError(f"label vectors differ in length: {est.shape} vs {tru.shape}")
    return float(np.mean(matching.apply(est) == tru))


def _pairs(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"state arrays differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        a, b = a[None], b[None]
    if a.shape[0] == 0:
        raise ParameterError("need at least one state pair")
    return a, b


def state_mse(estimated, true) -> float:
    """Mean squared difference per matched state, averaged over states.

    Inputs are (M, n) arrays already in matched order, or single vectors.
    """
    a, b = _pairs(estimated, true)
    return float(np.mean(np.mean((a - b) ** 2, axis=1)))


def state_cosine(estimated, true) -> float:
    """Cosine similarity per matched state, averaged over states."""
    a, b = _pairs(estimated, true)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    for i in range(a.shape[0]):
        if na[i] == 0 or nb[i] == 0:
            raise DegenerateError(f"state {i} has a zero-norm vector; cosine undefined")
    return float(np.mean(np.einsum("id,id->i", a, b) / (na * nb)))


def dwell_distribution(labels, state: int, support: int, alpha: float = 1.0) -> np.ndarray:
    """Smoothed distribution of run lengths 1..support for one state."""
    values, _, lengths = run_lengths(np.asarray(labels))
    counts = np.bincount(lengths[values == state], minlength=support + 1)[1 : support + 1]
    counts = counts.astype(np.float64) + alpha
    return counts / counts.sum()


def _kl_one(est, tru, state, alpha, reverse):
    ve, _, le = run_lengths(est)
    vt, _, lt = run_lengths(tru)
    support = int(np.concatenate([le[ve == state], lt[vt == state]]).max())
    p = dwell_distribution(est, state, support, alpha)
    q = dwell_distribution(tru, state, support, alpha)
    if reverse:
        p, q = q, p
    return float(np.sum(p * np.log(p / q)))


def sojourn_kl_per_state(seq_est, seq_true, states=None, alpha: float = 1.0, reverse: bool = False) -> dict:
    """Run-length KL divergence for each state.

    For a state, the run-length distributions of both sequences over the
    shared support ``1..max_run`` are smoothed additively with ``alpha`` and
    compared as KL(estimated || true), or the reverse with ``reverse=True``.
    ``states`` defaults to every label seen in either sequence; requested
    states absent from both are skipped with a warning.  Labels must already
    share one alphabet (apply the state matching first).  The sequences may
    differ in length.
    """
    est = np.asarray(seq_est)
    tru = np.asarray(seq_true)
    if est.size == 0 or tru.size == 0:
        raise ParameterError("sojourn KL needs non-empty sequences")
    if states is None:
        states = np.union1d(est, tru)
    out = {}
    for s in states:
        s = int(s)
        if not (np.any(est == s) or np.any(tru == s)):
            warnings.warn(f"state {s} absent from both sequences; excluded", RuntimeWarning, stacklevel=2)
            continue
        out[s] = _kl_one(est, tru, s, alpha, reverse)
    return out


def sojourn_kl(seq_est, seq_true, states=None, alpha: float = 1.0, reverse: bool = False) -> float:
    """Mean over states of :func:`sojourn_kl_per_state`."""
    per_state = sojourn_kl_per_state(seq_est, seq_true, states, alpha, reverse)
    if not per_state:
        raise ParameterError("no state occurs in either sequence")
    return float(np.mean(list(per_state.values())))


def fraction_of_time(seq, m: int) -> np.ndarray:
    """Share of time points spent in each of ``m`` states."""
    seq = np.asarray(seq)
    if seq.size == 0:
        raise ParameterError("empty state sequence")
    if seq.min() < 0 or seq.max() >= m:
        raise ParameterError(f"labels must lie in 0..{m - 1}")
    return np.bincount(seq, minlength=m) / seq.size


def mean_dwell_time(seq, m: int) -> np.ndarray:
    """Mean run length per state; 0 for states never visited."""
    seq = np.asarray(seq)
    if seq.size and (seq.min() < 0 or seq.max() >= m):
        raise ParameterError(f"labels must lie in 0..{m - 1}")
    values, _, lengths = run_lengths(seq)
    out = np.zeros(m)
    for k in range(m):
        runs = lengths[values == k]
        if runs.size:
            out[k] = runs.mean()
    return out


def _frames(fcs) -> np.ndarray:
    return fcs.values if isinstance(fcs, FcSeries) else np.asarray(fcs, dtype=np.float64)


def fc_variability(fcs) -> float:
    """Temporal std of each connection, averaged over the upper triangle."""
    z = _frames(fcs)
    if z.shape[0] < 2:
        raise ParameterError("FC variability needs at least 2 frames")
    rows, cols = np.triu_indices(z.shape[1], 1)
    return float(z[:, rows, cols].std(axis=0).mean())


def centroid_similarity(fcs) -> float:
    """Mean cosine between each Fisher-z frame and the subject's mean frame."""
    z = _frames(fcs)
    if z.shape[0] < 2:
        raise ParameterError("centroid similarity needs at least 2 frames")
    v = np.arctanh(np.clip(vectorize_lower(z), -FISHER_CLIP, FISHER_CLIP))
    centre = v.mean(axis=0)
    cn = np.linalg.norm(centre)
    if cn <= 1e-12 * max(1.0, np.abs(v).max()):
        raise DegenerateError("mean Fisher-z connectivity vector has zero norm")
    fn = np.linalg.norm(v, axis=1)
    cos = np.divide(v @ centre, fn * cn, out=np.zeros(len(v)), where=fn > 0)
    return float(cos.mean())


@dataclass(frozen=True)
class GroupComparison:
    statistic: float
    p_value: float
    direction: int
    method: str
    all_zero: bool = False


def paired_group_compare(values_a, values_b, alternative: str = "two-sided") -> GroupComparison:
    """Wilcoxon signed-rank test on paired values.

    Exact null distribution for n <= 25 without tied or zero differences,
    normal approximation otherwise.  ``direction`` is the sign of the median
    of ``b - a``; ``alternative="greater"`` tests whether ``a`` exceeds ``b``.
    """
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ParameterError("paired comparison needs two 1-D arrays of equal length")
    if a.size < 6:
        raise ParameterError(f"paired comparison needs at least 6 pairs, got {a.size}")
    d = a - b
    if np.all(d == 0):
        return GroupComparison(0.0, 1.0, 0, "none", all_zero=True)
    nz = np.abs(d[d != 0])
    exact = d.size <= 25 and nz.size == d.size and np.unique(nz).size == nz.size
    method = "exact" if exact else "approx"
    res = stats.wilcoxon(a, b, alternative=alternative, method=method, zero_method="wilcox")
    direction = int(np.sign(np.median(b - a)))
    return GroupComparison(float(res.statistic), float(res.pvalue), direction, method)


def unpaired_group_compare(values_a, values_b, alternative: str = "two-sided") -> GroupComparison:
    """Mann-Whitney U test for two independent samples."""
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    if a.size < 1 or b.size < 1:
        raise ParameterError("each group needs at least one value")
    res = stats.mannwhitneyu(a, b, alternative=alternative)
    direction = int(np.sign(np.median(b) - np.median(a)))
    return GroupComparison(float(res.statistic), float(res.pvalue), direction, "mann-whitney")


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""
