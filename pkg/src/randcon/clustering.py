"""
Brain-state extraction by k-means over vectorized FC frames.

Each call to :func:`kmeans` runs several independent k-means++ / Lloyd fits
and keeps the one with the lowest Davies-Bouldin index.  Samples are put in
a canonical (lexicographic) order before fitting, so the result does not
depend on the order in which frames were pooled.
"""

from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _rng
from .errors import DegenerateError, ParameterError
from .timeseries import read_container, write_container


@dataclass(frozen=True, eq=False)
class ClusterResult:
    centroids: np.ndarray
    labels: np.ndarray
    db_index: float
    inertia: float
    n_runs: int
    winning_run: int
    seed: int
    restart_db: np.ndarray = field(default_factory=lambda: np.empty(0))
    inertia_trace: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_states(self) -> int:
        return self.centroids.shape[0]

    def save(self, path, extra: dict | None = None) -> None:
        """Write to a container; ``extra`` adds provenance keys to the header."""
        header = {
            **(extra or {}),
            "kind": "cluster_result",
            "labels": [int(v) for v in self.labels],
            "db_index": float(self.db_index),
            "inertia": float(self.inertia),
            "n_runs": int(self.n_runs),
            "winning_run": int(self.winning_run),
            "seed": int(self.seed),
            "restart_db": [float(v) if np.isfinite(v) else None for v in self.restart_db],
            "inertia_trace": [float(v) for v in self.inertia_trace],
        }
        write_container(path, self.centroids, header)

    @classmethod
    def load(cls, path) -> "ClusterResult":
        centroids, meta = read_container(path)
        if meta.get("kind") != "cluster_result":
            raise ParameterError(f"{path} does not hold a cluster result")
        restart_db = np.array([np.inf if v is None else v for v in meta["restart_db"]], dtype=float)
        return cls(
            centroids,
            np.asarray(meta["labels"], dtype=np.int64),
            meta["db_index"],
            meta["inertia"],
            meta["n_runs"],
            meta["winning_run"],
            meta["seed"],
            restart_db,
            np.asarray(meta["inertia_trace"], dtype=float),
        )


@dataclass(frozen=True)
class StateMatching:
    """``permutation[i]`` is the true state matched to estimated state ``i``."""

    permutation: tuple[int, ...]
    total_distance: float

    def apply(self, labels: np.ndarray) -> np.ndarray:
        """Rename estimated labels to their matched true labels."""
        labels = np.asarray(labels)
        lookup = np.asarray(self.permutation)
        if labels.size and (labels.min() < 0 or labels.max() >= len(lookup)):
            raise ParameterError("label outside the matching's domain")
        return lookup[labels]


def _sq_distances(x: np.ndarray, c: np.ndarray, x_sq: np.ndarray) -> np.ndarray:
    d = x_sq[:, None] - 2.0 * (x @ c.T) + np.einsum("kd,kd->k", c, c)[None, :]
    return np.maximum(d, 0.0)


def _plus_plus_init(x: np.ndarray, m: int, rng: np.random.Generator, x_sq: np.ndarray) -> np.ndarray:
    s = x.shape[0]
    centers = np.empty((m, x.shape[1]))
    centers[0] = x[rng.integers(s)]
    closest = _sq_distances(x, centers[:1], x_sq)[:, 0]
    for j in range(1, m):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(s)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, s - 1)
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_distances(x, centers[j : j + 1], x_sq)[:, 0])
    return centers


def _means(x: np.ndarray, labels: np.ndarray, m: int, old: np.ndarray) -> tuple[np.ndarray, list[int]]:
    onehot = (labels[None, :] == np.arange(m)[:, None]).astype(np.float64)
    counts = onehot.sum(axis=1)
    sums = onehot @ x
    centers = old.copy()
    filled = counts > 0
    centers[filled] = sums[filled] / counts[filled, None]
    return centers, [int(j) for j in np.flatnonzero(~filled)]


def _inertia(x: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    diff = x - centers[labels]
    return float(np.einsum("sd,sd->", diff, diff))


def _lloyd(x: np.ndarray, m: int, max_iters: int, rng: np.random.Generator, x_sq: np.ndarray):
    """One k-means++ seeded Lloyd run.

    Returns centroids, labels and the objective after every update step.
    """
    centers = _plus_plus_init(x, m, rng, x_sq)
    rows = np.arange(x.shape[0])
    labels = None
    trace = []
    for _ in range(max_iters):
        d = _sq_distances(x, centers, x_sq)
        if labels is not None:
            trace.append(float(d[rows, labels].sum()))
        new = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers, empty = _means(x, labels, m, centers)
        if empty:
            # re-seed each empty cluster at the sample farthest from its centroid
            far = np.argsort(-d[rows, labels], kind="stable")
            taken = iter(int(i) for i in far)
            for j in empty:
                labels[next(taken)] = j
            centers, _ = _means(x, labels, m, centers)
    else:
        d = _sq_distances(x, centers, x_sq)
        trace.append(float(d[rows, labels].sum()))
    return centers, labels, np.asarray(trace)


def davies_bouldin(samples: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Mean over clusters of the worst (s_i + s_j) / d_ij ratio.

    ``s_i`` is the mean Euclidean distance of cluster i's members to its
    centroid and ``d_ij`` the distance between centroids.  Only clusters
    with at least one member take part.
    """
    samples = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels)
    centroids = np.asarray(centroids, dtype=np.float64)
    present = np.unique(labels)
    if present.size < 2:
        raise DegenerateError("Davies-Bouldin needs at least 2 non-empty clusters")
    scatter = np.array(
        [np.linalg.norm(samples[labels == k] - centroids[k], axis=1).mean() for k in present]
    )
    c = centroids[present]
    dist = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
    worst = np.zeros(present.size)
    for i in range(present.size):
        for j in range(present.size):
            if i == j:
                continue
            if dist[i, j] == 0.0:
                raise DegenerateError(
                    f"clusters {int(present[i])} and {int(present[j])} have coincident centroids"
                )
            worst[i] = max(worst[i], (scatter[i] + scatter[j]) / dist[i, j])
    return float(worst.mean())


def kmeans(
    samples: np.ndarray,
    m: int,
    n_restarts: int = 100,
    max_iters: int = 20,
    seed: int = 0,
    threads: int = 1,
) -> ClusterResult:
    """Best-of-``n_restarts`` k-means, judged by Davies-Bouldin.

    Restart ``r`` draws its k-means++ seeds from the stream keyed by
    ``seed ^ r``.  Lloyd iterations stop early when no label changes.
    Ties in the Davies-Bouldin index go to the lower restart index.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ParameterError(f"samples must be a 2-D (S, D>=1) array, got shape {x.shape}")
    s = x.shape[0]
    if m < 2:
        raise ParameterError(f"need m >= 2 clusters, got {m}")
    if s < m:
        raise ParameterError(f"need at least m={m} samples, got {s}")
    if n_restarts < 1 or max_iters < 1:
        raise ParameterError("n_restarts and max_iters must be >= 1")
    if np.all(x == x[0]):
        raise DegenerateError("all samples are identical; no cluster structure to find")

    order = np.lexsort(x.T[::-1])
    xs = np.ascontiguousarray(x[order])
    x_sq = np.einsum("sd,sd->s", xs, xs)

    def fit(r):
        centers, labels, trace = _lloyd(xs, m, max_iters, _rng.stream(seed, r, _rng.KMEANS), x_sq)
        try:
            db = davies_bouldin(xs, labels, centers)
        except DegenerateError:
            db = np.inf
        return centers, labels, trace, db

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = list(pool.map(fit, range(n_restarts)))
    else:
        runs = [fit(r) for r in range(n_restarts)]
    restart_db = np.array([r[3] for r in runs])
    best = int(np.argmin(restart_db))
    centers, labels_sorted, trace, db = runs[best]
    labels = np.empty(s, dtype=np.int64)
    labels[order] = labels_sorted
    return ClusterResult(
        centroids=centers,
        labels=labels,
        db_index=float(db),
        inertia=_inertia(xs, labels_sorted, centers),
        n_runs=n_restarts,
        winning_run=best,
        seed=int(seed),
        restart_db=restart_db,
        inertia_trace=trace,
    )


def elbow_curve(samples, k_min: int, k_max: int, seed: int = 0, n_restarts: int = 10, max_iters: int = 20):
    """Inertia of the best k-means fit for every k in ``k_min..k_max``."""
    ks = np.arange(k_min, k_max + 1)
    inertias = np.array(
        [kmeans(samples, int(k), n_restarts, max_iters, seed).inertia for k in ks]
    )
    return ks, inertias


def elbow_k(samples, k_min: int = 2, k_max: int = 8, seed: int = 0, n_restarts: int = 10, max_iters: int = 20) -> int:
    """k whose (k, inertia) point lies farthest from the end-point chord.

    Exact ties (for example a perfectly linear curve) go to the smallest k.
    """
    samples = np.asarray(samples)
    if k_min < 2 or k_max < k_min + 2:
        raise ParameterError(f"need k_min >= 2 and k_max >= k_min + 2, got {k_min}..{k_max}")
    if samples.shape[0] < k_max:
        raise ParameterError(f"need at least k_max={k_max} samples")
    ks, inertia = elbow_curve(samples, k_min, k_max, seed, n_restarts, max_iters)
    if np.any(np.diff(inertia) > 0):
        warnings.warn("inertia is not monotone in k; a fit may have failed", RuntimeWarning, stacklevel=2)
    return int(ks[chord_elbow(ks, inertia)])


def chord_elbow(ks: np.ndarray, values: np.ndarray) -> int:
    """Index of the point with maximum perpendicular distance to the chord."""
    ks = np.asarray(ks, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dx, dy = ks[-1] - ks[0], values[-1] - values[0]
    # the common 1/|chord| factor does not change the argmax
    dist = np.abs(dx * (values - values[0]) - dy * (ks - ks[0]))
    top = dist.max()
    tol = 1e-12 * max(top, np.abs(dx * values).max(), 1e-300)
    return int(np.flatnonzero(dist >= top - tol)[0])


def match_states(estimated: np.ndarray, true: np.ndarray) -> StateMatching:
    """Bijection estimated -> true minimizing the summed Euclidean distance.

    Among optimal bijections the lexicographically smallest permutation is
    returned.
    """
    est = np.asarray(estimated, dtype=np.float64)
    tru = np.asarray(true, dtype=np.float64)
    if est.ndim != 2 or tru.ndim != 2 or est.shape != tru.shape:
        raise ParameterError(
            f"estimated and true states must have equal shape (M, D), got {est.shape} and {tru.shape}"
        )
    cost = np.linalg.norm(est[:, None, :] - tru[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())
    tol = 1e-9 * max(1.0, best)
    m = cost.shape[0]
    perm: list[int] = []
    free = list(range(m))
    fixed = 0.0
    for i in range(m):
        for j in free:
            rest = [c for c in free if c != j]
            tail = 0.0
            if rest:
                sub = cost[np.ix_(range(i + 1, m), rest)]
                r, c = linear_sum_assignment(sub)
                tail = float(sub[r, c].sum())
            if fixed + cost[i, j] + tail <= best + tol:
                perm.append(j)
                free.remove(j)
                fixed += cost[i, j]
                break
    total = float(sum(cost[i, perm[i]] for i in range(m)))
    return StateMatching(tuple(perm), total)


def brute_force_matching(estimated: np.ndarray, true: np.ndarray) -> StateMatching:
    """Exhaustive search over all M! bijections (test oracle, M <= 8)."""
    est = np.asarray(estimated, dtype=np.float64)
    tru = np.asarray(true, dtype=np.float64)
    cost = np.linalg.norm(est[:, None, :] - tru[None, :, :], axis=-1)
    m = cost.shape[0]
    best_perm, best = None, np.inf
    for perm in itertools.permutations(range(m)):
        total = sum(cost[i, perm[i]] for i in range(m))
        if best_perm is None or total < best - 1e-9 * max(1.0, best):
            best_perm, best = perm, total
    return StateMatching(tuple(best_perm), float(best))


def project_pca(samples: np.ndarray, dim: int = 10) -> np.ndarray:
    """Linear projection onto the top principal components.

    Optional dimensionality reduction before clustering; component signs are
    fixed so the largest-magnitude loading is positive.
    """
    x = np.asarray(samples, dtype=np.float64)
    dim = min(dim, x.shape[1], x.shape[0])
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:dim]
    flip = np.sign(comps[np.arange(dim), np.argmax(np.abs(comps), axis=1)])
    flip[flip == 0] = 1.0
    return centered @ (comps * flip[:, None]).T
