"""
Experiment orchestration: simulated sweeps, the kernel-size study and the
real-data pipeline.

A plan sweeps exactly one parameter.  For every (noise level, sweep value,
group, method) cell the harness estimates an FC series per subject, pools
the group's frames, clusters them into the true number of states, matches
the centroids to the ground-truth patterns and scores the result.  Each
cell derives its own seed from the master seed and its key, so cells can be
run in any order or in parallel and still produce identical files.

Outputs (relative to the plan's output directory):

``results.csv``
    long format, one row per (cell, metric)
``summary.json``
    mean / std / n per (noise, value, method, metric)
``manifest.json``
    resolved plan, seeds, degenerate-pair counters, failures and SHA-256
    hashes of the other files
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, _rng
from .clustering import ClusterResult, elbow_k, kmeans, match_states, project_pca
from .connectivity import METHODS, MTD, RANDCON, estimate, frame_centers, vectorize_lower, window_count
from .convolution import output_length, sample_gaussian_bank
from .errors import ParameterError
from .metrics import (
    GroupComparison,
    ari,
    centroid_similarity,
    fc_variability,
    fraction_of_time,
    mean_dwell_time,
    overlap_ratio,
    sojourn_kl,
    state_cosine,
    state_mse,
    unpaired_group_compare,
)
from .simulate import DESK_SPEC, PAPER_SPEC, Dataset, SimulationSpec, generate_dataset
from .timeseries import RoiTimeSeries, write_container, zscore_rows

log = logging.getLogger(__name__)

DATA_PARAMS = ("noise_sigma", "n_rois", "n_timepoints", "n_states", "gamma_scale")
ESTIMATOR_PARAMS = ("kernel_count", "kernel_width")
SWEEPABLE = DATA_PARAMS + ESTIMATOR_PARAMS
METRICS = ("ari", "overlap_ratio", "mse", "cosine", "sojourn_kl")
RESULT_COLUMNS = ("sweep_param", "sweep_value", "noise_sigma", "group", "method", "metric", "value")


@dataclass(frozen=True)
class ExperimentPlan:
    """One-parameter sweep over simulated data.

    ``noise_levels`` repeats an estimator sweep (kernel count or width) at
    several noise levels, each on its own dataset; it defaults to the base
    spec's noise.
    """

    base: SimulationSpec = DESK_SPEC
    sweep_param: str = "noise_sigma"
    sweep_values: tuple = (0.6,)
    noise_levels: tuple | None = None
    methods: tuple = METHODS
    width: int = 3
    n_kernels: int = 40
    stride: int = 1
    padding: str = "same"
    metrics: tuple = METRICS
    n_restarts: int = 100
    max_iters: int = 20
    seed: int = 0
    zscore: bool = False
    match_before_kl: bool = True
    kl_reverse: bool = False
    out_dir: str = "results"
    name: str = "experiment"

    def __post_init__(self):
        for name in ("sweep_values", "methods", "metrics"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.noise_levels is not None:
            object.__setattr__(self, "noise_levels", tuple(float(v) for v in self.noise_levels))
        self.validate()

    def validate(self) -> None:
        if self.sweep_param not in SWEEPABLE:
            raise ParameterError(f"unknown sweep parameter {self.sweep_param!r}; choose from {', '.join(SWEEPABLE)}")
        if not self.sweep_values:
            raise ParameterError("sweep needs at least one value")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ParameterError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad or not self.metrics:
            raise ParameterError(f"unknown metric(s) {bad}; choose from {', '.join(METRICS)}")
        if self.noise_levels is not None and self.sweep_param in DATA_PARAMS:
            raise ParameterError("noise_levels can only accompany a kernel_count or kernel_width sweep")
        if self.padding not in ("same", "valid"):
            raise ParameterError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.n_restarts < 1 or self.max_iters < 1 or self.stride < 1:
            raise ParameterError("n_restarts, max_iters and stride must be >= 1")
        for v in self.sweep_values:
            self.cell_spec(v, self.base.noise_sigma)

    def cell_spec(self, value, noise: float) -> SimulationSpec:
        spec = self.base.with_(noise_sigma=noise)
        if self.sweep_param in DATA_PARAMS:
            cast = float if self.sweep_param in ("noise_sigma", "gamma_scale") else int
            spec = spec.with_(**{self.sweep_param: cast(value)})
        return spec

    def estimator(self, value) -> dict:
        width, k = self.width, self.n_kernels
        if self.sweep_param == "kernel_width":
            width = int(value)
        elif self.sweep_param == "kernel_count":
            k = int(value)
        return {"width": width, "n_kernels": k, "stride": self.stride, "padding": self.padding}

    def noise_grid(self) -> tuple:
        return self.noise_levels if self.noise_levels is not None else (self.base.noise_sigma,)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base"] = self.base.to_dict()
        for k in ("sweep_values", "methods", "metrics"):
            d[k] = list(d[k])
        if d["noise_levels"] is not None:
            d["noise_levels"] = list(d["noise_levels"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        # nested plan-file layout
        if "sweep" in d:
            sweep = d.pop("sweep")
            d["sweep_param"] = sweep["param"]
            d["sweep_values"] = sweep["values"]
        for section in ("estimator", "clustering"):
            d.update(d.pop(section, {}) or {})
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown plan field(s): {', '.join(sorted(unknown))}")
        base = d.pop("base", None)
        if isinstance(base, dict):
            d["base"] = SimulationSpec.from_dict(base)
        elif base is not None:
            d["base"] = base
        return cls(**d)

    def with_(self, **changes) -> "ExperimentPlan":
        return replace(self, **changes)


def load_plan(path) -> ExperimentPlan:
    """Read a plan from TOML or JSON (same schema)."""
    path = Path(path)
    if not path.exists():
        raise ParameterError(f"plan file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    return ExperimentPlan.from_dict(data)


def _preset_table() -> dict[str, ExperimentPlan]:
    noise = tuple(round(0.4 + 0.1 * i, 1) for i in range(7))
    kernel_noise = (0.6, 1.1, 1.6, 2.6)
    table = {}
    for prefix, spec in (("paper", PAPER_SPEC), ("desk", DESK_SPEC)):
        roi = (30, 60, 90, 120) if prefix == "paper" else (30, 60)
        tr = (400, 600, 800, 1000, 1200) if prefix == "paper" else (200, 300, 400)
        table[f"{prefix}-noise"] = ExperimentPlan(spec, "noise_sigma", noise, name=f"{prefix}-noise")
        table[f"{prefix}-roi"] = ExperimentPlan(spec, "n_rois", roi, name=f"{prefix}-roi")
        table[f"{prefix}-tr"] = ExperimentPlan(spec, "n_timepoints", tr, name=f"{prefix}-tr")
        table[f"{prefix}-states"] = ExperimentPlan(spec, "n_states", (4, 6, 8), name=f"{prefix}-states")
        table[f"{prefix}-scale-param"] = ExperimentPlan(spec, "gamma_scale", (1.0, 3.0, 5.0, 7.0), name=f"{prefix}-scale-param")
        table[f"{prefix}-kernel-count"] = ExperimentPlan(
            spec, "kernel_count", (5, 10, 20, 40, 80, 160), noise_levels=kernel_noise,
            methods=(RANDCON,), metrics=("ari", "cosine"), name=f"{prefix}-kernel-count",
        )
        table[f"{prefix}-kernel-size"] = ExperimentPlan(
            spec, "kernel_width", (4, 5, 6, 7, 8, 9), methods=(RANDCON, "sliding-window"),
            padding="valid", metrics=("sojourn_kl", "cosine", "mse"), name=f"{prefix}-kernel-size",
        )
    table["desk-smoke"] = ExperimentPlan(
        DESK_SPEC.with_(n_timepoints=200, n_groups=6, subjects_per_group=2),
        "noise_sigma", (0.6, 1.0), n_restarts=5, name="desk-smoke",
    )
    return table


PRESETS = _preset_table()


def preset(name: str) -> ExperimentPlan:
    try:
        return PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None


# ---------------------------------------------------------------------------
# cells


@dataclass
class CellOutcome:
    key: tuple
    metrics: dict[str, float] = field(default_factory=dict)
    degenerate_pairs: int = 0
    n_frames: int = 0
    error: str | None = None


def _expected_frames(method: str, est: dict, n_timepoints: int) -> int:
    if method == RANDCON:
        return len(range(0, output_length(n_timepoints, est["width"], est["padding"]), est["stride"]))
    if method == "phase-sync":
        return n_timepoints
    return window_count(n_timepoints, est["width"], est["stride"])


def subject_fc(ts: RoiTimeSeries, method: str, est: dict, kernel_seed: int, zscore: bool = False, smooth: int | None = None):
    if zscore:
        ts = zscore_rows(ts)
    bank = None
    if method == RANDCON:
        bank = sample_gaussian_bank(est["n_kernels"], est["width"], kernel_seed)
    avg = est["width"] if method == MTD else None
    return estimate(
        ts, method, width=est["width"], stride=est["stride"], padding=est["padding"],
        bank=bank, avg_window=avg, smooth=smooth,
    )


def evaluate_group(
    dataset: Dataset,
    group: int,
    method: str,
    est: dict,
    metrics: tuple,
    kernel_seed: int,
    cluster_seed: int,
    n_restarts: int,
    max_iters: int,
    zscore: bool = False,
    match_before_kl: bool = True,
    kl_reverse: bool = False,
) -> CellOutcome:
    """Estimate, pool, cluster and score one group with one method."""
    spec = dataset.spec
    samples, frame_truth, per_subject = [], [], []
    degenerate = 0
    for i in dataset.groups[group]:
        fcs = subject_fc(dataset.subjects[i], method, est, kernel_seed, zscore)
        expected = _expected_frames(method, est, spec.n_timepoints)
        if fcs.n_frames != expected:
            raise RuntimeError(f"{method} produced {fcs.n_frames} frames, shape law says {expected}")
        degenerate += fcs.degenerate_pairs
        samples.append(vectorize_lower(fcs.values))
        centers = frame_centers(method, fcs.params, spec.n_timepoints, fcs.n_frames)
        frame_truth.append(dataset.sequences[i][centers])
        per_subject.append(fcs.n_frames)
    x = np.concatenate(samples)
    truth = np.concatenate(frame_truth)
    result = kmeans(x, spec.n_states, n_restarts, max_iters, cluster_seed)
    true_vectors = dataset.true_state_vectors()
    matching = match_states(result.centroids, true_vectors)
    matched = result.centroids[np.argsort(matching.permutation)]

    out = {}
    if "ari" in metrics:
        out["ari"] = ari(result.labels, truth)
    if "overlap_ratio" in metrics:
        out["overlap_ratio"] = overlap_ratio(result.labels, truth, matching)
    if "mse" in metrics:
        out["mse"] = state_mse(matched, true_vectors)
    if "cosine" in metrics:
        out["cosine"] = state_cosine(matched, true_vectors)
    if "sojourn_kl" in metrics:
        kls = []
        offset = 0
        for i, n in zip(dataset.groups[group], per_subject):
            labels = result.labels[offset : offset + n]
            offset += n
            if match_before_kl:
                labels = matching.apply(labels)
            kls.append(sojourn_kl(labels, dataset.sequences[i], reverse=kl_reverse))
        out["sojourn_kl"] = float(np.mean(kls))
    return CellOutcome((), {m: out[m] for m in metrics}, degenerate, len(x))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_plan(plan: ExperimentPlan, out_dir=None, threads: int = 1, overrides: dict | None = None) -> Path:
    """Run every cell of ``plan`` and write results, summary and manifest.

    A failing cell is recorded in the manifest and skipped; other cells
    still run.  Returns the manifest path.
    """
    plan.validate()
    out = Path(out_dir if out_dir is not None else plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    kernel_seed = _rng.derive(plan.seed, 1)

    t0 = time.perf_counter()
    noise_grid = plan.noise_grid()
    specs: dict[tuple, SimulationSpec] = {}
    for ni, noise in enumerate(noise_grid):
        for vi, value in enumerate(plan.sweep_values):
            specs[(ni, vi)] = plan.cell_spec(value, noise).with_(seed=plan.seed)
    datasets: dict[SimulationSpec, Dataset | Exception] = {}
    for spec in specs.values():
        if spec not in datasets:
            try:
                datasets[spec] = generate_dataset(spec, threads)
            except Exception as exc:  # every cell on this dataset records it
                log.warning("dataset %s failed: %s", spec, exc)
                datasets[spec] = exc
    timings["simulate"] = time.perf_counter() - t0

    cells = []
    for (ni, vi), spec in specs.items():
        for g in range(spec.n_groups):
            for mi, method in enumerate(plan.methods):
                cells.append((ni, vi, g, mi))

    def run_cell(key):
        ni, vi, g, mi = key
        spec = specs[(ni, vi)]
        method = plan.methods[mi]
        try:
            dataset = datasets[spec]
            if isinstance(dataset, Exception):
                raise dataset
            outcome = evaluate_group(
                dataset, g, method, plan.estimator(plan.sweep_values[vi]), plan.metrics,
                kernel_seed, _rng.derive(plan.seed, 2, ni, vi, g, mi), plan.n_restarts, plan.max_iters,
                plan.zscore, plan.match_before_kl, plan.kl_reverse,
            )
        except Exception as exc:  # recorded per cell; the sweep carries on
            log.warning("cell %s failed: %s", key, exc)
            outcome = CellOutcome((), error=f"{type(exc).__name__}: {exc}")
        outcome.key = key
        return outcome

    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outcomes = list(pool.map(run_cell, cells))
    else:
        outcomes = [run_cell(c) for c in cells]
    timings["cells"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rows = []
    for o in sorted(outcomes, key=lambda o: o.key):
        ni, vi, g, mi = o.key
        for metric, value in o.metrics.items():
            rows.append((plan.sweep_param, plan.sweep_values[vi], specs[(ni, vi)].noise_sigma, g, plan.methods[mi], metric, float(value)))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    writer.writerows([_fmt(v) for v in r] for r in rows)
    (out / "results.csv").write_text(buf.getvalue())

    summary = []
    for ni in range(len(noise_grid)):
        for vi, value in enumerate(plan.sweep_values):
            for method in plan.methods:
                for metric in plan.metrics:
                    noise = specs[(ni, vi)].noise_sigma
                    vals = np.array([r[6] for r in rows if r[1] == value and r[2] == noise and r[4] == method and r[5] == metric])
                    summary.append({
                        "noise_sigma": noise, "sweep_value": value, "method": method, "metric": metric,
                        "n": int(vals.size),
                        "mean": float(vals.mean()) if vals.size else None,
                        "std": float(vals.std(ddof=1)) if vals.size > 1 else None,
                    })
    (out / "summary.json").write_text(json.dumps({"sweep_param": plan.sweep_param, "cells": summary}, indent=1) + "\n")

    failures = [
        {"noise_sigma": specs[o.key[:2]].noise_sigma, "sweep_value": plan.sweep_values[o.key[1]], "group": o.key[2],
         "method": plan.methods[o.key[3]], "error": o.error}
        for o in sorted(outcomes, key=lambda o: o.key) if o.error
    ]
    degenerate = [
        {"noise_sigma": specs[o.key[:2]].noise_sigma, "sweep_value": plan.sweep_values[o.key[1]], "group": o.key[2],
         "method": plan.methods[o.key[3]], "degenerate_pairs": o.degenerate_pairs, "n_frames": o.n_frames}
        for o in sorted(outcomes, key=lambda o: o.key) if not o.error
    ]
    manifest = {
        "kind": "run_manifest",
        "software": {"package": "randcon", "version": __version__},
        "plan": plan.to_dict(),
        "overrides": dict(overrides or {}),
        "seeds": {
            "master": plan.seed,
            "dataset": plan.seed,
            "kernel_bank": kernel_seed,
            "cluster": "derive(master, 2, noise_index, value_index, group, method_index)",
        },
        "label_base": 0,
        "metric_notes": {
            "overlap_ratio": "surrogate: post-matching label accuracy",
            "sojourn_kl": "KL(true || estimated)" if plan.kl_reverse else "KL(estimated || true)",
            "sojourn_kl_matched": plan.match_before_kl,
        },
        "n_cells": len(cells),
        "n_rows": len(rows),
        "failures": failures,
        "degenerate": degenerate,
        "files": {name: _sha256(out / name) for name in ("results.csv", "summary.json")},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    timings["write"] = time.perf_counter() - t0
    log.info("stage timings (s): %s", {k: round(v, 3) for k, v in timings.items()})
    return path


def kernel_size_study(plan: ExperimentPlan, out_dir=None, threads: int = 1, overrides: dict | None = None) -> Path:
    """Randcon vs sliding window across kernel/window widths, no padding.

    Frame counts differ between widths, so only the dwell-time KL and the
    spatial metrics are reported.
    """
    if plan.sweep_param != "kernel_width":
        raise ParameterError("kernel-size study sweeps kernel_width")
    extra = set(plan.methods) - {RANDCON, "sliding-window"}
    if extra:
        raise ParameterError(f"kernel-size study compares randcon and sliding-window only, got {sorted(extra)}")
    if plan.padding != "valid":
        raise ParameterError("kernel-size study runs without padding (padding='valid')")
    if {"ari", "overlap_ratio"} & set(plan.metrics):
        raise ParameterError("kernel-size study reports sojourn_kl, cosine and mse; ARI/overlap are not comparable across widths")
    if min(int(v) for v in plan.sweep_values) < 2:
        raise ParameterError("widths must be >= 2")
    return run_plan(plan, out_dir, threads, overrides)


# ---------------------------------------------------------------------------
# real data


@dataclass
class RealDataResult:
    method: str
    n_states: int
    clusters: ClusterResult
    subject_labels: list[np.ndarray]
    state_fc: np.ndarray
    table: list[dict[str, Any]]
    comparisons: dict[str, GroupComparison] = field(default_factory=dict)


def realdata_pipeline(
    inputs: list[RoiTimeSeries],
    method: str = RANDCON,
    width: int = 3,
    stride: int = 1,
    n_kernels: int = 2048,
    padding: str = "valid",
    seed: int = 0,
    n_states: int | None = None,
    k_range: tuple[int, int] = (2, 8),
    n_restarts: int = 100,
    max_iters: int = 20,
    pca_dim: int | None = None,
    covariate: list | None = None,
    zscore: bool = True,
) -> RealDataResult:
    """Pooled state extraction and per-subject temporal/spatial DFC measures.

    All subjects are clustered together.  The number of states comes from
    the elbow of the inertia curve unless ``n_states`` is given.  With a
    binary ``covariate`` (one value per subject), every per-subject measure
    is compared between the two groups with a Mann-Whitney U test.
    """
    if not inputs:
        raise ParameterError("no input subjects")
    shape = inputs[0].values.shape
    for i, ts in enumerate(inputs):
        if ts.values.shape != shape:
            raise ParameterError(f"subject {i} has shape {ts.values.shape}, expected {shape}")
    if covariate is not None and len(covariate) != len(inputs):
        raise ParameterError("covariate needs one value per subject")
    est = {"width": width, "n_kernels": n_kernels, "stride": stride, "padding": padding}
    kernel_seed = seed
    series = [subject_fc(ts, method, est, kernel_seed, zscore) for ts in inputs]
    x = np.concatenate([vectorize_lower(f.values) for f in series])
    features = project_pca(x, pca_dim) if pca_dim else x
    if n_states is None:
        n_states = elbow_k(features, k_range[0], k_range[1], _rng.derive(seed, 3), n_restarts=max(1, n_restarts // 10), max_iters=max_iters)
    clusters = kmeans(features, n_states, n_restarts, max_iters, _rng.derive(seed, 4))

    labels, offset = [], 0
    for f in series:
        labels.append(clusters.labels[offset : offset + f.n_frames])
        offset += f.n_frames
    all_frames = np.concatenate([f.values for f in series])
    n = shape[0]
    state_fc = np.stack([
        all_frames[clusters.labels == k].mean(axis=0) if np.any(clusters.labels == k) else np.zeros((n, n))
        for k in range(n_states)
    ])

    table = []
    for i, (f, lab) in enumerate(zip(series, labels)):
        row: dict[str, Any] = {"subject": i}
        for k, v in enumerate(fraction_of_time(lab, n_states)):
            row[f"fraction_time_{k}"] = float(v)
        for k, v in enumerate(mean_dwell_time(lab, n_states)):
            row[f"mean_dwell_{k}"] = float(v)
        row["fc_variability"] = fc_variability(f)
        row["centroid_similarity"] = centroid_similarity(f)
        if covariate is not None:
            row["covariate"] = covariate[i]
        table.append(row)

    comparisons = {}
    if covariate is not None:
        levels = sorted(set(covariate), key=str)
        if len(levels) != 2:
            raise ParameterError(f"covariate must take exactly 2 values, got {levels}")
        for key in table[0]:
            if key in ("subject", "covariate"):
                continue
            a = [r[key] for r in table if r["covariate"] == levels[0]]
            b = [r[key] for r in table if r["covariate"] == levels[1]]
            comparisons[key] = unpaired_group_compare(a, b)
    return RealDataResult(method, n_states, clusters, labels, state_fc, table, comparisons)


def write_realdata(result: RealDataResult, out_dir, params: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = list(result.table[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    w.writerows([_fmt(r[c]) for c in cols] for r in result.table)
    (out / "subject_metrics.csv").write_text(buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["measure", "test", "statistic", "p_value", "direction"])
    for key, c in result.comparisons.items():
        w.writerow([key, c.method, repr(c.statistic), repr(c.p_value), c.direction])
    (out / "comparisons.csv").write_text(buf.getvalue())

    write_container(out / "state_fc.rcfc", result.state_fc, {"kind": "state_fc", "method": result.method})
    result.clusters.save(out / "clusters.rcfc")
    files = ("subject_metrics.csv", "comparisons.csv", "state_fc.rcfc", "clusters.rcfc")
    manifest = {
        "kind": "realdata_manifest",
        "software": {"package": "randcon", "version": __version__},
        "params": params,
        "n_states": result.n_states,
        "label_base": 0,
        "files": {f: _sha256(out / f) for f in files},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path
