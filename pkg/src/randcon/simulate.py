"""
Ground-truth generator for state-switching ROI signals.

ROIs are grouped into subnetworks of 10.  Each hidden state assigns every
subnetwork a latent factor and a sign; at each time point one value is
drawn per factor and every ROI copies ``sign * factor`` of its subnetwork.
Within a subnetwork the signals are therefore identical (correlation +1);
two subnetworks on the same factor correlate +1 or -1 depending on their
signs, and subnetworks on different factors are uncorrelated.

State dwell times are Gamma(shape, scale) rounded to whole time points, and
each switch goes to one of the other states uniformly at random.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _rng
from .errors import ParameterError
from .timeseries import RoiTimeSeries, SubjectGroup, load_csv, save_csv

SUBNETWORK_SIZE = 10
_MAX_PATTERN_RETRIES = 1000
_NOISE = 7


@dataclass(frozen=True)
class SimulationSpec:
    n_states: int = 4
    n_rois: int = 90
    n_timepoints: int = 1200
    gamma_shape: float = 10.0
    gamma_scale: float = 5.0
    noise_sigma: float = 0.6
    n_groups: int = 30
    subjects_per_group: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_states < 2:
            raise ParameterError(f"need at least 2 states, got {self.n_states}")
        if self.n_rois < SUBNETWORK_SIZE or self.n_rois % SUBNETWORK_SIZE:
            raise ParameterError(f"n_rois must be a positive multiple of 10, got {self.n_rois}")
        if self.n_timepoints < 2:
            raise ParameterError(f"n_timepoints must be >= 2, got {self.n_timepoints}")
        if not (self.gamma_shape > 0 and self.gamma_scale > 0):
            raise ParameterError("Gamma shape and scale must be positive")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be non-negative")
        if self.n_groups < 1 or self.subjects_per_group < 1:
            raise ParameterError("need at least one group and one subject per group")

    @property
    def n_subnetworks(self) -> int:
        return self.n_rois // SUBNETWORK_SIZE

    @property
    def n_subjects(self) -> int:
        return self.n_groups * self.subjects_per_group

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationSpec":
        return cls(**d)

    def with_(self, **changes) -> "SimulationSpec":
        return replace(self, **changes)


PAPER_SPEC = SimulationSpec()
DESK_SPEC = SimulationSpec(n_rois=30, n_timepoints=400, n_groups=10, subjects_per_group=5)


@dataclass(frozen=True, eq=False)
class StatePattern:
    """Factor id and sign per subnetwork for one hidden state."""

    factor_ids: tuple[int, ...]
    signs: tuple[int, ...]

    def __post_init__(self):
        if len(self.factor_ids) != len(self.signs):
            raise ParameterError("factor_ids and signs must have equal length")
        if any(s not in (-1, 1) for s in self.signs):
            raise ParameterError("signs must be +1 or -1")

    @property
    def n_factors(self) -> int:
        return max(self.factor_ids) + 1

    def network_fc(self) -> np.ndarray:
        """G x G implied correlation between subnetworks."""
        f = np.asarray(self.factor_ids)
        s = np.asarray(self.signs)
        return np.where(f[:, None] == f[None, :], s[:, None] * s[None, :], 0).astype(np.float64)

    def implied_fc(self) -> np.ndarray:
        """N x N ground-truth FC with entries in {-1, 0, +1}."""
        block = np.ones((SUBNETWORK_SIZE, SUBNETWORK_SIZE))
        return np.kron(self.network_fc(), block)

    def to_dict(self) -> dict:
        return {"factor_ids": list(self.factor_ids), "signs": list(self.signs)}


def generate_state_patterns(spec: SimulationSpec, seed: int | None = None) -> list[StatePattern]:
    """Draw ``spec.n_states`` patterns with pairwise distinct implied FC."""
    seed = spec.seed if seed is None else seed
    g = spec.n_subnetworks
    if g < 2:
        raise ParameterError("need at least 2 subnetworks (N >= 20) to express inter-network structure")
    rng = _rng.stream(seed, 0, _rng.PATTERNS)
    patterns: list[StatePattern] = []
    seen: list[np.ndarray] = []
    for _ in range(spec.n_states):
        for _attempt in range(_MAX_PATTERN_RETRIES):
            raw = rng.integers(0, g, size=g)
            # relabel factors in order of first appearance
            _, first = np.unique(raw, return_index=True)
            order = {int(raw[i]): rank for rank, i in enumerate(sorted(first))}
            factors = tuple(order[int(v)] for v in raw)
            signs = tuple(int(s) for s in rng.choice([-1, 1], size=g))
            cand = StatePattern(factors, signs)
            net = cand.network_fc()
            if not any(np.array_equal(net, other) for other in seen):
                patterns.append(cand)
                seen.append(net)
                break
        else:
            raise ParameterError(
                f"could not draw {spec.n_states} distinct state patterns over {g} subnetworks"
            )
    return patterns


def sample_dwell_times(shape: float, scale: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Gamma draws rounded half-up to integers, floored at 1."""
    raw = rng.gamma(shape, scale, size=size)
    return np.maximum(1, np.floor(raw + 0.5)).astype(np.int64)


def generate_state_sequence(spec: SimulationSpec, seed: int | None = None, subject: int = 0) -> np.ndarray:
    """Length-T label vector (0-based states)."""
    seed = spec.seed if seed is None else seed
    rng = _rng.stream(seed, subject, _rng.SEQUENCE)
    m, t_total = spec.n_states, spec.n_timepoints
    labels = np.empty(t_total, dtype=np.int64)
    state = int(rng.integers(m))
    pos = 0
    while pos < t_total:
        dwell = int(sample_dwell_times(spec.gamma_shape, spec.gamma_scale, 1, rng)[0])
        labels[pos : pos + dwell] = state
        pos += dwell
        step = int(rng.integers(m - 1))
        state = step if step < state else step + 1
    return labels


def run_lengths(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(values, starts, lengths) of maximal runs of equal labels."""
    labels = np.asarray(labels)
    if labels.size == 0:
        empty = np.array([], dtype=np.int64)
        return empty, empty, empty
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [labels.size]]))
    return labels[starts], starts, lengths


def _segment_factors(n_factors: int, length: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n_factors, length))
    if length <= n_factors:
        return z
    # decorrelate the factors over the segment so distinct factors have
    # exactly zero sample correlation, as the ground truth states
    centered = z - z.mean(axis=1, keepdims=True)
    q, r = np.linalg.qr(centered.T)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return (q * signs).T * np.sqrt(length)


def synthesize_bold(
    patterns: list[StatePattern],
    sequence: np.ndarray,
    spec: SimulationSpec,
    seed: int | None = None,
    subject: int = 0,
) -> RoiTimeSeries:
    """Signals for one subject following ``sequence``, plus white noise."""
    seed = spec.seed if seed is None else seed
    sequence = np.asarray(sequence)
    if sequence.shape != (spec.n_timepoints,):
        raise ParameterError(f"sequence length {sequence.shape} does not match T={spec.n_timepoints}")
    if sequence.min() < 0 or sequence.max() >= len(patterns):
        raise ParameterError("sequence refers to a state without a pattern")
    latent_rng = _rng.stream(seed, subject, _rng.SIGNAL)
    x = np.empty((spec.n_rois, spec.n_timepoints))
    sub = np.arange(spec.n_rois) // SUBNETWORK_SIZE
    for state, start, length in zip(*run_lengths(sequence)):
        p = patterns[int(state)]
        factors = _segment_factors(p.n_factors, int(length), latent_rng)
        f = np.asarray(p.factor_ids)[sub]
        s = np.asarray(p.signs, dtype=np.float64)[sub]
        x[:, start : start + length] = s[:, None] * factors[f]
    if spec.noise_sigma > 0:
        noise_rng = _rng.stream(seed, subject, _NOISE)
        x = x + spec.noise_sigma * noise_rng.standard_normal(x.shape)
    return RoiTimeSeries(x)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Simulated subjects plus their ground truth."""

    spec: SimulationSpec
    patterns: list[StatePattern]
    sequences: list[np.ndarray]
    subjects: list[RoiTimeSeries]
    groups: list[list[int]] = field(default_factory=list)

    def group(self, g: int) -> SubjectGroup:
        return SubjectGroup(tuple(self.subjects[i] for i in self.groups[g]), f"group_{g}")

    def true_state_vectors(self) -> np.ndarray:
        """M x D lower-triangle vectors of the implied FC patterns."""
        from .connectivity import vectorize_lower

        return np.stack([vectorize_lower(p.implied_fc()) for p in self.patterns])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.spec == other.spec
            and [p.to_dict() for p in self.patterns] == [p.to_dict() for p in other.patterns]
            and all(np.array_equal(a, b) for a, b in zip(self.sequences, other.sequences))
            and self.subjects == other.subjects
            and self.groups == other.groups
        )

    __hash__ = None


def _simulate_subject(args):
    spec, patterns, i = args
    seq = generate_state_sequence(spec, spec.seed, i)
    return seq, synthesize_bold(patterns, seq, spec, spec.seed, i)


def generate_dataset(spec: SimulationSpec, threads: int = 1) -> Dataset:
    """One shared pattern set, a fresh sequence and noise draw per subject.

    Subject ``i`` uses streams keyed by ``spec.seed ^ i``; subjects are
    assigned to groups by a seeded random permutation.
    """
    patterns = generate_state_patterns(spec, spec.seed)
    jobs = [(spec, patterns, i) for i in range(spec.n_subjects)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(_simulate_subject, jobs))
    else:
        results = [_simulate_subject(j) for j in jobs]
    order = _rng.stream(spec.seed, 0, _rng.PARTITION).permutation(spec.n_subjects)
    k = spec.subjects_per_group
    groups = [sorted(int(i) for i in order[g * k : (g + 1) * k]) for g in range(spec.n_groups)]
    return Dataset(
        spec,
        patterns,
        [r[0] for r in results],
        [r[1] for r in results],
        groups,
    )


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write manifest.json, one signal CSV and one label CSV per subject."""
    out = Path(out_dir)
    (out / "subjects").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    files = []
    for i, (ts, seq) in enumerate(zip(dataset.subjects, dataset.sequences)):
        sig = f"subjects/subject_{i:04d}.csv"
        lab = f"labels/subject_{i:04d}_labels.csv"
        save_csv(out / sig, ts)
        with (out / lab).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "state"])
            w.writerows((t, int(s)) for t, s in enumerate(seq))
        files.append({"subject": i, "signal": sig, "labels": lab, "seed": dataset.spec.seed ^ i})
    manifest = {
        "kind": "simulated_dataset",
        "spec": dataset.spec.to_dict(),
        "label_base": 0,
        "groups": dataset.groups,
        "patterns": [
            {**p.to_dict(), "implied_fc": p.implied_fc().astype(int).tolist()} for p in dataset.patterns
        ],
        "subjects": files,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_labels(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([int(r[-1]) for r in rows[1:]], dtype=np.int64)


def load_dataset(out_dir) -> Dataset:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    spec = SimulationSpec.from_dict(manifest["spec"])
    patterns = [StatePattern(tuple(p["factor_ids"]), tuple(p["signs"])) for p in manifest["patterns"]]
    subjects, sequences = [], []
    for entry in manifest["subjects"]:
        subjects.append(load_csv(out / entry["signal"]))
        sequences.append(read_labels(out / entry["labels"]))
    return Dataset(spec, patterns, sequences, subjects, [list(g) for g in manifest["groups"]])
