"""
Figure-ready tables and charts from a results CSV.

For every (metric, noise level) pair the report writes one tidy CSV with a
row per sweep value and, for each method, the group mean, standard deviation
and group count.  When randcon is among the methods and there are at least
six groups, every other method is compared with randcon by a paired
signed-rank test over groups and the p-value and stars are added.  An SVG
line chart is written next to each table.

The report depends only on the results file, so re-running it reproduces
the same bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormatError
from .metrics import paired_group_compare, significance_stars

REQUIRED = ("sweep_param", "sweep_value", "noise_sigma", "group", "method", "metric", "value")
REFERENCE = "randcon"
MIN_PAIRS = 6


def read_results(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"results file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = []
        for i, r in enumerate(reader, start=2):
            try:
                rows.append({
                    "sweep_param": r["sweep_param"],
                    "sweep_value": float(r["sweep_value"]),
                    "noise_sigma": float(r["noise_sigma"]),
                    "group": int(r["group"]),
                    "method": r["method"],
                    "metric": r["metric"],
                    "value": float(r["value"]),
                })
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}: row {i}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no result rows")
    return rows


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _method_order(methods) -> list[str]:
    ms = sorted(set(methods))
    if REFERENCE in ms:
        ms.remove(REFERENCE)
        ms.insert(0, REFERENCE)
    return ms


def summarize(rows: list[dict]) -> dict:
    """Nested tables keyed by (metric, noise) then sweep value then method.

    In a noise sweep the noise level is the sweep value, so the key's noise
    is None and all levels share one table.
    """
    cells: dict = defaultdict(lambda: defaultdict(lambda: defaultdict(dict)))
    for r in rows:
        noise = None if r["sweep_param"] == "noise_sigma" else r["noise_sigma"]
        cells[(r["metric"], noise)][r["sweep_value"]][r["method"]][r["group"]] = r["value"]
    return cells


def build_table(by_value: dict, methods: list[str]) -> tuple[list[str], list[list[str]]]:
    header = ["sweep_value"]
    for m in methods:
        header += [f"{m}_mean", f"{m}_sd", f"{m}_n"]
    others = [m for m in methods if m != REFERENCE] if REFERENCE in methods else []
    for m in others:
        header += [f"{m}_p", f"{m}_stars"]
    lines = []
    for value in sorted(by_value):
        per = by_value[value]
        line = [_num(value)]
        for m in methods:
            v = np.array([per[m][g] for g in sorted(per.get(m, {}))])
            line += [
                repr(float(v.mean())) if v.size else "",
                repr(float(v.std(ddof=1))) if v.size > 1 else "",
                str(v.size),
            ]
        for m in others:
            shared = sorted(set(per.get(REFERENCE, {})) & set(per.get(m, {})))
            if len(shared) >= MIN_PAIRS:
                a = [per[REFERENCE][g] for g in shared]
                b = [per[m][g] for g in shared]
                p = paired_group_compare(a, b).p_value
                line += [repr(p), significance_stars(p)]
            else:
                line += ["", ""]
        lines.append(line)
    return header, lines


def _plot(path: Path, header, lines, methods, metric, sweep_param, noise) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "randcon", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        x = [float(line[0]) for line in lines]
        for m in methods:
            i = header.index(f"{m}_mean")
            mean = np.array([float(line[i]) if line[i] else np.nan for line in lines])
            sd = np.array([float(line[i + 1]) if line[i + 1] else 0.0 for line in lines])
            ax.errorbar(x, mean, yerr=sd, marker="o", capsize=3, label=m)
        ax.set_xlabel(sweep_param)
        ax.set_ylabel(metric)
        ax.set_title(metric if noise is None else f"{metric} (noise {noise:g})")
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_report(results_csv, out_dir, plots: bool = True) -> Path:
    """Write one table (and chart) per metric and noise level; return the manifest path."""
    rows = read_results(results_csv)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sweep_params = sorted({r["sweep_param"] for r in rows})
    if len(sweep_params) != 1:
        raise FormatError(f"results mix sweep parameters {sweep_params}")
    sweep_param = sweep_params[0]
    methods = _method_order(r["method"] for r in rows)
    files = []
    for (metric, noise), by_value in sorted(summarize(rows).items(), key=lambda kv: (kv[0][0], kv[0][1] or 0.0)):
        present = [m for m in methods if any(m in per for per in by_value.values())]
        header, lines = build_table(by_value, present)
        stem = metric if noise is None else f"{metric}_noise{noise:g}"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(lines)
        (out / f"{stem}.csv").write_text(buf.getvalue())
        files.append(f"{stem}.csv")
        if plots:
            _plot(out / f"{stem}.svg", header, lines, present, metric, sweep_param, noise)
            files.append(f"{stem}.svg")
    manifest = {
        "kind": "report_manifest",
        "software": {"package": "randcon", "version": __version__},
        "source": hashlib.sha256(Path(results_csv).read_bytes()).hexdigest(),
        "sweep_param": sweep_param,
        "files": {f: hashlib.sha256((out / f).read_bytes()).hexdigest() for f in files},
    }
    path = out / "report_manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path
