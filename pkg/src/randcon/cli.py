"""
Command-line interface.

Exit status is 0 on success, 1 for invalid input (bad flags, missing files,
malformed plans or data) and 2 when a computation fails.  Every command
writes a manifest JSON and prints its path.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, _rng
from .clustering import elbow_k, kmeans, project_pca
from .connectivity import METHODS, RANDCON, vectorize_lower
from .errors import ParameterError, RandconError
from .harness import (
    PRESETS,
    RESULT_COLUMNS,
    ExperimentPlan,
    evaluate_group,
    kernel_size_study,
    load_plan,
    preset,
    realdata_pipeline,
    run_plan,
    subject_fc,
    write_realdata,
)
from .report import write_report
from .simulate import generate_dataset, load_dataset, save_dataset
from .timeseries import ROWS_ARE_ROIS, ROWS_ARE_TIME, load_csv, load_fc_series, save_fc_series

log = logging.getLogger("randcon")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this CLI reserves 2 for runtime failures
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _threads(value) -> int:
    if value is not None:
        n = value
    elif os.environ.get("RANDCON_THREADS"):
        try:
            n = int(os.environ["RANDCON_THREADS"])
        except ValueError:
            raise ParameterError(f"RANDCON_THREADS must be an integer, got {os.environ['RANDCON_THREADS']!r}") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ParameterError(f"threads must be >= 1, got {n}")
    return n


def _common(p, out_default="."):
    p.add_argument("-o", "--out", default=out_default, help="output directory (default: %(default)s)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker threads (default: $RANDCON_THREADS or CPU count)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _estimator_flags(p, method_default=RANDCON):
    p.add_argument("--method", choices=METHODS, default=method_default)
    p.add_argument("--kernels", type=int, default=None, help="number of random kernels (randcon)")
    p.add_argument("--width", type=int, default=None, help="kernel or window width")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--padding", choices=("same", "valid"), default=None)


def _plan_flags(p, default_preset):
    p.add_argument("-p", "--plan", help="plan file (TOML or JSON)")
    p.add_argument("--preset", choices=sorted(PRESETS), help=f"built-in plan (default: {default_preset})")
    p.add_argument("--method", action="append", choices=METHODS, help="restrict to a method (repeatable)")
    p.add_argument("--kernels", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--padding", choices=("same", "valid"))
    p.add_argument("--restarts", type=int, help="k-means restarts per cell")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="randcon", description="Dynamic functional connectivity from random convolution kernels.")
    parser.add_argument("--version", action="version", version=f"randcon {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("simulate", help="generate a simulated dataset with ground-truth states")
    _common(p)
    p.add_argument("-p", "--plan", help="take the base simulation spec from a plan file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="take the base simulation spec from a preset")
    p.add_argument("--noise", type=float, help="noise standard deviation")
    p.add_argument("--rois", type=int)
    p.add_argument("--timepoints", type=int)
    p.add_argument("--states", type=int)
    p.add_argument("--groups", type=int)
    p.add_argument("--subjects", type=int, help="subjects per group")

    p = sub.add_parser("estimate", help="estimate an FC series for each input CSV")
    _common(p)
    _estimator_flags(p)
    p.add_argument("inputs", nargs="+", help="ROI time-series CSV files")
    p.add_argument("--layout", choices=(ROWS_ARE_ROIS, ROWS_ARE_TIME), default=ROWS_ARE_ROIS)
    p.add_argument("--zscore", action="store_true", help="z-score each ROI first")
    p.add_argument("--smooth", type=int, help="phase-sync moving-average length")

    p = sub.add_parser("cluster", help="pool FC series and extract brain states with k-means")
    _common(p)
    p.add_argument("inputs", nargs="+", help="FC series containers written by 'estimate'")
    p.add_argument("-k", "--states", type=int, help="number of states (default: elbow over 2..8)")
    p.add_argument("--restarts", type=int, default=100)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--pca", type=int, help="project onto this many principal components first")

    p = sub.add_parser("evaluate", help="score state recovery on a simulated dataset")
    _common(p)
    _estimator_flags(p)
    p.add_argument("dataset", help="directory written by 'simulate'")
    p.add_argument("--group", type=int, action="append", help="group index (repeatable; default all)")
    p.add_argument("--restarts", type=int, default=100)
    p.add_argument("--iters", type=int, default=20)

    p = sub.add_parser("sweep", help="run a one-parameter sweep")
    _common(p, "results")
    _plan_flags(p, "desk-noise")

    p = sub.add_parser("kernel-study", help="randcon vs sliding window across widths without padding")
    _common(p, "results")
    _plan_flags(p, "desk-kernel-size")

    p = sub.add_parser("realdata", help="pooled state analysis of recorded time series")
    _common(p)
    _estimator_flags(p)
    p.add_argument("inputs", nargs="+", help="ROI time-series CSV files, one per subject")
    p.add_argument("--layout", choices=(ROWS_ARE_ROIS, ROWS_ARE_TIME), default=ROWS_ARE_ROIS)
    p.add_argument("-k", "--states", type=int, help="number of states (default: elbow over 2..8)")
    p.add_argument("--restarts", type=int, default=100)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--pca", type=int)
    p.add_argument("--covariate", help="comma-separated binary value per subject, in input order")
    p.add_argument("--no-zscore", action="store_true")

    p = sub.add_parser("report", help="tables and SVG charts from a results CSV")
    p.add_argument("results", help="results.csv written by 'sweep' or 'kernel-study'")
    p.add_argument("-o", "--out", default="report")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _overrides(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _write_manifest(out: Path, payload: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    path.write_text(json.dumps({"software": {"package": "randcon", "version": __version__}, **payload}, indent=1, sort_keys=True) + "\n")
    return path


def _base_plan(args, default_preset: str) -> ExperimentPlan:
    if args.plan and args.preset:
        raise ParameterError("give --plan or --preset, not both")
    if args.plan:
        return load_plan(args.plan)
    return preset(args.preset or default_preset)


def cmd_simulate(args) -> Path:
    spec = _base_plan(args, "desk-noise").base if (args.plan or args.preset) else ExperimentPlan().base
    changes = {
        "noise_sigma": args.noise, "n_rois": args.rois, "n_timepoints": args.timepoints,
        "n_states": args.states, "n_groups": args.groups, "subjects_per_group": args.subjects, "seed": args.seed,
    }
    spec = spec.with_(**{k: v for k, v in changes.items() if v is not None})
    dataset = generate_dataset(spec, _threads(args.threads))
    return save_dataset(dataset, args.out)


def _est_params(args, width=3, k=40, padding="same") -> dict:
    return {
        "width": args.width or width,
        "n_kernels": args.kernels or k,
        "stride": args.stride or 1,
        "padding": args.padding or padding,
    }


def cmd_estimate(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    est = _est_params(args)
    seed = args.seed or 0
    entries = []
    stems = [Path(p).stem for p in args.inputs]
    if len(set(stems)) != len(stems):
        raise ParameterError("input files must have distinct names")
    for path, stem in zip(args.inputs, stems):
        ts = load_csv(path, args.layout)
        fcs = subject_fc(ts, args.method, est, seed, args.zscore, args.smooth)
        name = f"{stem}_fc.rcfc"
        save_fc_series(out / name, fcs)
        entries.append({"input": str(path), "output": name, "n_frames": fcs.n_frames, "degenerate_pairs": fcs.degenerate_pairs})
    return _write_manifest(out, {
        "kind": "estimate_manifest", "method": args.method, "params": est, "seed": seed,
        "zscore": args.zscore, "outputs": entries,
        "overrides": _overrides(args, ("method", "kernels", "width", "stride", "padding", "seed")),
    })


def cmd_cluster(args) -> Path:
    out = Path(args.out)
    seed = args.seed or 0
    series = [load_fc_series(p) for p in args.inputs]
    n = {f.n_rois for f in series}
    if len(n) != 1:
        raise ParameterError(f"inputs disagree on ROI count: {sorted(n)}")
    x = np.concatenate([vectorize_lower(f.values) for f in series])
    if args.pca:
        x = project_pca(x, args.pca)
    k = args.states or elbow_k(x, 2, 8, _rng.derive(seed, 3), max(1, args.restarts // 10), args.iters)
    result = kmeans(x, k, args.restarts, args.iters, _rng.derive(seed, 4), _threads(args.threads))
    sources = [
        {"file": str(p), "n_frames": f.n_frames, "method": f.method, "params": f.params}
        for p, f in zip(args.inputs, series)
    ]
    out.mkdir(parents=True, exist_ok=True)
    result.save(out / "clusters.rcfc", {"sources": sources, "pca": args.pca})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "frame", "state"])
    offset = 0
    for p, f in zip(args.inputs, series):
        for t in range(f.n_frames):
            w.writerow([Path(p).name, t, int(result.labels[offset + t])])
        offset += f.n_frames
    (out / "labels.csv").write_text(buf.getvalue())
    return _write_manifest(out, {
        "kind": "cluster_manifest", "n_states": k, "seed": seed, "db_index": result.db_index,
        "winning_run": result.winning_run, "sources": sources, "label_base": 0,
        "overrides": _overrides(args, ("states", "restarts", "iters", "pca", "seed")),
    })


def cmd_evaluate(args) -> Path:
    out = Path(args.out)
    dataset = load_dataset(args.dataset)
    est = _est_params(args)
    seed = args.seed or 0
    groups = args.group if args.group else list(range(len(dataset.groups)))
    for g in groups:
        if not 0 <= g < len(dataset.groups):
            raise ParameterError(f"group {g} out of range 0..{len(dataset.groups) - 1}")
    metrics = ("ari", "overlap_ratio", "mse", "cosine", "sojourn_kl")
    kernel_seed = _rng.derive(seed, 1)
    rows = []
    for g in groups:
        o = evaluate_group(dataset, g, args.method, est, metrics, kernel_seed, _rng.derive(seed, 2, g), args.restarts, args.iters)
        rows += [("none", "", dataset.spec.noise_sigma, g, args.method, m, v) for m, v in o.metrics.items()]
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    w.writerows([repr(c) if isinstance(c, float) else c for c in r] for r in rows)
    (out / "evaluation.csv").write_text(buf.getvalue())
    return _write_manifest(out, {
        "kind": "evaluate_manifest", "dataset": str(args.dataset), "method": args.method, "params": est,
        "seeds": {"master": seed, "kernel_bank": kernel_seed}, "groups": groups,
        "overrides": _overrides(args, ("method", "kernels", "width", "stride", "padding", "seed", "restarts", "iters")),
    })


def _plan_from_args(args, default_preset) -> tuple[ExperimentPlan, dict]:
    plan = _base_plan(args, default_preset)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.method:
        changes["methods"] = tuple(dict.fromkeys(args.method))
    for flag, field_name in (("kernels", "n_kernels"), ("width", "width"), ("stride", "stride"), ("padding", "padding"), ("restarts", "n_restarts")):
        if getattr(args, flag) is not None:
            changes[field_name] = getattr(args, flag)
    # threads and the output location are left out so that the tree's bytes
    # depend only on what was computed
    overrides = _overrides(args, ("plan", "preset", "seed", "method", "kernels", "width", "stride", "padding", "restarts"))
    return plan.with_(**changes), overrides


def cmd_sweep(args) -> Path:
    plan, overrides = _plan_from_args(args, "desk-noise")
    return run_plan(plan, args.out, _threads(args.threads), overrides)


def cmd_kernel_study(args) -> Path:
    plan, overrides = _plan_from_args(args, "desk-kernel-size")
    return kernel_size_study(plan, args.out, _threads(args.threads), overrides)


def cmd_realdata(args) -> Path:
    inputs = [load_csv(p, args.layout) for p in args.inputs]
    covariate = None
    if args.covariate:
        covariate = [c.strip() for c in args.covariate.split(",")]
    est = _est_params(args, width=3, k=2048, padding="valid")
    seed = args.seed or 0
    result = realdata_pipeline(
        inputs, args.method, est["width"], est["stride"], est["n_kernels"], est["padding"], seed,
        args.states, (2, 8), args.restarts, args.iters, args.pca, covariate, not args.no_zscore,
    )
    params = {
        "method": args.method, **est, "seed": seed, "states": result.n_states, "pca": args.pca,
        "zscore": not args.no_zscore, "inputs": [str(p) for p in args.inputs],
        "overrides": _overrides(args, ("method", "kernels", "width", "stride", "padding", "seed", "states", "restarts", "iters", "pca", "covariate")),
    }
    return write_realdata(result, args.out, params)


def cmd_report(args) -> Path:
    return write_report(args.results, args.out, plots=not args.no_plots)


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "cluster": cmd_cluster,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "kernel-study": cmd_kernel_study,
    "realdata": cmd_realdata,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_help(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        path = COMMANDS[args.command](args)
    except (RandconError, FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"randcon {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.debug("traceback", exc_info=True)
        print(f"randcon {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
