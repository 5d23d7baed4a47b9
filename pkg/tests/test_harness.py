import csv
import json

import numpy as np
import pytest

from randcon import _rng
from randcon.errors import ParameterError
from randcon.harness import (
    PRESETS,
    ExperimentPlan,
    evaluate_group,
    kernel_size_study,
    load_plan,
    preset,
    realdata_pipeline,
    run_plan,
)
from randcon.simulate import SimulationSpec, generate_dataset
from randcon.timeseries import RoiTimeSeries

TINY = SimulationSpec(n_rois=30, n_timepoints=60, n_groups=2, subjects_per_group=2, seed=5)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_preset_grids():
    assert preset("paper-noise").sweep_values == (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    assert preset("paper-roi").sweep_values == (30, 60, 90, 120)
    assert preset("paper-tr").sweep_values == (400, 600, 800, 1000, 1200)
    assert preset("paper-states").sweep_values == (4, 6, 8)
    assert preset("paper-scale-param").sweep_values == (1.0, 3.0, 5.0, 7.0)
    assert preset("paper-kernel-count").sweep_values == (5, 10, 20, 40, 80, 160)
    assert preset("paper-kernel-size").sweep_values == (4, 5, 6, 7, 8, 9)
    assert preset("paper-noise").n_restarts == 100 and preset("paper-noise").max_iters == 20
    assert preset("paper-noise").n_kernels == 40
    assert preset("paper-noise").base.n_subjects == 600
    for name in PRESETS:
        assert name.startswith(("paper-", "desk-"))
    with pytest.raises(ParameterError, match="unknown preset"):
        preset("nope")


def test_noise_preset_cell_count():
    plan = preset("paper-noise")
    assert len(plan.sweep_values) * len(plan.methods) * plan.base.n_groups == 7 * 4 * 30


def test_unknown_method_rejected_before_compute():
    with pytest.raises(ParameterError, match="unknown method"):
        ExperimentPlan(TINY, methods=("randcon", "granger"))


def test_other_validation():
    with pytest.raises(ParameterError):
        ExperimentPlan(TINY, sweep_param="tr")
    with pytest.raises(ParameterError):
        ExperimentPlan(TINY, metrics=("accuracy",))
    with pytest.raises(ParameterError):
        ExperimentPlan(TINY, sweep_param="n_rois", sweep_values=(25,))
    with pytest.raises(ParameterError):
        ExperimentPlan(TINY, noise_levels=(0.5,))


def test_plan_dict_round_trip():
    plan = preset("desk-kernel-count")
    assert ExperimentPlan.from_dict(plan.to_dict()) == plan


def test_plan_files_toml_and_json(tmp_path):
    toml = tmp_path / "p.toml"
    toml.write_text(
        'name = "t"\nmethods = ["randcon", "sliding-window"]\nmetrics = ["ari"]\nseed = 4\n'
        '[base]\nn_rois = 20\nn_timepoints = 60\nn_groups = 2\nsubjects_per_group = 2\n'
        '[sweep]\nparam = "noise_sigma"\nvalues = [0.5, 0.9]\n'
        '[clustering]\nn_restarts = 3\n'
    )
    a = load_plan(toml)
    js = tmp_path / "p.json"
    js.write_text(json.dumps({
        "name": "t", "methods": ["randcon", "sliding-window"], "metrics": ["ari"], "seed": 4,
        "base": {"n_rois": 20, "n_timepoints": 60, "n_groups": 2, "subjects_per_group": 2},
        "sweep": {"param": "noise_sigma", "values": [0.5, 0.9]}, "clustering": {"n_restarts": 3},
    }))
    assert load_plan(js) == a
    assert a.n_restarts == 3 and a.base.n_rois == 20


def test_plan_file_unknown_field(tmp_path):
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"colour": "red"}))
    with pytest.raises(ParameterError, match="colour"):
        load_plan(p)


def test_missing_plan_file_named(tmp_path):
    with pytest.raises(ParameterError, match="missing.toml"):
        load_plan(tmp_path / "missing.toml")


def small_plan(**kw):
    base = dict(base=TINY, sweep_param="noise_sigma", sweep_values=(0.5,), metrics=("ari", "cosine", "sojourn_kl"), n_restarts=2, name="t")
    base.update(kw)
    return ExperimentPlan(**base)


def test_row_count_law_and_failures(tmp_path):
    plan = small_plan(sweep_param="n_timepoints", sweep_values=(60, 7), methods=("sliding-window", "phase-sync"), metrics=("ari", "cosine"))
    manifest = json.loads(run_plan(plan, tmp_path).read_text())
    got = rows(tmp_path / "results.csv")
    # phase-sync cannot run at T=7: both groups fail there and are recorded
    assert len(manifest["failures"]) == 2
    assert all(f["method"] == "phase-sync" for f in manifest["failures"])
    assert len(got) == 2 * 2 * 2 * 2 - 2 * 2 == manifest["n_rows"]


def test_outputs_and_manifest(tmp_path):
    path = run_plan(small_plan(), tmp_path)
    m = json.loads(path.read_text())
    assert m["plan"]["sweep_values"] == [0.5]
    assert set(m["files"]) == {"results.csv", "summary.json"}
    assert m["metric_notes"]["sojourn_kl"] == "KL(estimated || true)"
    assert m["label_base"] == 0
    header = (tmp_path / "results.csv").read_text().splitlines()[0]
    assert header == "sweep_param,sweep_value,noise_sigma,group,method,metric,value"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert {c["metric"] for c in summary["cells"]} == {"ari", "cosine", "sojourn_kl"}


def test_rerun_identical_and_thread_independent(tmp_path):
    plan = small_plan(methods=("randcon", "mtd"))
    run_plan(plan, tmp_path / "a", threads=1)
    run_plan(plan, tmp_path / "b", threads=3)
    for name in ("results.csv", "summary.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cell_reproducible_from_manifest_seeds(tmp_path):
    plan = small_plan(methods=("randcon",), metrics=("ari",))
    m = json.loads(run_plan(plan, tmp_path).read_text())
    csv_rows = rows(tmp_path / "results.csv")
    ds = generate_dataset(TINY.with_(noise_sigma=0.5, seed=m["seeds"]["dataset"]))
    for g in range(2):
        o = evaluate_group(ds, g, "randcon", plan.estimator(0.5), ("ari",), m["seeds"]["kernel_bank"], _rng.derive(plan.seed, 2, 0, 0, g, 0), 2, 20)
        assert repr(o.metrics["ari"]) == csv_rows[g]["value"]


def test_estimator_sweep_reuses_dataset_per_noise(tmp_path):
    plan = small_plan(sweep_param="kernel_count", sweep_values=(5, 10), noise_levels=(0.5, 1.0), methods=("randcon",), metrics=("cosine",))
    run_plan(plan, tmp_path)
    got = rows(tmp_path / "results.csv")
    assert sorted({(r["noise_sigma"], r["sweep_value"]) for r in got}) == [("0.5", "10"), ("0.5", "5"), ("1.0", "10"), ("1.0", "5")]


def test_kernel_size_study_contract(tmp_path):
    with pytest.raises(ParameterError, match="padding"):
        kernel_size_study(small_plan(sweep_param="kernel_width", sweep_values=(3,), methods=("randcon", "sliding-window"), metrics=("cosine",)))
    with pytest.raises(ParameterError, match="ARI"):
        kernel_size_study(small_plan(sweep_param="kernel_width", sweep_values=(4,), padding="valid", methods=("randcon",), metrics=("ari",)))
    with pytest.raises(ParameterError, match="randcon and sliding-window"):
        kernel_size_study(small_plan(sweep_param="kernel_width", sweep_values=(4,), padding="valid", methods=("mtd",), metrics=("cosine",)))
    plan = small_plan(sweep_param="kernel_width", sweep_values=tuple(range(4, 10)), padding="valid", methods=("randcon", "sliding-window"), metrics=("sojourn_kl", "cosine", "mse"))
    kernel_size_study(plan, tmp_path)
    got = rows(tmp_path / "results.csv")
    cells = {(r["sweep_value"], r["method"]) for r in got if r["group"] == "0"}
    assert len(cells) == 12
    assert {r["metric"] for r in got} == {"sojourn_kl", "cosine", "mse"}


def test_realdata_frames_and_defaults():
    rng = np.random.default_rng(0)
    subjects = [RoiTimeSeries(rng.normal(size=(10, 1200))) for _ in range(2)]
    res = realdata_pipeline(subjects, n_states=4, n_restarts=2)
    assert [len(l) for l in res.subject_labels] == [1198, 1198]
    assert res.state_fc.shape == (4, 10, 10)
    assert res.clusters.centroids.shape == (4, 45)


def test_realdata_identical_subjects_identical_rows():
    x = np.random.default_rng(1).normal(size=(10, 80))
    res = realdata_pipeline([RoiTimeSeries(x), RoiTimeSeries(x)], n_kernels=32, n_states=3, n_restarts=3)
    a, b = dict(res.table[0]), dict(res.table[1])
    a.pop("subject"), b.pop("subject")
    assert a == b


def test_realdata_covariate_and_elbow():
    rng = np.random.default_rng(2)
    subjects = [RoiTimeSeries(rng.normal(size=(10, 60))) for _ in range(6)]
    res = realdata_pipeline(subjects, n_kernels=16, n_restarts=10, covariate=["f", "m"] * 3)
    assert 2 <= res.n_states <= 8
    assert "fc_variability" in res.comparisons
    assert all(c.method == "mann-whitney" for c in res.comparisons.values())


def test_realdata_shape_mismatch():
    with pytest.raises(ParameterError, match="subject 1"):
        realdata_pipeline([RoiTimeSeries(np.eye(3)), RoiTimeSeries(np.ones((3, 4)) * np.arange(4))])
