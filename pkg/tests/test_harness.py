import csv
import json
import os

import numpy as np
import pytest

from trlse import cli
from trlse.benchmarks import make_problem
from trlse.errors import PreconditionError
from trlse.harness import (
    METRICS_COLUMNS,
    TRUNCATION_MARKER,
    ExperimentSpec,
    confusion_metrics,
    draw_test_set,
    evaluate_classifier,
    read_metrics,
    run_experiment,
)


def small_spec(out, **kw):
    base = dict(problem="mishra03", methods="trlse,random,straddle", budget=16, num_regions=4,
                test_size=1000, out=str(out), repetitions=2, sample_count=20_000)
    base.update(kw)
    return ExperimentSpec(**base)


def read_rows(path, drop_columns=()):
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = lines[1].split(",")
    keep = [i for i, c in enumerate(header) if c not in drop_columns]
    return [",".join(line.split(",")[i] for i in keep) for line in lines[1:]]


class Truth:
    def __init__(self, problem):
        self.problem = problem

    def predict(self, points):
        return self.problem.ground_truth(points)


class AllLow:
    def predict(self, points):
        return np.zeros(len(points), dtype=bool)


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    rows, meta = run_experiment(small_spec(out))
    return out, rows, meta


def test_spec_validation():
    with pytest.raises(PreconditionError):
        ExperimentSpec("levy", 10, repetitions=0)
    with pytest.raises(PreconditionError):
        ExperimentSpec("levy", 10, test_size=999)
    with pytest.raises(ValueError):
        ExperimentSpec("levy", 10, methods="trlse,hlse")


def test_default_snapshot_cadence():
    spec = ExperimentSpec("levy", 10)
    assert spec.snapshot_every(100) == 1
    assert spec.snapshot_every(101) == 5


def test_confusion_metrics_reference():
    pred = np.array([1, 1, 0, 0, 1, 0], dtype=bool)
    truth = np.array([1, 0, 1, 0, 1, 0], dtype=bool)
    m = confusion_metrics(pred, truth)
    assert (m.tp, m.fp, m.fn, m.tn) == (2, 1, 1, 2)
    assert m.precision == pytest.approx(2 / 3)
    assert m.recall == pytest.approx(2 / 3)
    assert m.f1 == pytest.approx(2 / 3)


def test_all_sublevel_predictor_scores_zero():
    problem = make_problem("levy", 3, sample_count=20_000)
    m = evaluate_classifier(AllLow(), problem, test_size=5000, seed=0)
    assert m.recall == 0 and m.f1 == 0 and m.tp == 0


def test_ground_truth_predictor_scores_one():
    problem = make_problem("levy", 3, sample_count=20_000)
    assert evaluate_classifier(Truth(problem), problem, test_size=5000, seed=0).f1 == 1.0


def test_test_points_fixed_per_problem_and_seed():
    problem = make_problem("levy", 3, sample_count=20_000)
    np.testing.assert_array_equal(draw_test_set(problem, 100, 4), draw_test_set(problem, 100, 4))
    assert not np.array_equal(draw_test_set(problem, 100, 4), draw_test_set(problem, 100, 5))


def test_files_written(experiment):
    out, rows, meta = experiment
    names = sorted(os.listdir(out))
    assert "metadata.txt" in names and "summary.csv" in names
    for method in ("trlse", "random", "straddle"):
        for seed in (0, 1):
            assert f"metrics_{method}_seed{seed}.csv" in names
            assert f"points_{method}_seed{seed}.csv" in names
    with open(out / "metrics_trlse_seed0.csv") as fh:
        assert fh.readline().startswith("# trlse metrics v1")
        assert fh.readline().strip().split(",") == METRICS_COLUMNS
    text = (out / "metadata.txt").read_text()
    assert "resolved_threshold=" in text and "build=trlse-" in text


def test_f1_recomputed_from_counts(experiment):
    out, _, _ = experiment
    for row in read_metrics(out / "metrics_trlse_seed1.csv"):
        tp, fp, fn = int(row["tp"]), int(row["fp"]), int(row["fn"])
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        assert abs(f1 - float(row["f1"])) <= 1e-12


def test_evaluation_column_monotone_and_cadence(experiment):
    _, rows, _ = experiment
    for method in ("trlse", "random", "straddle"):
        rs = [r for r in rows if r.method == method and r.seed == 0]
        assert [r.t for r in rs] == list(range(len(rs)))
        ev = [r.evaluations for r in rs]
        assert ev == sorted(ev) and ev[-1] == 16


def test_initial_design_rows_identical_across_methods(experiment):
    out, _, _ = experiment
    for seed in (0, 1):
        heads = []
        for method in ("trlse", "random", "straddle"):
            lines = (out / f"points_{method}_seed{seed}.csv").read_text().splitlines()
            heads.append(lines[:2 + 4])
        assert heads[0] == heads[1] == heads[2]


def test_summary_quartiles_ordered(experiment):
    out, _, _ = experiment
    with open(out / "summary.csv") as fh:
        fh.readline()
        for row in csv.DictReader(fh):
            assert float(row["f1_q25"]) <= float(row["f1_median"]) <= float(row["f1_q75"])


def test_perfect_classifier_hook(tmp_path):
    spec = small_spec(tmp_path, methods="trlse", repetitions=1, budget=8)
    rows, _ = run_experiment(spec, classifier_factory=lambda state, problem: Truth(problem))
    assert all(r.f1 == 1.0 for r in rows)


def test_truncation_marker_on_failure(tmp_path):
    calls = []

    def failing(state, problem):
        calls.append(1)
        if len(calls) > 2:
            raise RuntimeError("boom")
        return state.classifier()

    with pytest.raises(RuntimeError):
        run_experiment(small_spec(tmp_path, methods="trlse", repetitions=1), classifier_factory=failing)
    last = (tmp_path / "metrics_trlse_seed0.csv").read_text().splitlines()[-1]
    assert last.startswith(TRUNCATION_MARKER) and "boom" in last


def test_unwritable_output_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        run_experiment(small_spec(blocker / "sub", repetitions=1, methods="random"))


def test_replay_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(small_spec(a, repetitions=1))
    run_experiment(small_spec(b, repetitions=1))
    for name in sorted(os.listdir(a)):
        if name.startswith("metrics"):
            assert read_rows(a / name, ["wall_ms"]) == read_rows(b / name, ["wall_ms"])
        else:
            assert (a / name).read_bytes() == (b / name).read_bytes().replace(b"/b", b"/a")


def test_cli_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"problem": "mishra03", "budget": 12, "regions": 3, "test_size": 1000,
                               "sample_count": 20000, "method": "random"}))
    args = cli.parse_args(["--config", str(cfg), "--budget", "9"])
    spec = cli.spec_from_args(args)
    assert spec.budget == 9 and spec.num_regions == 3 and spec.methods == ("random",)


def test_cli_runs_and_exit_codes(tmp_path, capsys):
    out = tmp_path / "run"
    code = cli.main(["--problem", "mishra03", "--method", "trlse", "--budget", "8", "--regions", "3",
                     "--test-size", "1000", "--sample-count", "20000", "--out", str(out)])
    assert code == 0
    assert (out / "summary.csv").exists()
    assert "f1=" in capsys.readouterr().out
    bad = cli.main(["--problem", "nosuch", "--out", str(tmp_path / "bad")])
    assert bad != 0
    assert cli.main(["--problem", "mishra03", "--acq-global", "c2lse", "--budget", "8",
                     "--regions", "3", "--test-size", "1000", "--sample-count", "20000",
                     "--out", str(tmp_path / "c2")]) != 0


def test_cli_requires_problem():
    with pytest.raises(SystemExit):
        cli.parse_args([])
