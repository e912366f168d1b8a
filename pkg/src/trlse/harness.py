"""Experiment runner: seeded repetitions, F1 snapshots and CSV output.

Layout of an output directory::

    metadata.txt                  flat key=value record of the experiment
    metrics_<method>_seed<s>.csv  one row per classifier snapshot
    points_<method>_seed<s>.csv   every evaluated point in order
    summary.csv                   median and quartiles of f1 across seeds

Every CSV starts with a ``#`` schema line.  All values except the wall-clock
column are deterministic functions of the experiment spec.
"""
from __future__ import annotations

import csv
import os
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .benchmarks import make_problem, run_defaults
from .engine import Method, RunConfig, initialize, step, subseed
from .errors import PreconditionError
from .trust_region import SFunction

METRICS_SCHEMA = "# trlse metrics v1"
POINTS_SCHEMA = "# trlse points v1"
SUMMARY_SCHEMA = "# trlse summary v1"
METRICS_COLUMNS = ["method", "seed", "t", "evaluations", "f1", "precision", "recall",
                   "tp", "fp", "fn", "tn", "live_regions", "n", "wall_ms"]
SUMMARY_COLUMNS = ["method", "t", "reps", "evaluations_median", "f1_median", "f1_q25", "f1_q75"]
TRUNCATION_MARKER = "#truncated"
_TEST_SET = 7919


@dataclass
class ExperimentSpec:
    problem: str
    dim: int | None = None
    methods: tuple = ("trlse",)
    budget: int = 300
    num_regions: int | None = None
    v_init: float | None = None
    v_max: float | None = None
    beta: float = 1.96
    kernel: str = "matern52"
    acq_global: str = "straddle"
    acq_local: str = "straddle"
    s_fn: str = "sigmoid"
    seed: int = 0
    repetitions: int = 1
    test_size: int = 100_000
    eval_every: int | None = None
    out: str = "results"
    random_reinit: bool = False
    single_gp: bool = False
    constant_s: bool = False
    fraction: float | None = None
    threshold: float | None = None
    sample_count: int = 10**6
    noise_level: float = 0.01
    cache_path: str | None = None
    candidate_budget: int | None = None

    def __post_init__(self):
        if isinstance(self.methods, str):
            self.methods = tuple(m.strip() for m in self.methods.split(",") if m.strip())
        self.methods = tuple(Method(m).value for m in self.methods)
        if self.repetitions < 1:
            raise PreconditionError("repetitions must be >= 1")
        if self.test_size < 1000:
            raise PreconditionError("test_size must be >= 1000")
        if self.eval_every is not None and self.eval_every < 1:
            raise PreconditionError("eval_every must be >= 1")

    @property
    def seeds(self):
        return list(range(self.seed, self.seed + self.repetitions))

    def snapshot_every(self, dim) -> int:
        if self.eval_every is not None:
            return self.eval_every
        return 1 if dim <= 100 else 5

    def run_config(self, problem, seed) -> RunConfig:
        v_init, v_max, regions = run_defaults(problem.name, problem.dim)
        s = {"sigmoid": SFunction.sigmoid, "linear": SFunction.linear,
             "constant": SFunction.constant}[self.s_fn]()
        return RunConfig(
            threshold=problem.threshold,
            budget=self.budget,
            v_init=self.v_init if self.v_init is not None else v_init,
            v_max=self.v_max if self.v_max is not None else v_max,
            num_regions=self.num_regions if self.num_regions is not None else regions,
            beta=self.beta,
            acq_global=self.acq_global,
            acq_local=self.acq_local,
            kernel=self.kernel,
            s_function=s,
            seed=seed,
            random_reinit=self.random_reinit,
            single_global_gp=self.single_gp,
            constant_volume=self.constant_s,
            candidate_budget=self.candidate_budget,
        )


@dataclass(frozen=True)
class ClassifierMetrics:
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class MetricsRow:
    method: str
    seed: int
    t: int
    evaluations: int
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int
    live_regions: int
    n: int
    wall_ms: float = field(compare=False)


def confusion_metrics(predicted, truth) -> ClassifierMetrics:
    """Precision, recall and F1 with the superlevel set as the positive class."""
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    tn = int(np.sum(~predicted & ~truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ClassifierMetrics(f1, precision, recall, tp, fp, fn, tn)


def draw_test_set(problem, size, seed) -> np.ndarray:
    """Uniform test set, fixed per (problem, seed) and shared by every method."""
    key = zlib.crc32(problem.name.encode())
    return np.random.default_rng(subseed(seed, _TEST_SET, key, problem.dim)).uniform(size=(size, problem.dim))


def evaluate_classifier(classifier, problem, test_size=100_000, seed=0, points=None,
                        truth=None) -> ClassifierMetrics:
    """Score ``classifier.predict`` on a uniform test set against noiseless labels."""
    if points is None:
        points = draw_test_set(problem, test_size, seed)
    if truth is None:
        truth = problem.ground_truth(points)
    return confusion_metrics(classifier.predict(points), truth)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _open(path, mode="w"):
    try:
        return open(path, mode, newline="")
    except OSError as e:
        raise OSError(f"cannot open {path}: {e.strerror or e}") from e


def _write_points(path, state):
    with _open(path) as fh:
        fh.write(POINTS_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "kind", *[f"x{k}" for k in range(state.dim)], "y"])
        for i, (x, y, kind) in enumerate(zip(state.x, state.y, state.kinds)):
            w.writerow([i, kind, *map(_fmt, map(float, x)), _fmt(float(y))])


def run_single(spec: ExperimentSpec, problem, method, seed, classifier_factory=None,
               points=None, truth=None, writer=None):
    """One seeded run; returns the snapshot rows and the final state."""
    config = spec.run_config(problem, seed)
    every = spec.snapshot_every(problem.dim)
    if points is None:
        points = draw_test_set(problem, spec.test_size, seed)
        truth = problem.ground_truth(points)
    rows = []
    start = time.perf_counter()

    def snapshot(state, iteration):
        clf = classifier_factory(state, problem) if classifier_factory else state.classifier()
        m = evaluate_classifier(clf, problem, points=points, truth=truth)
        row = MetricsRow(method, seed, iteration, int(state.y.size), m.f1, m.precision, m.recall,
                         m.tp, m.fp, m.fn, m.tn, len(state.regions), int(state.n),
                         round(1000 * (time.perf_counter() - start), 3))
        rows.append(row)
        if writer is not None:
            writer.writerow([_fmt(v) for v in asdict(row).values()])

    state = initialize(problem, config, method)
    iteration = 0
    snapshot(state, iteration)
    while not state.complete:
        step(state, problem, config)
        iteration += 1
        if iteration % every == 0 or state.complete:
            if rows[-1].t != iteration:
                snapshot(state, iteration)
    return rows, state


def _metadata(spec, problem):
    meta = {"build": f"trlse-{__version__}", "numpy": np.__version__}
    meta.update({k: v for k, v in asdict(spec).items()})
    meta["methods"] = ",".join(spec.methods)
    meta.update({
        "resolved_dim": problem.dim,
        "resolved_threshold": repr(problem.threshold),
        "noise_std": repr(problem.noise_std),
        "superlevel_fraction": repr(problem.superlevel_fraction),
    })
    cfg = spec.run_config(problem, spec.seed)
    meta.update({"resolved_v_init": repr(cfg.v_init), "resolved_v_max": repr(cfg.v_max),
                 "resolved_num_regions": cfg.num_regions,
                 "eval_every": spec.snapshot_every(problem.dim)})
    return meta


def summarize(rows):
    """Median and quartiles of f1 per (method, snapshot iteration) across seeds."""
    groups = {}
    for r in rows:
        groups.setdefault((r.method, r.t), []).append(r)
    out = []
    for (method, t), rs in sorted(groups.items()):
        f1 = np.array([r.f1 for r in rs])
        ev = np.array([r.evaluations for r in rs])
        q25, med, q75 = np.quantile(f1, [0.25, 0.5, 0.75])
        out.append([method, t, len(rs), float(np.median(ev)), float(med), float(q25), float(q75)])
    return out


def run_experiment(spec: ExperimentSpec, classifier_factory=None):
    """Run every (method, seed) pair and write CSV files under ``spec.out``.

    Returns ``(rows, metadata)``.  ``classifier_factory(state, problem)`` may
    replace the trained classifier (used by tests).  A failing run leaves its
    partial CSV terminated by a truncation marker row and re-raises.
    """
    problem = make_problem(spec.problem, spec.dim, spec.fraction, spec.threshold,
                           spec.sample_count, 0, spec.noise_level, spec.cache_path)
    try:
        os.makedirs(spec.out, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {spec.out}: {e.strerror or e}") from e
    meta = _metadata(spec, problem)
    meta_path = os.path.join(spec.out, "metadata.txt")
    with _open(meta_path) as fh:
        for k, v in meta.items():
            fh.write(f"{k}={_fmt(v)}\n")

    all_rows = []
    for seed in spec.seeds:
        points = draw_test_set(problem, spec.test_size, seed)
        truth = problem.ground_truth(points)
        for method in spec.methods:
            path = os.path.join(spec.out, f"metrics_{method}_seed{seed}.csv")
            with _open(path) as fh:
                fh.write(METRICS_SCHEMA + "\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(METRICS_COLUMNS)
                try:
                    rows, state = run_single(spec, problem, method, seed, classifier_factory,
                                             points, truth, w)
                except Exception as e:
                    w.writerow([TRUNCATION_MARKER, f"{type(e).__name__}: {e}"])
                    raise
            _write_points(os.path.join(spec.out, f"points_{method}_seed{seed}.csv"), state)
            all_rows.extend(rows)

    with _open(os.path.join(spec.out, "summary.csv")) as fh:
        fh.write(SUMMARY_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in summarize(all_rows):
            w.writerow([_fmt(v) for v in r])
    return all_rows, meta


def read_metrics(path):
    """Parse a metrics CSV back into dicts (skips the schema line and any marker)."""
    with _open(path, "r") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
