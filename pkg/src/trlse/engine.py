"""Trust-region level set estimation loop, baselines and the output classifier.

A run is driven by :func:`initialize` followed by repeated :func:`step` calls
until ``state.complete``.  Every function evaluation (initial design,
re-initialization, local selection) counts against the budget.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .acquisition import (
    MIN_BETA,
    AcquisitionKind,
    AcquisitionSpec,
    score_candidates,
    scorer,
    straddle_score,
)
from .box_optimizer import (
    BoxQuery,
    best_of,
    box_candidates,
    complement_candidates,
    default_budget,
    extremize_confidence_bounds,
    maximize_in_complement,
)
from .errors import PreconditionError
from .gp import GpModel, KernelFamily, Standardizer, fit_hyperparams
from .trust_region import (
    SForm,
    SFunction,
    TrustRegion,
    data_window,
    move_centroid,
    penalty_from_bounds,
    should_discard,
    update_lengths,
    update_volume,
)

CLASSIFY_CHUNK = 10_000

# sub-seed purposes
_INIT, _HYPER, _REGION, _REINIT, _LOCAL, _RANDOM, _STRADDLE = range(7)


class Method(str, enum.Enum):
    TRLSE = "trlse"
    RANDOM = "random"
    STRADDLE = "straddle"


def subseed(seed, *keys) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


@dataclass
class RunConfig:
    threshold: float
    budget: int
    v_init: float
    v_max: float
    num_regions: int
    beta: float = 1.96
    acq_global: AcquisitionKind = AcquisitionKind.STRADDLE
    acq_local: AcquisitionKind = AcquisitionKind.STRADDLE
    kernel: KernelFamily = KernelFamily.MATERN52
    s_function: SFunction = field(default_factory=SFunction.sigmoid)
    seed: int = 0
    random_reinit: bool = False
    single_global_gp: bool = False
    constant_volume: bool = False
    candidate_budget: int | None = None
    polish: bool = True
    refit_every: int = 10
    thompson_candidates: int = 512

    def __post_init__(self):
        self.acq_global = AcquisitionKind(self.acq_global)
        self.acq_local = AcquisitionKind(self.acq_local)
        self.kernel = KernelFamily(self.kernel)
        if self.constant_volume:
            self.s_function = SFunction.constant()
        elif self.s_function.form is SForm.CONSTANT:
            self.constant_volume = True
        if not 0 < self.v_init < self.v_max:
            raise PreconditionError("require 0 < v_init < v_max")
        if self.num_regions < 1:
            raise PreconditionError("need at least one region")
        if self.budget < self.num_regions:
            raise PreconditionError("budget must cover the initial design (budget >= num_regions)")
        if not self.beta >= MIN_BETA:
            raise PreconditionError(f"beta must be >= {MIN_BETA:.4f}")
        for kind in (self.acq_global, self.acq_local):
            if kind is AcquisitionKind.C2LSE:
                raise NotImplementedError("C2LSE is a reserved plugin slot and has no implementation")

    def budget_for(self, dim):
        return self.candidate_budget or default_budget(dim)


@dataclass
class RunState:
    method: Method
    dim: int
    x: np.ndarray
    y: np.ndarray
    kinds: list
    standardizer: Standardizer
    global_model: GpModel
    regions: list = field(default_factory=list)
    n: int = 0
    t: int = 0
    complete: bool = False
    events: list = field(default_factory=list)
    violations: int = 0
    global_hyper: tuple = None
    global_fit_n: int = 0
    scale_version: int = 0

    @property
    def z(self):
        return self.standardizer.transform(self.y)

    @property
    def num_evaluations(self) -> int:
        return self.y.size

    def classifier(self) -> "Classifier":
        boxes, models = [], []
        for r in self.regions:
            boxes.append(r.box())
            models.append(r.model)
        return Classifier(self.global_model, boxes, models, self.standardizer.internal_threshold)


@dataclass(frozen=True, eq=False)
class Classifier:
    """Snapshot of the output rules.

    Points outside every region use the global posterior mean; points inside
    one or more region boxes use the containing region's local GP with the
    lowest posterior variance there.  ``mu >= threshold`` is superlevel.
    """

    global_model: GpModel
    boxes: list
    local_models: list
    threshold: float = 0.0

    def posterior(self, points):
        """Mean and variance actually used for each point, and the deciding region (-1 = global)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        means, variances, owners = [], [], []
        for i in range(0, points.shape[0], CLASSIFY_CHUNK):
            chunk = points[i:i + CLASSIFY_CHUNK]
            mean, var = self.global_model.posterior(chunk)
            owner = np.full(chunk.shape[0], -1)
            best_var = np.full(chunk.shape[0], np.inf)
            for k, ((lo, hi), model) in enumerate(zip(self.boxes, self.local_models)):
                inside = np.flatnonzero(np.all((chunk >= lo) & (chunk <= hi), axis=1))
                if inside.size == 0:
                    continue
                m, v = model.posterior(chunk[inside])
                better = v < best_var[inside]
                sel = inside[better]
                mean[sel], var[sel], best_var[sel], owner[sel] = m[better], v[better], v[better], k
            means.append(mean)
            variances.append(var)
            owners.append(owner)
        if not means:
            return np.zeros(0), np.zeros(0), np.zeros(0, dtype=int)
        return np.concatenate(means), np.concatenate(variances), np.concatenate(owners)

    def predict(self, points) -> np.ndarray:
        """Boolean labels, True for the predicted superlevel set."""
        return self.posterior(points)[0] >= self.threshold


def classify(classifier: Classifier, points) -> np.ndarray:
    return classifier.predict(points)


# --------------------------------------------------------------------------
# model refresh
# --------------------------------------------------------------------------


def _refresh_global(state: RunState, config: RunConfig, force=False):
    """Rebuild the global GP; refit hyperparameters and rescale on the refit cadence."""
    due = force or state.global_hyper is None or state.y.size - state.global_fit_n >= config.refit_every
    if due:
        state.standardizer = Standardizer.from_targets(state.y, config.threshold)
        state.global_hyper = fit_hyperparams(
            state.x, state.z, config.kernel, seed=subseed(config.seed, _HYPER, state.y.size),
            init=state.global_hyper,
        )
        state.global_fit_n = state.y.size
        state.scale_version += 1
    state.global_model = GpModel.condition(*state.global_hyper, state.x, state.z)
    if config.single_global_gp:
        for region in state.regions:
            region.model = state.global_model
    elif due:
        # local models must see targets on the new scale
        for region in state.regions:
            if math.isfinite(region.log_volume):
                _refresh_local(state, config, region)


def _local_fit_due(region, n, state, config):
    if region.hyper is None or region.scale_version != state.scale_version:
        return True
    m = region.fit_n
    return abs(n - m) >= config.refit_every or n >= 2 * m or 2 * n <= m


def _refresh_local(state: RunState, config: RunConfig, region: TrustRegion, force=False):
    if config.single_global_gp:
        region.model = state.global_model
        return
    idx = np.flatnonzero(data_window(region.centroid, region.log_lengths, state.x))
    if idx.size == 0:
        idx = np.array([int(np.argmin(np.sum((state.x - region.centroid) ** 2, axis=1)))])
    x, z = state.x[idx], state.z[idx]
    if force or _local_fit_due(region, idx.size, state, config):
        region.hyper = fit_hyperparams(
            x, z, config.kernel, seed=subseed(config.seed, _HYPER, region.id, state.y.size),
            init=region.hyper,
        )
        region.fit_n = idx.size
        region.scale_version = state.scale_version
    region.model = GpModel.condition(*region.hyper, x, z)


def _append(state: RunState, problem, config: RunConfig, points, kind):
    points = np.atleast_2d(points)
    values = problem.evaluate(points, config.seed)
    state.x = np.vstack([state.x, points])
    state.y = np.concatenate([state.y, values])
    state.kinds.extend([kind] * points.shape[0])
    return values


def _budget_left(state, config) -> bool:
    if state.y.size >= config.budget:
        state.complete = True
        return False
    return True


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------


def initial_design(seed, count, dim) -> np.ndarray:
    """Shared uniform initial design; identical across methods for a seed."""
    return np.random.default_rng(subseed(seed, _INIT)).uniform(size=(count, dim))


def initialize(problem, config: RunConfig, method=Method.TRLSE) -> RunState:
    """Evaluate the initial design, fit the global GP and create the regions."""
    method = Method(method)
    d = problem.dim
    design = initial_design(config.seed, config.num_regions, d)
    state = RunState(method, d, np.zeros((0, d)), np.zeros(0), [],
                     Standardizer(0.0, 1.0, config.threshold), None)
    _append(state, problem, config, design, "init")
    _refresh_global(state, config, force=True)
    if method is Method.TRLSE:
        log_v = math.log(config.v_init)
        for i in range(config.num_regions):
            region = TrustRegion.hypercube(i, design[i], log_v, birth_iteration=0)
            _refresh_local(state, config, region, force=True)
            state.regions.append(region)
        state.n = config.num_regions
    state.t = 1
    if state.y.size >= config.budget:
        state.complete = True
    return state


def _update_region(state, config, region, h):
    old_model = region.model
    lower, upper = region.box()
    q = BoxQuery(lower, upper, config.budget_for(state.dim),
                 subseed(config.seed, _REGION, region.id, state.t), config.polish)
    cands = box_candidates(q)
    mean, var = old_model.posterior(cands)
    std = np.sqrt(var)
    centroid = move_centroid(region, h, q, cands, mean)
    lcb, ucb = extremize_confidence_bounds(old_model, q, config.beta, cands, (mean, std))
    pen = penalty_from_bounds(lcb, ucb, h, config.beta)
    log_v = update_volume(region.log_volume, pen, config.s_function, config.v_max)
    region.centroid = centroid
    region.log_volume = log_v
    if math.isfinite(log_v):
        region.log_lengths = update_lengths(log_v, old_model.kernel.lengthscales)
    region.history.append((state.t, pen, log_v))
    if math.isfinite(log_v):
        _refresh_local(state, config, region)
    return {"id": region.id, "penalty": pen, "lcb": lcb, "ucb": ucb, "log_volume": log_v}


def _global_choice(state, config, holes, key):
    """Re-initialization point: global AF maximized outside all live regions."""
    d = state.dim
    spec = AcquisitionSpec(config.acq_global, config.beta, state.standardizer.internal_threshold)
    seed = subseed(config.seed, _REINIT, key)
    if config.random_reinit:
        q = BoxQuery(np.zeros(d), np.ones(d), 1, seed, False)
        x = complement_candidates(q, holes)[0]
        m, v = state.global_model.posterior(x[None, :])
        return x, float(straddle_score(m, np.sqrt(v), spec)[0]), True
    if spec.is_pathwise:
        q = BoxQuery(np.zeros(d), np.ones(d), min(config.budget_for(d), config.thompson_candidates), seed, False)
        cands = complement_candidates(q, holes)
        vals = score_candidates(state.global_model, cands, spec, seed=seed)
        i = int(np.argmax(vals))
        return cands[i], float(vals[i]), True
    q = BoxQuery(np.zeros(d), np.ones(d), config.budget_for(d), seed, config.polish)
    cands = complement_candidates(q, holes)
    mean, var = state.global_model.posterior(cands)
    vals = straddle_score(mean, np.sqrt(var), spec)
    feasible = bool(np.any(vals >= 0))
    x, v = maximize_in_complement(scorer(state.global_model, spec), q, holes)
    return x, v, feasible


def _local_choice(state, config, region):
    """Best local-AF point inside one region and whether any candidate brackets h."""
    spec = AcquisitionSpec(config.acq_local, config.beta, state.standardizer.internal_threshold)
    lower, upper = region.box()
    seed = subseed(config.seed, _LOCAL, region.id, state.t)
    budget = config.budget_for(state.dim)
    if spec.is_pathwise:
        q = BoxQuery(lower, upper, min(budget, config.thompson_candidates), seed, False)
        cands = box_candidates(q)
        vals = score_candidates(region.model, cands, spec, seed=seed)
        i = int(np.argmax(vals))
        return cands[i], float(vals[i]), True
    q = BoxQuery(lower, upper, budget, seed, config.polish)
    cands = box_candidates(q)
    vals = score_candidates(region.model, cands, spec)
    x, v = best_of(scorer(region.model, spec), cands, lower, upper, q.polish, vals)
    return x, v, bool(np.any(vals >= 0))


def global_acquisition_at(state, config, x) -> float:
    """Straddle value of the global GP at ``x``."""
    spec = AcquisitionSpec(AcquisitionKind.STRADDLE, config.beta, state.standardizer.internal_threshold)
    m, v = state.global_model.posterior(np.atleast_2d(x))
    return float(straddle_score(m, np.sqrt(v), spec)[0])


def _step_trlse(state: RunState, problem, config: RunConfig):
    h = state.standardizer.internal_threshold
    event = {"t": state.t, "regions": [], "reinits": []}

    for region in sorted(state.regions, key=lambda r: r.id):
        event["regions"].append(_update_region(state, config, region, h))

    for slot, region in sorted(enumerate(state.regions), key=lambda p: p[1].id):
        if not should_discard(region, config.v_init):
            continue
        if not _budget_left(state, config):
            break
        holes = [r.box() for r in state.regions if r is not region]
        x, a_g, feasible = _global_choice(state, config, holes, state.n)
        _append(state, problem, config, x, "reinit")
        _refresh_global(state, config)
        new = TrustRegion.hypercube(state.n, x, math.log(config.v_init), birth_iteration=state.t)
        _refresh_local(state, config, new, force=True)
        state.regions[slot] = new
        state.n += 1
        violated = config.acq_global is AcquisitionKind.STRADDLE and not config.random_reinit \
            and feasible and a_g < 0
        state.violations += int(violated)
        event["reinits"].append({"discarded": region.id, "new": new.id, "a_g": a_g,
                                 "feasible": feasible, "violation": violated})
    state.regions.sort(key=lambda r: r.id)

    if state.complete or not _budget_left(state, config):
        event["n"], event["evaluations"] = state.n, state.y.size
        state.events.append(event)
        return state

    best = None
    feasible = False
    for region in state.regions:
        x, v, ok = _local_choice(state, config, region)
        feasible |= ok
        if best is None or v > best[1]:
            best = (x, v, region.id)
    x_t, a_l, owner = best
    a_g_local = global_acquisition_at(state, config, x_t)
    violated = config.acq_local is AcquisitionKind.STRADDLE and feasible and a_l < 0
    state.violations += int(violated)
    _append(state, problem, config, x_t, "local")
    _refresh_global(state, config)
    event.update({"a_local": a_l, "a_global_at_local": a_g_local, "owner": owner,
                  "feasible": feasible, "violation": violated})
    state.t += 1
    event["n"], event["evaluations"] = state.n, state.y.size
    state.events.append(event)
    _budget_left(state, config)
    return state


def _step_baseline(state: RunState, problem, config: RunConfig):
    if not _budget_left(state, config):
        return state
    d = state.dim
    if state.method is Method.RANDOM:
        x = np.random.default_rng(subseed(config.seed, _RANDOM, state.t)).uniform(size=d)
        value = None
    else:
        spec = AcquisitionSpec(AcquisitionKind.STRADDLE, config.beta, state.standardizer.internal_threshold)
        q = BoxQuery(np.zeros(d), np.ones(d), config.budget_for(d),
                     subseed(config.seed, _STRADDLE, state.t), config.polish)
        cands = box_candidates(q)
        vals = score_candidates(state.global_model, cands, spec)
        x, value = best_of(scorer(state.global_model, spec), cands, q.lower, q.upper, q.polish, vals)
    _append(state, problem, config, x, state.method.value)
    _refresh_global(state, config)
    state.events.append({"t": state.t, "a_global": value, "n": 0, "evaluations": state.y.size})
    state.t += 1
    _budget_left(state, config)
    return state


def step(state: RunState, problem, config: RunConfig) -> RunState:
    """Advance the run by one iteration (updates, re-inits, one selection)."""
    if state.complete or not _budget_left(state, config):
        return state
    if state.method is Method.TRLSE:
        return _step_trlse(state, problem, config)
    return _step_baseline(state, problem, config)


def run(problem, config: RunConfig, method=Method.TRLSE, callback=None) -> RunState:
    state = initialize(problem, config, method)
    if callback:
        callback(state)
    while not state.complete:
        step(state, problem, config)
        if callback:
            callback(state)
    return state


def run_baseline(kind, problem, config: RunConfig, callback=None) -> RunState:
    kind = Method(kind)
    if kind is Method.TRLSE:
        raise PreconditionError("run_baseline takes 'random' or 'straddle'")
    return run(problem, config, kind, callback)
