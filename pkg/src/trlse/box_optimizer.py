"""Candidate-based maximization over boxes and box complements.

Every ``argmax``/``argmin`` in the trust-region loop goes through here.  Score
functions are vectorized: they take an ``(n, d)`` array and return ``n``
scores.  Ties go to the lowest candidate index.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import InfeasibleSearchError, PreconditionError

POLISH_STEPS = 40
POLISH_INITIAL_STEP = 0.1
POLISH_DECAY = 0.8
REJECTION_FACTOR = 10


def default_budget(dim: int) -> int:
    return int(min(4096, round(512 * math.sqrt(dim))))


@dataclass(frozen=True)
class BoxQuery:
    lower: np.ndarray
    upper: np.ndarray
    budget: int = 1024
    seed: int = 0
    polish: bool = True

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape or np.any(lower > upper):
            raise PreconditionError("box must satisfy lower <= upper componentwise")
        if self.budget < 1:
            raise PreconditionError("budget must be >= 1")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size


def box_candidates(q: BoxQuery) -> np.ndarray:
    """Scrambled Sobol points in the box; a prefix of the sequence for a larger budget."""
    sampler = qmc.Sobol(q.dim, scramble=True, seed=q.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-two sizes
        u = sampler.random(q.budget)
    return q.lower + u * (q.upper - q.lower)


def polish(score, x0, value0, lower, upper, steps=POLISH_STEPS):
    """Coordinate search from ``x0`` with geometrically shrinking steps.

    All 2d single-coordinate moves are scored per step and the best strict
    improvement is taken, so the returned value never falls below ``value0``.
    """
    x, best = np.array(x0, dtype=float), float(value0)
    d = x.size
    width = upper - lower
    step = POLISH_INITIAL_STEP * width
    eye = np.eye(d)
    for _ in range(steps):
        if not np.any(step > 0):
            break
        moves = np.concatenate([x + eye * step, x - eye * step])
        moves = np.clip(moves, lower, upper)
        vals = np.asarray(score(moves), dtype=float)
        i = int(np.argmax(vals))
        if vals[i] > best:
            x, best = moves[i], float(vals[i])
        step = step * POLISH_DECAY
    return x, best


def best_of(score, candidates, lower, upper, do_polish=True, values=None):
    """Argmax of ``score`` over ``candidates`` (optionally pre-scored), then polish."""
    if values is None:
        values = np.asarray(score(candidates), dtype=float)
    i = int(np.argmax(values))
    x, v = candidates[i].copy(), float(values[i])
    if do_polish:
        x, v = polish(score, x, v, lower, upper)
    return x, v


def maximize_in_box(score, q: BoxQuery):
    """Return ``(point, value)`` maximizing ``score`` over the box of ``q``."""
    cands = box_candidates(q)
    return best_of(score, cands, q.lower, q.upper, q.polish)


def in_any_box(points, holes) -> np.ndarray:
    """Mask of points lying in at least one closed box ``(lower, upper)``."""
    points = np.atleast_2d(points)
    mask = np.zeros(points.shape[0], dtype=bool)
    for lo, hi in holes:
        mask |= np.all((points >= lo) & (points <= hi), axis=1)
    return mask


def complement_candidates(q: BoxQuery, holes) -> np.ndarray:
    """Uniform draws from the box of ``q`` that avoid every hole."""
    rng = np.random.default_rng(q.seed)
    accepted = []
    n_accepted = 0
    drawn = 0
    chunk = q.budget
    while n_accepted < q.budget and drawn < REJECTION_FACTOR * q.budget:
        u = rng.uniform(size=(chunk, q.dim))
        drawn += chunk
        x = q.lower + u * (q.upper - q.lower)
        x = x[~in_any_box(x, holes)]
        accepted.append(x)
        n_accepted += x.shape[0]
    cands = np.concatenate(accepted)[: q.budget]
    if cands.shape[0] == 0:
        raise InfeasibleSearchError(
            f"no candidate outside {len(holes)} boxes after {drawn} uniform draws"
        )
    return cands


def maximize_in_complement(score, q: BoxQuery, holes):
    """Maximize ``score`` over the box of ``q`` minus the union of ``holes``.

    ``holes`` is a sequence of ``(lower, upper)`` pairs.  The returned point is
    never inside a hole.
    """
    holes = list(holes)
    if not holes:
        return maximize_in_box(score, q)
    cands = complement_candidates(q, holes)

    def masked(x):
        vals = np.asarray(score(x), dtype=float)
        return np.where(in_any_box(x, holes), -np.inf, vals)

    return best_of(masked, cands, q.lower, q.upper, q.polish)


def extremize_confidence_bounds(model, q: BoxQuery, beta: float, candidates=None,
                                moments=None):
    """``(min LCB, max UCB)`` of ``model`` over the box, sharing one candidate set.

    ``moments`` may carry a precomputed ``(mean, std)`` at ``candidates``.
    """
    if candidates is None:
        candidates = box_candidates(q)
    if moments is None:
        mean, var = model.posterior(candidates)
        moments = (mean, np.sqrt(var))
    mean, std = moments

    def neg_lcb(x):
        m, v = model.posterior(x)
        return -(m - beta * np.sqrt(v))

    def ucb(x):
        m, v = model.posterior(x)
        return m + beta * np.sqrt(v)

    _, neg_l = best_of(neg_lcb, candidates, q.lower, q.upper, q.polish, -(mean - beta * std))
    _, u = best_of(ucb, candidates, q.lower, q.upper, q.polish, mean + beta * std)
    return -neg_l, u
