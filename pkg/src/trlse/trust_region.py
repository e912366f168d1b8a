"""Trust-region state and its update rules.

A region is an axis-aligned box centred at ``centroid`` with side lengths
``exp(log_lengths)`` whose product is the region volume.  Volumes and lengths
are kept in log space throughout so that volumes as small as 1e-300 stay
representable in 1000 dimensions.  The local GP is trained on the wider data
window ``centroid +/- lengths``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr
from scipy.stats import norm

from .box_optimizer import BoxQuery, best_of, box_candidates, extremize_confidence_bounds
from .errors import PreconditionError

_LOG2 = math.log(2.0)
_BELOW_ONE = float(np.nextafter(1.0, 0.0))


class SForm(str, enum.Enum):
    SIGMOID = "sigmoid"
    LINEAR = "linear"
    CONSTANT = "constant"


@dataclass(frozen=True)
class SFunction:
    """Volume adjustment factor as a function of the penalty.

    ``sigmoid``: ``2 / (1 + exp(a*u - b))``; ``linear``: ``slope*u + intercept``
    floored at zero; ``constant``: 1.
    """

    form: SForm = SForm.SIGMOID
    a: float = 8.0
    b: float = 6.0
    slope: float = -4.0
    intercept: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "form", SForm(self.form))
        if self.form is SForm.SIGMOID and not self.a > 0:
            raise PreconditionError("sigmoid steepness a must be positive")
        if self.form is SForm.LINEAR and self.slope > 0:
            raise PreconditionError("linear S must be non-increasing")

    @classmethod
    def sigmoid(cls, a=8.0, b=6.0):
        return cls(SForm.SIGMOID, a=a, b=b)

    @classmethod
    def linear(cls, slope=-4.0, intercept=4.0):
        return cls(SForm.LINEAR, slope=slope, intercept=intercept)

    @classmethod
    def constant(cls):
        return cls(SForm.CONSTANT)

    def log_factor(self, u):
        u = np.asarray(u, dtype=float)
        if self.form is SForm.SIGMOID:
            return _LOG2 - np.logaddexp(0.0, self.a * u - self.b)
        if self.form is SForm.LINEAR:
            with np.errstate(divide="ignore"):
                return np.log(np.maximum(self.slope * u + self.intercept, 0.0))
        return np.zeros_like(u)

    def __call__(self, u):
        return np.exp(self.log_factor(u))


@dataclass(eq=False)
class TrustRegion:
    id: int
    centroid: np.ndarray
    log_volume: float
    log_lengths: np.ndarray
    model: object = None
    birth_iteration: int = 0
    origin: np.ndarray = None
    # hyperparameter bookkeeping for the local GP
    hyper: tuple = None
    fit_n: int = 0
    scale_version: int = -1
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.centroid = np.asarray(self.centroid, dtype=float)
        self.log_lengths = np.asarray(self.log_lengths, dtype=float)
        if self.origin is None:
            self.origin = self.centroid.copy()

    @classmethod
    def hypercube(cls, id, centroid, log_volume, birth_iteration=0):
        centroid = np.asarray(centroid, dtype=float)
        d = centroid.size
        return cls(id, centroid, float(log_volume), np.full(d, log_volume / d),
                   birth_iteration=birth_iteration)

    @property
    def dim(self) -> int:
        return self.centroid.size

    @property
    def lengths(self) -> np.ndarray:
        return np.exp(self.log_lengths)

    def box(self):
        """Region box ``centroid +/- lengths/2`` clipped to the unit cube."""
        half = 0.5 * self.lengths
        return np.clip(self.centroid - half, 0.0, 1.0), np.clip(self.centroid + half, 0.0, 1.0)

    def window(self):
        """Local-GP data window ``centroid +/- lengths`` clipped to the unit cube."""
        return np.clip(self.centroid - self.lengths, 0.0, 1.0), np.clip(self.centroid + self.lengths, 0.0, 1.0)

    def contains(self, points) -> np.ndarray:
        lo, hi = self.box()
        points = np.atleast_2d(points)
        return np.all((points >= lo) & (points <= hi), axis=1)


def move_centroid(tr: TrustRegion, threshold: float, q: BoxQuery, candidates=None, mean=None):
    """Point of the region box whose local posterior mean is closest to ``threshold``.

    The current centroid is kept unless the search strictly improves
    ``|mu - h|`` on it.
    """
    if candidates is None:
        candidates = box_candidates(q)
    model = tr.model

    def score(x):
        return -np.abs(model.posterior(x)[0] - threshold)

    values = None if mean is None else -np.abs(mean - threshold)
    x, v = best_of(score, candidates, q.lower, q.upper, q.polish, values)
    current = float(score(tr.centroid[None, :])[0])
    if v > current:
        return x
    return tr.centroid.copy()


def penalty_from_bounds(lcb_min, ucb_max, threshold, beta):
    """``Phi(|l + u - 2h| / (2 sigma))`` with ``sigma = (u - l) / (2 beta)``.

    Lies in ``[0.5, 1)``: a degenerate bracket ``u == l`` gives the neutral 0.5
    and the upper end is capped just below one.
    """
    lcb_min, ucb_max = float(lcb_min), float(ucb_max)
    if beta <= 0:
        raise PreconditionError("beta must be positive")
    width = ucb_max - lcb_min
    if not width > 0:
        return 0.5
    arg = beta * abs(lcb_min + ucb_max - 2.0 * threshold) / width
    return min(float(ndtr(arg)), _BELOW_ONE)


def penalty(tr: TrustRegion, beta: float, threshold: float, q: BoxQuery, candidates=None, moments=None):
    """Penalty of the region from the confidence-bound extremes of its local GP."""
    lcb, ucb = extremize_confidence_bounds(tr.model, q, beta, candidates, moments)
    return penalty_from_bounds(lcb, ucb, threshold, beta), lcb, ucb


def update_volume(log_volume: float, penalty_value: float, s: SFunction, v_max: float) -> float:
    """New log-volume ``min(log V + log S(P), log V_max)``; ``-inf`` if S(P) underflows."""
    if not v_max > 0:
        raise PreconditionError("v_max must be positive")
    return float(min(log_volume + float(s.log_factor(penalty_value)), math.log(v_max)))


def update_lengths(log_volume: float, lengthscales) -> np.ndarray:
    """Side lengths proportional to ``lengthscales`` whose product is the volume.

    Returns the log side lengths.
    """
    ls = np.asarray(lengthscales, dtype=float)
    if np.any(~(ls > 0)) or not np.all(np.isfinite(ls)):
        raise PreconditionError(f"lengthscales must be positive and finite, got {ls}")
    log_ls = np.log(ls)
    return log_ls + (log_volume - log_ls.sum()) / ls.size


def data_window(centroid, log_lengths, points) -> np.ndarray:
    """Mask of ``points`` with ``|x_k - c_k| <= L_k`` for every k (closed)."""
    points = np.atleast_2d(points)
    lengths = np.exp(np.asarray(log_lengths, dtype=float))
    return np.all(np.abs(points - centroid) <= lengths, axis=1)


def should_discard(tr: TrustRegion, v_init: float) -> bool:
    return tr.log_volume < math.log(v_init) - _LOG2


def zeta_bound(v_init, v_max, a, b, beta) -> float:
    """Iterations after which a region that never brackets h is replaced.

    ``log(V_init / V_max^2) / (log 2 - log(1 + exp(a * Phi(beta) - b)))``.
    Requires ``beta > Phi^-1(b / a)``, i.e. a strictly negative denominator.
    """
    if not 0 < v_init < v_max:
        raise PreconditionError("require 0 < v_init < v_max")
    denom = _LOG2 - float(np.logaddexp(0.0, a * math.exp(log_ndtr(beta)) - b))
    if denom > -1e-12:
        raise PreconditionError(
            f"beta={beta} does not exceed Phi^-1(b/a)={norm.ppf(min(b / a, 1.0)):.6f}; "
            "the shrink factor is not below one"
        )
    return (math.log(v_init) - 2.0 * math.log(v_max)) / denom
