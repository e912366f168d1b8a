"""Level-set acquisition functions.

The same function serves as the global AF (scored with the global GP over the
complement of all regions) and as the local AF (scored with a region's own GP
inside its box).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import PreconditionError

MIN_BETA = float(norm.ppf(0.75))


class AcquisitionKind(str, enum.Enum):
    STRADDLE = "straddle"
    THOMPSON = "thompson"
    C2LSE = "c2lse"


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: AcquisitionKind = AcquisitionKind.STRADDLE
    beta: float = 1.96
    threshold: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", AcquisitionKind(self.kind))
        if not self.beta >= MIN_BETA:
            raise PreconditionError(f"beta must be >= {MIN_BETA:.4f}, got {self.beta}")

    @property
    def is_pathwise(self) -> bool:
        """True when scores come from a joint sample and cannot be polished pointwise."""
        return self.kind is AcquisitionKind.THOMPSON


def straddle_score(mean, stddev, spec: AcquisitionSpec):
    """``beta * sigma - |mu - h|``; non-negative exactly when the interval contains h."""
    return spec.beta * np.asarray(stddev) - np.abs(np.asarray(mean) - spec.threshold)


def thompson_scores(model, candidates, spec: AcquisitionSpec, seed):
    """``-|f~(x) - h|`` for one joint posterior draw ``f~`` over ``candidates``.

    Maximizing picks the candidate whose sampled value is closest to the
    threshold.
    """
    path = model.sample_path(candidates, seed)
    return -np.abs(path - spec.threshold)


def scorer(model, spec: AcquisitionSpec):
    """Pointwise score function ``x -> a(x)`` for polishing (straddle only)."""
    if spec.kind is AcquisitionKind.STRADDLE:
        def score(x):
            m, v = model.posterior(x)
            return straddle_score(m, np.sqrt(v), spec)
        return score
    if spec.kind is AcquisitionKind.C2LSE:
        raise NotImplementedError("C2LSE is a reserved plugin slot and has no implementation")
    raise PreconditionError(f"{spec.kind.value} has no pointwise score")


def score_candidates(model, candidates, spec: AcquisitionSpec, seed=0, moments=None):
    """Acquisition values at a candidate batch.

    ``moments`` optionally supplies precomputed ``(mean, std)`` for straddle.
    """
    if spec.kind is AcquisitionKind.STRADDLE:
        if moments is None:
            m, v = model.posterior(candidates)
            moments = (m, np.sqrt(v))
        return straddle_score(moments[0], moments[1], spec)
    if spec.kind is AcquisitionKind.THOMPSON:
        return thompson_scores(model, candidates, spec, seed)
    raise NotImplementedError("C2LSE is a reserved plugin slot and has no implementation")
