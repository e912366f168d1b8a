"""Synthetic level-set problems on the unit cube.

Each problem wraps a standard closed-form test function defined on a raw box,
an affine map from ``[0, 1]^d`` onto that box, a threshold calibrated so that a
given fraction of the domain is superlevel, and Gaussian observation noise.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

CACHE_HEADER = "# trlse threshold cache v1: name d fraction sample_count seed h"
NOISE_SCALE_SAMPLES = 10_000
NOISE_SCALE_SEED = 20240917
_CHUNK_ELEMENTS = 4_000_000


def levy(x):
    w = 1.0 + (x - 1.0) / 4.0
    head = np.sin(np.pi * w[:, 0]) ** 2
    body = np.sum((w[:, :-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * w[:, :-1] + 1.0) ** 2), axis=1)
    tail = (w[:, -1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * w[:, -1]) ** 2)
    return head + body + tail


def ackley(x, a=20.0, b=0.2, c=2.0 * np.pi):
    return (
        -a * np.exp(-b * np.sqrt(np.mean(x**2, axis=1)))
        - np.exp(np.mean(np.cos(c * x), axis=1))
        + a
        + math.e
    )


def rosenbrock(x):
    return np.sum(100.0 * (x[:, 1:] - x[:, :-1] ** 2) ** 2 + (x[:, :-1] - 1.0) ** 2, axis=1)


def trid(x):
    return np.sum((x - 1.0) ** 2, axis=1) - np.sum(x[:, 1:] * x[:, :-1], axis=1)


def mishra03(x):
    return np.sqrt(np.abs(np.cos(np.sqrt(np.abs(x[:, 0] ** 2 + x[:, 1]))))) + 0.01 * (x[:, 0] + x[:, 1])


@dataclass(frozen=True)
class FunctionInfo:
    function: Callable
    domain: Callable  # d -> (lower, upper) scalars
    fraction: float
    fixed_dim: int | None = None


FUNCTIONS = {
    "levy": FunctionInfo(levy, lambda d: (-10.0, 10.0), 0.20),
    "ackley": FunctionInfo(ackley, lambda d: (-5.0, 10.0), 0.20),
    "rosenbrock": FunctionInfo(rosenbrock, lambda d: (-5.0, 10.0), 0.20),
    "trid": FunctionInfo(trid, lambda d: (-float(d) ** 2, float(d) ** 2), 0.20),
    "mishra03": FunctionInfo(mishra03, lambda d: (-5.0, 5.0), 0.615, fixed_dim=2),
}


@dataclass(frozen=True, eq=False)
class Problem:
    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    function: Callable
    threshold: float
    superlevel_fraction: float
    noise_std: float = 0.0

    def to_raw(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        # convex-combination form is exact at both corners
        return self.lower * (1.0 - u) + self.upper * u

    def to_unit(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x - self.lower) / (self.upper - self.lower)

    def f(self, u) -> np.ndarray:
        """Noiseless values at unit-cube points, in chunks to bound memory."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        step = max(1, _CHUNK_ELEMENTS // max(self.dim, 1))
        return np.concatenate([self.function(self.to_raw(u[i:i + step]))
                               for i in range(0, u.shape[0], step)] or [np.zeros(0)])

    def evaluate(self, u, seed) -> np.ndarray:
        return eval_fn(self, u, seed)

    def ground_truth(self, u) -> np.ndarray:
        return ground_truth(self, u)


def _point_noise(point, seed):
    words = np.frombuffer(np.ascontiguousarray(point, dtype=np.float64).tobytes(), dtype=np.uint32)
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words.tolist()])).standard_normal()


def eval_fn(problem: Problem, u, seed) -> np.ndarray:
    """Noisy observations ``f(x) + eta``; the noise is keyed by point and seed."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    values = problem.f(u)
    if problem.noise_std > 0:
        values = values + problem.noise_std * np.array([_point_noise(p, seed) for p in u])
    return values


def ground_truth(problem: Problem, u) -> np.ndarray:
    """True for superlevel points (noiseless ``f >= h``)."""
    return problem.f(u) >= problem.threshold


def _resolve(name, dim):
    key = name.lower()
    if key not in FUNCTIONS:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(FUNCTIONS)}")
    info = FUNCTIONS[key]
    if info.fixed_dim is not None:
        if dim not in (None, info.fixed_dim):
            raise ValueError(f"{name} is only defined for d={info.fixed_dim}")
        dim = info.fixed_dim
    if dim is None or dim < 2:
        raise ValueError(f"{name} needs a dimension >= 2")
    lo, hi = info.domain(dim)
    return key, info, dim, np.full(dim, lo), np.full(dim, hi)


def calibrate_threshold(problem: Problem, fraction: float, sample_count: int = 10**6, seed: int = 0) -> float:
    """Empirical ``(1 - fraction)``-quantile of the noiseless function over the cube."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    step = max(1, _CHUNK_ELEMENTS // problem.dim)
    values = []
    remaining = int(sample_count)
    while remaining > 0:
        m = min(step, remaining)
        values.append(problem.f(rng.uniform(size=(m, problem.dim))))
        remaining -= m
    return float(np.quantile(np.concatenate(values), 1.0 - fraction))


class ThresholdCache:
    """Plain-text store of calibrated thresholds, one whitespace-separated record per line."""

    def __init__(self, path):
        self.path = os.fspath(path)

    @staticmethod
    def _key(name, dim, fraction, sample_count, seed):
        return (name, int(dim), float(fraction), int(sample_count), int(seed))

    def records(self):
        out = {}
        if not os.path.exists(self.path):
            return out
        with open(self.path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                name, d, frac, count, seed, h = line.split()
                out[self._key(name, d, frac, count, seed)] = float(h)
        return out

    def get(self, name, dim, fraction, sample_count, seed):
        return self.records().get(self._key(name, dim, fraction, sample_count, seed))

    def put(self, name, dim, fraction, sample_count, seed, h):
        new_file = not os.path.exists(self.path)
        with open(self.path, "a") as fh:
            if new_file:
                fh.write(CACHE_HEADER + "\n")
            fh.write(f"{name} {int(dim)} {float(fraction)!r} {int(sample_count)} {int(seed)} {h:.17g}\n")


def make_problem(name, dim=None, fraction=None, threshold=None, sample_count=10**6, seed=0,
                 noise_level=0.01, cache_path=None) -> Problem:
    """Build a problem, calibrating (or loading) its threshold.

    ``noise_level`` is the observation noise standard deviation as a multiple
    of the function's standard deviation over the cube.
    """
    key, info, dim, lower, upper = _resolve(name, dim)
    fraction = info.fraction if fraction is None else float(fraction)
    base = Problem(key, dim, lower, upper, info.function, float("nan"), fraction)
    if threshold is None:
        cache = ThresholdCache(cache_path) if cache_path else None
        threshold = cache.get(key, dim, fraction, sample_count, seed) if cache else None
        if threshold is None:
            threshold = calibrate_threshold(base, fraction, sample_count, seed)
            if cache:
                cache.put(key, dim, fraction, sample_count, seed, threshold)
    noise_std = 0.0
    if noise_level > 0:
        rng = np.random.default_rng(NOISE_SCALE_SEED)
        noise_std = noise_level * float(np.std(base.f(rng.uniform(size=(NOISE_SCALE_SAMPLES, dim)))))
    return Problem(key, dim, lower, upper, info.function, float(threshold), fraction, noise_std)


# Recommended run settings per benchmark: (v_init, v_max, num_regions)
RUN_DEFAULTS = {
    ("mishra03", 2): (1e-4, 5e-2, 10),
    ("levy", 10): (1e-5, 1e-1, 40),
    ("levy", 100): (1e-30, 1e-2, 50),
    ("ackley", 200): (1e-60, 1e-2, 200),
    ("trid", 1000): (1e-300, 1e-2, 50),
    ("rosenbrock", 1000): (1e-300, 1e-2, 50),
}


def run_defaults(name, dim):
    """``(v_init, v_max, num_regions)`` for a problem; ``0.5**d`` style otherwise."""
    key = (name.lower(), dim)
    if key in RUN_DEFAULTS:
        return RUN_DEFAULTS[key]
    return max(0.5**dim, 1e-300), (1e-1 if dim <= 10 else 1e-2), 50 if dim > 2 else 10
