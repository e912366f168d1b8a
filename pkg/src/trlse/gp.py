"""Exact Gaussian-process regression on the unit cube.

Kernels are stationary with one lengthscale per input dimension.  Targets are
expected to be standardized with :class:`Standardizer` so that the zero prior
mean of the GP sits at the classification threshold.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, eigh, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import DimensionError, FactorizationError, PreconditionError

NOISE_FLOOR = 1e-6
JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
N_RESTARTS = 8
N_POLISHED_RESTARTS = 2

_SQRT5 = math.sqrt(5.0)
_LOG_2PI = math.log(2.0 * math.pi)


class KernelFamily(str, enum.Enum):
    MATERN52 = "matern52"
    RBF = "rbf"
    RQ = "rq"


@dataclass(frozen=True, eq=False)
class KernelSpec:
    family: KernelFamily
    lengthscales: np.ndarray
    signal_variance: float = 1.0
    rq_alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or ls.size == 0:
            raise PreconditionError("lengthscales must be a non-empty vector")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise PreconditionError(f"lengthscales must be positive and finite, got {ls}")
        if not (self.signal_variance > 0 and math.isfinite(self.signal_variance)):
            raise PreconditionError("signal_variance must be positive")
        if not self.rq_alpha > 0:
            raise PreconditionError("rq_alpha must be positive")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dim(self) -> int:
        return self.lengthscales.size


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if dim != 1 or x.size == 1 else x.reshape(-1, 1)
    if x.ndim != 2:
        raise DimensionError(dim, x.shape, "point array")
    if x.shape[1] != dim:
        raise DimensionError(dim, x.shape[1])
    return x


def _sq_dist(spec, a, b):
    return cdist(a / spec.lengthscales, b / spec.lengthscales, "sqeuclidean")


def _k_of_r2(spec, r2):
    s2 = spec.signal_variance
    if spec.family is KernelFamily.RBF:
        return s2 * np.exp(-0.5 * r2)
    if spec.family is KernelFamily.MATERN52:
        r = np.sqrt(r2)
        return s2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)
    alpha = spec.rq_alpha
    return s2 * (1.0 + r2 / (2.0 * alpha)) ** (-alpha)


def kernel_matrix(spec: KernelSpec, a, b=None) -> np.ndarray:
    """Cross-covariance matrix between two point sets (``b`` defaults to ``a``)."""
    a = _as_points(a, spec.dim)
    b = a if b is None else _as_points(b, spec.dim)
    k = _k_of_r2(spec, _sq_dist(spec, a, b))
    if b is a:
        # exact symmetry and exact signal variance on the diagonal
        k = 0.5 * (k + k.T)
        np.fill_diagonal(k, spec.signal_variance)
    return k


def kernel_eval(spec: KernelSpec, a, b) -> float:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    for p in (a, b):
        if p.ndim != 1 or p.size != spec.dim:
            raise DimensionError(spec.dim, p.size)
    diff = (a - b) / spec.lengthscales
    return float(_k_of_r2(spec, np.array(diff @ diff)))


def _factorize(mat):
    """Cholesky with an escalating jitter ladder; returns (L, jitter)."""
    n = mat.shape[0]
    scale = max(float(np.mean(np.diag(mat))), 1e-300) if n else 1.0
    for jitter in (0.0,) + JITTER_LADDER:
        try:
            chol = np.linalg.cholesky(mat + (jitter * scale) * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(chol)):
            return chol, jitter * scale
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(mat))
    raise FactorizationError("Gram matrix is singular after maximum jitter", cond, JITTER_LADDER[-1])


@dataclass(frozen=True, eq=False)
class GpModel:
    """Zero-mean exact GP conditioned on ``(train_x, train_y)``.

    Use :meth:`condition` to build one; the Cholesky factor ``chol`` satisfies
    ``chol @ chol.T == K + (noise_variance + jitter) * I``.
    """

    kernel: KernelSpec
    noise_variance: float
    train_x: np.ndarray
    train_y: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @classmethod
    def condition(cls, kernel: KernelSpec, noise_variance: float, x, y) -> "GpModel":
        x = np.asarray(x, dtype=float).reshape(-1, kernel.dim)
        y = np.asarray(y, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise PreconditionError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
        noise_variance = max(float(noise_variance), 0.0)
        if x.shape[0] == 0:
            return cls(kernel, noise_variance, x, y, np.zeros((0, 0)), np.zeros(0))
        gram = kernel_matrix(kernel, x) + noise_variance * np.eye(x.shape[0])
        chol, jitter = _factorize(gram)
        alpha = cho_solve((chol, True), y)
        return cls(kernel, noise_variance, x, y, chol, alpha, jitter)

    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def n(self) -> int:
        return self.train_x.shape[0]

    def posterior(self, query, full_cov=False):
        """Posterior mean and (latent) variance at ``query``.

        Variances are clamped at zero from below.  With ``full_cov`` the joint
        covariance matrix is returned instead of the marginal variances.
        """
        q = _as_points(query, self.dim)
        if self.n == 0:
            mean = np.zeros(q.shape[0])
            if full_cov:
                return mean, kernel_matrix(self.kernel, q)
            return mean, np.full(q.shape[0], self.kernel.signal_variance)
        ks = kernel_matrix(self.kernel, self.train_x, q)
        mean = ks.T @ self.alpha
        v = solve_triangular(self.chol, ks, lower=True, check_finite=False)
        if full_cov:
            cov = kernel_matrix(self.kernel, q) - v.T @ v
            return mean, 0.5 * (cov + cov.T)
        var = self.kernel.signal_variance - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)

    def log_marginal_likelihood(self) -> float:
        if self.n == 0:
            return 0.0
        return float(
            -0.5 * self.train_y @ self.alpha
            - np.log(np.diag(self.chol)).sum()
            - 0.5 * self.n * _LOG_2PI
        )

    def sample_path(self, candidates, seed) -> np.ndarray:
        """One joint posterior draw over ``candidates``."""
        q = _as_points(candidates, self.dim)
        if q.shape[0] < 1:
            raise PreconditionError("need at least one candidate")
        mean, cov = self.posterior(q, full_cov=True)
        # eigh keeps exactly-correlated candidates exactly equal, unlike jittered Cholesky
        evals, evecs = eigh(cov, check_finite=False)
        tol = 1e-8 * max(float(np.trace(cov)), self.kernel.signal_variance)
        if evals.min() < -tol:
            raise FactorizationError(
                "posterior covariance is not positive semi-definite",
                float(abs(evals.max() / evals.min())),
            )
        root = evecs * np.sqrt(np.clip(evals, 0.0, None))
        z = np.random.default_rng(seed).standard_normal(q.shape[0])
        return mean + root @ z


@dataclass(frozen=True)
class Standardizer:
    """Affine map of raw targets onto the GP's scale.

    Targets are divided by their sample standard deviation and shifted so that
    the raw threshold maps to zero, the GP prior mean.  Labels from ``z >= 0``
    equal labels from ``y >= threshold`` for any positive rescaling.
    """

    mean: float
    std: float
    threshold: float

    @classmethod
    def from_targets(cls, y, threshold: float) -> "Standardizer":
        y = np.asarray(y, dtype=float)
        std = float(np.std(y)) if y.size > 1 else 0.0
        if not std > 1e-12 * max(1.0, abs(float(np.mean(y))) if y.size else 1.0):
            std = 1.0
        mean = float(np.mean(y)) if y.size else 0.0
        return cls(mean, std, float(threshold))

    @property
    def internal_threshold(self) -> float:
        return 0.0

    def transform(self, y):
        return (np.asarray(y, dtype=float) - self.threshold) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.std + self.threshold


# --------------------------------------------------------------------------
# Hyperparameter fitting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperPrior:
    """Gaussian priors on log-hyperparameters.

    The lengthscale prior is centred at ``log(sqrt(d) / 2)`` so that functions
    are assumed smoother as the dimension grows.
    """

    ls_scale: float = math.sqrt(3.0)
    ls_offset: float = -math.log(2.0)
    signal_loc: float = 0.0
    signal_scale: float = 1.0
    noise_loc: float = math.log(1e-4)
    noise_scale: float = 2.0
    alpha_loc: float = 0.0
    alpha_scale: float = 1.0

    def ls_loc(self, dim: int) -> float:
        return 0.5 * math.log(dim) + self.ls_offset


@dataclass
class _Objective:
    family: KernelFamily
    x: np.ndarray
    y: np.ndarray
    prior: HyperPrior
    locs: np.ndarray = field(init=False)
    scales: np.ndarray = field(init=False)
    bounds: list = field(init=False)

    def __post_init__(self):
        d = self.x.shape[1]
        locs = [self.prior.ls_loc(d)] * d + [self.prior.signal_loc, self.prior.noise_loc]
        scales = [self.prior.ls_scale] * d + [self.prior.signal_scale, self.prior.noise_scale]
        ls_lo, ls_hi = math.log(1e-3), math.log(1e2 * math.sqrt(d))
        bounds = [(ls_lo, ls_hi)] * d + [(math.log(1e-3), math.log(1e3)), (math.log(NOISE_FLOOR), 0.0)]
        if self.family is KernelFamily.RQ:
            locs.append(self.prior.alpha_loc)
            scales.append(self.prior.alpha_scale)
            bounds.append((math.log(1e-2), math.log(1e2)))
        self.locs = np.array(locs)
        self.scales = np.array(scales)
        self.bounds = bounds

    def unpack(self, theta):
        d = self.x.shape[1]
        spec = KernelSpec(
            self.family,
            np.exp(theta[:d]),
            float(np.exp(theta[d])),
            float(np.exp(theta[d + 2])) if self.family is KernelFamily.RQ else 1.0,
        )
        return spec, max(float(np.exp(theta[d + 1])), NOISE_FLOOR)

    def pack(self, spec, noise):
        theta = list(np.log(spec.lengthscales)) + [math.log(spec.signal_variance), math.log(max(noise, NOISE_FLOOR))]
        if self.family is KernelFamily.RQ:
            theta.append(math.log(spec.rq_alpha))
        return self.clip(np.array(theta))

    def clip(self, theta):
        lo, hi = np.array(self.bounds).T
        return np.clip(theta, lo, hi)

    def log_prior(self, theta):
        z = (theta - self.locs) / self.scales
        return float(-0.5 * z @ z), -z / self.scales

    def __call__(self, theta):
        """Negative log posterior and its gradient in log-parameter space."""
        spec, noise = self.unpack(theta)
        x, y = self.x, self.y
        n, d = x.shape
        r2 = _sq_dist(spec, x, x)
        k = _k_of_r2(spec, r2)
        np.fill_diagonal(k, spec.signal_variance)
        try:
            chol, _ = _factorize(k + noise * np.eye(n))
        except FactorizationError:
            return 1e25, np.zeros_like(theta)
        alpha = cho_solve((chol, True), y)
        lml = -0.5 * y @ alpha - np.log(np.diag(chol)).sum() - 0.5 * n * _LOG_2PI
        kinv = cho_solve((chol, True), np.eye(n))
        w = np.outer(alpha, alpha) - kinv

        s2 = spec.signal_variance
        if spec.family is KernelFamily.RBF:
            base = k
        elif spec.family is KernelFamily.MATERN52:
            r = np.sqrt(r2)
            base = s2 * (5.0 / 3.0) * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
        else:
            u = 1.0 + r2 / (2.0 * spec.rq_alpha)
            base = s2 * u ** (-spec.rq_alpha - 1.0)
        grad = np.empty_like(theta)
        for j in range(d):
            col = x[:, j] / spec.lengthscales[j]
            dk = base * (col[:, None] - col[None, :]) ** 2
            grad[j] = 0.5 * np.sum(w * dk)
        grad[d] = 0.5 * np.sum(w * k)
        grad[d + 1] = 0.5 * noise * np.trace(w)
        if spec.family is KernelFamily.RQ:
            a = spec.rq_alpha
            u = 1.0 + r2 / (2.0 * a)
            dk = k * (-a * np.log(u) + r2 / (2.0 * u))
            grad[d + 2] = 0.5 * np.sum(w * dk)
        lp, dlp = self.log_prior(theta)
        return -(lml + lp), -(grad + dlp)


def prior_mode(family, dim: int, prior: HyperPrior | None = None):
    """Hyperparameters at the prior mode (in log space)."""
    prior = prior or HyperPrior()
    family = KernelFamily(family)
    spec = KernelSpec(
        family,
        np.full(dim, math.exp(prior.ls_loc(dim))),
        math.exp(prior.signal_loc),
        math.exp(prior.alpha_loc),
    )
    return spec, max(math.exp(prior.noise_loc), NOISE_FLOOR)


def fit_hyperparams(x, y, family=KernelFamily.MATERN52, seed=0, init=None, prior=None):
    """MAP estimate of kernel hyperparameters and noise variance.

    Starts are the prior mode, an optional warm start ``init`` (a
    ``(KernelSpec, noise)`` pair) and draws from the prior; the most promising
    ones are refined with L-BFGS-B on the analytic gradient.  Returns
    ``(KernelSpec, noise_variance)``; deterministic for a given ``seed``.
    """
    family = KernelFamily(family)
    prior = prior or HyperPrior()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.ndim != 2:
        raise DimensionError(2, x.ndim, "training input array")
    dim = x.shape[1]
    if x.shape[0] <= 1:
        return prior_mode(family, dim, prior)

    obj = _Objective(family, x, y, prior)
    starts = [obj.pack(*prior_mode(family, dim, prior))]
    if init is not None:
        starts.append(obj.pack(*init))
    rng = np.random.default_rng(seed)
    while len(starts) < N_RESTARTS:
        starts.append(obj.clip(obj.locs + obj.scales * rng.standard_normal(obj.locs.size)))
    values = [obj(s)[0] for s in starts]
    order = np.argsort(values, kind="stable")

    best_theta, best_val = starts[order[0]], values[order[0]]
    for i in order[:N_POLISHED_RESTARTS]:
        res = minimize(obj, starts[i], jac=True, method="L-BFGS-B", bounds=obj.bounds,
                       options={"maxiter": 200})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = obj.clip(res.x), float(res.fun)
    spec, noise = obj.unpack(best_theta)
    # surface singular data as an error rather than a silent fallback
    GpModel.condition(spec, noise, x, y)
    return spec, noise


def fit_gp(x, y, family=KernelFamily.MATERN52, seed=0, init=None) -> GpModel:
    spec, noise = fit_hyperparams(x, y, family, seed=seed, init=init)
    return GpModel.condition(spec, noise, x, y)
