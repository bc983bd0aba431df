"""Gaussian-process Bayesian optimization of the 13 detection parameters.

A zero-mean GP with a squared-exponential ARD kernel models the objective
(negative mean IoU against annotated ground truth) over the unit-cube
normalized search space.  Expected improvement picks each next candidate;
integer dimensions stay continuous inside the GP and round at evaluation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sopt
from scipy.linalg import cho_solve, solve_triangular
from scipy.stats import norm

from .params import TUNABLE_RANGES, ParameterSet

logger = logging.getLogger(__name__)

# Hyperparameter bounds in unit-cube coordinates.
LENGTHSCALE_BOUNDS = (1e-3, 10.0)
SIGNAL_VAR_BOUNDS = (1e-4, 10.0)
NOISE_VAR_BOUNDS = (1e-8, 1.0)


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    integer: bool


@dataclass(frozen=True)
class SearchSpace:
    """Box search space; points live in the unit cube until decoded."""

    dimensions: tuple[Dimension, ...]

    def __post_init__(self):
        for dim in self.dimensions:
            if not dim.lower < dim.upper:
                raise ValueError(f"dimension {dim.name}: lower must be < upper")
            if dim.integer and (dim.lower != int(dim.lower)
                                or dim.upper != int(dim.upper)):
                raise ValueError(f"dimension {dim.name}: integer bounds required")

    @property
    def d(self) -> int:
        return len(self.dimensions)

    def decode(self, unit_x: np.ndarray) -> dict[str, float]:
        """Map a unit-cube point to parameter values, rounding integer dims."""
        unit_x = np.clip(np.asarray(unit_x, dtype=np.float64), 0.0, 1.0)
        out = {}
        for dim, u in zip(self.dimensions, unit_x):
            v = dim.lower + u * (dim.upper - dim.lower)
            out[dim.name] = int(np.clip(round(v), dim.lower, dim.upper)) \
                if dim.integer else float(v)
        return out

    def latin_hypercube(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n stratified space-filling samples in the unit cube."""
        u = np.empty((n, self.d))
        for j in range(self.d):
            u[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
        return u


def tunable_search_space() -> SearchSpace:
    """The 13-dimensional detection-parameter space."""
    return SearchSpace(dimensions=tuple(
        Dimension(name=name, lower=lo, upper=hi, integer=is_int)
        for name, (lo, hi, is_int) in TUNABLE_RANGES.items()))


# --------------------------------------------------------------------------
# Gaussian process
# --------------------------------------------------------------------------

def kernel_se(x: np.ndarray, x2: np.ndarray, sigma_f2: float,
              lengthscales: np.ndarray) -> float:
    """Squared-exponential covariance between two points."""
    ell = np.asarray(lengthscales, dtype=np.float64)
    if np.any(ell <= 0):
        raise ValueError("lengthscales must be positive")
    diff = (np.asarray(x, dtype=np.float64) - np.asarray(x2, np.float64)) / ell
    return float(sigma_f2 * np.exp(-0.5 * np.dot(diff, diff)))


def _kernel_matrix(a: np.ndarray, b: np.ndarray, sigma_f2: float,
                   ell: np.ndarray) -> np.ndarray:
    sa = a / ell
    sb = b / ell
    sq = (np.sum(sa**2, axis=1)[:, None] + np.sum(sb**2, axis=1)[None, :]
          - 2.0 * sa @ sb.T)
    return sigma_f2 * np.exp(-0.5 * np.maximum(sq, 0.0))


@dataclass
class GPModel:
    """Fitted GP state over unit-cube inputs."""

    X: np.ndarray
    y: np.ndarray
    signal_variance: float
    length_scales: np.ndarray
    noise_variance: float
    _chol: np.ndarray = field(init=False, repr=False)
    _alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if len(self.X) != len(self.y) or len(self.y) < 1:
            raise ValueError("X and y must be non-empty and the same length")
        K = _kernel_matrix(self.X, self.X, self.signal_variance,
                           self.length_scales)
        K[np.diag_indices_from(K)] += self.noise_variance
        try:
            self._chol = np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "kernel matrix not positive definite") from exc
        self._alpha = cho_solve((self._chol, True), self.y)

    def posterior(self, x_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at one or many points."""
        xs = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
        k_star = _kernel_matrix(self.X, xs, self.signal_variance,
                                self.length_scales)
        mu = k_star.T @ self._alpha
        v = solve_triangular(self._chol, k_star, lower=True)
        var = self.signal_variance - np.sum(v * v, axis=0)
        if np.any(var < -1e-9):
            logger.warning("posterior variance clipped from %g", var.min())
        return mu, np.maximum(var, 0.0)

    def log_marginal_likelihood(self) -> float:
        n = len(self.y)
        return float(-0.5 * self.y @ self._alpha
                     - np.sum(np.log(np.diag(self._chol)))
                     - 0.5 * n * math.log(2.0 * math.pi))


def gp_posterior(model: GPModel, x_star: np.ndarray) -> tuple[float, float]:
    """Posterior (mean, variance) at a single point."""
    mu, var = model.posterior(x_star)
    return float(mu[0]), float(var[0])


def _lml_and_grad(log_theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                  sq_dists: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood and its gradient in log-parameters.

    log_theta = [log sigma_f2, log ell_1..d, log sigma_n2];
    sq_dists[k] holds pairwise (x_i[k] - x_j[k])^2.
    """
    n, d = X.shape
    sf2 = math.exp(log_theta[0])
    ell = np.exp(log_theta[1:d + 1])
    sn2 = math.exp(log_theta[d + 1])

    scaled = (sq_dists / ell[:, None, None] ** 2).sum(axis=0)
    E = np.exp(-0.5 * scaled)
    K = sf2 * E
    K[np.diag_indices_from(K)] += sn2
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(log_theta)
    alpha = cho_solve((L, True), y)
    lml = (-0.5 * y @ alpha - np.sum(np.log(np.diag(L)))
           - 0.5 * n * math.log(2.0 * math.pi))

    K_inv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - K_inv  # dLML/dK = W/2
    grad = np.empty_like(log_theta)
    grad[0] = 0.5 * np.sum(W * (sf2 * E))
    for k in range(d):
        dK = sf2 * E * (sq_dists[k] / ell[k] ** 2)
        grad[k + 1] = 0.5 * np.sum(W * dK)
    grad[d + 1] = 0.5 * np.trace(W) * sn2
    return -lml, -grad


def fit_hyperparameters(X: np.ndarray, y: np.ndarray,
                        seed: int | np.random.Generator = 0,
                        n_starts: int = 3) -> GPModel:
    """Maximize the log marginal likelihood by multi-start bounded search."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n, d = X.shape
    if n < 2:
        raise ValueError("hyperparameter fitting needs n >= 2 observations")
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)

    y_var = float(np.var(y))
    if y_var == 0.0:
        logger.warning("constant objective values: using default GP "
                       "hyperparameters at the signal-variance lower bound")
        return GPModel(X=X, y=y, signal_variance=SIGNAL_VAR_BOUNDS[0],
                       length_scales=np.ones(d), noise_variance=1e-4)

    sq_dists = np.stack([(X[:, k][:, None] - X[:, k][None, :]) ** 2
                         for k in range(d)])
    bounds = ([tuple(np.log(SIGNAL_VAR_BOUNDS))]
              + [tuple(np.log(LENGTHSCALE_BOUNDS))] * d
              + [tuple(np.log(NOISE_VAR_BOUNDS))])
    first = np.concatenate((
        [math.log(np.clip(y_var, *SIGNAL_VAR_BOUNDS))],
        np.full(d, math.log(0.3)),
        [math.log(1e-4)],
    ))
    starts = [first]
    for _ in range(n_starts - 1):
        starts.append(np.array([rng.uniform(lo, hi) for lo, hi in bounds]))

    best = None
    for x0 in starts:
        res = sopt.minimize(_lml_and_grad, x0, args=(X, y, sq_dists),
                            jac=True, method="L-BFGS-B", bounds=bounds)
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    return GPModel(X=X, y=y,
                   signal_variance=math.exp(theta[0]),
                   length_scales=np.exp(theta[1:d + 1]),
                   noise_variance=math.exp(theta[d + 1]))


# --------------------------------------------------------------------------
# Acquisition
# --------------------------------------------------------------------------

def expected_improvement(mu, sigma, f_min) -> np.ndarray | float:
    """Closed-form EI for minimization; handles sigma == 0 exactly."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    improvement = f_min - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, improvement / np.where(sigma > 0, sigma, 1.0), 0.0)
    ei = np.where(sigma > 0,
                  improvement * norm.cdf(z) + sigma * norm.pdf(z),
                  np.maximum(improvement, 0.0))
    return float(ei) if ei.ndim == 0 else ei


def propose_next(model: GPModel, space: SearchSpace,
                 rng: np.random.Generator, n_candidates: int = 10_000,
                 n_refine: int = 10) -> np.ndarray:
    """Argmax of EI: random multi-start plus local refinement.

    Evaluates EI on uniform candidates, then polishes the best few with a
    bounded local search.  Deterministic for a given rng state.
    """
    f_min = float(np.min(model.y))
    candidates = rng.uniform(size=(n_candidates, space.d))
    mu, var = model.posterior(candidates)
    ei = expected_improvement(mu, np.sqrt(var), f_min)
    order = np.argsort(-ei)[:n_refine]

    def neg_ei(x: np.ndarray) -> float:
        m, v = model.posterior(x)
        return -float(expected_improvement(m[0], math.sqrt(v[0]), f_min))

    best_x = candidates[order[0]]
    best_val = -ei[order[0]]
    for idx in order:
        res = sopt.minimize(neg_ei, candidates[idx], method="L-BFGS-B",
                            bounds=[(0.0, 1.0)] * space.d)
        if res.fun < best_val:
            best_val = res.fun
            best_x = res.x
    return np.clip(best_x, 0.0, 1.0)


# --------------------------------------------------------------------------
# Objective and optimization loop
# --------------------------------------------------------------------------

def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks of equal shape."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        logger.warning("IoU of two empty masks defined as 1.0")
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def detection_mask(img, params: ParameterSet) -> np.ndarray:
    """Union of all detected crystal masks (the IoU side of the pipeline)."""
    from .pipeline import detect_regions

    mask = np.zeros(img.pixels.shape, dtype=bool)
    for region in detect_regions(img, params):
        mask |= region.mask
    return mask


@dataclass(frozen=True)
class TrainingImage:
    """One annotated micrograph for objective evaluation."""

    name: str
    image: "object"        # imaging.GrayImage
    truth: np.ndarray      # (H, W) bool ground-truth mask


def objective(values: dict[str, float], training: list[TrainingImage],
              dspace_nm: float, pix_2_nm: float) -> float:
    """Negative mean IoU of the detection run against ground truth.

    A pipeline failure on an image scores that image as IoU 0 rather than
    aborting the evaluation.
    """
    try:
        params = ParameterSet(dspace_nm=dspace_nm, pix_2_nm=pix_2_nm, **values)
    except ValueError as exc:
        logger.error("invalid parameter decode %s: %s", values, exc)
        return 0.0
    scores = []
    for item in training:
        try:
            scores.append(iou(detection_mask(item.image, params), item.truth))
        except Exception as exc:
            logger.warning("pipeline failed on %s (%s); scoring IoU 0",
                           item.name, exc)
            scores.append(0.0)
    return -float(np.mean(scores))


@dataclass
class OptimizationTrace:
    """Per-evaluation record of a Bayesian optimization run."""

    space: SearchSpace
    unit_X: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    params: list[dict[str, float]] = field(default_factory=list)
    y: list[float] = field(default_factory=list)
    running_min: list[float] = field(default_factory=list)

    def append(self, unit_x: np.ndarray, decoded: dict[str, float],
               value: float) -> None:
        self.unit_X = (np.vstack([self.unit_X, unit_x])
                       if self.unit_X.size else unit_x[None, :])
        self.params.append(decoded)
        self.y.append(value)
        best = value if not self.running_min else min(self.running_min[-1], value)
        self.running_min.append(best)

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.y))

    @property
    def best_params(self) -> dict[str, float]:
        return self.params[self.best_index]

    @property
    def best_value(self) -> float:
        return float(self.y[self.best_index])


def optimize(space: SearchSpace, fn, budget: int = 200, n_init: int = 10,
             seed: int = 0, callback=None) -> OptimizationTrace:
    """Run the full BO loop: space-filling init, then fit/propose/evaluate.

    ``fn`` maps a decoded parameter dict to the objective value.  The loop
    stops when the evaluation budget is exhausted; the returned trace holds
    every evaluation plus the non-increasing running minimum.
    """
    if budget <= n_init:
        raise ValueError("budget must exceed n_init")
    rng = np.random.default_rng(seed)
    trace = OptimizationTrace(space=space)

    for unit_x in space.latin_hypercube(n_init, rng):
        decoded = space.decode(unit_x)
        trace.append(unit_x, decoded, float(fn(decoded)))
        if callback:
            callback(trace)

    while len(trace.y) < budget:
        y = np.array(trace.y)
        sd = float(y.std())
        y_fit = (y - y.mean()) / sd if sd > 0 else y - y.mean()
        model = fit_hyperparameters(trace.unit_X, y_fit, seed=rng)
        unit_x = propose_next(model, space, rng)
        decoded = space.decode(unit_x)
        trace.append(unit_x, decoded, float(fn(decoded)))
        if callback:
            callback(trace)
    return trace
