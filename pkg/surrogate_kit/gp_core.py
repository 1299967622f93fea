# gp_core.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Heteroscedastic simple-kriging Gaussian process.

Each training point carries its own noise variance eps_i**2, taken from the
tolerance the simulation was run at.  All output components share one design
and one set of hyperparameters, so they also share one Cholesky factor.

Contains:
Hyperparameters, HyperparameterBounds, HyperparameterFit
Design, TrainingData
GPPosterior, SurrogateModel
kernel_eval, kernel_matrix
fit, predict, predict_gradient
nlml, optimize_hyperparameters
default_bounds, default_hyperparameters
"""

from dataclasses import dataclass
from typing import NamedTuple, Self

import numpy as np
import scipy.linalg
from scipy.optimize import minimize
from scipy.spatial.distance import cdist, pdist
from scipy.stats import qmc

from surrogate_kit.convenience_types import Box, Point, PointArray
from surrogate_kit.debug import debug_print
from surrogate_kit.errors import DomainViolation, FactorizationFailure, InputError

# Jitter on the kriging matrix, relative to the signal variance.
# Escalated by factors of 10 from the first to the last.
JITTER_EXPONENTS = range(-10, -5)

# Minimum point separation, relative to the domain diagonal
SEPARATION_FACTOR = 1e-4

# Projected gradient stationarity for the hyperparameter search (log space)
STATIONARITY_TOL = 1e-6

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    """Squared-exponential kernel hyperparameters with their box.

    The kernel metric is L = diag(l_1**2, ..., l_d**2).
    lower/upper bound the vector [signal_variance, l_1, ..., l_d].
    If no box is given, the box collapses onto the values (i.e. fixed).
    """

    signal_variance: float
    lengthscales: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self) -> None:
        lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", lengthscales)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        vector = self.as_vector()
        lower = vector if self.lower is None else np.asarray(self.lower, dtype=float)
        upper = vector if self.upper is None else np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if not np.all(vector > 0) or not np.all(lower > 0):
            raise InputError("Hyperparameters must be strictly positive:", vector)
        if lower.shape != vector.shape or upper.shape != vector.shape:
            raise InputError("Hyperparameter bounds have the wrong shape")
        # Allow for round-off from exp(log(x))
        slack = 1e-12 * np.abs(vector)
        if np.any(vector < lower - slack) or np.any(vector > upper + slack):
            raise InputError("Hyperparameters outside their box:", vector)

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def as_vector(self) -> np.ndarray:
        """[signal_variance, l_1, ..., l_d]"""
        return np.concatenate([[self.signal_variance], self.lengthscales])

    @classmethod
    def from_vector(cls, vector, lower=None, upper=None) -> Self:
        vector = np.asarray(vector, dtype=float)
        if lower is not None and upper is not None:
            vector = np.clip(vector, lower, upper)
        return cls(vector[0], vector[1:], lower, upper)

    def with_bounds(self, bounds: "HyperparameterBounds") -> Self:
        """Same values (clipped into the box), new box."""
        return type(self).from_vector(self.as_vector(), bounds.lower, bounds.upper)


class HyperparameterBounds(NamedTuple):
    """Box for [signal_variance, l_1, ..., l_d]."""

    lower: np.ndarray
    upper: np.ndarray


class HyperparameterFit(NamedTuple):
    """Result of the marginal likelihood search."""

    hyperparameters: Hyperparameters
    value: float
    converged: bool


@dataclass(frozen=True, eq=False)
class Design:
    """Evaluation points with per-point tolerances in a domain box.

    Points are append-only across refinements: a refined design keeps the
    original points, in order, as its first rows.

    The constructor doesn't check point separation.  extended() does, and runs
    check their initial design with check_separation().
    """

    points: np.ndarray
    tolerances: np.ndarray
    domain: Box

    def __post_init__(self) -> None:
        dim = self.domain.dim
        points = np.asarray(self.points, dtype=float).reshape(-1, dim)
        tolerances = np.asarray(self.tolerances, dtype=float).ravel()
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "tolerances", tolerances)
        if len(points) != len(tolerances):
            raise InputError("Design needs one tolerance per point")
        if not np.all(np.isfinite(tolerances)) or not np.all(tolerances > 0):
            raise InputError("Tolerances must be finite and positive:", tolerances)
        slack = 1e-12 * max(self.domain.diagonal, 1.0)
        for point in points:
            if not self.domain.contains(point, slack=slack):
                raise DomainViolation("Design point outside the domain:", point)

    @classmethod
    def empty(cls, domain: Box) -> Self:
        return cls(np.zeros((0, domain.dim)), np.zeros(0), domain)

    @property
    def size(self) -> int:
        return len(self.tolerances)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def min_separation(self) -> float:
        """Points closer than this count as 'too close to each other'."""
        return SEPARATION_FACTOR * self.domain.diagonal

    @property
    def precisions(self) -> np.ndarray:
        """v = eps**-2 per point."""
        return self.tolerances**-2

    def check_separation(self) -> None:
        """Raise InputError if two points are closer than min_separation."""
        if self.size >= 2 and pdist(self.points).min() < self.min_separation:
            raise InputError("Design points too close to each other")

    def refines(self, other: "Design") -> bool:
        """True if self <= other: same leading points, no tolerance increased."""
        if self.size < other.size:
            return False
        head = self.points[: other.size]
        if not np.array_equal(head, other.points):
            return False
        return bool(np.all(self.tolerances[: other.size] <= other.tolerances))

    def extended(self, points: PointArray, tolerances) -> Self:
        """Append points with their tolerances.

        Raises InputError if the result has points too close to each other.
        """
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        design = type(self)(
            np.vstack([self.points, points]),
            np.concatenate([self.tolerances, np.asarray(tolerances, dtype=float)]),
            self.domain,
        )
        design.check_separation()
        return design

    def with_tolerances(self, tolerances) -> Self:
        return type(self)(self.points.copy(), tolerances, self.domain)


@dataclass(frozen=True, eq=False)
class TrainingData:
    """A design plus the simulated values, one row per point."""

    design: Design
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(self.design.size, -1)
        object.__setattr__(self, "values", values)
        if values.shape[0] != self.design.size:
            raise InputError("Training data needs one row of values per point")
        if not np.all(np.isfinite(values)):
            raise InputError("Training values must be finite")

    @property
    def output_dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def empty(cls, domain: Box, output_dim: int) -> Self:
        return cls(Design.empty(domain), np.zeros((0, output_dim)))


def kernel_eval(p: Point, q: Point, h: Hyperparameters) -> float:
    """Squared-exponential covariance between two points."""
    scaled = (np.asarray(p, dtype=float) - np.asarray(q, dtype=float)) / h.lengthscales
    return float(h.signal_variance * np.exp(-0.5 * scaled @ scaled))


def kernel_matrix(X: PointArray, Y: PointArray, h: Hyperparameters) -> np.ndarray:
    """Covariance block k(X, Y), shape (len(X), len(Y))."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0 or Y.shape[0] == 0:
        return np.zeros((X.shape[0], Y.shape[0]))
    squared = cdist(X / h.lengthscales, Y / h.lengthscales, "sqeuclidean")
    return h.signal_variance * np.exp(-0.5 * squared)


def _factorize(matrix: np.ndarray, signal_variance: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of matrix + jitter*I, escalating the jitter.

    Returns (factor, jitter).
    """
    identity = np.eye(len(matrix))
    for exponent in JITTER_EXPONENTS:
        jitter = 10.0**exponent * signal_variance
        try:
            factor = scipy.linalg.cholesky(matrix + jitter * identity, lower=True)
        except (np.linalg.LinAlgError, ValueError):
            debug_print(3, f"Cholesky failed with jitter {jitter:g}, escalating")
            continue
        return factor, jitter
    raise FactorizationFailure(
        "Kriging matrix not SPD even with maximum jitter; duplicate points or bad tolerances?"
    )


def _as_point_array(points, dim: int) -> tuple[np.ndarray, bool]:
    """Accept one point (d,) or a stack (N, d); report which one it was."""
    points = np.asarray(points, dtype=float)
    single = points.ndim == 1
    return points.reshape(-1, dim), single


@dataclass(frozen=True, eq=False)
class GPPosterior:
    """Fitted posterior of one output component.

    The Cholesky factor of (K + E + jitter*I) is shared by all components.
    """

    hyperparameters: Hyperparameters
    points: np.ndarray
    cholesky: np.ndarray
    alpha: np.ndarray
    jitter: float


class SurrogateModel:
    """m fitted GP posteriors on one training set.

    Immutable after construction, so it's safe to predict from several
    workers at once.
    """

    def __init__(
        self,
        data: TrainingData,
        hyperparameters: Hyperparameters,
        posteriors: tuple[GPPosterior, ...],
    ) -> None:
        self.data = data
        self.hyperparameters = hyperparameters
        self.posteriors = posteriors
        assert len(posteriors) == data.output_dim
        self._points = data.design.points
        self._cholesky = posteriors[0].cholesky
        self._alpha = np.column_stack([post.alpha for post in posteriors])

    @property
    def design(self) -> Design:
        return self.data.design

    @property
    def dim(self) -> int:
        return self.data.design.dim

    @property
    def output_dim(self) -> int:
        return self.data.output_dim

    @property
    def jitter(self) -> float:
        return self.posteriors[0].jitter

    def _cross_covariance(self, P: np.ndarray) -> np.ndarray:
        return kernel_matrix(P, self._points, self.hyperparameters)

    def predict_mean_variance(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Batched prediction: means (N, m) and the shared variance (N,)."""
        P, _ = _as_point_array(points, self.dim)
        Kx = self._cross_covariance(P)
        mean = Kx @ self._alpha
        variance = np.full(len(P), self.hyperparameters.signal_variance)
        if self.design.size > 0:
            V = scipy.linalg.solve_triangular(self._cholesky, Kx.T, lower=True)
            variance = variance - np.sum(V**2, axis=0)
        # Round-off can make it slightly negative
        return mean, np.maximum(variance, 0.0)

    def predict(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation per component.

        One point gives vectors of shape (m,); a stack gives (N, m).
        """
        _, single = _as_point_array(points, self.dim)
        mean, variance = self.predict_mean_variance(points)
        std = np.repeat(np.sqrt(variance)[:, None], self.output_dim, axis=1)
        if single:
            return mean[0], std[0]
        return mean, std

    def predict_gradient(self, points) -> np.ndarray:
        """Jacobian of the posterior mean, (m, d) per point."""
        P, single = _as_point_array(points, self.dim)
        Kx = self._cross_covariance(P)
        # dk(p, p_i)/dp = -L^-1 (p - p_i) k(p, p_i)
        diff = P[:, None, :] - self._points[None, :, :]
        dK = -(diff / self.hyperparameters.lengthscales**2) * Kx[:, :, None]
        jacobians = np.einsum("nid,im->nmd", dK, self._alpha)
        if single:
            return jacobians[0]
        return jacobians

    def predictive_variance(self, p: Point) -> np.ndarray:
        """Variance per component at one point, shape (m,)."""
        variance = self.predict_mean_variance(p)[1][0]
        return np.full(self.output_dim, variance)

    # The Evaluable interface, for the inverse solver
    def value(self, p: Point) -> np.ndarray:
        return self.predict_mean_variance(p)[0][0]

    def jacobian(self, p: Point) -> np.ndarray:
        return self.predict_gradient(np.asarray(p, dtype=float).ravel())


def fit(data: TrainingData, h: Hyperparameters) -> SurrogateModel:
    """Condition the GP on the training data with per-point noise eps_i**2."""
    design = data.design
    n, m = design.size, data.output_dim
    if n == 0:
        posterior = GPPosterior(h, design.points, np.zeros((0, 0)), np.zeros(0), 0.0)
        return SurrogateModel(data, h, tuple(posterior for _ in range(m)))

    matrix = kernel_matrix(design.points, design.points, h)
    matrix[np.diag_indices(n)] += design.tolerances**2
    cholesky, jitter = _factorize(matrix, h.signal_variance)
    alphas = scipy.linalg.cho_solve((cholesky, True), data.values)
    posteriors = tuple(
        GPPosterior(h, design.points, cholesky, alphas[:, j], jitter) for j in range(m)
    )
    debug_print(3, f"Fitted GP on {n} points with jitter {jitter:g}")
    return SurrogateModel(data, h, posteriors)


def predict(model: SurrogateModel, p) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard deviation vectors at p."""
    return model.predict(p)


def predict_gradient(model: SurrogateModel, p) -> np.ndarray:
    """Jacobian (m, d) of the predictive mean at p."""
    return model.predict_gradient(p)


def nlml(data: TrainingData, h: Hyperparameters) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood, summed over components, and its gradient.

    The gradient is with respect to [signal_variance, l_1, ..., l_d] and
    differentiates log N(y | 0, K + E), noise included.
    """
    X, Y = data.design.points, data.values
    n, m = Y.shape
    if n == 0:
        return 0.0, np.zeros(h.dim + 1)

    Kbar = kernel_matrix(X, X, h)
    matrix = Kbar.copy()
    matrix[np.diag_indices(n)] += data.design.tolerances**2
    cholesky, jitter = _factorize(matrix, h.signal_variance)
    alpha = scipy.linalg.cho_solve((cholesky, True), Y)

    log_det = 2.0 * np.sum(np.log(np.diag(cholesky)))
    value = 0.5 * np.sum(Y * alpha) + m * (0.5 * log_det + 0.5 * n * LOG_2PI)

    # d nlml / dh = 1/2 tr((m C^-1 - alpha alpha^T) dC/dh)
    inner = m * scipy.linalg.cho_solve((cholesky, True), np.eye(n)) - alpha @ alpha.T
    gradient = np.empty(h.dim + 1)
    # The jitter scales with the signal variance too
    dC_dsf2 = Kbar / h.signal_variance + (jitter / h.signal_variance) * np.eye(n)
    gradient[0] = 0.5 * np.sum(inner * dC_dsf2)
    for k, lengthscale in enumerate(h.lengthscales):
        squared_diff = (X[:, k, None] - X[None, :, k]) ** 2
        gradient[k + 1] = 0.5 * np.sum(inner * Kbar * squared_diff / lengthscale**3)
    return float(value), gradient


def default_bounds(data: TrainingData) -> HyperparameterBounds:
    """Box scaled to the data: sf2 in [1e-4, 1e4]*var(y), l_i in [1e-2, 1e1]*width_i."""
    variance = float(np.var(data.values)) if data.values.size > 1 else 0.0
    if not variance > 0:
        variance = 1.0
    widths = data.design.domain.widths
    lower = np.concatenate([[1e-4 * variance], 1e-2 * widths])
    upper = np.concatenate([[1e4 * variance], 1e1 * widths])
    return HyperparameterBounds(lower, upper)


def default_hyperparameters(
    data: TrainingData, bounds: HyperparameterBounds | None = None
) -> Hyperparameters:
    """Reasonable starting point inside the box."""
    bounds = bounds or default_bounds(data)
    mean_square = float(np.mean(data.values**2)) if data.values.size else 1.0
    if not mean_square > 0:
        mean_square = 1.0
    vector = np.concatenate([[mean_square], 0.3 * data.design.domain.widths])
    return Hyperparameters.from_vector(vector, bounds.lower, bounds.upper)


def _projected_gradient_norm(theta, gradient, lower, upper) -> float:
    return float(np.linalg.norm(np.clip(theta - gradient, lower, upper) - theta))


def optimize_hyperparameters(
    data: TrainingData,
    bounds: HyperparameterBounds,
    init: Hyperparameters,
    *,
    restarts: int = 5,
    max_iterations: int = 200,
) -> HyperparameterFit:
    """Minimize the NLML over the box, in log space, with scattered restarts.

    The first start is init itself, followed by `restarts` Halton points in the
    log box, so restarts=5 means six local searches.  The returned value is
    never worse than init.
    Non-convergence is reported in the result, not raised.
    """
    lower, upper = np.asarray(bounds.lower, float), np.asarray(bounds.upper, float)
    init = Hyperparameters.from_vector(init.as_vector(), lower, upper)
    init_value, init_gradient = nlml(data, init)

    if np.all(lower == upper):
        return HyperparameterFit(init, init_value, True)

    log_lower, log_upper = np.log(lower), np.log(upper)

    def objective(theta):
        vector = np.exp(theta)
        value, gradient = nlml(data, Hyperparameters.from_vector(vector, lower, upper))
        # Chain rule through the log transform
        return value, gradient * vector

    theta0 = np.log(init.as_vector())
    if (
        _projected_gradient_norm(theta0, init_gradient * init.as_vector(), log_lower, log_upper)
        <= STATIONARITY_TOL
    ):
        debug_print(3, "Hyperparameters already stationary")
        return HyperparameterFit(init, init_value, True)

    starts = [theta0]
    if restarts > 0:
        # Deterministic scatter over the log box; skip the corner point 0
        halton = qmc.Halton(d=len(theta0), scramble=False)
        halton.fast_forward(1)
        starts.extend(log_lower + halton.random(restarts) * (log_upper - log_lower))

    best_theta, best_value = theta0, init_value
    for start in starts:
        try:
            result = minimize(
                objective,
                start,
                jac=True,
                method="L-BFGS-B",
                bounds=list(zip(log_lower, log_upper)),
                options={"maxiter": max_iterations, "gtol": 1e-9},
            )
        except FactorizationFailure:
            debug_print(2, "Hyperparameter restart hit a factorization failure, skipping")
            continue
        # Ties go to the earlier start
        if np.isfinite(result.fun) and result.fun < best_value - 1e-12 * (1 + abs(best_value)):
            best_theta, best_value = np.clip(result.x, log_lower, log_upper), float(result.fun)

    best = Hyperparameters.from_vector(np.exp(best_theta), lower, upper)
    value, gradient = nlml(data, best)
    stationarity = _projected_gradient_norm(
        best_theta, gradient * best.as_vector(), log_lower, log_upper
    )
    converged = stationarity <= STATIONARITY_TOL
    if not converged:
        debug_print(
            2, f"Hyperparameter search stopped short (projected gradient {stationarity:.3g})"
        )
    return HyperparameterFit(best, value, converged)
