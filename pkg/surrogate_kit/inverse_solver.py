# inverse_solver.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""MAP parameter identification by projected Gauss-Newton, plus Laplace UQ.

Works against anything with value(p) and jacobian(p): the exact forward
models as well as a fitted surrogate.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Self

import numpy as np
import scipy.linalg

from surrogate_kit.convenience_types import Box, Evaluable, Point
from surrogate_kit.debug import debug_print
from surrogate_kit.errors import DomainViolation, InputError, SingularNormalMatrix
from surrogate_kit.parallel import fan_out

MAX_ITERATIONS = 100
ARMIJO_C = 1e-4
MAX_HALVINGS = 30
STEP_TOL = 1e-10
DECREASE_TOL = 1e-14
STATIONARITY_TOL = 1e-6


def _cholesky(matrix, what: str):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    try:
        return scipy.linalg.cho_factor(matrix, lower=True)
    except np.linalg.LinAlgError:
        raise InputError(f"{what} is not symmetric positive definite")


@dataclass(frozen=True, eq=False)
class InverseProblem:
    """Measurement, likelihood and prior of a parameter identification.

    prior_covariance None means an improper (flat) prior, Sigma_p^-1 = 0.
    """

    measurement: np.ndarray
    likelihood_covariance: np.ndarray
    domain: Box
    prior_covariance: np.ndarray | None = None
    prior_mean: np.ndarray | None = None
    _likelihood_factor: tuple = field(init=False, repr=False)
    _prior_precision: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        measurement = np.atleast_1d(np.asarray(self.measurement, dtype=float))
        covariance = np.atleast_2d(np.asarray(self.likelihood_covariance, dtype=float))
        object.__setattr__(self, "measurement", measurement)
        object.__setattr__(self, "likelihood_covariance", covariance)
        if covariance.shape != (len(measurement), len(measurement)):
            raise InputError("Likelihood covariance must be m x m")
        object.__setattr__(
            self, "_likelihood_factor", _cholesky(covariance, "Likelihood covariance")
        )
        d = self.domain.dim
        if self.prior_mean is None:
            object.__setattr__(self, "prior_mean", np.zeros(d))
        else:
            object.__setattr__(self, "prior_mean", np.asarray(self.prior_mean, dtype=float))
        if self.prior_covariance is None:
            precision = np.zeros((d, d))
        else:
            prior = np.atleast_2d(np.asarray(self.prior_covariance, dtype=float))
            precision = scipy.linalg.cho_solve(_cholesky(prior, "Prior covariance"), np.eye(d))
        object.__setattr__(self, "_prior_precision", precision)

    @property
    def improper(self) -> bool:
        return self.prior_covariance is None

    @property
    def prior_precision(self) -> np.ndarray:
        return self._prior_precision

    def likelihood_solve(self, rhs) -> np.ndarray:
        """Sigma_l^-1 rhs"""
        return scipy.linalg.cho_solve(self._likelihood_factor, rhs)

    def with_measurement(self, measurement) -> Self:
        return type(self)(
            measurement,
            self.likelihood_covariance,
            self.domain,
            self.prior_covariance,
            self.prior_mean,
        )


class ReconstructionResult(NamedTuple):
    p_map: np.ndarray
    objective: float
    iterations: int
    converged: bool
    stds: np.ndarray | None = None


def objective(prob: InverseProblem, model: Evaluable, p: Point) -> float:
    """Negative log posterior up to a constant."""
    p = np.asarray(p, dtype=float)
    residual = np.asarray(model.value(p), dtype=float) - prob.measurement
    offset = p - prob.prior_mean
    return float(
        0.5 * residual @ prob.likelihood_solve(residual)
        + 0.5 * offset @ prob.prior_precision @ offset
    )


def _normal_equations(prob: InverseProblem, model: Evaluable, p: np.ndarray):
    """Gauss-Newton matrix A and gradient g at p."""
    jacobian = np.atleast_2d(np.asarray(model.jacobian(p), dtype=float))
    residual = np.asarray(model.value(p), dtype=float) - prob.measurement
    weighted = prob.likelihood_solve(jacobian)
    matrix = jacobian.T @ weighted + prob.prior_precision
    gradient = weighted.T @ residual + prob.prior_precision @ (p - prob.prior_mean)
    return matrix, gradient


def _factor_normal_matrix(matrix: np.ndarray):
    eigenvalues = np.linalg.eigvalsh(matrix)
    if not eigenvalues[-1] > 0 or eigenvalues[0] <= 1e-14 * eigenvalues[-1]:
        raise SingularNormalMatrix(
            "Gauss-Newton matrix is singular (rank-deficient Jacobian, improper prior?)"
        )
    return scipy.linalg.cho_factor(matrix, lower=True)


def projected_gradient_norm(prob: InverseProblem, model: Evaluable, p: Point) -> float:
    p = np.asarray(p, dtype=float)
    _, gradient = _normal_equations(prob, model, p)
    return float(np.linalg.norm(prob.domain.clip(p - gradient) - p))


def gauss_newton_solve(
    prob: InverseProblem,
    model: Evaluable,
    p_init: Point,
    max_iterations: int = MAX_ITERATIONS,
) -> ReconstructionResult:
    """Projected Gauss-Newton with Armijo backtracking on the box.

    Returns the best iterate with converged = False when the iteration cap
    is hit.  Raises SingularNormalMatrix on a singular Gauss-Newton matrix.
    """
    p = np.asarray(p_init, dtype=float).copy()
    domain = prob.domain
    if not domain.contains(p, slack=1e-12 * max(domain.diagonal, 1.0)):
        raise DomainViolation("Gauss-Newton start outside the domain:", p)
    p = domain.clip(p)
    value = objective(prob, model, p)
    steps = 0
    converged = False

    for _ in range(max_iterations):
        matrix, gradient = _normal_equations(prob, model, p)
        direction = -scipy.linalg.cho_solve(_factor_normal_matrix(matrix), gradient)

        if np.linalg.norm(domain.clip(p + direction) - p) <= STEP_TOL * (1 + np.linalg.norm(p)):
            converged = True
            break

        length = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = domain.clip(p + length * direction)
            trial_value = objective(prob, model, trial)
            slope = gradient @ (trial - p)
            if slope < 0:
                accepted = trial_value <= value + ARMIJO_C * slope
            else:
                accepted = trial_value < value
            if accepted:
                break
            length *= 0.5
        else:
            # No acceptable step left: we're at the resolution of the objective
            converged = bool(projected_gradient_norm(prob, model, p) <= STATIONARITY_TOL)
            debug_print(3, f"Gauss-Newton line search exhausted after {steps} steps")
            break

        assert trial_value <= value, "Gauss-Newton step increased the objective"
        decrease = value - trial_value
        p, value = trial, trial_value
        steps += 1
        debug_print(3, f"Gauss-Newton step {steps}: objective {value:.6g}, length {length:g}")
        if decrease < DECREASE_TOL * (1 + abs(value)):
            converged = True
            break
    else:
        debug_print(1, f"Gauss-Newton hit the iteration cap ({max_iterations})")

    return ReconstructionResult(p, value, steps, converged)


def grid_starts(
    prob: InverseProblem, model: Evaluable, points_per_axis: int = 5, count: int = 5
) -> np.ndarray:
    """The best `count` nodes of a coarse grid on the objective, best first."""
    domain = prob.domain
    axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in zip(domain.lower, domain.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([axis.ravel() for axis in mesh])
    values = np.array([objective(prob, model, node) for node in nodes])
    order = np.argsort(values, kind="stable")
    return nodes[order[:count]]


def gauss_newton_multistart(
    prob: InverseProblem, model: Evaluable, starts, workers: int = 1
) -> ReconstructionResult:
    """Solve from every start, keep the best converged result.

    Raises the last SingularNormalMatrix if every start failed.
    """

    def solve(start):
        try:
            return gauss_newton_solve(prob, model, start)
        except SingularNormalMatrix as error:
            debug_print(2, f"Start {start} failed: {error}")
            return error

    results = fan_out(solve, list(np.atleast_2d(starts)), workers)
    solved = [result for result in results if isinstance(result, ReconstructionResult)]
    if not solved:
        raise results[-1]
    # Converged first, then lowest objective; ties keep the earlier start
    return min(solved, key=lambda result: (not result.converged, result.objective))


def laplace_covariance(prob: InverseProblem, model, p_map: Point) -> np.ndarray:
    """Marginal posterior stds at the MAP point (Laplace approximation).

    The surrogate's predictive variance is added to the likelihood
    covariance; models without one count as exact.
    """
    p_map = np.asarray(p_map, dtype=float)
    jacobian = np.atleast_2d(np.asarray(model.jacobian(p_map), dtype=float))
    covariance = prob.likelihood_covariance.copy()
    predictive_variance = getattr(model, "predictive_variance", None)
    if predictive_variance is not None:
        covariance += np.diag(np.asarray(predictive_variance(p_map), dtype=float))
    weighted = scipy.linalg.cho_solve(_cholesky(covariance, "Total covariance"), jacobian)
    matrix = jacobian.T @ weighted + prob.prior_precision
    posterior = scipy.linalg.cho_solve(_factor_normal_matrix(matrix), np.eye(len(p_map)))
    return np.sqrt(np.maximum(np.diag(posterior), 0.0))
