# error_model.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Goal-oriented error model.

Estimates how much the surrogate's own uncertainty spoils a later parameter
reconstruction, pointwise and integrated over the domain, and how that
integrated error responds to evaluation precisions v = eps**-2.

Contains:
ErrorModelConfig, BoundConstants
transport_weight, surrogate_epsilon, epsilon_from_std, local_error_density
radius_bound, unavoidable_error
integration_nodes, NodeTable, global_error
AccuracyObjective, global_error_gradient
parameter_error_bound_check
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
import scipy.linalg

from surrogate_kit.convenience_types import Box, Point, PointArray
from surrogate_kit.debug import debug_print
from surrogate_kit.errors import InputError, InvalidRegime, SingularTransport
from surrogate_kit.gp_core import SurrogateModel, kernel_matrix
from surrogate_kit.parallel import fan_out

epsilon_modes = ["trace", "chi-median"]
weight_modes = ["transport", "bound"]
integration_kinds = ["grid", "monte-carlo"]

# Relative regularization of the transport factor when none is configured
RELATIVE_REGULARIZATION = 1e-8

# Nodes per task when the node table is fanned out
NODE_CHUNK = 2048


@dataclass(frozen=True)
class BoundConstants:
    """Constants of the local parameter error bound.

    c1 bounds the model Jacobian, c2 its second derivative, and l_min is the
    smallest eigenvalue of the Gauss-Newton matrix at the minimizer.
    """

    c1: float
    c2: float
    l_min: float

    def __post_init__(self) -> None:
        if not (self.c1 > 0 and self.c2 > 0 and self.l_min > 0):
            raise InputError("Bound constants must be positive:", self)


@dataclass(frozen=True)
class ErrorModelConfig:
    q: float = 2.0
    alpha: float = 0.0
    beta: float = 0.0
    # None means relative: 1e-8 * ||f'^T S^-1 f'||_2 per point
    regularization: float | None = None
    epsilon_mode: str = "trace"
    weight_mode: str = "transport"
    integration: str = "grid"
    grid_points: int = 25
    mc_points: int = 10000
    mc_seed: int = 0
    bound_constants: BoundConstants | None = None

    def __post_init__(self) -> None:
        if self.q < 2:
            raise InputError("Norm exponent q must be >= 2")
        if self.alpha < 0 or self.beta < 0:
            raise InputError("alpha and beta must be nonnegative")
        if self.regularization is not None and self.regularization < 0:
            raise InputError("Transport regularization must be nonnegative")
        if self.epsilon_mode not in epsilon_modes:
            raise InputError(f"Unknown epsilon mode {self.epsilon_mode!r}")
        if self.weight_mode not in weight_modes:
            raise InputError(f"Unknown weight mode {self.weight_mode!r}")
        if self.integration not in integration_kinds:
            raise InputError(f"Unknown integration kind {self.integration!r}")
        if self.grid_points < 1 or self.mc_points < 1:
            raise InputError("Need at least one integration node")
        if self.weight_mode == "bound" and self.bound_constants is None:
            raise InputError("Weight mode 'bound' needs bound_constants")


def _spd_inverse(matrix) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    factor = scipy.linalg.cho_factor(matrix)
    return scipy.linalg.cho_solve(factor, np.eye(len(matrix)))


def _transport_weights(
    jacobians: np.ndarray, likelihood_precision: np.ndarray, regularization: float | None
) -> np.ndarray:
    """||(f'^T S^-1 f' + lambda I)^-1 f'^T S^-1||_2 for a stack of Jacobians (N, m, d)."""
    N, _, d = jacobians.shape
    weighted = np.einsum("ij,njk->nik", likelihood_precision, jacobians)  # S^-1 f'
    normal = np.einsum("nji,njk->nik", jacobians, weighted)  # f'^T S^-1 f'
    rhs = np.transpose(weighted, (0, 2, 1))  # f'^T S^-1
    if regularization is None:
        scale = np.linalg.norm(normal, ord=2, axis=(1, 2))
        lam = np.maximum(RELATIVE_REGULARIZATION * scale, np.finfo(float).tiny)
    else:
        lam = np.full(N, float(regularization))
        if regularization == 0:
            singular = np.linalg.svd(normal, compute_uv=False)
            # Also catches an all-zero Jacobian
            if np.any(singular[:, -1] <= d * np.finfo(float).eps * singular[:, 0]):
                raise SingularTransport(
                    "f'^T S^-1 f' is singular; use a positive regularization"
                )
    regularized = normal + lam[:, None, None] * np.eye(d)
    solved = np.linalg.solve(regularized, rhs)
    return np.linalg.norm(solved, ord=2, axis=(1, 2))


def transport_weight(model, sigma_l, regularization: float | None, p: Point) -> float:
    """Error transport factor w~(p) from the surrogate's predicted Jacobian."""
    jacobian = np.asarray(model.jacobian(p), dtype=float)
    return float(_transport_weights(jacobian[None], _spd_inverse(sigma_l), regularization)[0])


def _chi_median_constant(m: int) -> float:
    return float(np.sqrt(m * (1.0 - 2.0 / (9.0 * m)) ** 3))


def epsilon_from_std(std, mode: str = "trace", q: float = 2.0) -> float:
    """Aggregate per-component standard deviations into one epsilon.

    trace:      eps**q = sum_j sigma_j**q
    chi-median: eps = sqrt(m (1 - 2/(9m))**3) ||sigma||_2
    """
    std = np.atleast_1d(np.asarray(std, dtype=float))
    match mode:
        case "trace":
            return float(np.sum(std**q) ** (1.0 / q))
        case "chi-median":
            return _chi_median_constant(len(std)) * float(np.linalg.norm(std))
    raise InputError(f"Unknown epsilon mode {mode!r}")


def surrogate_epsilon(model: SurrogateModel, p: Point, mode: str = "trace", q: float = 2.0) -> float:
    """Representative surrogate error eps(p) from the predictive std."""
    _, std = model.predict(np.asarray(p, dtype=float).ravel())
    return epsilon_from_std(std, mode, q)


def local_error_density(model: SurrogateModel, sigma_l, cfg: ErrorModelConfig, p: Point) -> float:
    """Acquisition function g(p) = w~(p) eps(p), eps in trace mode with q = 2."""
    weight = transport_weight(model, sigma_l, cfg.regularization, p)
    return weight * surrogate_epsilon(model, p, "trace", 2.0)


def radius_bound(
    eps: float,
    eps_prime: float,
    consts: BoundConstants,
    sigma_l,
    exact: bool = False,
) -> float:
    """Radius R of the ball guaranteed to contain the surrogate minimizer.

    The simplified (default) form is linear in eps and eps_prime.
    """
    precision_norm = float(np.linalg.norm(_spd_inverse(sigma_l), ord=2))
    if not exact:
        return 12.0 * precision_norm * consts.c1 * eps / consts.l_min + eps_prime / consts.c2
    denominator = consts.l_min - 3.0 * precision_norm * consts.c1 * eps_prime
    if denominator <= 0:
        raise InvalidRegime(f"Radius bound denominator {denominator:g} is not positive")
    numerator = (
        3.0 * precision_norm * (eps_prime + consts.c1) * eps + consts.l_min * eps_prime / consts.c2
    )
    return numerator / denominator


def unavoidable_error(consts: BoundConstants, sigma_l) -> float:
    """e0: parameter error caused by measurement noise alone."""
    sigma_l = np.atleast_2d(np.asarray(sigma_l, dtype=float))
    precision_norm = float(np.linalg.norm(_spd_inverse(sigma_l), ord=2))
    return 3.0 * consts.c1 / consts.l_min * precision_norm * float(
        np.sqrt(np.linalg.norm(sigma_l, ord=2))
    )


def _bound_weight(cfg: ErrorModelConfig, sigma_l) -> float:
    consts = cfg.bound_constants
    assert consts is not None
    precision_norm = float(np.linalg.norm(_spd_inverse(sigma_l), ord=2))
    e0 = unavoidable_error(consts, sigma_l)
    return (12.0 * precision_norm * consts.c1 / consts.l_min + cfg.beta / consts.c2) / (
        1.0 + cfg.alpha * e0
    )


def epsilon_factor(mode: str, q: float, m: int) -> float:
    """kappa with eps(p)**q = kappa * (sigma**2)**(q/2) when all components share sigma."""
    match mode:
        case "trace":
            return float(m)
        case "chi-median":
            return float((_chi_median_constant(m) ** 2 * m) ** (q / 2.0))
    raise InputError(f"Unknown epsilon mode {mode!r}")


def integration_nodes(domain: Box, cfg: ErrorModelConfig) -> np.ndarray:
    """Equidistant grid (endpoints included) or seeded uniform Monte Carlo nodes."""
    match cfg.integration:
        case "grid":
            axes = [
                np.linspace(lo, hi, cfg.grid_points) for lo, hi in zip(domain.lower, domain.upper)
            ]
            mesh = np.meshgrid(*axes, indexing="ij")
            return np.column_stack([axis.ravel() for axis in mesh])
        case "monte-carlo":
            rng = np.random.default_rng(cfg.mc_seed)
            return domain.scale(rng.random((cfg.mc_points, domain.dim)))
    raise InputError(f"Unknown integration kind {cfg.integration!r}")


@dataclass(frozen=True, eq=False)
class NodeTable:
    """Error model evaluated on the integration nodes of one fitted surrogate.

    The weights are frozen here; only the variance responds to v afterwards.
    """

    nodes: np.ndarray
    transport: np.ndarray  # w~ per node
    weights: np.ndarray  # w per node (relative weighting or bound mode applied)
    variance: np.ndarray  # shared predictive variance per node
    q: float
    kappa: float
    quadrature_weight: float  # vol / N
    output_dim: int
    epsilon_mode: str = "trace"
    integrand: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        epsilon_q = self.kappa * self.variance ** (self.q / 2.0)
        object.__setattr__(self, "integrand", self.weights**self.q * epsilon_q)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def epsilon(self) -> np.ndarray:
        """eps(p) per node in the configured mode."""
        return (self.kappa * self.variance ** (self.q / 2.0)) ** (1.0 / self.q)

    @property
    def density(self) -> np.ndarray:
        """Acquisition g(p) = w~(p) * sqrt(tr sigma(p)**2) per node."""
        return self.transport * np.sqrt(self.output_dim * self.variance)

    def objective(self) -> float:
        """E~ = E**q, the Monte Carlo estimate of the integral."""
        return float(self.quadrature_weight * np.sum(self.integrand))

    def global_error(self) -> float:
        return self.objective() ** (1.0 / self.q)

    def to_frame(self) -> pd.DataFrame:
        """The local error map, for plotting."""
        columns = {f"p{i + 1}": self.nodes[:, i] for i in range(self.nodes.shape[1])}
        columns |= {
            "transport_weight": self.transport,
            "weight": self.weights,
            "epsilon": self.epsilon,
            "density": self.density,
        }
        return pd.DataFrame(columns)


def _node_chunk(model: SurrogateModel, likelihood_precision, regularization, nodes):
    _, variance = model.predict_mean_variance(nodes)
    jacobians = model.predict_gradient(nodes).reshape(len(nodes), model.output_dim, model.dim)
    return variance, _transport_weights(jacobians, likelihood_precision, regularization)


def global_error(
    model: SurrogateModel,
    sigma_l,
    cfg: ErrorModelConfig,
    nodes: PointArray | None = None,
    workers: int = 1,
) -> tuple[float, NodeTable]:
    """Global error E over the integration nodes, plus the node table."""
    domain = model.design.domain
    if nodes is None:
        nodes = integration_nodes(domain, cfg)
    sigma_l = np.atleast_2d(np.asarray(sigma_l, dtype=float))
    likelihood_precision = _spd_inverse(sigma_l)

    chunks = [nodes[i : i + NODE_CHUNK] for i in range(0, len(nodes), NODE_CHUNK)]
    results = fan_out(
        lambda chunk: _node_chunk(model, likelihood_precision, cfg.regularization, chunk),
        chunks,
        workers,
    )
    variance = np.concatenate([variance for variance, _ in results])
    transport = np.concatenate([weights for _, weights in results])

    match cfg.weight_mode:
        case "transport":
            # Data-driven unavoidable error estimate for the relative part
            e0 = transport * np.sqrt(np.linalg.norm(sigma_l, ord=2))
            weights = transport / (1.0 + cfg.alpha * e0)
        case "bound":
            weights = np.full(len(nodes), _bound_weight(cfg, sigma_l))
        case _:
            raise InputError(f"Unknown weight mode {cfg.weight_mode!r}")

    table = NodeTable(
        nodes=np.asarray(nodes, dtype=float),
        transport=transport,
        weights=weights,
        variance=variance,
        q=cfg.q,
        kappa=epsilon_factor(cfg.epsilon_mode, cfg.q, model.output_dim),
        quadrature_weight=domain.volume / len(nodes),
        output_dim=model.output_dim,
        epsilon_mode=cfg.epsilon_mode,
    )
    error = table.global_error()
    debug_print(3, f"Global error {error:.6g} over {table.size} nodes")
    return error, table


class ObjectiveDerivatives(NamedTuple):
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


class AccuracyObjective:
    """E~(v) for the existing design points plus a set of candidates.

    Holds the frozen node weights and the kernel blocks; v are precisions
    eps**-2, with v = 0 meaning "not evaluated".  The variance at node p is

        sigma**2(p) = k_pp - (U k_p)^T (I + U K U)^-1 (U k_p),  U = diag(sqrt(v))

    which stays well defined at v_i = 0.
    """

    def __init__(
        self,
        table: NodeTable,
        model: SurrogateModel,
        candidates: PointArray | None = None,
    ) -> None:
        self.table = table
        self.model = model
        design = model.design
        if candidates is None:
            candidates = np.zeros((0, design.dim))
        candidates = np.asarray(candidates, dtype=float).reshape(-1, design.dim)
        self.points = np.vstack([design.points, candidates])
        self.lower = np.concatenate([design.precisions, np.zeros(len(candidates))])
        h = model.hyperparameters
        self._prior_variance = h.signal_variance
        # Same jitter as the fitted model, so E~(lower) reproduces the table
        self._gram = kernel_matrix(self.points, self.points, h)
        self._gram[np.diag_indices(len(self.points))] += model.jitter
        self._cross = kernel_matrix(table.nodes, self.points, h)
        self._scale = table.quadrature_weight * table.kappa * table.weights**table.q

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def existing(self) -> int:
        return self.model.design.size

    def _posterior(self, v, hessian: bool):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,) or np.any(v < 0):
            raise InputError("Precisions must be nonnegative, one per point")
        u = np.sqrt(v)
        inner = np.eye(self.size) + u[:, None] * self._gram * u[None, :]
        factor = scipy.linalg.cho_factor(inner, lower=True)
        scaled_cross = u[:, None] * self._cross.T  # U k_p, (n, N)
        solved = scipy.linalg.cho_solve(factor, scaled_cross)
        variance = np.maximum(
            self._prior_variance - np.sum(scaled_cross * solved, axis=0), 0.0
        )
        # Posterior covariance between each node and each point
        covariance = self._cross - (solved.T * u[None, :]) @ self._gram
        point_covariance = None
        if hessian:
            solved_gram = scipy.linalg.cho_solve(factor, u[:, None] * self._gram)
            point_covariance = self._gram - (self._gram * u[None, :]) @ solved_gram
        return variance, covariance, point_covariance

    def _power_derivatives(self, variance):
        half_q = self.table.q / 2.0
        safe = np.maximum(variance, np.finfo(float).tiny)
        first = half_q * safe ** (half_q - 1.0)
        second = half_q * (half_q - 1.0) * safe ** (half_q - 2.0)
        return variance**half_q, first, second

    def value(self, v) -> float:
        variance, _, _ = self._posterior(v, hessian=False)
        return float(np.sum(self._scale * variance ** (self.table.q / 2.0)))

    def gradient(self, v) -> np.ndarray:
        """dE~/dv_i, using d sigma**2(p)/dv_i = -Gamma(p, x_i)**2."""
        variance, covariance, _ = self._posterior(v, hessian=False)
        _, first, _ = self._power_derivatives(variance)
        return -(self._scale * first) @ covariance**2

    def derivatives(self, v) -> ObjectiveDerivatives:
        """Value, gradient and Hessian in one factorization."""
        variance, covariance, point_covariance = self._posterior(v, hessian=True)
        power, first, second = self._power_derivatives(variance)
        squared = covariance**2
        gradient = -(self._scale * first) @ squared
        # d2 sigma**2 / dv_i dv_j = 2 Gamma_pi Gamma_pj Gamma_ij
        hessian = 2.0 * (covariance.T @ ((self._scale * first)[:, None] * covariance))
        hessian *= point_covariance
        if self.table.q != 2.0:
            hessian += squared.T @ ((self._scale * second)[:, None] * squared)
        hessian = 0.5 * (hessian + hessian.T)
        return ObjectiveDerivatives(float(np.sum(self._scale * power)), gradient, hessian)

    def variance(self, v) -> np.ndarray:
        return self._posterior(v, hessian=False)[0]


def global_error_gradient(
    model: SurrogateModel,
    sigma_l,
    cfg: ErrorModelConfig,
    v,
    candidates: PointArray | None = None,
    table: NodeTable | None = None,
) -> np.ndarray:
    """Gradient of E~(v) over existing points then candidates, weights frozen."""
    if table is None:
        _, table = global_error(model, sigma_l, cfg)
    return AccuracyObjective(table, model, candidates).gradient(v)


class BoundCheck(NamedTuple):
    distance: float
    radius: float
    surrogate_error: float
    derivative_error: float

    @property
    def holds(self) -> bool:
        return self.distance <= self.radius


def parameter_error_bound_check(
    exact,
    surrogate,
    sigma_l,
    consts: BoundConstants,
    p_exact: Point,
    p_surrogate: Point,
    samples: int = 64,
    seed: int = 0,
) -> BoundCheck:
    """Compare the distance of the two minimizers with the simplified radius R.

    eps and eps' are the largest value and Jacobian gaps between surrogate and
    exact model over the ball around p_exact that reaches p_surrogate.
    """
    p_exact = np.asarray(p_exact, dtype=float)
    distance = float(np.linalg.norm(np.asarray(p_surrogate, dtype=float) - p_exact))
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(samples, len(p_exact)))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = distance * rng.random(samples) ** (1.0 / len(p_exact))
    probes = np.vstack([p_exact, p_surrogate, p_exact + radii[:, None] * directions])
    value_gap = max(
        float(np.linalg.norm(surrogate.value(p) - exact.value(p))) for p in probes
    )
    derivative_gap = max(
        float(np.linalg.norm(surrogate.jacobian(p) - exact.jacobian(p), ord=2)) for p in probes
    )
    radius = radius_bound(value_gap, derivative_gap, consts, sigma_l)
    return BoundCheck(distance, radius, value_gap, derivative_gap)
