# design_optimizer.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""One step of the sequential design problem.

Pick candidate points, drop the ones that can't matter, then decide how
accurately to evaluate every point (old and new) under the budget.
Accuracies are optimized in v = eps**-2, where the error objective is convex.

Contains:
CandidateSet, CandidateSampler, generate_candidates, filter_candidates
AccuracyProblem, allocate_accuracy
EvaluationOrder, apply_allocation
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Self

import numpy as np
import scipy.linalg
from scipy.optimize import brentq, minimize
from scipy.spatial.distance import cdist
from scipy.stats import qmc

from surrogate_kit.convenience_types import PointArray
from surrogate_kit.debug import debug_enabled, debug_print
from surrogate_kit.error_model import AccuracyObjective, NodeTable
from surrogate_kit.errors import ExhaustedCandidates, InfeasibleBudget, InputError
from surrogate_kit.gp_core import Design, SurrogateModel
from surrogate_kit.work_budget import WorkModel

candidate_strategies = ["acquisition", "random", "halton"]

# Draws allowed per requested candidate before giving up
DRAWS_PER_CANDIDATE = 100

# Candidates with v* at or below this share of max(v*) are not evaluated
SPARSITY_THRESHOLD = 1e-6

# Refinements changing the tolerance by less than this (relative) are dropped
SIGNIFICANCE_THRESHOLD = 0.1

# Filter threshold relative to E~ at the lower bounds
FILTER_RELATIVE_TOL = 1e-12

# Barrier method
BARRIER_GROWTH = 10.0
BARRIER_GAP_TOL = 1e-12
NEWTON_DECREMENT_TOL = 1e-10
MAX_NEWTON_STEPS = 100


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Candidate points outside the design, with where each one came from."""

    points: np.ndarray
    provenance: tuple[str, ...]

    def __post_init__(self) -> None:
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", points)
        if len(self.provenance) != len(points):
            raise InputError("Candidate set needs one provenance tag per point")

    @classmethod
    def empty(cls, dim: int) -> Self:
        return cls(np.zeros((0, dim)), ())

    @property
    def size(self) -> int:
        return len(self.provenance)

    def subset(self, keep) -> Self:
        keep = np.asarray(keep, dtype=bool)
        return type(self)(
            self.points[keep], tuple(tag for tag, kept in zip(self.provenance, keep) if kept)
        )


@dataclass
class CandidateSampler:
    """Random state shared across design iterations.

    The Halton skip counter persists, so every iteration continues the
    sequence where the last one stopped.
    """

    seed: int = 0
    halton_skip: int = 0
    rng: np.random.Generator = field(init=False)

    def __post_init__(self) -> None:
        self.rng = np.random.default_rng(self.seed)

    def next_halton(self, dim: int) -> np.ndarray:
        """Next unit-cube point of the unscrambled Halton sequence (0 skipped)."""
        halton = qmc.Halton(d=dim, scramble=False)
        halton.fast_forward(1 + self.halton_skip)
        self.halton_skip += 1
        return halton.random(1)[0]

    def next_uniform(self, dim: int) -> np.ndarray:
        return self.rng.random(dim)


def _admissible(point, taken: list[np.ndarray], existing: np.ndarray, separation: float) -> bool:
    others = np.vstack([existing, *taken]) if taken else existing
    if len(others) == 0:
        return True
    return bool(cdist(point[None, :], others).min() >= separation)


def generate_candidates(
    model: SurrogateModel,
    table: NodeTable,
    strategy: str = "acquisition",
    k: int = 1,
    sampler: CandidateSampler | None = None,
) -> CandidateSet:
    """k candidate points, none within the minimum separation of another point.

    acquisition: best nodes of the node table by g(p), lowest index on ties
    random:      uniform draws from the sampler's generator
    halton:      the next Halton points
    """
    if k < 1:
        raise InputError("Need at least one candidate")
    design = model.design
    domain = design.domain
    separation = design.min_separation
    existing = design.points
    taken: list[np.ndarray] = []

    match strategy:
        case "acquisition":
            order = np.argsort(-table.density, kind="stable")
            for index in order:
                node = table.nodes[index]
                if _admissible(node, taken, existing, separation):
                    taken.append(node)
                    if len(taken) == k:
                        break
        case "random" | "halton":
            sampler = sampler if sampler is not None else CandidateSampler()
            for _ in range(DRAWS_PER_CANDIDATE * k):
                if strategy == "random":
                    unit = sampler.next_uniform(domain.dim)
                else:
                    unit = sampler.next_halton(domain.dim)
                point = domain.scale(unit)
                if _admissible(point, taken, existing, separation):
                    taken.append(point)
                    if len(taken) == k:
                        break
        case _:
            raise InputError(f"Unknown candidate strategy {strategy!r}")

    if not taken:
        raise ExhaustedCandidates(f"No admissible {strategy} candidate found")
    if len(taken) < k:
        debug_print(2, f"Only {len(taken)} of {k} {strategy} candidates admissible")
    debug_print(2, f"Candidates ({strategy}):", np.array(taken))
    return CandidateSet(np.array(taken), tuple(strategy for _ in taken))


def filter_candidates(
    candidates: CandidateSet,
    model: SurrogateModel,
    table: NodeTable,
    tolerance: float | None = None,
) -> CandidateSet:
    """Drop candidates whose |dE~/dv_i| at the lower bounds is below tolerance.

    The default tolerance is 1e-12 * |E~(v_lower)|.
    """
    if candidates.size == 0:
        return candidates
    objective = AccuracyObjective(table, model, candidates.points)
    if tolerance is None:
        tolerance = FILTER_RELATIVE_TOL * abs(objective.value(objective.lower))
    gradient = objective.gradient(objective.lower)[objective.existing :]
    keep = np.abs(gradient) >= tolerance
    if not np.all(keep):
        debug_print(2, f"Filtered out {int(np.sum(~keep))} candidate(s)")
    return candidates.subset(keep)


@dataclass(eq=False)
class AccuracyProblem:
    """min E~(v) subject to sum_i c v_i**s <= budget and v >= lower.

    budget is the total: W of the current design plus the increment.
    """

    objective: AccuracyObjective
    work: WorkModel
    budget: float

    @property
    def lower(self) -> np.ndarray:
        return self.objective.lower

    @property
    def size(self) -> int:
        return self.objective.size

    def total_work(self, v) -> float:
        return float(np.sum(self.work.precision_work(v)))

    @classmethod
    def build(
        cls,
        table: NodeTable,
        model: SurrogateModel,
        candidates: CandidateSet,
        work: WorkModel,
        increment: float,
    ) -> Self:
        objective = AccuracyObjective(table, model, candidates.points)
        base = float(np.sum(work.precision_work(objective.lower)))
        return cls(objective, work, base + increment)


def _activate_budget(problem: AccuracyProblem, v: np.ndarray) -> np.ndarray:
    """Stretch v away from the lower bounds until the work constraint is active.

    The objective is nonincreasing in every v_i, so this never hurts.
    """
    lower, budget = problem.lower, problem.budget
    direction = v - lower
    if not np.any(direction > 0):
        return v

    def excess(theta: float) -> float:
        return problem.total_work(lower + theta * direction) - budget

    high = 1.0
    while excess(high) < 0:
        high *= 2.0
    theta = brentq(excess, 0.0, high, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    v = lower + theta * direction
    # brentq may land a hair over
    while problem.total_work(v) > budget * (1 + 1e-12):
        theta *= 1 - 1e-12
        v = lower + theta * direction
    return v


def _barrier_start(problem: AccuracyProblem) -> np.ndarray:
    """lower + c with c chosen to use half the spare budget."""
    lower = problem.lower
    target = problem.total_work(lower) + 0.5 * (problem.budget - problem.total_work(lower))

    def excess(shift: float) -> float:
        return problem.total_work(lower + shift) - target

    high = 1.0
    while excess(high) < 0:
        high *= 2.0
    return lower + brentq(excess, 0.0, high, rtol=1e-12)


def _barrier_allocation(problem: AccuracyProblem, start: np.ndarray | None) -> np.ndarray:
    """Log-barrier method with Newton steps, for convex work (s >= 1)."""
    lower, budget, work = problem.lower, problem.budget, problem.work
    v = _barrier_start(problem) if start is None else np.asarray(start, dtype=float)
    if not (np.all(v > lower) and problem.total_work(v) < budget):
        raise InputError("Barrier start must be strictly feasible")
    constraints = problem.size + 1

    def barrier(t: float, point: np.ndarray) -> float:
        slack = budget - problem.total_work(point)
        if slack <= 0 or np.any(point <= lower):
            return np.inf
        return (
            t * problem.objective.value(point)
            - np.sum(np.log(point - lower))
            - np.log(slack)
        )

    scale = abs(problem.objective.value(v)) or 1.0
    t = constraints / scale
    while True:
        for newton_step in range(MAX_NEWTON_STEPS):
            value, gradient, hessian = problem.objective.derivatives(v)
            slack = budget - problem.total_work(v)
            distance = v - lower
            work_gradient = work.precision_work_gradient(v)
            g = t * gradient - 1.0 / distance + work_gradient / slack
            H = t * hessian + np.diag(1.0 / distance**2)
            H += np.outer(work_gradient, work_gradient) / slack**2
            H += np.diag(work.precision_work_curvature(v) / slack)
            try:
                step = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), g)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(H, g, rcond=None)[0]
            decrement = -g @ step
            if decrement / 2 <= NEWTON_DECREMENT_TOL:
                break
            current = t * value - np.sum(np.log(distance)) - np.log(slack)
            length = 1.0
            while length > 1e-20:
                trial = v + length * step
                trial_value = barrier(t, trial)
                if trial_value <= current - 0.25 * length * decrement:
                    break
                length *= 0.5
            else:
                break
            v = trial
        debug_print(3, f"Barrier t={t:.3g}: {newton_step + 1} Newton steps")
        if constraints / t <= BARRIER_GAP_TOL * scale:
            return v
        t *= BARRIER_GROWTH


def _kkt_residual(problem: AccuracyProblem, v: np.ndarray, active: np.ndarray) -> float:
    """Largest violation of the multiplier signs on the bound-constrained set.

    active marks the variables allowed off their lower bound.
    """
    gradient = problem.objective.gradient(v)
    work_gradient = problem.work.precision_work_gradient(np.maximum(v, np.finfo(float).tiny))
    free = active & (v > problem.lower)
    if not np.any(free):
        return np.inf
    # Budget multiplier from the free variables
    multiplier = np.median(-gradient[free] / work_gradient[free])
    bound_multipliers = gradient + multiplier * work_gradient
    violation = np.maximum(-bound_multipliers[active & ~free], 0.0)
    stationarity = np.abs(bound_multipliers[free])
    return float(np.max(np.concatenate([violation, stationarity, [0.0]])))


def _single_point_allocation(problem: AccuracyProblem) -> np.ndarray:
    """Spend everything on one point, then polish locally (s < 1)."""
    lower, work = problem.lower, problem.work
    spare = problem.budget - problem.total_work(lower)
    # a_i with c (lower_i + a_i)**s = c lower_i**s + spare
    amounts = (spare / work.coefficient + lower**work.s) ** (1.0 / work.s) - lower
    values = np.empty(problem.size)
    for index, amount in enumerate(amounts):
        proposal = lower.copy()
        proposal[index] += amount
        values[index] = problem.objective.value(proposal)
    best = int(np.argmin(values))
    v = lower.copy()
    v[best] += amounts[best]
    debug_print(2, f"Single-point proposal: point {best}, v {v[best]:.6g}")

    # Polish over the chosen point and the existing points; other candidates
    # stay at zero, where the work gradient is unbounded.
    active = np.zeros(problem.size, dtype=bool)
    active[: problem.objective.existing] = True
    active[best] = True
    scale = np.abs(problem.objective.gradient(v)).max() or 1.0
    if _kkt_residual(problem, v, active) <= 1e-8 * scale:
        return v

    indices = np.flatnonzero(active)
    floor = lower[indices].copy()
    if best >= problem.objective.existing:
        floor[indices == best] = 1e-6 * v[best]
    v_scale = v[indices].max()
    reference = problem.objective.value(v)

    def expand(x):
        full = lower.copy()
        full[indices] = x * v_scale
        return full

    result = minimize(
        lambda x: problem.objective.value(expand(x)) / reference,
        v[indices] / v_scale,
        jac=lambda x: problem.objective.gradient(expand(x))[indices] * v_scale / reference,
        method="SLSQP",
        bounds=[(lo / v_scale, None) for lo in floor],
        constraints=[
            {
                "type": "ineq",
                "fun": lambda x: (problem.budget - problem.total_work(expand(x))) / problem.budget,
                "jac": lambda x: -work.precision_work_gradient(expand(x)[indices])
                * v_scale
                / problem.budget,
            }
        ],
        options={"maxiter": 200, "ftol": 1e-12},
    )
    polished = expand(np.maximum(result.x, floor / v_scale))
    if problem.total_work(polished) <= problem.budget * (1 + 1e-8) and problem.objective.value(
        polished
    ) < problem.objective.value(v):
        debug_print(3, "Local polish improved the single-point proposal")
        v = polished
    return v


def allocate_accuracy(problem: AccuracyProblem, start: np.ndarray | None = None) -> np.ndarray:
    """Optimal precisions v* under the budget; the work constraint ends up active.

    Raises InfeasibleBudget if the budget does not exceed W(lower).
    """
    base = problem.total_work(problem.lower)
    if not problem.budget > base:
        raise InfeasibleBudget(f"Budget {problem.budget:g} does not exceed current work {base:g}")
    if problem.work.s >= 1:
        v = _barrier_allocation(problem, start)
    else:
        v = _single_point_allocation(problem)
    v = _activate_budget(problem, v)
    if debug_enabled(3):
        debug_print(
            3,
            f"Allocation: work {problem.total_work(v):.6g} of {problem.budget:.6g}, "
            f"E~ {problem.objective.value(v):.6g}",
        )
    return v


class EvaluationOrder(NamedTuple):
    """One simulation to run: a new point, or a continued refinement."""

    kind: str  # "new" or "refine"
    index: int  # row in the refined design
    point: np.ndarray
    tolerance: float
    previous_tolerance: float | None = None


def apply_allocation(
    design: Design, candidates: CandidateSet, v_star
) -> tuple[Design, list[EvaluationOrder]]:
    """Turn v* into the refined design and the evaluation orders.

    Sparse candidates are not evaluated; insignificant refinements are dropped.
    """
    v_star = np.asarray(v_star, dtype=float)
    n = design.size
    if len(v_star) != n + candidates.size:
        raise InputError("Allocation doesn't match design plus candidates")
    threshold = SPARSITY_THRESHOLD * v_star.max() if len(v_star) else 0.0

    orders: list[EvaluationOrder] = []
    tolerances = design.tolerances.copy()
    for index in range(n):
        old = tolerances[index]
        if not v_star[index] > 0:
            continue
        new = v_star[index] ** -0.5
        if new < old and (old - new) / old >= SIGNIFICANCE_THRESHOLD:
            tolerances[index] = new
            orders.append(EvaluationOrder("refine", index, design.points[index], new, old))

    new_points = []
    new_tolerances = []
    for offset, point in enumerate(candidates.points):
        v = v_star[n + offset]
        if v <= threshold:
            continue
        tolerance = v**-0.5
        orders.append(EvaluationOrder("new", n + len(new_points), point, tolerance))
        new_points.append(point)
        new_tolerances.append(tolerance)

    refined = design.with_tolerances(tolerances)
    if new_points:
        refined = refined.extended(np.array(new_points), new_tolerances)
    debug_print(
        2,
        f"Orders: {sum(order.kind == 'new' for order in orders)} new, "
        f"{sum(order.kind == 'refine' for order in orders)} refinements",
    )
    return refined, orders
