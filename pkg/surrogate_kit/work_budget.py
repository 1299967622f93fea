# work_budget.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Work models, design work accounting and the incremental budget controller.

Work is measured in abstract work units.  Every work model here has the
form W(eps) = c * eps**(-2s), i.e. W(v) = c * v**s in v = eps**-2.
"""

import math
from dataclasses import dataclass
from typing import Self

import numpy as np

from surrogate_kit.debug import debug_print
from surrogate_kit.errors import InputError, RefinementOrderViolation
from surrogate_kit.gp_core import Design

# The kinds of work model we know about
work_model_kinds = ["generic", "fe", "sparse-direct"]


@dataclass(frozen=True)
class WorkModel:
    """Map from tolerance to computational work.

    generic:       W = eps**(-2s)
    fe:            W = (r/d_x) eps**(-d_x/r)              (s = d_x/(2r))
    sparse-direct: W = (r/(1.5 d_x)) eps**(-1.5 d_x/r)    (s = 1.5 d_x/(2r))

    Accounting is floored at minimum_work per evaluation (coarsest grid cost).
    max_tolerance, if set, is the ceiling above which the model is not valid;
    requests above it are treated as requests at the ceiling.
    """

    kind: str = "generic"
    exponent: float = 0.5
    order: int | None = None
    spatial_dim: int | None = None
    minimum_work: float = 1.0
    max_tolerance: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in work_model_kinds:
            raise InputError(f"Unknown work model kind {self.kind!r}")
        if self.kind != "generic":
            if not self.order or not self.spatial_dim:
                raise InputError(f"Work model {self.kind!r} needs order and spatial_dim")
            if self.order < 1 or self.spatial_dim < 1:
                raise InputError("Work model order and spatial_dim must be >= 1")
        if not self.s > 0:
            raise InputError("Work exponent s must be positive")
        if self.minimum_work < 0:
            raise InputError("minimum_work must be nonnegative")

    @classmethod
    def generic(cls, exponent: float, **kwargs) -> Self:
        return cls(kind="generic", exponent=exponent, **kwargs)

    @classmethod
    def fe(cls, order: int, spatial_dim: int, **kwargs) -> Self:
        return cls(kind="fe", order=order, spatial_dim=spatial_dim, **kwargs)

    @classmethod
    def sparse_direct(cls, order: int, spatial_dim: int, **kwargs) -> Self:
        return cls(kind="sparse-direct", order=order, spatial_dim=spatial_dim, **kwargs)

    @property
    def s(self) -> float:
        """Exponent in W(v) = c v**s."""
        match self.kind:
            case "generic":
                return float(self.exponent)
            case "fe":
                return self.spatial_dim / (2.0 * self.order)
            case "sparse-direct":
                return 1.5 * self.spatial_dim / (2.0 * self.order)
        raise AssertionError(self.kind)

    @property
    def coefficient(self) -> float:
        """c in W(v) = c v**s."""
        match self.kind:
            case "generic":
                return 1.0
            case "fe":
                return self.order / self.spatial_dim
            case "sparse-direct":
                return self.order / (1.5 * self.spatial_dim)
        raise AssertionError(self.kind)

    def work(self, tolerance):
        """Work for evaluations at the given tolerance(s), floored."""
        tolerance = np.asarray(tolerance, dtype=float)
        if self.max_tolerance is not None:
            tolerance = np.minimum(tolerance, self.max_tolerance)
        work = np.maximum(self.coefficient * tolerance ** (-2.0 * self.s), self.minimum_work)
        if work.ndim == 0:
            return float(work)
        return work

    def precision_work(self, v) -> np.ndarray:
        """Smooth work c v**s, no floor; zero precision means no evaluation."""
        return self.coefficient * np.asarray(v, dtype=float) ** self.s

    def precision_work_gradient(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.coefficient * self.s * v ** (self.s - 1.0)

    def precision_work_curvature(self, v) -> np.ndarray:
        """Diagonal of the Hessian of sum_i c v_i**s."""
        v = np.asarray(v, dtype=float)
        return self.coefficient * self.s * (self.s - 1.0) * v ** (self.s - 2.0)


def work_of_tolerance(tolerance, model: WorkModel):
    """W(eps) for one tolerance or an array of them."""
    if np.any(np.asarray(tolerance) <= 0):
        raise InputError("Tolerances must be positive")
    return model.work(tolerance)


def design_work(design: Design, model: WorkModel) -> float:
    """W(D): sum of the work of every evaluation in the design."""
    if design.size == 0:
        return 0.0
    return math.fsum(np.atleast_1d(model.work(design.tolerances)))


def incremental_work(new: Design, old: Design, model: WorkModel) -> float:
    """W(D'|D) = W(D') - W(D), with continuation credit for refined points.

    Raises RefinementOrderViolation unless D' <= D.
    """
    if not new.refines(old):
        raise RefinementOrderViolation(
            "New design drops points or coarsens tolerances of the old design"
        )
    return design_work(new, model) - design_work(old, model)


@dataclass
class BudgetController:
    """Incremental budget with exponential growth and surplus carry-over.

    increment is the nominal Delta W for the next design step.  carry_over
    is work already spent beyond earlier allocations (e.g. by quantized
    refinements overshooting); it comes out of the next increment.
    """

    increment: float = 100.0
    growth: float = 1.1
    stall_factor: float = 1.1
    stall_threshold: float = 0.02
    carry_over: float = 0.0
    # Never hand out less than this share of the nominal increment
    minimum_share: float = 0.05

    def __post_init__(self) -> None:
        if not self.increment > 0:
            raise InputError("Budget increment must be positive")
        if self.growth < 1 or self.stall_factor < 1:
            raise InputError("Budget growth factors must be >= 1")

    def step(self, error_prev: float, error_now: float) -> float:
        """Grow the increment; grow it again if the error stalled."""
        if error_prev < 0 or error_now < 0:
            raise InputError("Global errors must be nonnegative")
        self.increment *= self.growth
        # error_prev == 0 can't stall: there is nothing left to improve
        if error_prev > 0 and (error_prev - error_now) / error_prev < self.stall_threshold:
            debug_print(2, "Error reduction stalled, growing budget increment again")
            self.increment *= self.stall_factor
        return self.increment

    def effective_increment(self) -> float:
        """The increment left after paying back carried-over surplus."""
        return max(self.increment - self.carry_over, self.minimum_share * self.increment)

    def record_spending(self, charged: float) -> float:
        """Book the work actually charged against the current increment.

        Returns the new carry-over.
        """
        self.carry_over = max(0.0, self.carry_over + charged - self.increment)
        return self.carry_over


def budget_step(ctrl: BudgetController, error_prev: float, error_now: float) -> float:
    """New Delta W after one design iteration."""
    return ctrl.step(error_prev, error_now)
