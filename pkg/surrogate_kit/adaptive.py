# adaptive.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""The sequential design loop, its baseline, and what we do with the result.

adaptive_run          -- optimize positions and accuracies under a growing budget
position_adaptive_run -- baseline: add the acquisition argmax at a fixed tolerance
reliability_study     -- compare estimated and actual reconstruction errors
reconstruct           -- MAP estimate with Laplace stds from a trained surrogate
"""

import math
from typing import NamedTuple

import numpy as np
import pandas as pd

from surrogate_kit import runtime_config
from surrogate_kit.artifacts import IterationRecord, RunArtifacts, reliability_columns
from surrogate_kit.debug import debug_print
from surrogate_kit.design_optimizer import (
    AccuracyProblem,
    CandidateSampler,
    CandidateSet,
    EvaluationOrder,
    allocate_accuracy,
    apply_allocation,
    filter_candidates,
    generate_candidates,
)
from surrogate_kit.error_model import global_error, integration_nodes
from surrogate_kit.errors import (
    BudgetExhausted,
    ExhaustedCandidates,
    InputError,
    IterationCapReached,
    RunTerminated,
    Stagnated,
    SurrogateKitError,
)
from surrogate_kit.forward_models import Evaluation, ForwardModel
from surrogate_kit.gp_core import (
    Design,
    Hyperparameters,
    SurrogateModel,
    TrainingData,
    default_bounds,
    default_hyperparameters,
    fit,
    optimize_hyperparameters,
)
from surrogate_kit.inverse_solver import (
    InverseProblem,
    ReconstructionResult,
    gauss_newton_multistart,
    grid_starts,
    laplace_covariance,
)
from surrogate_kit.parallel import fan_out
from surrogate_kit.run_config import RunConfig
from surrogate_kit.work_budget import design_work

# Relative increase of the global error allowed between iterations (refit jitter)
ERROR_SLACK = 1e-3


def setup_forward_model(cfg: RunConfig) -> ForwardModel:
    """Build the configured forward model and check it against the likelihood."""
    section = dict(cfg["model"])
    name = section.pop("name")
    noise = section.pop("noise")
    model = runtime_config.build_forward_model(name, section, cfg.work_model(), cfg.seed, noise)
    covariance = cfg.likelihood_covariance()
    if covariance.shape[0] != model.output_dim:
        raise InputError(
            f"Likelihood covariance is {covariance.shape[0]}x{covariance.shape[0]}, "
            f"model has {model.output_dim} outputs"
        )
    return model


def initial_training_data(cfg: RunConfig, model: ForwardModel) -> tuple[TrainingData, float]:
    """Evaluate the initial design; returns the data and the work charged."""
    points = cfg.initial_design_points(model.domain)
    tolerance = cfg.initial_tolerance
    evaluations = fan_out(
        lambda point: model.evaluate_to_tolerance(point, tolerance), list(points), cfg.workers
    )
    design = Design(points, [evaluation.tolerance for evaluation in evaluations], model.domain)
    design.check_separation()
    data = TrainingData(design, np.array([evaluation.value for evaluation in evaluations]))
    return data, math.fsum(evaluation.work for evaluation in evaluations)


def fit_surrogate(
    data: TrainingData, previous: Hyperparameters | None = None, freeze: bool = False
) -> SurrogateModel:
    """Fit hyperparameters (warm-started from previous) and condition the GP."""
    bounds = default_bounds(data)
    if previous is not None and freeze:
        return fit(data, previous)
    if previous is not None:
        init = previous.with_bounds(bounds)
    else:
        init = default_hyperparameters(data, bounds)
    search = optimize_hyperparameters(data, bounds, init)
    debug_print(
        2,
        f"Hyperparameters: sf2 {search.hyperparameters.signal_variance:.4g}, "
        f"l {np.array2string(search.hyperparameters.lengthscales, precision=4)}, "
        f"nlml {search.value:.6g}",
    )
    return fit(data, search.hyperparameters)


def execute_orders(
    model: ForwardModel, orders: list[EvaluationOrder], workers: int = 1
) -> list[Evaluation]:
    """Run the evaluation orders; results in order."""

    def execute(order: EvaluationOrder) -> Evaluation:
        match order.kind:
            case "new":
                return model.evaluate_to_tolerance(order.point, order.tolerance)
            case "refine":
                assert order.previous_tolerance is not None
                return model.refine(order.point, order.previous_tolerance, order.tolerance)
        raise InputError(f"Unknown order kind {order.kind!r}")

    return fan_out(execute, orders, workers)


def merge_evaluations(
    data: TrainingData,
    orders: list[EvaluationOrder],
    evaluations: list[Evaluation],
) -> TrainingData:
    """New training data with refined rows replaced and new rows appended.

    Tolerances are the achieved ones, which may be tighter than ordered.
    """
    design = data.design
    tolerances = design.tolerances.copy()
    values = data.values.copy()
    new_points, new_tolerances, new_values = [], [], []
    for order, evaluation in zip(orders, evaluations, strict=True):
        if order.kind == "refine":
            tolerances[order.index] = evaluation.tolerance
            values[order.index] = evaluation.value
        else:
            assert order.index == design.size + len(new_points)
            new_points.append(order.point)
            new_tolerances.append(evaluation.tolerance)
            new_values.append(evaluation.value)
    merged = design.with_tolerances(tolerances)
    if new_points:
        merged = merged.extended(np.array(new_points), new_tolerances)
        values = np.vstack([values, np.array(new_values)])
    return TrainingData(merged, values)


def _check_caps(cfg: RunConfig, iteration: int, work: float) -> None:
    if iteration >= cfg.max_iterations:
        raise IterationCapReached(f"stopped after {iteration} iterations")
    if work >= cfg.max_work * (1 - 1e-12):
        raise BudgetExhausted(f"work {work:.6g} reached the cap {cfg.max_work:.6g}")


def _termination(stop: SurrogateKitError) -> str:
    return f"{type(stop).__name__}: {stop}"


def _close_ledger(data: TrainingData, work_model, charged: float) -> None:
    """Design work must equal the sum of everything charged."""
    work = design_work(data.design, work_model)
    assert math.isclose(work, charged, rel_tol=1e-12, abs_tol=1e-9), (
        f"Work ledger doesn't close: W(D) = {work!r}, charged {charged!r}"
    )


class _Reconstruction(NamedTuple):
    p_true: np.ndarray | None
    measurement: np.ndarray | None


def _reconstruction_target(cfg: RunConfig) -> _Reconstruction:
    section = cfg["reconstruction"]
    measurement = section["measurement"]
    p_true = section["p_true"]
    return _Reconstruction(
        None if p_true is None else np.asarray(p_true, dtype=float),
        None if measurement is None else np.asarray(measurement, dtype=float),
    )


def adaptive_run(cfg: RunConfig) -> RunArtifacts:
    """Jointly adapt evaluation positions and accuracies until E <= TOL.

    Caps ending the run are recorded in the artifacts (converged = False).
    """
    model = setup_forward_model(cfg)
    sigma_l = cfg.likelihood_covariance()
    work_model = cfg.work_model()
    controller = cfg.budget_controller()
    error_cfg = cfg.error_model_config()
    nodes = integration_nodes(model.domain, error_cfg)
    candidates_cfg = cfg["candidates"]
    sampler = CandidateSampler(seed=cfg.seed)
    freeze_after = cfg.freeze_hyperparameters_after

    artifacts = RunArtifacts(cfg, kind="adaptive")
    data, charged = initial_training_data(cfg, model)
    hyperparameters = None
    previous_error = None
    increment = 0.0
    iteration = 0

    while True:
        freeze = freeze_after is not None and iteration > freeze_after
        surrogate = fit_surrogate(data, hyperparameters, freeze)
        hyperparameters = surrogate.hyperparameters
        error, table = global_error(surrogate, sigma_l, error_cfg, nodes, cfg.workers)
        work = design_work(data.design, work_model)
        artifacts.record(
            IterationRecord(
                iteration,
                data.design.size,
                work,
                increment,
                error,
                tuple(hyperparameters.as_vector()),
            )
        )
        # Adding or refining points never raises E beyond refit jitter
        assert previous_error is None or error <= previous_error * (1 + ERROR_SLACK), (
            f"Global error went up: {previous_error!r} -> {error!r}"
        )

        if error <= cfg.tolerance:
            artifacts.converged = True
            artifacts.termination = f"global error {error:.6g} <= {cfg.tolerance:g}"
            break
        try:
            _check_caps(cfg, iteration, work)
        except RunTerminated as stop:
            artifacts.termination = _termination(stop)
            break

        if previous_error is not None:
            controller.step(previous_error, error)
        increment = min(controller.effective_increment(), cfg.max_work - work)

        try:
            candidates = generate_candidates(
                surrogate, table, candidates_cfg["strategy"], int(candidates_cfg["k"]), sampler
            )
        except ExhaustedCandidates as exhausted:
            debug_print(1, f"{exhausted}; refining existing points only")
            candidates = CandidateSet.empty(data.design.dim)
        candidates = filter_candidates(
            candidates, surrogate, table, candidates_cfg["filter_tolerance"]
        )
        problem = AccuracyProblem.build(table, surrogate, candidates, work_model, increment)
        v_star = allocate_accuracy(problem)
        _, orders = apply_allocation(data.design, candidates, v_star)
        if not orders:
            debug_print(1, "Allocation produced no significant orders this iteration")

        evaluations = execute_orders(model, orders, cfg.workers)
        data = merge_evaluations(data, orders, evaluations)
        spent = math.fsum(evaluation.work for evaluation in evaluations)
        controller.record_spending(spent)
        charged += spent
        _close_ledger(data, work_model, charged)
        previous_error = error
        iteration += 1

    assert len(artifacts.records) == iteration + 1
    artifacts.data = data
    artifacts.hyperparameters = hyperparameters
    artifacts.error_map = table.to_frame()
    artifacts.total_charged = charged
    debug_print(1, f"Run finished: {artifacts.termination}")

    target = _reconstruction_target(cfg)
    if target.p_true is not None or target.measurement is not None:
        try:
            artifacts.reconstruction = reconstruct(
                cfg, surrogate, model, target.p_true, target.measurement
            )
        except SurrogateKitError as error:
            debug_print(1, f"Reconstruction failed: {error}")
    return artifacts


def position_adaptive_run(cfg: RunConfig, tolerance: float | None = None) -> RunArtifacts:
    """Baseline: every iteration adds the acquisition argmax at a fixed tolerance.

    Also stops (not converged) when E changed by less than the stall
    threshold over the stall window.
    """
    baseline = cfg["baseline"]
    tolerance = float(baseline["tolerance"] if tolerance is None else tolerance)
    if not tolerance > 0:
        raise InputError("Baseline tolerance must be positive")
    window = int(baseline["stall_window"])
    stall_threshold = float(baseline["stall_threshold"])

    model = setup_forward_model(cfg)
    sigma_l = cfg.likelihood_covariance()
    work_model = cfg.work_model()
    error_cfg = cfg.error_model_config()
    nodes = integration_nodes(model.domain, error_cfg)
    freeze_after = cfg.freeze_hyperparameters_after

    artifacts = RunArtifacts(cfg, kind="baseline")
    data, charged = initial_training_data(cfg, model)
    hyperparameters = None
    errors: list[float] = []
    increment = 0.0
    iteration = 0

    while True:
        freeze = freeze_after is not None and iteration > freeze_after
        surrogate = fit_surrogate(data, hyperparameters, freeze)
        hyperparameters = surrogate.hyperparameters
        error, table = global_error(surrogate, sigma_l, error_cfg, nodes, cfg.workers)
        work = design_work(data.design, work_model)
        artifacts.record(
            IterationRecord(
                iteration,
                data.design.size,
                work,
                increment,
                error,
                tuple(hyperparameters.as_vector()),
            )
        )
        errors.append(error)

        if error <= cfg.tolerance:
            artifacts.converged = True
            artifacts.termination = f"global error {error:.6g} <= {cfg.tolerance:g}"
            break
        try:
            _check_caps(cfg, iteration, work)
            if len(errors) > window:
                reference = errors[-1 - window]
                if reference > 0 and abs(reference - error) / reference < stall_threshold:
                    raise Stagnated(f"error changed < {stall_threshold:g} over {window} iterations")
        except RunTerminated as stop:
            artifacts.termination = _termination(stop)
            break

        try:
            candidates = generate_candidates(surrogate, table, "acquisition", 1)
        except ExhaustedCandidates as exhausted:
            artifacts.termination = _termination(exhausted)
            break
        order = EvaluationOrder("new", data.design.size, candidates.points[0], tolerance)
        evaluations = execute_orders(model, [order])
        data = merge_evaluations(data, [order], evaluations)
        increment = evaluations[0].work
        charged += increment
        _close_ledger(data, work_model, charged)
        iteration += 1

    artifacts.data = data
    artifacts.hyperparameters = hyperparameters
    artifacts.error_map = table.to_frame()
    artifacts.total_charged = charged
    debug_print(1, f"Baseline finished: {artifacts.termination}")
    return artifacts


def reconstruct(
    cfg: RunConfig,
    surrogate: SurrogateModel,
    model: ForwardModel,
    p_true=None,
    measurement=None,
) -> ReconstructionResult:
    """MAP estimate on the surrogate, multi-start, with Laplace stds.

    Given p_true, the measurement is the exact model output there.  With
    neither, both come from the [reconstruction] section.
    """
    if measurement is None and p_true is None:
        p_true, measurement = _reconstruction_target(cfg)
    if measurement is None:
        if p_true is None:
            raise InputError("Reconstruction needs either p_true or a measurement")
        measurement = model.value(model.check_point(p_true))
    section = cfg["reconstruction"]
    problem = InverseProblem(measurement, cfg.likelihood_covariance(), model.domain)
    starts = grid_starts(problem, surrogate, int(section["grid_points"]), int(section["starts"]))
    result = gauss_newton_multistart(problem, surrogate, starts, cfg.workers)
    stds = laplace_covariance(problem, surrogate, result.p_map)
    debug_print(
        1,
        f"Reconstruction: p = {np.array2string(result.p_map, precision=5)} "
        f"+- {np.array2string(stds, precision=3)}",
    )
    return result._replace(stds=stds)


def reliability_study(
    cfg: RunConfig,
    data: TrainingData,
    points: int | None = None,
    draws: int | None = None,
) -> pd.DataFrame:
    """Estimated local error vs. mean actual parameter error at random points.

    Rows whose solves failed, or whose actual error is zero, are flagged
    and get a NaN ratio.
    """
    section = cfg["reliability"]
    points = int(section["points"] if points is None else points)
    draws = int(section["draws"] if draws is None else draws)
    if points < 1 or draws < 1:
        raise InputError("Reliability study needs at least one point and one draw")
    model = setup_forward_model(cfg)
    sigma_l = cfg.likelihood_covariance()
    error_cfg = cfg.error_model_config()
    surrogate = fit_surrogate(data)

    rng = np.random.default_rng([cfg.seed, int(section["seed"])])
    samples = model.domain.scale(rng.random((points, model.domain.dim)))
    noise = rng.multivariate_normal(np.zeros(len(sigma_l)), sigma_l, size=(points, draws))
    _, table = global_error(surrogate, sigma_l, error_cfg, samples, cfg.workers)
    estimates = table.density

    problem = InverseProblem(np.zeros(model.output_dim), sigma_l, model.domain)
    grid_points, starts = int(section["grid_points"]), int(section["starts"])

    def row(index: int) -> tuple[float, str]:
        exact_output = model.value(samples[index])
        deviations = []
        try:
            for delta in noise[index]:
                instance = problem.with_measurement(exact_output + delta)
                shared = grid_starts(instance, model, grid_points, starts)
                exact = gauss_newton_multistart(instance, model, shared)
                approximate = gauss_newton_multistart(instance, surrogate, shared)
                deviations.append(np.linalg.norm(exact.p_map - approximate.p_map))
        except SurrogateKitError as failure:
            debug_print(2, f"Reliability row {index} failed: {failure}")
            return math.nan, "solver-failure"
        mean = float(np.mean(deviations))
        return mean, "ok" if mean > 0 else "zero-error"

    results = fan_out(row, range(points), cfg.workers)
    means = np.array([mean for mean, _ in results])
    flags = [flag for _, flag in results]
    ok = np.array([flag == "ok" for flag in flags])
    ratios = np.full(points, np.nan)
    ratios[ok] = estimates[ok] / means[ok]

    columns = reliability_columns(model.domain.dim)
    frame = pd.DataFrame(
        {
            **{columns[i]: samples[:, i] for i in range(model.domain.dim)},
            "e_est": estimates,
            "e_mean": means,
            "ratio": ratios,
            "flag": flags,
        }
    )
    debug_print(1, f"Reliability study: {int(ok.sum())} of {points} rows ok")
    return frame
