# artifacts.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Run artifacts: the tables a run produces, and writing them out.

One directory per run:
run.json        -- configuration echo and summary
convergence.csv -- iter, n_points, cum_work, delta_w, global_error
design.csv      -- p1..pd, tolerance, y1..ym
reliability.csv -- p1..pd, e_est, e_mean, ratio, flag (reliability runs)
error_map.csv   -- local error map of the final surrogate
report.html     -- human-readable summary
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import pandas as pd

from surrogate_kit.convenience_types import Box
from surrogate_kit.debug import debug_print
from surrogate_kit.errors import InputError
from surrogate_kit.gp_core import Design, Hyperparameters, TrainingData
from surrogate_kit.inverse_solver import ReconstructionResult
from surrogate_kit.load_resources import render_template
from surrogate_kit.run_config import RunConfig

convergence_columns = ["iter", "n_points", "cum_work", "delta_w", "global_error"]


class IterationRecord(NamedTuple):
    iteration: int
    n_points: int
    cum_work: float
    delta_w: float
    global_error: float
    hyperparameters: tuple[float, ...]


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    # '.' decimal, LF line endings, no index column
    frame.to_csv(path, index=False, lineterminator="\n")


@dataclass
class RunArtifacts:
    """Everything a run leaves behind."""

    config: RunConfig
    kind: str = "adaptive"
    records: list[IterationRecord] = field(default_factory=list)
    data: TrainingData | None = None
    hyperparameters: Hyperparameters | None = None
    converged: bool = False
    termination: str = "not started"
    reconstruction: ReconstructionResult | None = None
    reliability: pd.DataFrame | None = None
    error_map: pd.DataFrame | None = None
    total_charged: float = 0.0

    @property
    def iterations(self) -> int:
        return max(len(self.records) - 1, 0)

    @property
    def final_error(self) -> float:
        return self.records[-1].global_error if self.records else float("nan")

    @property
    def total_work(self) -> float:
        return self.records[-1].cum_work if self.records else 0.0

    def record(self, record: IterationRecord) -> None:
        if self.records:
            assert record.cum_work >= self.records[-1].cum_work, "Cumulative work decreased"
        self.records.append(record)
        debug_print(
            1,
            f"iter {record.iteration}: {record.n_points} points, work {record.cum_work:.6g}, "
            f"E = {record.global_error:.6g}",
        )

    def convergence_frame(self) -> pd.DataFrame:
        rows = [record[:5] for record in self.records]
        return pd.DataFrame(rows, columns=convergence_columns)

    def design_frame(self) -> pd.DataFrame:
        if self.data is None:
            raise InputError("Run has no training data")
        return design_frame(self.data)

    def summary(self) -> dict:
        summary = {
            "kind": self.kind,
            "converged": self.converged,
            "termination": self.termination,
            "iterations": self.iterations,
            "final_error": self.final_error,
            "total_work": self.total_work,
            "n_points": self.data.design.size if self.data is not None else 0,
        }
        if self.hyperparameters is not None:
            summary["hyperparameters"] = {
                "signal_variance": self.hyperparameters.signal_variance,
                "lengthscales": self.hyperparameters.lengthscales.tolist(),
            }
        if self.reconstruction is not None:
            summary["reconstruction"] = {
                "p_map": self.reconstruction.p_map.tolist(),
                "objective": float(self.reconstruction.objective),
                "iterations": self.reconstruction.iterations,
                "converged": bool(self.reconstruction.converged),
                "stds": None
                if self.reconstruction.stds is None
                else self.reconstruction.stds.tolist(),
            }
        summary["history"] = [list(record.hyperparameters) for record in self.records]
        return summary

    def write(self, out_dir: os.PathLike | str | None = None) -> Path:
        """Write every artifact we have into out_dir (created if needed)."""
        out_dir = Path(out_dir) if out_dir is not None else self.config.output_dir
        out_dir.mkdir(parents=True, exist_ok=True)

        with open(out_dir / "run.json", "w", newline="\n") as f:
            json.dump({"config": self.config.to_dict(), "summary": self.summary()}, f, indent=2)
            f.write("\n")
        convergence = self.convergence_frame()
        _write_csv(convergence, out_dir / "convergence.csv")
        if self.data is not None:
            _write_csv(self.design_frame(), out_dir / "design.csv")
        if self.reliability is not None:
            _write_csv(self.reliability, out_dir / "reliability.csv")
        if self.error_map is not None:
            _write_csv(self.error_map, out_dir / "error_map.csv")

        reconstruction = None
        if self.reconstruction is not None and self.reconstruction.stds is not None:
            reconstruction = list(zip(self.reconstruction.p_map, self.reconstruction.stds))
        report = render_template(
            "report.html",
            title=f"surrogate_kit run {self.config.name}",
            kind=self.kind,
            converged=self.converged,
            termination=self.termination,
            tolerance=self.config.tolerance,
            final_error=self.final_error,
            total_work=self.total_work,
            n_points=self.data.design.size if self.data is not None else 0,
            iterations=self.iterations,
            reconstruction=reconstruction,
            convergence=convergence,
        )
        with open(out_dir / "report.html", "w", newline="\n") as f:
            f.write(report)
        debug_print(1, f"Artifacts written to {out_dir}")
        return out_dir


def design_frame(data: TrainingData) -> pd.DataFrame:
    """p1..pd, tolerance, y1..ym; one row per design point."""
    design = data.design
    columns = {f"p{i + 1}": design.points[:, i] for i in range(design.dim)}
    columns["tolerance"] = design.tolerances
    columns |= {f"y{j + 1}": data.values[:, j] for j in range(data.output_dim)}
    return pd.DataFrame(columns)


def load_training_data(run_dir: os.PathLike | str, domain: Box) -> TrainingData:
    """Reload the training data from an earlier run's design.csv."""
    path = Path(run_dir) / "design.csv"
    if not path.is_file():
        raise InputError(f"No design.csv in {run_dir}")
    frame = pd.read_csv(path)
    point_columns = [f"p{i + 1}" for i in range(domain.dim)]
    value_columns = [column for column in frame.columns if column.startswith("y")]
    missing = [column for column in [*point_columns, "tolerance"] if column not in frame.columns]
    if missing or not value_columns:
        raise InputError(f"design.csv in {run_dir} is missing columns {missing or ['y1']}")
    design = Design(
        frame[point_columns].to_numpy(dtype=float),
        frame["tolerance"].to_numpy(dtype=float),
        domain,
    )
    debug_print(1, f"Loaded {design.size} training points from {path}")
    return TrainingData(design, frame[value_columns].to_numpy(dtype=float))


def reliability_columns(dim: int) -> list[str]:
    return [f"p{i + 1}" for i in range(dim)] + ["e_est", "e_mean", "ratio", "flag"]
