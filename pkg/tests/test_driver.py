import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import tomlkit

from surrogate_kit.adaptive import (
    ERROR_SLACK,
    adaptive_run,
    fit_surrogate,
    position_adaptive_run,
    reconstruct,
    reliability_study,
    setup_forward_model,
)
from surrogate_kit.artifacts import load_training_data
from surrogate_kit.debug import debug_level, get_debug_level
from surrogate_kit.errors import InputError
from surrogate_kit.load_resources import render_template, significant
from surrogate_kit.run_config import RunConfig
from surrogate_kit.surrogate import EXIT_CAP_REACHED, EXIT_CONVERGED, EXIT_ERROR, main
from surrogate_kit.work_budget import design_work

GOLDEN = Path(__file__).parent / "golden"

# Small enough to run in seconds
SMALL = {
    "tolerance": 1e-6,
    "max_iterations": 2,
    "error_model": {"grid_points": 9},
    "reconstruction": {"starts": 2, "grid_points": 3},
    "reliability": {"starts": 2, "grid_points": 3},
}


def small_settings(**overrides) -> dict:
    settings = json.loads(json.dumps(SMALL))
    for key, value in overrides.items():
        if isinstance(value, dict):
            settings.setdefault(key, {}).update(value)
        else:
            settings[key] = value
    return settings


def small_config(**overrides) -> RunConfig:
    return RunConfig(small_settings(**overrides))


def write_config(path: Path, **overrides) -> Path:
    path.write_text(tomlkit.dumps(small_settings(**overrides)))
    return path


def header(path: Path) -> list[str]:
    return path.read_text().splitlines()[0].split(",")


@pytest.fixture(autouse=True)
def quiet():
    with debug_level(0):
        yield


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """One capped adaptive run, written out."""
    out_dir = tmp_path_factory.mktemp("small_run")
    with debug_level(0):
        artifacts = adaptive_run(small_config())
    artifacts.write(out_dir)
    return artifacts, out_dir


class TestAdaptiveRun:
    def test_vacuous_tolerance_stops_at_once(self):
        artifacts = adaptive_run(small_config(tolerance=1e9))
        assert artifacts.converged
        assert len(artifacts.records) == 1
        assert artifacts.data.design.size == 8
        assert artifacts.total_work == pytest.approx(80.0)

    def test_iteration_cap(self, small_run):
        artifacts, _ = small_run
        assert not artifacts.converged
        assert artifacts.termination.startswith("IterationCapReached")
        assert len(artifacts.records) == 3
        assert [record.iteration for record in artifacts.records] == [0, 1, 2]

    def test_work_ledger(self, small_run):
        artifacts, _ = small_run
        work_model = artifacts.config.work_model()
        assert artifacts.total_charged == pytest.approx(
            design_work(artifacts.data.design, work_model), rel=1e-12
        )
        cumulative = [record.cum_work for record in artifacts.records]
        assert cumulative == sorted(cumulative)
        assert artifacts.records[-1].cum_work <= artifacts.total_charged + 1e-9

    def test_design_only_grows(self, small_run):
        artifacts, _ = small_run
        sizes = [record.n_points for record in artifacts.records]
        assert sizes == sorted(sizes)
        assert sizes[0] == 8
        assert np.all(artifacts.data.design.tolerances <= 0.1)

    def test_reconstruction_attached(self, small_run):
        artifacts, _ = small_run
        assert artifacts.reconstruction is not None
        assert artifacts.reconstruction.p_map.shape == (2,)
        assert np.all(artifacts.reconstruction.stds > 0)

    def test_work_cap(self):
        cfg = small_config(max_work=100.0, max_iterations=5)
        artifacts = adaptive_run(cfg)
        assert not artifacts.converged
        assert artifacts.total_work <= 100.0 * (1 + 1e-9)

    def test_quantized_levels(self):
        cfg = small_config(model={"name": "quantized"})
        artifacts = adaptive_run(cfg)
        levels = np.log2(0.1 / artifacts.data.design.tolerances)
        np.testing.assert_allclose(levels, np.round(levels), atol=1e-9)
        assert artifacts.total_charged == pytest.approx(
            design_work(artifacts.data.design, cfg.work_model()), rel=1e-12
        )

    def test_global_error_never_rises(self, small_run):
        artifacts, _ = small_run
        errors = [record.global_error for record in artifacts.records]
        for before, after in zip(errors, errors[1:]):
            assert after <= before * (1 + ERROR_SLACK)

    def test_quantized_surplus_shrinks_next_increment(self):
        cfg = small_config(model={"name": "quantized"}, max_iterations=3)
        records = adaptive_run(cfg).records
        # Replay the budget schedule from the recorded errors and work
        controller = cfg.budget_controller()
        overspent = shrunk = False
        for before, after in zip(records, records[1:]):
            if before.iteration > 0:
                previous = records[before.iteration - 1]
                controller.step(previous.global_error, before.global_error)
            allotted = after.delta_w
            assert allotted == pytest.approx(controller.effective_increment(), rel=1e-9)
            shrunk |= allotted < controller.increment * (1 - 1e-9)
            spent = after.cum_work - before.cum_work
            overspent |= spent > allotted * (1 + 1e-9)
            controller.record_spending(spent)
        assert overspent
        assert shrunk

    def test_covariance_must_match_outputs(self):
        cfg = small_config(likelihood={"covariance_diagonal": [1.0, 1.0]})
        with pytest.raises(InputError):
            adaptive_run(cfg)


class TestDeterminism:
    def test_same_seed_same_files(self, tmp_path):
        first = adaptive_run(small_config(max_iterations=1)).write(tmp_path / "first")
        second = adaptive_run(small_config(max_iterations=1)).write(tmp_path / "second")
        for name in ("run.json", "convergence.csv", "design.csv", "error_map.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_different_seed_different_values(self, tmp_path):
        first = adaptive_run(small_config(max_iterations=1)).write(tmp_path / "first")
        second = adaptive_run(small_config(max_iterations=1, seed=1)).write(tmp_path / "second")
        assert (first / "design.csv").read_bytes() != (second / "design.csv").read_bytes()


class TestArtifacts:
    def test_schema(self, small_run):
        _, out_dir = small_run
        schema = json.loads((GOLDEN / "schema.json").read_text())
        for name in ("convergence.csv", "design.csv", "error_map.csv"):
            assert header(out_dir / name) == schema[name]
        written = json.loads((out_dir / "run.json").read_text())
        assert list(written) == schema["run.json"]
        assert list(written["summary"]) == schema["summary"]
        assert (out_dir / "report.html").is_file()

    def test_convergence_table_matches_records(self, small_run):
        artifacts, out_dir = small_run
        frame = pd.read_csv(out_dir / "convergence.csv")
        assert len(frame) == len(artifacts.records)
        np.testing.assert_allclose(
            frame["global_error"], [record.global_error for record in artifacts.records]
        )

    def test_reload_training_data(self, small_run):
        artifacts, out_dir = small_run
        data = load_training_data(out_dir, artifacts.data.design.domain)
        np.testing.assert_allclose(data.design.points, artifacts.data.design.points)
        np.testing.assert_allclose(data.values, artifacts.data.values)

    def test_reload_needs_design(self, tmp_path, unit_square):
        with pytest.raises(InputError):
            load_training_data(tmp_path, unit_square)

    def test_report_number_format(self):
        assert significant(0.0123456789) == "0.0123457"
        assert significant(2.0, 3) == "2"
        assert significant(float("nan")) == "n/a"

    def test_report_escapes_run_data(self, small_run):
        artifacts, _ = small_run
        page = render_template(
            "report.html",
            title="<b>run</b>",
            kind="adaptive",
            converged=False,
            termination="stopped",
            tolerance=1e-2,
            final_error=float("nan"),
            total_work=80.0,
            n_points=8,
            iterations=0,
            reconstruction=None,
            convergence=artifacts.convergence_frame(),
        )
        assert "&lt;b&gt;run&lt;/b&gt;" in page
        assert "n/a" in page


class TestBaseline:
    def test_fixed_tolerance_points(self):
        artifacts = position_adaptive_run(small_config(), 0.05)
        assert [record.n_points for record in artifacts.records] == [8, 9, 10]
        np.testing.assert_allclose(artifacts.data.design.tolerances[8:], 0.05)
        increments = np.diff([record.cum_work for record in artifacts.records])
        np.testing.assert_allclose(increments, 20.0)
        assert artifacts.kind == "baseline"

    def test_tolerance_must_be_positive(self):
        with pytest.raises(InputError):
            position_adaptive_run(small_config(), 0.0)


class TestStudies:
    def test_reconstruct_from_measurement(self, small_run):
        artifacts, _ = small_run
        cfg = small_config()
        model = setup_forward_model(cfg)
        surrogate = fit_surrogate(artifacts.data)
        result = reconstruct(cfg, surrogate, model, measurement=model.value([0.5, 0.5]))
        assert np.all(model.domain.contains(result.p_map, slack=1e-12))
        assert result.stds.shape == (2,)

    def test_reliability_table(self, small_run):
        artifacts, _ = small_run
        frame = reliability_study(small_config(), artifacts.data, points=3, draws=2)
        assert list(frame.columns) == json.loads((GOLDEN / "schema.json").read_text())[
            "reliability.csv"
        ]
        assert len(frame) == 3
        assert set(frame["flag"]) <= {"ok", "zero-error", "solver-failure"}
        assert frame["ratio"].isna().equals(frame["flag"] != "ok")
        assert np.all(frame["e_est"] >= 0)

    def test_reliability_needs_points(self, small_run):
        artifacts, _ = small_run
        with pytest.raises(InputError):
            reliability_study(small_config(), artifacts.data, points=0)


class TestCommandLine:
    def run_main(self, *argv) -> int:
        with pytest.raises(SystemExit) as stop:
            main([str(arg) for arg in argv])
        return stop.value.code

    def test_converged_run(self, tmp_path, capsys):
        config = write_config(tmp_path / "run.toml", tolerance=1e9)
        out = tmp_path / "out"
        assert self.run_main("run", "-c", config, "-o", out, "--debug", "0") == EXIT_CONVERGED
        assert (out / "run.json").is_file()
        assert str(out) in capsys.readouterr().out

    def test_cap_reached(self, tmp_path):
        config = write_config(tmp_path / "run.toml", max_iterations=1)
        out = tmp_path / "out"
        assert self.run_main("run", "-c", config, "-o", out, "--debug", "0") == EXIT_CAP_REACHED

    def test_max_work_override(self, tmp_path):
        config = write_config(tmp_path / "run.toml", max_iterations=50)
        out = tmp_path / "out"
        status = self.run_main("run", "-c", config, "-o", out, "--max-work", "90", "--debug", "0")
        assert status == EXIT_CAP_REACHED
        summary = json.loads((out / "run.json").read_text())["summary"]
        assert summary["total_work"] <= 90.0 * (1 + 1e-9)

    def test_missing_config(self, tmp_path, capsys):
        status = self.run_main("run", "-c", tmp_path / "absent.toml", "--debug", "0")
        assert status == EXIT_ERROR
        assert "InputError" in capsys.readouterr().err

    def test_no_command(self):
        assert self.run_main() == EXIT_ERROR

    def test_baseline(self, tmp_path):
        config = write_config(tmp_path / "run.toml", tolerance=1e9)
        out = tmp_path / "out"
        status = self.run_main("baseline", "-c", config, "-o", out, "--eps", "0.05", "--debug", "0")
        assert status == EXIT_CONVERGED

    def test_reconstruct_and_reliability(self, tmp_path, small_run):
        _, run_dir = small_run
        config = write_config(tmp_path / "run.toml")
        out = tmp_path / "reconstruction"
        status = self.run_main(
            "reconstruct", "-c", config, "--from-run", run_dir, "-o", out,
            "--p-true", "0.5", "0.5", "--debug", "0",
        )  # fmt: skip
        assert status == EXIT_CONVERGED
        summary = json.loads((out / "run.json").read_text())["summary"]
        assert summary["kind"] == "reconstruct"
        assert len(summary["reconstruction"]["p_map"]) == 2

        out = tmp_path / "reliability"
        status = self.run_main(
            "reliability", "-c", config, "--from-run", run_dir, "-o", out,
            "--points", "2", "--draws", "1", "--debug", "0",
        )  # fmt: skip
        assert status == EXIT_CONVERGED
        assert header(out / "reliability.csv") == ["p1", "p2", "e_est", "e_mean", "ratio", "flag"]


def test_debug_level_is_scoped():
    with debug_level(3):
        assert get_debug_level() == 3
    assert get_debug_level() == 0
