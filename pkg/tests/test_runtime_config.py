import pytest

from surrogate_kit import runtime_config
from surrogate_kit.errors import InputError
from surrogate_kit.forward_models import ParabolicCylinderModel, QuantizedLevelModel
from surrogate_kit.work_budget import WorkModel


@pytest.fixture
def work():
    return WorkModel.generic(0.5)


def test_parabolic_cylinder(work):
    model = runtime_config.build_forward_model("parabolic-cylinder", {}, work, seed=3)
    assert isinstance(model, ParabolicCylinderModel)
    assert model.seed == 3
    assert model.output_dim == 3


def test_quantized_wraps_the_base_model(work):
    model = runtime_config.build_forward_model(
        "quantized", {"angles": [0.0, 1.0], "ratio": 0.25}, work, noise="exact"
    )
    assert isinstance(model, QuantizedLevelModel)
    assert isinstance(model.base, ParabolicCylinderModel)
    assert model.output_dim == 2
    assert model.level_tolerance(1) == pytest.approx(0.025)


def test_quantized_cannot_wrap_itself(work):
    with pytest.raises(InputError):
        runtime_config.build_forward_model("quantized", {"base": "quantized"}, work)


def test_unknown_model(work):
    with pytest.raises(InputError):
        runtime_config.build_forward_model("stokes", {}, work)


def test_every_choice_builds(work):
    for name in runtime_config.forward_model_choices:
        assert runtime_config.build_forward_model(name, {}, work).name == name
