import pytest

from tagprompt.config import TrainConfig
from tagprompt.errors import GradientCheckError
from tagprompt.gradcheck import MAIN_GROUPS, NEGATIVE_GROUPS, gradient_check, micro_config


def test_micro_config_shapes():
    cfg = micro_config(TrainConfig(alpha=0.5))
    assert (cfg.embed_dim, cfg.dtype, cfg.template) == (8, "float64", "[class]")
    assert cfg.neg_prompt_length == 4
    assert cfg.alpha == 0.5


def test_all_groups_pass():
    report = gradient_check(TrainConfig(alpha=0.5))
    assert set(report.errors) == set(MAIN_GROUPS) | set(NEGATIVE_GROUPS)
    assert report.passed, report.errors


def test_alpha_zero_checks_main_groups_only():
    report = gradient_check(TrainConfig(alpha=0.0))
    assert set(report.errors) == set(MAIN_GROUPS)
    assert report.passed, report.errors


def test_handcrafted_mode_has_no_prompt_group():
    report = gradient_check(TrainConfig(alpha=0.5, negative_prompt_mode="handcrafted"))
    assert "negative_prompt" not in report.errors
    assert report.passed, report.errors


def test_negated_gradient_is_caught():
    def negate_text(name, grad):
        return -grad if name == "text_encoder" else grad

    report = gradient_check(TrainConfig(alpha=0.5), perturb=negate_text)
    assert report.failures == ["text_encoder"]
    assert report.to_dict()["passed"] is False
    with pytest.raises(GradientCheckError, match="text_encoder"):
        gradient_check(TrainConfig(alpha=0.5), perturb=negate_text, raise_on_failure=True)
