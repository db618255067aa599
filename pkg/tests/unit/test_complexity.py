import pytest
from analysis import complexity
from stmo.config import ModelConfig, Stage, Variant
from stmo.model import build_model


def _instantiated(config, stage):
    return sum(param.numel() for param in build_model(config, stage).parameters())


@pytest.mark.parametrize(
    "config",
    [
        ModelConfig(),
        ModelConfig(variant=Variant.FULL),
        ModelConfig(n_frames=27, d_model=64, heads=4),
        ModelConfig(n_frames=9, n_joints=5, d_model=16, heads=2, use_mofa=False),
        ModelConfig(n_frames=1, kernel=1, n_joints=5, d_model=16, heads=2),
        ModelConfig(
            n_frames=9,
            d_model=32,
            heads=4,
            variant=Variant.CUSTOM,
            tem_depth=0,
            decoder_depth=0,
            use_sem=False,
        ),
    ],
)
@pytest.mark.parametrize("stage", [Stage.PRETRAIN, Stage.FINETUNE])
def test_count_matches_instantiated_model(config, stage):
    assert complexity.count_params(config, stage) == _instantiated(config, stage)


def test_ablation_presets_match_instantiated_models():
    for name, config in complexity.ablation_presets().items():
        expected = _instantiated(config, Stage.FINETUNE)
        assert complexity.count_params(config, Stage.FINETUNE) == expected, name


@pytest.mark.parametrize(
    "preset, millions",
    [("sem_only", 1.1), ("tem_only", 1.6), ("sem_tem", 2.2), ("stmo", 6.2)],
)
def test_ablation_parameter_counts(preset, millions):
    config = complexity.ablation_presets()[preset]
    params = complexity.count_params(config, Stage.FINETUNE)
    assert params == pytest.approx(millions * 1e6, rel=0.05)


def test_full_variant_parameter_count():
    params = complexity.count_params(ModelConfig(variant=Variant.FULL), Stage.FINETUNE)
    assert params == pytest.approx(6.7e6, rel=0.05)


def test_finetune_count_excludes_decoder():
    report = complexity.complexity_report(ModelConfig(), Stage.FINETUNE)
    assert "decoder" not in report.params_by_module
    assert set(report.params_by_module) == {"sem", "tem", "mofa", "heads"}
    pretrain = complexity.complexity_report(ModelConfig(), Stage.PRETRAIN)
    assert "decoder" in pretrain.params_by_module
    assert "mofa" not in pretrain.params_by_module


def test_attention_parameters_scale_quadratically():
    ratio = complexity._attention_params(512) / complexity._attention_params(256)
    assert ratio == pytest.approx(4.0, rel=0.01)


@pytest.mark.parametrize(
    "variant, millions", [(Variant.SMALL, 1482), (Variant.FULL, 1737)]
)
def test_flops_of_reference_models(variant, millions):
    flops = complexity.count_flops(ModelConfig(variant=variant), Stage.FINETUNE)
    assert flops == pytest.approx(millions * 1e6, rel=0.15)


def test_flop_ratio_of_window_lengths():
    short = complexity.count_flops(ModelConfig(n_frames=27), Stage.FINETUNE)
    long = complexity.count_flops(ModelConfig(n_frames=81), Stage.FINETUNE)
    assert short / long == pytest.approx(163 / 493, rel=0.15)


def test_masked_encoder_is_cheaper():
    config = ModelConfig()
    masked = complexity.flop_breakdown(config, Stage.PRETRAIN, visible_frames=48)
    full = complexity.flop_breakdown(config, Stage.PRETRAIN)
    assert masked["decoder"] == full["decoder"]
    ratio = (masked["sem"] + masked["tem"]) / (full["sem"] + full["tem"])
    assert ratio < 0.25


def test_report_breakdowns_add_up():
    report = complexity.complexity_report(ModelConfig(), Stage.FINETUNE)
    assert sum(report.params_by_module.values()) == report.params
    assert sum(report.flops_by_module.values()) == report.flops


@pytest.mark.parametrize(
    "n_frames, stride, rf",
    [
        (27, 1, 27),
        (81, 1, 81),
        (243, 1, 243),
        (27, 3, 81),
        (81, 3, 243),
        (27, 9, 243),
        (243, 2, 486),
    ],
)
def test_receptive_field_table(n_frames, stride, rf):
    field = complexity.receptive_field(n_frames, stride)
    assert field.rf == rf
    assert field.span == rf - stride + 1


def test_receptive_field_rejects_invalid_arguments():
    with pytest.raises(ValueError):
        complexity.receptive_field(0, 1)
    with pytest.raises(ValueError):
        complexity.receptive_field(27, 0)
