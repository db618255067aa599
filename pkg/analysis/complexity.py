"""
Parameter and FLOP accounting from the model config alone, and the temporal
receptive field of a strided window.

FLOP convention: 2 operations per multiply-add in every linear map,
convolution and attention product (QK^T and AV); 1 operation per element for
softmax, layer normalization and GELU. Bias and residual additions are not
counted. Counts cover one pass over an N-frame window, which produces one
output frame.
"""

import typing as t

import pydantic

from stmo.config import ModelConfig, Stage, Variant


class ComplexityReport(pydantic.BaseModel):
    """Totals and per-module breakdown of one model"""

    model_config = pydantic.ConfigDict(extra="forbid", frozen=True)

    stage: Stage
    params: int
    flops: int
    params_by_module: t.Dict[str, int]
    flops_by_module: t.Dict[str, int]

    @pydantic.model_validator(mode="after")
    def _check_totals(self) -> "ComplexityReport":
        if sum(self.params_by_module.values()) != self.params:
            raise ValueError("Parameter breakdown does not add up to the total")
        if sum(self.flops_by_module.values()) != self.flops:
            raise ValueError("FLOP breakdown does not add up to the total")
        return self


class ReceptiveField(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    rf: int
    span: int


def receptive_field(n_frames: int, stride: int) -> ReceptiveField:
    """
    Temporal receptive field N·s of a window of N frames sampled every s
    frames, and the span N·s - s + 1 between its first and last source frame.
    """
    if n_frames < 1 or stride < 1:
        raise ValueError(f"Need N >= 1 and s >= 1, got N={n_frames}, s={stride}")
    return ReceptiveField(rf=n_frames * stride, span=n_frames * stride - stride + 1)


# Parameter counts
def _linear_params(inputs: int, outputs: int) -> int:
    return inputs * outputs + outputs


def _norm_params(d_model: int) -> int:
    return 2 * d_model


def _attention_params(d_model: int) -> int:
    return _linear_params(d_model, 3 * d_model) + _linear_params(d_model, d_model)


def _encoder_layer_params(d_model: int, hidden: int) -> int:
    return (
        2 * _norm_params(d_model)
        + _attention_params(d_model)
        + _linear_params(d_model, hidden)
        + _linear_params(hidden, d_model)
    )


def _strided_layer_params(d_model: int, hidden: int, kernel: int) -> int:
    return (
        2 * _norm_params(d_model)
        + _attention_params(d_model)
        + _linear_params(d_model, hidden)
        + hidden * d_model * kernel
        + d_model
    )


def _transformer_params(length: int, depth: int, d_model: int, hidden: int) -> int:
    return (
        length * d_model
        + depth * _encoder_layer_params(d_model, hidden)
        + _norm_params(d_model)
    )


def _sem_params(config: ModelConfig) -> int:
    blocks = config.sem_blocks if config.use_sem else 0
    block = (
        _norm_params(config.d_model)
        + _linear_params(config.d_model, config.sem_hidden)
        + _linear_params(config.sem_hidden, config.d_model)
    )
    return _linear_params(config.input_features, config.d_model) + blocks * block


def _tem_params(config: ModelConfig) -> int:
    if config.tem_depth == 0:
        return 0
    return _transformer_params(
        config.n_frames, config.tem_depth, config.d_model, config.ffn_hidden
    )


def param_breakdown(config: ModelConfig, stage: Stage) -> t.Dict[str, int]:
    d_model = config.d_model
    breakdown = {"sem": _sem_params(config), "tem": _tem_params(config)}
    if Stage(stage) == Stage.PRETRAIN:
        breakdown["spatial_pad"] = 2
        breakdown["decoder"] = (
            d_model
            + _transformer_params(
                config.n_frames, config.decoder_depth, d_model, config.ffn_hidden
            )
            + _linear_params(d_model, config.input_features)
        )
        return breakdown

    head = _linear_params(d_model, 3 * config.n_joints)
    if config.use_mofa:
        breakdown["mofa"] = config.mofa_depth * _strided_layer_params(
            d_model, config.ffn_hidden, config.kernel
        ) + _norm_params(d_model)
        breakdown["heads"] = 2 * head
    else:
        breakdown["heads"] = head
    return breakdown


def count_params(config: ModelConfig, stage: Stage) -> int:
    """
    Number of learnable scalars of the model of a stage. The fine-tuning
    model has no decoder.
    """
    return sum(param_breakdown(config, stage).values())


# FLOP counts
def _linear_flops(tokens: int, inputs: int, outputs: int) -> int:
    return 2 * tokens * inputs * outputs


def _attention_flops(tokens: int, d_model: int, heads: int) -> int:
    return (
        _linear_flops(tokens, d_model, 3 * d_model)
        + 2 * tokens * tokens * d_model  # QK^T
        + heads * tokens * tokens  # softmax
        + 2 * tokens * tokens * d_model  # AV
        + _linear_flops(tokens, d_model, d_model)
    )


def _encoder_layer_flops(tokens: int, config: ModelConfig) -> int:
    d_model, hidden = config.d_model, config.ffn_hidden
    return (
        2 * tokens * d_model
        + _attention_flops(tokens, d_model, config.heads)
        + _linear_flops(tokens, d_model, hidden)
        + tokens * hidden
        + _linear_flops(tokens, hidden, d_model)
    )


def _transformer_flops(tokens: int, depth: int, config: ModelConfig) -> int:
    if depth == 0:
        return 0
    return depth * _encoder_layer_flops(tokens, config) + tokens * config.d_model


def _strided_layer_flops(tokens: int, config: ModelConfig) -> int:
    d_model, hidden, kernel = config.d_model, config.ffn_hidden, config.kernel
    return (
        2 * tokens * d_model
        + _attention_flops(tokens, d_model, config.heads)
        + _linear_flops(tokens, d_model, hidden)
        + tokens * hidden
        + _linear_flops(tokens // kernel, hidden * kernel, d_model)
    )


def _sem_flops(tokens: int, config: ModelConfig) -> int:
    d_model, hidden = config.d_model, config.sem_hidden
    blocks = config.sem_blocks if config.use_sem else 0
    block = (
        tokens * d_model
        + _linear_flops(tokens, d_model, hidden)
        + tokens * hidden
        + _linear_flops(tokens, hidden, d_model)
    )
    return _linear_flops(tokens, config.input_features, d_model) + blocks * block


def flop_breakdown(
    config: ModelConfig, stage: Stage, visible_frames: t.Optional[int] = None
) -> t.Dict[str, int]:
    """
    :param visible_frames: Frames reaching the Stage I encoder, all N if None
    """
    n_frames, d_model = config.n_frames, config.d_model
    if Stage(stage) == Stage.PRETRAIN:
        visible = n_frames if visible_frames is None else visible_frames
        return {
            "sem": _sem_flops(visible, config),
            "tem": _transformer_flops(visible, config.tem_depth, config),
            "decoder": _transformer_flops(n_frames, config.decoder_depth, config)
            + _linear_flops(n_frames, d_model, config.input_features),
        }

    breakdown = {
        "sem": _sem_flops(n_frames, config),
        "tem": _transformer_flops(n_frames, config.tem_depth, config),
    }
    heads = _linear_flops(n_frames, d_model, 3 * config.n_joints)
    if config.use_mofa:
        lengths = config.mofa_lengths()
        layers = [_strided_layer_flops(length, config) for length in lengths]
        breakdown["mofa"] = sum(layers) + d_model
        heads += _linear_flops(1, d_model, 3 * config.n_joints)
    breakdown["heads"] = heads
    return breakdown


def count_flops(config: ModelConfig, stage: Stage) -> int:
    """Operations of one window pass, see the module docstring"""
    return sum(flop_breakdown(config, stage).values())


def complexity_report(config: ModelConfig, stage: Stage) -> ComplexityReport:
    params = param_breakdown(config, stage)
    flops = flop_breakdown(config, stage)
    return ComplexityReport(
        stage=stage,
        params=sum(params.values()),
        flops=sum(flops.values()),
        params_by_module=params,
        flops_by_module=flops,
    )


def ablation_presets(base: t.Optional[ModelConfig] = None) -> t.Dict[str, ModelConfig]:
    """
    Component ablations of the fine-tuning model: SEM alone (two MLP blocks),
    TEM alone (SEM reduced to its input projection), SEM with TEM, and the
    full model with MOFA.
    """
    base = base or ModelConfig()
    depths = dict(variant=Variant.CUSTOM, decoder_depth=base.decoder_depth)
    return {
        "sem_only": base.with_overrides(
            sem_blocks=2, tem_depth=0, use_mofa=False, **depths
        ),
        "tem_only": base.with_overrides(
            use_sem=False, tem_depth=base.tem_depth, use_mofa=False, **depths
        ),
        "sem_tem": base.with_overrides(
            tem_depth=base.tem_depth, use_mofa=False, **depths
        ),
        "stmo": base,
    }
