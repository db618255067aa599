"""
The two stage models. Stage I (masked pose modeling) is SEM → TEM → decoder
and reconstructs 2D poses of masked windows. Stage II (STMO) is SEM → TEM →
MOFA with a multi-frame head after TEM and a center-frame head after MOFA.
Both stages name their encoder parameters identically (``sem.*``, ``tem.*``)
so the pre-trained encoder transfers by name.
"""

import contextlib
import dataclasses
import logging
import typing as t

import numpy as np
import torch
from torch import nn

from masking.masking import MaskPlan
from stmo.config import ModelConfig, ModelInputException, Stage
from stmo.layers import (
    MLPBlock,
    MultiHeadAttention,
    PositionalTransformer,
    StridedEncoderLayer,
)

ENCODER_PREFIXES = ("sem.", "tem.")
INIT_STD = 0.02


# Custom Exceptions
class TransferException(Exception):
    """Exception raised when a pre-trained encoder does not fit the target model"""


class SpatialEncoder(nn.Module):
    """
    Frame-wise MLP: projects the J·2 coordinates of each frame to d and applies
    residual sub-blocks. The same weights are used for every frame.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        blocks = config.sem_blocks if config.use_sem else 0
        self.input_proj = nn.Linear(config.input_features, config.d_model)
        self.blocks = nn.ModuleList(
            [
                MLPBlock(config.d_model, config.sem_hidden, config.dropout)
                for _ in range(blocks)
            ]
        )

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        x = self.input_proj(frames.flatten(start_dim=-2))
        for block in self.blocks:
            x = block(x)
        return x


class FrameAggregator(nn.Module):
    """Strided Transformer layers collapsing the window to a single frame"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(
            [
                StridedEncoderLayer(
                    config.d_model,
                    config.heads,
                    config.ffn_hidden,
                    config.kernel,
                    config.dropout,
                )
                for _ in range(config.mofa_depth)
            ]
        )
        self.norm = nn.LayerNorm(config.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)


class PoseDecoder(nn.Module):
    """
    Stage I decoder. The encoded unmasked embeddings come first, followed by
    one temporal padding embedding per masked frame; every slot gets the
    positional embedding of its original window position.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.n_joints = config.n_joints
        self.temporal_pad = nn.Parameter(torch.zeros(config.d_model))
        self.transformer = PositionalTransformer(
            config.n_frames,
            config.decoder_depth,
            config.d_model,
            config.heads,
            config.ffn_hidden,
            config.dropout,
        )
        self.head = nn.Linear(config.d_model, config.input_features)

    def forward(
        self,
        encoded: torch.Tensor,
        keep_index: torch.Tensor,
        masked_index: torch.Tensor,
    ) -> torch.Tensor:
        batch, num_kept, d_model = encoded.shape
        if keep_index.shape != (batch, num_kept):
            raise ModelInputException(
                f"Got {num_kept} encoded frames but keep indices of shape"
                f" {tuple(keep_index.shape)}"
            )
        num_masked = masked_index.shape[1]
        padding = self.temporal_pad.expand(batch, num_masked, d_model)
        tokens = torch.cat([encoded, padding], dim=1)
        order = torch.cat([keep_index, masked_index], dim=1)
        decoded = self.head(self.transformer(tokens, positions=order))

        # Put every slot back at its original window position
        restore = torch.argsort(order, dim=1)
        decoded = torch.gather(
            decoded, 1, restore.unsqueeze(-1).expand(-1, -1, decoded.shape[-1])
        )
        return decoded.reshape(batch, -1, self.n_joints, 2)


@dataclasses.dataclass(frozen=True)
class PlanBatch:
    """
    Mask plans of a batch as index tensors. Every plan of a batch masks the
    same number of frames, which holds for plans built from one MaskConfig.
    """

    keep_index: torch.Tensor  # (B, a)
    masked_index: torch.Tensor  # (B, b)
    spatial_mask: torch.Tensor  # (B, N, J) bool

    @classmethod
    def from_plans(cls, plans: t.Sequence[MaskPlan], n_joints: int) -> "PlanBatch":
        kept = {plan.num_unmasked for plan in plans}
        if len(kept) != 1:
            raise ModelInputException(f"Plans of a batch keep {kept} frames")
        return cls(
            keep_index=torch.tensor(
                [plan.unmasked_order for plan in plans], dtype=torch.long
            ).reshape(len(plans), plans[0].num_unmasked),
            masked_index=torch.tensor(
                [plan.masked_frames for plan in plans], dtype=torch.long
            ).reshape(len(plans), plans[0].num_masked),
            spatial_mask=torch.from_numpy(
                np.stack([plan.spatial_mask_matrix(n_joints) for plan in plans])
            ),
        )

    @classmethod
    def empty(cls, batch: int, n_frames: int, n_joints: int) -> "PlanBatch":
        return cls.from_plans([MaskPlan.empty(n_frames)] * batch, n_joints)


def apply_spatial_padding(
    frames: torch.Tensor, spatial_mask: torch.Tensor, spatial_pad: torch.Tensor
) -> torch.Tensor:
    """Replace the coordinates of masked joints by the padding joint e^S"""
    return torch.where(
        spatial_mask.unsqueeze(-1), spatial_pad.expand_as(frames), frames
    )


def _gather_frames(x: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
    shape = index.shape + x.shape[2:]
    flat = index.reshape(index.shape + (1,) * (x.dim() - 2)).expand(shape)
    return torch.gather(x, 1, flat)


def _check_inputs(config: ModelConfig, inputs: torch.Tensor):
    expected = (config.n_frames, config.n_joints, 2)
    if inputs.dim() != 4 or tuple(inputs.shape[1:]) != expected:
        raise ModelInputException(
            f"Expected inputs of shape (B, {expected[0]}, {expected[1]}, 2), got"
            f" {tuple(inputs.shape)}"
        )


def _init_weights(module: nn.Module):
    if isinstance(module, (nn.Linear, nn.Conv1d)):
        nn.init.trunc_normal_(module.weight, std=INIT_STD)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)
    elif isinstance(module, PositionalTransformer):
        nn.init.trunc_normal_(module.pos_embed, std=INIT_STD)


class PretrainModel(nn.Module):
    """Stage I model: encoder plus reconstruction decoder"""

    stage = Stage.PRETRAIN

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.spatial_pad = nn.Parameter(torch.zeros(2))
        self.sem = SpatialEncoder(config)
        self.tem = _build_tem(config)
        self.decoder = PoseDecoder(config)
        self.apply(_init_weights)

    def encode(self, inputs: torch.Tensor, plans: PlanBatch) -> torch.Tensor:
        """
        Pad masked joints, drop masked frames and encode the surviving frames
        at their original positions. Returns (B, a, d).
        """
        _check_inputs(self.config, inputs)
        if plans.keep_index.shape[1] == 0:
            raise ModelInputException("The mask plan leaves no frame to encode")
        padded = apply_spatial_padding(inputs, plans.spatial_mask, self.spatial_pad)
        kept = _gather_frames(padded, plans.keep_index)
        latents = self.sem(kept)
        if self.tem is not None:
            latents = self.tem(latents, positions=plans.keep_index)
        return latents

    def forward(self, inputs: torch.Tensor, plans: PlanBatch) -> torch.Tensor:
        """Reconstructed 2D poses (B, N, J, 2) in original frame order"""
        encoded = self.encode(inputs, plans)
        return self.decoder(encoded, plans.keep_index, plans.masked_index)


class STMOModel(nn.Module):
    """Stage II model: encoder, frame aggregator and the two 3D heads"""

    stage = Stage.FINETUNE

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.sem = SpatialEncoder(config)
        self.tem = _build_tem(config)
        self.mofa = FrameAggregator(config) if config.use_mofa else None
        self.head_all = nn.Linear(config.d_model, 3 * config.n_joints)
        self.head_center = (
            nn.Linear(config.d_model, 3 * config.n_joints) if config.use_mofa else None
        )
        self.apply(_init_weights)

    def encode(self, inputs: torch.Tensor) -> torch.Tensor:
        """SEM then TEM over all N frames, (B, N, d)"""
        _check_inputs(self.config, inputs)
        latents = self.sem(inputs)
        if self.tem is not None:
            latents = self.tem(latents)
        return latents

    def forward(self, inputs: torch.Tensor) -> t.Tuple[torch.Tensor, torch.Tensor]:
        """
        3D poses in millimeters: the center frame (B, J, 3) and every window
        frame (B, N, J, 3).
        """
        batch = inputs.shape[0]
        n_joints = self.config.n_joints
        scale = self.config.pose_scale
        latents = self.encode(inputs)
        y_all = self.head_all(latents).reshape(batch, -1, n_joints, 3) * scale
        if self.mofa is None:
            return y_all[:, self.config.center_index], y_all
        aggregated = self.mofa(latents)[:, 0]
        y_center = self.head_center(aggregated).reshape(batch, n_joints, 3) * scale
        return y_center, y_all


def _build_tem(config: ModelConfig) -> t.Optional[PositionalTransformer]:
    if config.tem_depth == 0:
        return None
    return PositionalTransformer(
        config.n_frames,
        config.tem_depth,
        config.d_model,
        config.heads,
        config.ffn_hidden,
        config.dropout,
    )


def build_model(
    config: ModelConfig, stage: Stage, seed: t.Optional[int] = None
) -> t.Union[PretrainModel, STMOModel]:
    """
    Instantiate the model of a stage. With a seed, initialization draws from
    its own generator and leaves the global torch RNG untouched.
    """
    model_class = PretrainModel if Stage(stage) == Stage.PRETRAIN else STMOModel
    if seed is None:
        return model_class(config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return model_class(config)


# Functional views of the individual modules, operating on (B, ...) tensors
def sem_forward(model: nn.Module, frames: torch.Tensor) -> torch.Tensor:
    return model.sem(frames)


def tem_forward(
    model: nn.Module, latents: torch.Tensor, positions: t.Optional[torch.Tensor] = None
) -> torch.Tensor:
    if model.tem is None:
        return latents
    return model.tem(latents, positions=positions)


def mofa_forward(model: STMOModel, latents: torch.Tensor) -> torch.Tensor:
    return model.mofa(latents)


def encoder_forward(
    model: nn.Module, inputs: torch.Tensor, plans: t.Optional[PlanBatch] = None
) -> torch.Tensor:
    """
    Encode a batch of windows. The pre-training model drops masked frames, the
    fine-tuning model takes every frame and no plan.
    """
    if isinstance(model, PretrainModel):
        if plans is None:
            plans = PlanBatch.empty(
                inputs.shape[0], model.config.n_frames, model.config.n_joints
            )
        return model.encode(inputs, plans)
    if plans is not None and (
        plans.masked_index.shape[1] > 0 or bool(plans.spatial_mask.any())
    ):
        raise ModelInputException("The fine-tuning encoder does not take masked plans")
    return model.encode(inputs)


def decoder_forward(
    model: PretrainModel, encoded: torch.Tensor, plans: PlanBatch
) -> torch.Tensor:
    return model.decoder(encoded, plans.keep_index, plans.masked_index)


def stmo_forward(
    model: STMOModel, inputs: torch.Tensor
) -> t.Tuple[torch.Tensor, torch.Tensor]:
    return model(inputs)


def transfer_encoder(
    pretrained: t.Union[nn.Module, t.Mapping[str, t.Any]], target: STMOModel
) -> t.List[str]:
    """
    Copy every SEM and TEM array of the pre-trained model into the fine-tuning
    model. MOFA and the heads keep their fresh initialization.
    :return: The transferred parameter names
    """
    if isinstance(pretrained, nn.Module):
        source = dict(pretrained.named_parameters())
    else:
        source = dict(pretrained)

    transferred = []
    with torch.no_grad():
        for name, param in target.named_parameters():
            if not name.startswith(ENCODER_PREFIXES):
                continue
            if name not in source:
                raise TransferException(f"Pre-trained encoder is missing '{name}'")
            value = torch.as_tensor(source[name])
            if tuple(value.shape) != tuple(param.shape):
                raise TransferException(
                    f"Shape of '{name}' differs: pre-trained {tuple(value.shape)},"
                    f" target {tuple(param.shape)}"
                )
            param.copy_(value)
            transferred.append(name)
    logging.info(f"Transferred {len(transferred)} encoder arrays")
    return transferred


@dataclasses.dataclass
class AttentionRecord:
    """Attention probabilities (B, heads, T_q, T_k) of one layer"""

    module: str
    layer: int
    weights: torch.Tensor


@contextlib.contextmanager
def record_attention(model: nn.Module) -> t.Iterator[t.List[AttentionRecord]]:
    """
    Record the attention probabilities of every attention layer during the
    forward passes run inside the context. The yielded list is filled when the
    context exits, labeled by module (tem, decoder, mofa) and layer index.
    """
    layers = [
        (name, module)
        for name, module in model.named_modules()
        if isinstance(module, MultiHeadAttention)
    ]
    for _, module in layers:
        module.recorded = []
    records: t.List[AttentionRecord] = []
    try:
        yield records
    finally:
        for name, module in layers:
            parts = name.split(".")
            layer_index = int(parts[parts.index("layers") + 1])
            for weights in module.recorded:
                records.append(AttentionRecord(parts[0], layer_index, weights))
            module.recorded = None
