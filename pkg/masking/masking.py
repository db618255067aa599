"""
Sampling of temporal, spatial and spatio-temporal masks for masked pose
modeling. Masking only produces indices; substituting the padding vectors
happens inside the model.
"""

import enum
import json
import math
import typing as t

import numpy as np
import pydantic


# Custom Exceptions
class MaskingException(Exception):
    """Exception raised when a masking configuration cannot be sampled"""


class MaskStrategy(str, enum.Enum):
    TEMPORAL = "temporal"
    SPATIAL = "spatial"
    SPATIO_TEMPORAL = "spatio-temporal"


class MaskConfig(pydantic.BaseModel):
    """
    Masking ratios. q_t is the fraction of masked frames, m_s the number of
    masked joints in every surviving frame.
    """

    model_config = pydantic.ConfigDict(extra="forbid", frozen=True)

    q_t: float = pydantic.Field(default=0.8, ge=0.0, lt=1.0)
    m_s: int = pydantic.Field(default=2, ge=0)
    strategy: MaskStrategy = MaskStrategy.SPATIO_TEMPORAL

    @pydantic.model_validator(mode="after")
    def _check_strategy(self) -> "MaskConfig":
        if self.strategy == MaskStrategy.TEMPORAL and self.m_s != 0:
            raise ValueError("Temporal masking requires m_s = 0")
        if self.strategy == MaskStrategy.SPATIAL and self.q_t != 0:
            raise ValueError("Spatial masking requires q_t = 0")
        return self

    def q_s(self, num_joints: int) -> float:
        return self.m_s / num_joints

    def combined_ratio(self, num_joints: int) -> float:
        return combined_ratio(self.q_t, self.q_s(num_joints))


class MaskPlan(pydantic.BaseModel):
    """
    Masks of one window: the masked frame indices, the surviving frames in
    their original order and one set of masked joints per surviving frame.
    """

    model_config = pydantic.ConfigDict(extra="forbid", frozen=True)

    masked_frames: t.Tuple[int, ...] = ()
    unmasked_order: t.Tuple[int, ...]
    spatial_masks: t.Tuple[t.Tuple[int, ...], ...]

    @pydantic.model_validator(mode="after")
    def _check_partition(self) -> "MaskPlan":
        frames = set(self.masked_frames) | set(self.unmasked_order)
        num_frames = len(self.masked_frames) + len(self.unmasked_order)
        if len(frames) != num_frames or frames != set(range(num_frames)):
            raise ValueError("Masked and unmasked frames must partition [0, N)")
        if list(self.unmasked_order) != sorted(self.unmasked_order):
            raise ValueError("Unmasked frames must keep their original order")
        if len(self.spatial_masks) != len(self.unmasked_order):
            raise ValueError("Need exactly one spatial mask per surviving frame")
        sizes = {len(mask) for mask in self.spatial_masks}
        if len(sizes) > 1:
            raise ValueError("All spatial masks must mask the same number of joints")
        for mask in self.spatial_masks:
            if len(set(mask)) != len(mask):
                raise ValueError(f"Spatial mask {mask} repeats a joint")
        return self

    @classmethod
    def empty(cls, num_frames: int) -> "MaskPlan":
        """A plan that masks nothing"""
        return cls(
            masked_frames=(),
            unmasked_order=tuple(range(num_frames)),
            spatial_masks=((),) * num_frames,
        )

    @property
    def num_frames(self) -> int:
        return len(self.masked_frames) + len(self.unmasked_order)

    @property
    def num_unmasked(self) -> int:
        return len(self.unmasked_order)

    @property
    def num_masked(self) -> int:
        return len(self.masked_frames)

    @property
    def is_empty(self) -> bool:
        return not self.masked_frames and not any(self.spatial_masks)

    def spatial_mask_matrix(self, num_joints: int) -> np.ndarray:
        """Boolean N×J matrix, True where a joint of a surviving frame is masked"""
        matrix = np.zeros((self.num_frames, num_joints), dtype=bool)
        for frame, mask in zip(self.unmasked_order, self.spatial_masks):
            if any(not 0 <= joint < num_joints for joint in mask):
                raise MaskingException(f"Spatial mask {mask} exceeds {num_joints}")
            matrix[frame, list(mask)] = True
        return matrix

    def to_json(self) -> str:
        return json.dumps(
            {
                "masked_frames": list(self.masked_frames),
                "spatial_masks": [list(mask) for mask in self.spatial_masks],
            }
        )

    @classmethod
    def from_json(cls, raw: str, num_frames: int) -> "MaskPlan":
        data = json.loads(raw)
        masked = tuple(data["masked_frames"])
        unmasked = tuple(i for i in range(num_frames) if i not in set(masked))
        return cls(
            masked_frames=masked,
            unmasked_order=unmasked,
            spatial_masks=tuple(tuple(mask) for mask in data["spatial_masks"]),
        )


def num_unmasked_frames(num_frames: int, q_t: float) -> int:
    """Surviving frame count a = floor((1 - q_t) * N)"""
    # (1 - 0.8) * 10 evaluates to 1.9999999999999996
    return int(math.floor((1.0 - q_t) * num_frames + 1e-9))


def sample_temporal_mask(
    num_frames: int, q_t: float, rng: np.random.Generator
) -> t.Tuple[int, ...]:
    """
    Draw the set of masked frames. The unmasked count is floored, the rest of
    the frames are masked, drawn uniformly without replacement.
    """
    if num_frames < 1:
        raise MaskingException(f"Need at least one frame, got {num_frames}")
    if not 0.0 <= q_t < 1.0:
        raise MaskingException(f"Temporal masking ratio must be in [0, 1), got {q_t}")

    num_kept = num_unmasked_frames(num_frames, q_t)
    if num_kept < 1:
        raise MaskingException(
            f"Masking ratio {q_t} leaves no frame of {num_frames} for the encoder"
        )
    masked = rng.choice(num_frames, size=num_frames - num_kept, replace=False)
    return tuple(sorted(int(i) for i in masked))


def sample_spatial_masks(
    num_frames: int, num_joints: int, m_s: int, rng: np.random.Generator
) -> t.Tuple[t.Tuple[int, ...], ...]:
    """
    Draw m_s masked joints independently for every frame.
    """
    if not 0 <= m_s <= num_joints:
        raise MaskingException(f"Cannot mask {m_s} of {num_joints} joints")
    return tuple(
        tuple(sorted(int(j) for j in rng.choice(num_joints, size=m_s, replace=False)))
        for _ in range(num_frames)
    )


def combined_ratio(q_t: float, q_s: float) -> float:
    """Total spatio-temporal masking ratio q_t + (1 - q_t) * q_s"""
    return q_t + (1.0 - q_t) * q_s


def build_plan(
    config: MaskConfig, num_frames: int, num_joints: int, rng: np.random.Generator
) -> MaskPlan:
    """
    Temporal masking first, then spatial masking of the surviving frames.
    """
    if config.m_s > num_joints:
        raise MaskingException(f"Cannot mask {config.m_s} of {num_joints} joints")
    masked = sample_temporal_mask(num_frames, config.q_t, rng)
    masked_set = set(masked)
    unmasked = tuple(i for i in range(num_frames) if i not in masked_set)
    spatial = sample_spatial_masks(len(unmasked), num_joints, config.m_s, rng)
    return MaskPlan(
        masked_frames=masked, unmasked_order=unmasked, spatial_masks=spatial
    )


def masked_fraction(plan: MaskPlan, num_joints: int) -> float:
    """Fraction of joint coordinates of the window hidden from the encoder"""
    hidden = plan.num_masked * num_joints + sum(len(m) for m in plan.spatial_masks)
    return hidden / (plan.num_frames * num_joints)
