"""
Architecture hyperparameters of the two-stage lifting model.
"""

import enum
import math
import typing as t

import pydantic


# Custom Exceptions
class ModelInputException(Exception):
    """Exception raised when a tensor does not fit the configured model"""


class Variant(str, enum.Enum):
    SMALL = "S"
    FULL = "full"
    CUSTOM = "custom"


class Stage(str, enum.Enum):
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"


# (TEM depth, decoder depth)
VARIANT_DEPTHS = {
    Variant.SMALL: (3, 2),
    Variant.FULL: (4, 3),
}


def _exact_log(value: int, base: int) -> t.Optional[int]:
    if base == 1:
        return 0 if value == 1 else None
    exponent = round(math.log(value, base))
    return exponent if base**exponent == value else None


class ModelConfig(pydantic.BaseModel):
    """
    Hyperparameters of both stage models. The S and full variants fix the TEM
    and decoder depths, the custom variant takes them as given. The MOFA depth
    defaults to log_kernel(n_frames) so that it collapses the window to one
    frame.
    """

    model_config = pydantic.ConfigDict(extra="forbid", frozen=True)

    n_frames: int = pydantic.Field(default=243, ge=1)
    n_joints: int = pydantic.Field(default=17, ge=2)
    d_model: int = pydantic.Field(default=256, ge=1)
    heads: int = pydantic.Field(default=8, ge=1)
    sem_blocks: int = pydantic.Field(default=1, ge=0)
    tem_depth: t.Optional[int] = pydantic.Field(default=None, ge=0)
    mofa_depth: t.Optional[int] = pydantic.Field(default=None, ge=0)
    decoder_depth: t.Optional[int] = pydantic.Field(default=None, ge=0)
    kernel: int = pydantic.Field(default=3, ge=1)
    ffn_ratio: int = pydantic.Field(default=2, ge=1)
    sem_ratio: int = pydantic.Field(default=4, ge=1)
    dropout: float = pydantic.Field(default=0.1, ge=0.0, lt=1.0)
    variant: Variant = Variant.SMALL
    use_sem: bool = True
    use_mofa: bool = True
    pose_scale: float = pydantic.Field(default=1000.0, gt=0.0)

    @pydantic.model_validator(mode="before")
    @classmethod
    def _fill_depths(cls, data: t.Any) -> t.Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        variant = Variant(data.get("variant", Variant.SMALL))
        if variant == Variant.CUSTOM:
            for key in ("tem_depth", "decoder_depth"):
                if data.get(key) is None:
                    raise ValueError(f"The custom variant needs an explicit {key}")
        else:
            keys = ("tem_depth", "decoder_depth")
            for key, depth in zip(keys, VARIANT_DEPTHS[variant]):
                if data.get(key) is None:
                    data[key] = depth
                elif data[key] != depth:
                    raise ValueError(
                        f"Variant {variant.value} has {key}={depth}, got {data[key]}."
                        " Use the custom variant for other depths"
                    )

        if data.get("mofa_depth") is None:
            if not data.get("use_mofa", True):
                data["mofa_depth"] = 0
            else:
                depth = _exact_log(
                    int(data.get("n_frames", 243)), int(data.get("kernel", 3))
                )
                if depth is None:
                    raise ValueError(
                        f"n_frames={data.get('n_frames', 243)} is not a power of"
                        f" kernel={data.get('kernel', 3)}, MOFA cannot reach one frame"
                    )
                data["mofa_depth"] = depth
        return data

    @pydantic.model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.d_model % self.heads != 0:
            raise ValueError(
                f"d_model={self.d_model} is not divisible by heads={self.heads}"
            )
        if self.n_frames % 2 == 0:
            raise ValueError(f"n_frames must be odd, got {self.n_frames}")
        if self.use_mofa and self.kernel**self.mofa_depth != self.n_frames:
            raise ValueError(
                f"MOFA with kernel {self.kernel} and depth {self.mofa_depth} maps"
                f" {self.kernel ** self.mofa_depth} frames to one, window has"
                f" {self.n_frames}"
            )
        return self

    @property
    def center_index(self) -> int:
        return (self.n_frames - 1) // 2

    @property
    def input_features(self) -> int:
        return 2 * self.n_joints

    @property
    def ffn_hidden(self) -> int:
        return self.ffn_ratio * self.d_model

    @property
    def sem_hidden(self) -> int:
        return self.sem_ratio * self.d_model

    def mofa_lengths(self) -> t.List[int]:
        """Temporal length entering each MOFA layer"""
        return [self.n_frames // self.kernel**k for k in range(self.mofa_depth)]

    def with_overrides(self, **changes: t.Any) -> "ModelConfig":
        """Copy with changed fields, re-deriving the depths the changes affect"""
        data = self.model_dump()
        if changes.get("variant", Variant.CUSTOM) != Variant.CUSTOM:
            for key in ("tem_depth", "decoder_depth"):
                if key not in changes:
                    data[key] = None
        if {"n_frames", "kernel", "use_mofa"} & changes.keys():
            if "mofa_depth" not in changes:
                data["mofa_depth"] = None
        data.update(changes)
        return ModelConfig(**data)
