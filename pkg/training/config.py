"""
Run configuration of both training stages, read from a strict JSON file.
"""

import json
import typing as t

import pydantic

from masking.masking import MaskConfig, num_unmasked_frames
from stmo.config import ModelConfig


class OptimConfig(pydantic.BaseModel):
    """Adam with a per-epoch exponential learning rate decay and no weight decay"""

    model_config = pydantic.ConfigDict(extra="forbid", frozen=True)

    lr_stage1: float = pydantic.Field(default=1e-4, gt=0.0)
    lr_stage2: float = pydantic.Field(default=7e-4, gt=0.0)
    lr_decay: float = pydantic.Field(default=0.97, gt=0.0, le=1.0)
    betas: t.Tuple[float, float] = (0.9, 0.999)
    eps: float = pydantic.Field(default=1e-8, gt=0.0)
    epochs_stage1: int = pydantic.Field(default=80, ge=0)
    epochs_stage2: int = pydantic.Field(default=80, ge=0)
    batch_size: int = pydantic.Field(default=160, ge=1)
    lam: float = pydantic.Field(default=1.0, ge=0.0)
    grad_clip: t.Optional[float] = pydantic.Field(default=None, gt=0.0)


class DataConfig(pydantic.BaseModel):
    """
    Dataset locations and windowing. Camera filters select the views of each
    stage, which is how cross-view splits are expressed.
    """

    model_config = pydantic.ConfigDict(extra="forbid", frozen=True)

    train: t.Optional[str] = None
    val: t.Optional[str] = None
    stride: int = pydantic.Field(default=2, ge=1)
    train_center_stride: int = pydantic.Field(default=1, ge=1)
    eval_center_stride: int = pydantic.Field(default=1, ge=1)
    pretrain_cameras: t.Optional[t.List[str]] = None
    finetune_cameras: t.Optional[t.List[str]] = None
    eval_cameras: t.Optional[t.List[str]] = None
    flip_train: bool = True
    flip_eval: bool = True


class RunConfig(pydantic.BaseModel):
    """Everything a training run depends on besides the data itself"""

    model_config = pydantic.ConfigDict(extra="forbid", frozen=True)

    model: ModelConfig = ModelConfig()
    masking: MaskConfig = MaskConfig()
    optim: OptimConfig = OptimConfig()
    data: DataConfig = DataConfig()
    seed: int = pydantic.Field(default=0, ge=0)
    eval_every: int = pydantic.Field(default=1, ge=1)
    workers: int = pydantic.Field(default=0, ge=0)

    @pydantic.model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        if self.masking.m_s > self.model.n_joints:
            raise ValueError(
                f"Cannot mask {self.masking.m_s} of {self.model.n_joints} joints"
            )
        if num_unmasked_frames(self.model.n_frames, self.masking.q_t) < 1:
            raise ValueError(
                f"q_t={self.masking.q_t} leaves no frame of a"
                f" {self.model.n_frames}-frame window"
            )
        return self

    def with_overrides(self, **sections: t.Mapping[str, t.Any]) -> "RunConfig":
        """
        Copy with changed fields. Keyword arguments name a section (model,
        masking, optim, data) and map to its changed fields; top-level fields
        are passed under "run".
        """
        data = self.model_dump()
        for section, changes in sections.items():
            if not changes:
                continue
            if section == "run":
                data.update(changes)
            elif section == "model":
                data["model"] = self.model.with_overrides(**changes).model_dump()
            else:
                data[section] = {**data[section], **changes}
        return RunConfig.model_validate(data)


def load_run_config(path: t.Optional[str] = None) -> RunConfig:
    """
    Read a run config file. Missing keys take their defaults, unknown keys are
    rejected.
    """
    if path is None:
        return RunConfig()
    with open(path, "r", encoding="utf-8") as file:
        return RunConfig.model_validate(json.load(file))
