"""
PSTM checkpoints: named float32 arrays in a binary file plus a JSON sidecar
holding the model config and training metadata.

PSTM layout, all little-endian: magic b"PSTM", version (u32), entry count
(u32), then per entry the name length (u32), the UTF-8 name, the rank (u32),
one u32 per dimension and the binary32 values in row-major order.
"""

import logging
import os
import struct
import typing as t

import numpy as np
import pydantic
import torch
from torch import nn

from stmo.config import ModelConfig, Stage
from stmo.model import build_model

PSTM_MAGIC = b"PSTM"
PSTM_VERSION = 1
SIDECAR_SUFFIX = ".json"
OPTIMIZER_SUFFIX = ".optim"


# Custom Exceptions
class CheckpointException(Exception):
    """Exception raised when a checkpoint cannot be read or does not fit"""


class CheckpointMeta(pydantic.BaseModel):
    """Contents of the JSON sidecar"""

    model_config = pydantic.ConfigDict(extra="forbid")

    stage: Stage
    model: ModelConfig
    epoch: int = 0
    step: int = 0
    seed: int = 0
    # Validation MPJPE in Stage II, reconstruction error in Stage I
    best_metric: t.Optional[float] = None
    learning_rate: t.Optional[float] = None
    # Window stride of the training data, the default stride of an evaluation
    stride: t.Optional[int] = pydantic.Field(default=None, ge=1)


def write_pstm(path: str, arrays: t.Mapping[str, t.Any]):
    """
    Write named arrays in insertion order.
    """
    with open(path, "wb") as file:
        file.write(struct.pack("<4sII", PSTM_MAGIC, PSTM_VERSION, len(arrays)))
        for name, array in arrays.items():
            if isinstance(array, torch.Tensor):
                array = array.detach().cpu().numpy()
            array = np.array(array, dtype="<f4", order="C")
            encoded = name.encode("utf-8")
            file.write(struct.pack("<I", len(encoded)))
            file.write(encoded)
            file.write(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
            file.write(array.tobytes())


def read_pstm(path: str) -> t.Dict[str, np.ndarray]:
    """
    Read every named array of a PSTM file as float32.
    """
    if not os.path.exists(path):
        raise CheckpointException(f"Checkpoint {path} does not exist")
    with open(path, "rb") as file:
        data = file.read()

    try:
        magic, version, count = struct.unpack_from("<4sII", data, 0)
        if magic != PSTM_MAGIC:
            raise CheckpointException(f"{path} has bad magic bytes {magic!r}")
        if version != PSTM_VERSION:
            raise CheckpointException(
                f"{path} has version {version}, expected {PSTM_VERSION}"
            )
        offset = 12
        arrays = {}
        for _ in range(count):
            (name_length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset : offset + name_length].decode("utf-8")
            offset += name_length
            (rank,) = struct.unpack_from("<I", data, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", data, offset)
            offset += 4 * rank
            size = int(np.prod(shape)) * 4
            if offset + size > len(data):
                raise CheckpointException(f"{path} is truncated inside '{name}'")
            values = np.frombuffer(data, dtype="<f4", count=size // 4, offset=offset)
            arrays[name] = values.astype(np.float32).reshape(shape)
            offset += size
    except struct.error as e:
        raise CheckpointException(f"{path} is truncated: {e}") from e

    if offset != len(data):
        raise CheckpointException(f"{path} has {len(data) - offset} trailing bytes")
    return arrays


def _optimizer_arrays(
    model: nn.Module, optimizer: torch.optim.Optimizer
) -> t.Dict[str, torch.Tensor]:
    arrays = {}
    for name, param in model.named_parameters():
        state = optimizer.state.get(param, {})
        for key in ("step", "exp_avg", "exp_avg_sq"):
            if key in state:
                arrays[f"{key}.{name}"] = torch.as_tensor(
                    state[key], dtype=torch.float32
                )
    return arrays


def save_checkpoint(
    path: str,
    model: nn.Module,
    meta: CheckpointMeta,
    optimizer: t.Optional[torch.optim.Optimizer] = None,
):
    """
    Write the parameters, the sidecar and, if given, the optimizer moments.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_pstm(path, dict(model.named_parameters()))
    with open(path + SIDECAR_SUFFIX, "w", encoding="utf-8") as file:
        file.write(meta.model_dump_json(indent=2))
    if optimizer is not None:
        write_pstm(path + OPTIMIZER_SUFFIX, _optimizer_arrays(model, optimizer))
    logging.debug(
        f"Saved {meta.stage.value} checkpoint of epoch {meta.epoch} to {path}"
    )


def read_meta(path: str) -> CheckpointMeta:
    sidecar = path + SIDECAR_SUFFIX
    if not os.path.exists(sidecar):
        raise CheckpointException(f"Checkpoint sidecar {sidecar} does not exist")
    with open(sidecar, "r", encoding="utf-8") as file:
        return CheckpointMeta.model_validate_json(file.read())


def load_parameters(model: nn.Module, arrays: t.Mapping[str, np.ndarray]):
    """
    Copy arrays into the parameters of the model, requiring an exact match of
    names and shapes.
    """
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(arrays))
    unexpected = sorted(set(arrays) - set(params))
    if missing or unexpected:
        raise CheckpointException(
            f"Checkpoint does not fit the model: missing {missing}, unexpected"
            f" {unexpected}"
        )
    with torch.no_grad():
        for name, param in params.items():
            if tuple(arrays[name].shape) != tuple(param.shape):
                raise CheckpointException(
                    f"'{name}' has shape {arrays[name].shape} in the checkpoint,"
                    f" {tuple(param.shape)} in the model"
                )
            param.copy_(torch.from_numpy(np.array(arrays[name])))


def load_checkpoint(path: str) -> t.Tuple[nn.Module, CheckpointMeta]:
    """
    Rebuild the model described by the sidecar and load its parameters.
    """
    meta = read_meta(path)
    model = build_model(meta.model, meta.stage)
    load_parameters(model, read_pstm(path))
    return model, meta


def load_optimizer_state(
    path: str, model: nn.Module, optimizer: torch.optim.Optimizer
) -> bool:
    """
    Restore Adam moments saved next to a checkpoint. Returns False when the
    checkpoint has none.
    """
    optimizer_path = path + OPTIMIZER_SUFFIX
    if not os.path.exists(optimizer_path):
        return False
    arrays = read_pstm(optimizer_path)
    state_dict = optimizer.state_dict()
    state = {}
    for index, (name, _) in enumerate(model.named_parameters()):
        entry = {}
        for key in ("step", "exp_avg", "exp_avg_sq"):
            if f"{key}.{name}" in arrays:
                entry[key] = torch.from_numpy(np.array(arrays[f"{key}.{name}"]))
        if entry:
            state[index] = entry
    state_dict["state"] = state
    optimizer.load_state_dict(state_dict)
    return True
