"""
Training objectives. All losses take batched torch tensors and reduce to a
scalar, so the same functions serve single windows and whole batches.
"""

import dataclasses
import typing as t

import torch

from metrics.metrics import MetricException

Scalar = t.Union[float, torch.Tensor, "LossValue"]


@dataclasses.dataclass(frozen=True)
class LossValue:
    """A scalar loss tensor and the named components it was built from"""

    value: torch.Tensor
    breakdown: t.Dict[str, float] = dataclasses.field(default_factory=dict)

    @property
    def scalar(self) -> float:
        return float(self.value.detach())

    def is_finite(self) -> bool:
        return bool(torch.isfinite(self.value.detach()).all())


def _check_shapes(pred: torch.Tensor, gt: torch.Tensor, last: int):
    if pred.shape != gt.shape:
        raise MetricException(
            f"Prediction shape {tuple(pred.shape)} differs from target shape"
            f" {tuple(gt.shape)}"
        )
    if pred.dim() < 2 or pred.shape[-1] != last:
        raise MetricException(
            f"Expected poses of shape (..., J, {last}), got {tuple(pred.shape)}"
        )


def pretrain_loss(recon: torch.Tensor, clean: torch.Tensor) -> LossValue:
    """
    Reconstruction loss of masked pose modeling: the mean squared error over
    every coordinate, i.e. the negative log-likelihood of a unit-variance
    Gaussian up to constants.
    """
    _check_shapes(recon, clean, 2)
    value = torch.mean((recon - clean) ** 2)
    return LossValue(value, {"pretrain": float(value.detach())})


def _mean_joint_error(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(pred - gt, dim=-1).mean()


def loss_single(pred: torch.Tensor, gt: torch.Tensor) -> LossValue:
    """
    Mean per-joint Euclidean error of the center-frame prediction.
    :param pred: (..., J, 3)
    :param gt: (..., J, 3)
    """
    _check_shapes(pred, gt, 3)
    value = _mean_joint_error(pred, gt)
    return LossValue(value, {"single": float(value.detach())})


def loss_multiple(pred: torch.Tensor, gt: torch.Tensor) -> LossValue:
    """
    Mean per-joint Euclidean error over every frame of the window.
    :param pred: (..., N, J, 3)
    :param gt: (..., N, J, 3)
    """
    _check_shapes(pred, gt, 3)
    if pred.dim() < 3:
        raise MetricException(
            f"Expected a frame axis in (..., N, J, 3), got {tuple(pred.shape)}"
        )
    value = _mean_joint_error(pred, gt)
    return LossValue(value, {"multiple": float(value.detach())})


def _value(loss: Scalar) -> torch.Tensor:
    if isinstance(loss, LossValue):
        return loss.value
    return torch.as_tensor(loss, dtype=torch.get_default_dtype())


def total_loss(single: Scalar, multiple: Scalar, lam: float = 1.0) -> LossValue:
    """Fine-tuning objective single + lam * multiple"""
    if lam < 0:
        raise MetricException(f"The balance factor must be nonnegative, got {lam}")
    single_value = _value(single)
    multiple_value = _value(multiple)
    value = single_value + lam * multiple_value
    return LossValue(
        value,
        {
            "single": float(single_value.detach()),
            "multiple": float(multiple_value.detach()),
        },
    )
