"""
Evaluation metrics on root-relative 3D poses in millimeters: MPJPE, P-MPJPE
after similarity Procrustes alignment, PCK at 150mm and the AUC over the
0:5:150mm threshold grid. Everything is computed in float64 with numpy.
"""

import csv
import math
import typing as t

import numpy as np
import pydantic

PCK_THRESHOLD = 150.0
AUC_THRESHOLDS = np.arange(0.0, 151.0, 5.0)
# Relative size of the second singular value below which a point cloud counts
# as collinear
DEGENERACY_TOLERANCE = 1e-9

CSV_HEADER = ("action", "mpjpe", "p_mpjpe", "pck150", "auc")
POOLED_LABEL = "pooled"


# Custom Exceptions
class MetricException(Exception):
    """Exception raised when poses cannot be compared"""


def _as_poses(pred: t.Any, gt: t.Any) -> t.Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricException(
            f"Prediction shape {pred.shape} differs from target shape {gt.shape}"
        )
    if pred.ndim < 2 or pred.shape[-1] != 3:
        raise MetricException(f"Expected poses of shape (..., J, 3), got {pred.shape}")
    return pred, gt


def joint_errors(pred: t.Any, gt: t.Any) -> np.ndarray:
    """Euclidean distance of every joint, shape (..., J)"""
    pred, gt = _as_poses(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred: t.Any, gt: t.Any) -> float:
    return float(joint_errors(pred, gt).mean())


def _degenerate(centered: np.ndarray) -> np.ndarray:
    singular = np.linalg.svd(centered, compute_uv=False)
    largest = np.maximum(singular[..., 0], 1e-300)
    return singular[..., 1] <= DEGENERACY_TOLERANCE * largest


def procrustes_align(pred: t.Any, gt: t.Any) -> np.ndarray:
    """
    Align pred to gt with the similarity transform (scale s, rotation R,
    translation) minimizing the squared Frobenius distance. R is a proper
    rotation; a reflection is excluded by flipping the sign of the smallest
    singular direction.
    :param pred: (..., J, 3), every frame with at least 3 non-collinear joints
    :param gt: (..., J, 3)
    :return: The aligned prediction, same shape as pred
    """
    pred, gt = _as_poses(pred, gt)
    if pred.shape[-2] < 3:
        raise MetricException(
            f"Alignment needs at least 3 joints, got {pred.shape[-2]}"
        )

    mu_pred = pred.mean(axis=-2, keepdims=True)
    mu_gt = gt.mean(axis=-2, keepdims=True)
    pred_c = pred - mu_pred
    gt_c = gt - mu_gt
    if np.any(_degenerate(pred_c)) or np.any(_degenerate(gt_c)):
        raise MetricException("Cannot align collinear or coincident joints")

    cross = np.swapaxes(pred_c, -1, -2) @ gt_c
    u, singular, vt = np.linalg.svd(cross)
    sign = np.sign(np.linalg.det(u @ vt))
    u[..., :, -1] *= sign[..., None]
    singular[..., -1] *= sign
    rotation = u @ vt

    scale = singular.sum(axis=-1) / (pred_c**2).sum(axis=(-2, -1))
    return scale[..., None, None] * (pred_c @ rotation) + mu_gt


def p_mpjpe(pred: t.Any, gt: t.Any) -> float:
    return mpjpe(procrustes_align(pred, gt), gt)


def _pck_curve(errors: np.ndarray) -> np.ndarray:
    """Percentage of joints within each AUC threshold"""
    flat = errors.reshape(-1)
    return np.array([100.0 * np.mean(flat <= tau) for tau in AUC_THRESHOLDS])


def pck_auc(pred: t.Any, gt: t.Any) -> t.Tuple[float, float]:
    """
    :return: (PCK at 150mm, AUC), both in percent
    """
    errors = joint_errors(pred, gt)
    pck150 = 100.0 * float(np.mean(errors.reshape(-1) <= PCK_THRESHOLD))
    return pck150, float(_pck_curve(errors).mean())


class ActionMetrics(pydantic.BaseModel):
    """Aggregated metrics of a set of frames"""

    model_config = pydantic.ConfigDict(extra="forbid", frozen=True)

    mpjpe: float = pydantic.Field(ge=0.0)
    p_mpjpe: t.Optional[float] = pydantic.Field(default=None, ge=0.0)
    pck150: float = pydantic.Field(ge=0.0, le=100.0)
    auc: float = pydantic.Field(ge=0.0, le=100.0)
    num_frames: int = pydantic.Field(default=0, ge=0)


class MetricReport(ActionMetrics):
    """
    Metrics pooled over all frames, per action, and as the unweighted mean of
    the per-action values. The pooled numbers are the primary ones.
    """

    per_action: t.Dict[str, ActionMetrics] = {}
    action_mean: t.Optional[ActionMetrics] = None


def _fmean(values: t.Iterable[float]) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def _frame_p_mpjpe(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-frame P-MPJPE, NaN where the frame cannot be aligned"""
    result = np.full(pred.shape[0], np.nan)
    if pred.shape[-2] < 3:
        return result
    pred_c = pred - pred.mean(axis=-2, keepdims=True)
    gt_c = gt - gt.mean(axis=-2, keepdims=True)
    valid = ~(_degenerate(pred_c) | _degenerate(gt_c))
    if valid.any():
        aligned = procrustes_align(pred[valid], gt[valid])
        result[valid] = joint_errors(aligned, gt[valid]).mean(axis=-1)
    return result


def _aggregate(
    frame_mpjpe: np.ndarray, frame_p_mpjpe: np.ndarray, frame_curves: np.ndarray
) -> ActionMetrics:
    # fsum is exactly rounded, so the result does not depend on frame order
    valid_p = [float(v) for v in frame_p_mpjpe if not np.isnan(v)]
    curve = [
        _fmean(float(v) for v in frame_curves[:, k])
        for k in range(len(AUC_THRESHOLDS))
    ]
    return ActionMetrics(
        mpjpe=_fmean(float(v) for v in frame_mpjpe),
        p_mpjpe=_fmean(valid_p) if valid_p else None,
        pck150=curve[-1],
        auc=math.fsum(curve) / len(curve),
        num_frames=len(frame_mpjpe),
    )


def compute_report(
    pred: t.Any,
    gt: t.Any,
    actions: t.Optional[t.Sequence[str]] = None,
    include_root: bool = True,
    root_index: int = 0,
) -> MetricReport:
    """
    Aggregate the metrics of K predicted frames.
    :param pred: (K, J, 3) root-relative predictions in millimeters
    :param gt: (K, J, 3) root-relative targets
    :param actions: Action label of every frame
    :param include_root: Whether the root joint takes part in the joint average
        and in the Procrustes alignment
    """
    pred, gt = _as_poses(pred, gt)
    if pred.ndim != 3 or pred.shape[0] == 0:
        raise MetricException(f"Expected a non-empty (K, J, 3) stack, got {pred.shape}")
    actions = list(actions) if actions is not None else ["all"] * pred.shape[0]
    if len(actions) != pred.shape[0]:
        raise MetricException(
            f"Got {len(actions)} action labels for {pred.shape[0]} frames"
        )

    if not include_root:
        pred = np.delete(pred, root_index, axis=1)
        gt = np.delete(gt, root_index, axis=1)
    errors = joint_errors(pred, gt)
    frame_p = _frame_p_mpjpe(pred, gt)
    frame_mpjpe = errors.mean(axis=-1)
    # Fraction of joints within each threshold per frame; the AUC grid ends at
    # the PCK threshold so the last entry is PCK@150
    frame_curves = 100.0 * np.stack(
        [np.mean(errors <= tau, axis=-1) for tau in AUC_THRESHOLDS], axis=-1
    )

    labels = np.array(actions)
    per_action = {}
    for action in sorted(set(actions)):
        select = labels == action
        per_action[action] = _aggregate(
            frame_mpjpe[select], frame_p[select], frame_curves[select]
        )

    pooled = _aggregate(frame_mpjpe, frame_p, frame_curves)
    action_p = [m.p_mpjpe for m in per_action.values() if m.p_mpjpe is not None]
    action_mean = ActionMetrics(
        mpjpe=_fmean(m.mpjpe for m in per_action.values()),
        p_mpjpe=_fmean(action_p) if action_p else None,
        pck150=_fmean(m.pck150 for m in per_action.values()),
        auc=_fmean(m.auc for m in per_action.values()),
        num_frames=pooled.num_frames,
    )
    return MetricReport(
        **pooled.model_dump(), per_action=per_action, action_mean=action_mean
    )


def _cell(value: t.Optional[float]) -> str:
    return "" if value is None else f"{value:.4f}"


def per_action_csv(report: MetricReport, path: str):
    """Write one row per action plus a final row of the pooled metrics"""
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(CSV_HEADER)
        rows = list(report.per_action.items()) + [(POOLED_LABEL, report)]
        for action, metrics in rows:
            writer.writerow(
                [
                    action,
                    _cell(metrics.mpjpe),
                    _cell(metrics.p_mpjpe),
                    _cell(metrics.pck150),
                    _cell(metrics.auc),
                ]
            )
