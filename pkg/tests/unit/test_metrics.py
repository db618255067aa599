import csv
import os

import numpy as np
import pytest
from metrics import metrics
from metrics.metrics import MetricException


def _rotation(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues' formula"""
    angle = np.linalg.norm(axis_angle)
    if angle == 0:
        return np.eye(3)
    x, y, z = axis_angle / angle
    skew = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + np.sin(angle) * skew + (1 - np.cos(angle)) * skew @ skew


@pytest.fixture(name="rng")
def fixture_rng():
    return np.random.default_rng(11)


@pytest.fixture(name="poses")
def fixture_poses(rng):
    return rng.normal(scale=300.0, size=(6, 17, 3))


def test_identical_poses(poses):
    assert metrics.mpjpe(poses, poses) == 0.0
    assert metrics.p_mpjpe(poses, poses) < 1e-9
    assert metrics.pck_auc(poses, poses) == (100.0, 100.0)


def test_uniform_offset(poses):
    shifted = poses + np.array([10.0, 0.0, 0.0])
    assert metrics.mpjpe(shifted, poses) == pytest.approx(10.0, abs=1e-9)


def test_pck_auc_thresholds():
    gt = np.zeros((2, 17, 3))
    far = gt + np.array([151.0, 0.0, 0.0])
    assert metrics.pck_auc(far, gt) == (0.0, 0.0)
    mid = gt + np.array([75.0, 0.0, 0.0])
    pck150, auc = metrics.pck_auc(mid, gt)
    assert pck150 == 100.0
    assert auc == pytest.approx(100.0 * 16 / 31)


def test_mpjpe_equals_mean_of_framewise_errors(poses, rng):
    pred = poses + rng.normal(scale=20.0, size=poses.shape)
    framewise = [metrics.mpjpe(pred[k], poses[k]) for k in range(len(poses))]
    assert metrics.mpjpe(pred, poses) == pytest.approx(np.mean(framewise))


def test_procrustes_recovers_similarity_transforms(rng):
    for _ in range(100):
        pred = rng.normal(scale=300.0, size=(17, 3))
        rotation = _rotation(rng.normal(size=3))
        scale = rng.uniform(0.5, 2.0)
        gt = scale * pred @ rotation + rng.normal(scale=100.0, size=3)
        assert metrics.p_mpjpe(pred, gt) <= 1e-6


def _rotations(axis_angles: np.ndarray) -> np.ndarray:
    """Rodrigues' formula for a stack of axis-angle vectors"""
    angles = np.linalg.norm(axis_angles, axis=-1)
    axes = axis_angles / np.maximum(angles, 1e-12)[:, None]
    x, y, z = axes[:, 0], axes[:, 1], axes[:, 2]
    zero = np.zeros_like(x)
    skew = np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    sin = np.sin(angles)[:, None, None]
    cos = np.cos(angles)[:, None, None]
    return np.eye(3) + sin * skew + (1 - cos) * skew @ skew


def test_batched_rotations_match_single_rotations(rng):
    axis_angles = rng.normal(size=(5, 3))
    for axis_angle, rotation in zip(axis_angles, _rotations(axis_angles)):
        assert np.allclose(rotation, _rotation(axis_angle))


def test_procrustes_is_optimal(rng):
    num_candidates = 10**4
    near = num_candidates // 2
    for _ in range(100):
        pred = rng.normal(scale=300.0, size=(17, 3))
        gt = pred @ _rotation(rng.normal(size=3)) + rng.normal(
            scale=50.0, size=(17, 3)
        )
        aligned = metrics.procrustes_align(pred, gt)
        best = np.sum((aligned - gt) ** 2)

        # Any similarity transform of pred is one of the aligned prediction.
        # Half the candidates lie close to it, the rest anywhere.
        axis_angles = np.concatenate(
            [
                rng.normal(scale=0.05, size=(near, 3)),
                rng.uniform(-np.pi, np.pi, size=(num_candidates - near, 3)),
            ]
        )
        scales = np.concatenate(
            [
                1.0 + rng.normal(scale=0.05, size=near),
                rng.uniform(0.2, 3.0, size=num_candidates - near),
            ]
        )
        shifts = rng.normal(scale=5.0, size=(num_candidates, 1, 3))
        center = aligned.mean(axis=0)
        candidates = (
            scales[:, None, None] * ((aligned - center) @ _rotations(axis_angles))
            + center
            + shifts
        )
        errors = np.sum((candidates - gt) ** 2, axis=(1, 2))
        assert errors.min() >= best - 1e-6


def test_procrustes_excludes_reflections(rng):
    pred = rng.normal(size=(17, 3))
    mirrored = pred * np.array([-1.0, 1.0, 1.0])
    aligned = metrics.procrustes_align(pred, mirrored)
    centered = pred - pred.mean(axis=0)
    rotation, *_ = np.linalg.lstsq(centered, aligned - aligned.mean(axis=0), rcond=None)
    assert np.linalg.det(rotation) > 0


def test_procrustes_batched(poses, rng):
    gt = poses @ _rotation(np.array([0.0, 0.3, 0.0])) * 1.2
    aligned = metrics.procrustes_align(poses, gt)
    assert aligned.shape == poses.shape
    assert np.allclose(aligned, gt, atol=1e-6)


def test_degenerate_poses_are_rejected():
    line = np.zeros((17, 3))
    line[:, 0] = np.arange(17)
    with pytest.raises(MetricException):
        metrics.procrustes_align(line, line + 1.0)
    with pytest.raises(MetricException):
        metrics.procrustes_align(np.zeros((17, 3)), line)
    with pytest.raises(MetricException):
        metrics.procrustes_align(np.ones((2, 3)), np.zeros((2, 3)))


def test_shape_mismatch_is_rejected():
    with pytest.raises(MetricException):
        metrics.mpjpe(np.zeros((2, 17, 3)), np.zeros((2, 16, 3)))
    with pytest.raises(MetricException):
        metrics.mpjpe(np.zeros((2, 17, 2)), np.zeros((2, 17, 2)))


def test_compute_report(poses):
    pred = poses.copy()
    pred[:3] += np.array([0.0, 20.0, 0.0])
    actions = ["walk"] * 3 + ["sit"] * 3
    report = metrics.compute_report(pred, poses, actions)

    assert report.mpjpe == pytest.approx(10.0)
    assert report.num_frames == 6
    assert sorted(report.per_action) == ["sit", "walk"]
    assert report.per_action["walk"].mpjpe == pytest.approx(20.0)
    assert report.per_action["sit"].mpjpe == 0.0
    assert report.action_mean.mpjpe == pytest.approx(10.0)
    assert report.pck150 == 100.0
    assert report.p_mpjpe < 1e-6


def test_compute_report_without_root():
    gt = np.zeros((1, 3, 3))
    pred = gt.copy()
    pred[0, 0] = [30.0, 0.0, 0.0]
    assert metrics.compute_report(pred, gt).mpjpe == pytest.approx(10.0)
    report = metrics.compute_report(pred, gt, include_root=False, root_index=0)
    assert report.mpjpe == 0.0
    assert report.p_mpjpe is None


def test_dropped_root_takes_no_part_in_alignment(poses, rng):
    pred = poses + rng.normal(scale=40.0, size=poses.shape)
    pred[:, 0] += 500.0
    report = metrics.compute_report(pred, poses, include_root=False, root_index=0)
    expected = metrics.p_mpjpe(np.delete(pred, 0, axis=1), np.delete(poses, 0, axis=1))
    assert report.p_mpjpe == pytest.approx(expected)
    with_root = metrics.compute_report(pred, poses)
    assert with_root.p_mpjpe > report.p_mpjpe


def test_compute_report_is_order_independent(poses, rng):
    pred = poses + rng.normal(scale=40.0, size=poses.shape)
    actions = ["a", "b", "a", "b", "c", "a"]
    permutation = rng.permutation(6)
    first = metrics.compute_report(pred, poses, actions)
    second = metrics.compute_report(
        pred[permutation], poses[permutation], [actions[i] for i in permutation]
    )
    assert first == second


def test_compute_report_rejects_bad_labels(poses):
    with pytest.raises(MetricException):
        metrics.compute_report(poses, poses, ["walk"])


def test_per_action_csv(tmpdir, poses):
    report = metrics.compute_report(poses + 5.0, poses, ["walk"] * 3 + ["sit"] * 3)
    path = os.path.join(str(tmpdir), "metrics.csv")
    metrics.per_action_csv(report, path)
    with open(path, "r", encoding="utf-8") as file:
        rows = list(csv.reader(file))
    assert tuple(rows[0]) == metrics.CSV_HEADER
    assert [row[0] for row in rows[1:]] == ["sit", "walk", "pooled"]
    assert rows[-1][1] == f"{report.mpjpe:.4f}"
