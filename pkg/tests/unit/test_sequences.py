import numpy as np
import pytest
from posedata import sequences
from posedata.sequences import PoseDataException, PoseSequence
from posedata.skeleton import Skeleton


@pytest.fixture(name="toy_skeleton")
def fixture_toy_skeleton():
    """Three joints, the two children mirror each other"""
    return Skeleton.from_parents((0, 0, 0), lr_pairs=((1, 2),))


@pytest.fixture(name="sequence")
def fixture_sequence():
    rng = np.random.default_rng(0)
    frames = rng.uniform(-1, 1, size=(10, 3, 2))
    targets = rng.uniform(-500, 500, size=(10, 3, 3))
    return PoseSequence(frames=frames, targets=targets, name="toy")


@pytest.mark.parametrize(
    "pixel, width, height, expected",
    [
        ((500, 500), 1000, 1000, (0.0, 0.0)),
        ((0, 0), 1000, 1000, (-1.0, -1.0)),
        ((750, 250), 1000, 500, (0.5, 0.0)),
    ],
)
def test_normalize_screen(pixel, width, height, expected):
    normalized = sequences.normalize_screen(np.array([[pixel]]), width, height)
    assert np.allclose(normalized[0, 0], expected)


def test_normalize_screen_rejects_non_finite():
    with pytest.raises(PoseDataException):
        sequences.normalize_screen(np.array([[[np.nan, 0.0]]]), 1000, 1000)


def test_sequence_is_read_only(sequence):
    with pytest.raises(ValueError):
        sequence.frames[0, 0, 0] = 1.0


def test_sequence_rejects_mismatched_targets():
    with pytest.raises(PoseDataException):
        PoseSequence(frames=np.zeros((4, 3, 2)), targets=np.zeros((5, 3, 3)))


def test_sequence_rejects_non_finite_frames():
    frames = np.zeros((4, 3, 2))
    frames[2, 1, 0] = np.inf
    with pytest.raises(PoseDataException):
        PoseSequence(frames=frames)


def test_window_is_clamped_at_the_start(sequence):
    window = sequences.extract_window(sequence, center=0, n_frames=5, stride=1)
    assert list(window.source_indices) == [0, 0, 0, 1, 2]
    assert np.array_equal(window.inputs, sequence.frames[[0, 0, 0, 1, 2]])
    assert np.array_equal(window.target_center, sequence.targets[0])


def test_window_is_clamped_at_the_end(sequence):
    window = sequences.extract_window(sequence, center=9, n_frames=5, stride=2)
    assert list(window.source_indices) == [5, 7, 9, 9, 9]


def test_single_frame_window(sequence):
    window = sequences.extract_window(sequence, center=4, n_frames=1, stride=1)
    assert window.inputs.shape == (1, 3, 2)
    assert np.array_equal(window.inputs[0], sequence.frames[4])


def test_strided_window_spans_485_frames():
    indices = sequences.window_indices(1000, 500, 243, 2)
    assert len(indices) == 243
    assert indices[-1] - indices[0] + 1 == 485
    assert np.all(np.diff(indices) == 2)


@pytest.mark.parametrize(
    "num_frames, center, n_frames, stride",
    [(10, 0, 4, 1), (0, 0, 3, 1), (10, 10, 3, 1), (10, 0, 3, 0)],
)
def test_invalid_windows_are_rejected(num_frames, center, n_frames, stride):
    with pytest.raises(PoseDataException):
        sequences.window_indices(num_frames, center, n_frames, stride)


def test_flip_toy_pose(toy_skeleton):
    pose = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    flipped = sequences.horizontal_flip(pose, toy_skeleton)
    assert np.array_equal(flipped, [[-1.0, 2.0], [-5.0, 6.0], [-3.0, 4.0]])


def test_flip_is_an_involution():
    skeleton = Skeleton.h36m17()
    pose = np.random.default_rng(1).normal(size=(7, 17, 3))
    assert np.array_equal(
        sequences.horizontal_flip(sequences.horizontal_flip(pose, skeleton), skeleton),
        pose,
    )


def test_symmetric_pose_is_a_fixed_point(toy_skeleton):
    pose = np.array([[0.0, 1.0], [-2.0, 3.0], [2.0, 3.0]])
    assert np.array_equal(sequences.horizontal_flip(pose, toy_skeleton), pose)


def test_flip_rejects_wrong_joint_count(toy_skeleton):
    with pytest.raises(PoseDataException):
        sequences.horizontal_flip(np.zeros((4, 2)), toy_skeleton)


def test_flip_window_flips_targets(sequence, toy_skeleton):
    window = sequences.extract_window(sequence, center=5, n_frames=3)
    flipped = sequences.flip_window(window, toy_skeleton)
    assert np.array_equal(
        flipped.target_center,
        sequences.horizontal_flip(window.target_center, toy_skeleton),
    )
    assert flipped.targets_all.shape == (3, 3, 3)


def test_zero_noise_is_identity(sequence):
    noisy = sequences.add_gaussian_noise(sequence, 0.0, np.random.default_rng(0))
    assert np.array_equal(noisy.frames, sequence.frames)


def test_noise_is_reproducible(sequence):
    first = sequences.add_gaussian_noise(sequence, 0.01, np.random.default_rng(5))
    second = sequences.add_gaussian_noise(sequence, 0.01, np.random.default_rng(5))
    assert first.frames.tobytes() == second.frames.tobytes()
    assert not np.array_equal(first.frames, sequence.frames)
    assert np.array_equal(first.targets, sequence.targets)


def test_noise_has_the_requested_spread():
    # 25000 frames of 20 joints hold 10^6 coordinates
    clean = PoseSequence(np.zeros((25000, 20, 2)))
    noisy = sequences.add_gaussian_noise(clean, 0.01, np.random.default_rng(11))
    noise = noisy.frames - clean.frames
    assert noise.size == 10**6
    assert 0.0099 <= noise.std() <= 0.0101
    assert abs(noise.mean()) < 1e-4


def test_negative_noise_is_rejected(sequence):
    with pytest.raises(PoseDataException):
        sequences.add_gaussian_noise(sequence, -0.1, np.random.default_rng(0))


def test_shuffle_keeps_targets(sequence):
    window = sequences.extract_window(sequence, center=5, n_frames=7)
    shuffled = sequences.shuffle_frames(window, np.random.default_rng(2))
    assert sorted(shuffled.source_indices) == sorted(window.source_indices)
    assert np.array_equal(shuffled.targets_all, window.targets_all)
    again = sequences.shuffle_frames(window, np.random.default_rng(2))
    assert np.array_equal(shuffled.inputs, again.inputs)


def test_shuffle_single_frame_is_identity(sequence):
    window = sequences.extract_window(sequence, center=5, n_frames=1)
    shuffled = sequences.shuffle_frames(window, np.random.default_rng(2))
    assert np.array_equal(shuffled.inputs, window.inputs)


def test_filter_sequences():
    frames = np.zeros((2, 3, 2))
    seqs = [
        PoseSequence(frames=frames, subject="S1", camera="0"),
        PoseSequence(frames=frames, subject="S1", camera="1"),
        PoseSequence(frames=frames, subject="S9", camera="0"),
    ]
    assert len(sequences.filter_sequences(seqs, cameras={"0"})) == 2
    assert len(sequences.filter_sequences(seqs, cameras={"0"}, subjects={"S9"})) == 1
    assert len(sequences.filter_sequences(seqs)) == 3
