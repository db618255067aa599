"""
Pose sequences, windows cut out of them and the augmentations applied to
inputs: horizontal flipping, Gaussian noise and frame shuffling.
"""

import dataclasses
import typing as t

import numpy as np

from posedata.skeleton import Skeleton


# Custom Exceptions
class PoseDataException(Exception):
    """Exception raised when pose data is malformed or an argument is invalid"""


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def _check_finite(array: np.ndarray, what: str):
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise PoseDataException(f"{what} holds {bad} non-finite values")


@dataclasses.dataclass(frozen=True)
class PoseSequence:
    """
    A time-indexed array of 2D poses with optional root-relative 3D targets.
    :param frames: T×J×2 normalized screen coordinates
    :param targets: Optional T×J×3 root-relative joint positions in millimeters
    """

    frames: np.ndarray
    targets: t.Optional[np.ndarray] = None
    fps: float = 50.0
    subject: str = ""
    action: str = ""
    camera: str = ""
    name: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3 or frames.shape[-1] != 2:
            raise PoseDataException(f"Frames must be T×J×2, got {frames.shape}")
        _check_finite(frames, f"Frames of sequence '{self.name}'")
        object.__setattr__(self, "frames", _frozen(frames))

        if self.targets is not None:
            targets = np.asarray(self.targets)
            if targets.shape != frames.shape[:2] + (3,):
                raise PoseDataException(
                    f"Targets of shape {targets.shape} do not match frames of shape"
                    f" {frames.shape}"
                )
            _check_finite(targets, f"Targets of sequence '{self.name}'")
            object.__setattr__(self, "targets", _frozen(targets))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]

    @property
    def has_targets(self) -> bool:
        return self.targets is not None

    def replace(self, **changes: t.Any) -> "PoseSequence":
        return dataclasses.replace(self, **changes)

    def astype(self, dtype: t.Any) -> "PoseSequence":
        targets = None if self.targets is None else self.targets.astype(dtype)
        return self.replace(frames=self.frames.astype(dtype), targets=targets)


@dataclasses.dataclass(frozen=True)
class WindowSample:
    """
    N frames centered on the frame whose 3D pose is predicted.
    :param inputs: N×J×2 2D poses
    :param target_center: J×3 pose of the center frame, if known
    :param targets_all: N×J×3 poses of every window frame, if known
    :param center_index: Index of the center frame in the source sequence
    :param stride: Temporal downsampling rate s
    :param source_indices: Source frame index of every window slot
    """

    inputs: np.ndarray
    target_center: t.Optional[np.ndarray]
    targets_all: t.Optional[np.ndarray]
    center_index: int
    stride: int
    source_indices: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] % 2 == 0:
            raise PoseDataException(
                f"Windows need an odd frame count, got {self.inputs.shape[0]}"
            )

    @property
    def num_frames(self) -> int:
        return self.inputs.shape[0]

    def replace(self, **changes: t.Any) -> "WindowSample":
        return dataclasses.replace(self, **changes)


def normalize_screen(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    """
    Map pixel coordinates to [-1, 1] preserving the aspect ratio. Both axes are
    divided by the image width, so y ends up in [-height/width, height/width].
    :param pixels: Array of shape (..., 2) in pixels
    :param width: Image width in pixels
    :param height: Image height in pixels
    """
    if width <= 0 or height <= 0:
        raise PoseDataException(f"Image size must be positive, got {width}x{height}")
    pixels = np.asarray(pixels, dtype=np.float64)
    _check_finite(pixels, "Pixel coordinates")
    normalized = pixels / width * 2.0
    normalized[..., 0] -= 1.0
    normalized[..., 1] -= height / width
    return normalized


def window_indices(num_frames: int, center: int, n_frames: int, stride: int):
    """
    Source indices center + n·s for n in [-(N-1)/2, (N-1)/2], clamped to the
    sequence so edge frames are replicated.
    """
    if n_frames < 1 or n_frames % 2 == 0:
        raise PoseDataException(f"Window length must be odd, got {n_frames}")
    if stride < 1:
        raise PoseDataException(f"Stride must be at least 1, got {stride}")
    if num_frames < 1:
        raise PoseDataException("Cannot cut a window out of an empty sequence")
    if not 0 <= center < num_frames:
        raise PoseDataException(f"Center {center} outside of [0, {num_frames})")

    half = (n_frames - 1) // 2
    offsets = np.arange(-half, half + 1) * stride
    return np.clip(center + offsets, 0, num_frames - 1)


def extract_window(
    seq: PoseSequence, center: int, n_frames: int, stride: int = 1
) -> WindowSample:
    """
    Cut the window of N frames sampled every s frames around center.
    """
    indices = window_indices(seq.num_frames, center, n_frames, stride)
    targets_all = None if seq.targets is None else seq.targets[indices]
    target_center = None if seq.targets is None else seq.targets[center]
    return WindowSample(
        inputs=seq.frames[indices],
        target_center=target_center,
        targets_all=targets_all,
        center_index=center,
        stride=stride,
        source_indices=indices,
    )


def horizontal_flip(pose: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """
    Mirror poses around the vertical axis: negate x and swap left/right joints.
    Works on any array of shape (..., J, C) with C in {2, 3}.
    """
    pose = np.asarray(pose)
    if pose.ndim < 2 or pose.shape[-2] != skeleton.num_joints:
        raise PoseDataException(
            f"Pose shape {pose.shape} does not match {skeleton.num_joints} joints"
        )
    flipped = np.array(pose, copy=True)
    flipped[..., 0] *= -1
    return flipped[..., skeleton.flip_permutation(), :]


def flip_window(window: WindowSample, skeleton: Skeleton) -> WindowSample:
    """Flip inputs and targets of a window consistently"""
    return window.replace(
        inputs=horizontal_flip(window.inputs, skeleton),
        target_center=(
            None
            if window.target_center is None
            else horizontal_flip(window.target_center, skeleton)
        ),
        targets_all=(
            None
            if window.targets_all is None
            else horizontal_flip(window.targets_all, skeleton)
        ),
    )


def add_gaussian_noise(
    seq: PoseSequence, sigma: float, rng: np.random.Generator
) -> PoseSequence:
    """
    Add i.i.d. zero-mean Gaussian noise to every 2D coordinate. Targets are
    left untouched.
    :param sigma: Standard deviation in normalized screen units
    """
    if sigma < 0:
        raise PoseDataException(f"Noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return seq
    noise = rng.normal(0.0, sigma, size=seq.frames.shape)
    return seq.replace(frames=(seq.frames + noise).astype(seq.frames.dtype))


def shuffle_frames(window: WindowSample, rng: np.random.Generator) -> WindowSample:
    """
    Permute the input frames of a window while the targets keep their order.
    """
    permutation = rng.permutation(window.num_frames)
    return window.replace(
        inputs=window.inputs[permutation],
        source_indices=window.source_indices[permutation],
    )


def filter_sequences(
    sequences: t.Iterable[PoseSequence],
    cameras: t.Optional[t.Collection[str]] = None,
    subjects: t.Optional[t.Collection[str]] = None,
) -> t.List[PoseSequence]:
    """
    Keep the sequences recorded by the given cameras and subjects, used for
    cross-view splits where pre-training and fine-tuning see different views.
    """
    return [
        seq
        for seq in sequences
        if (cameras is None or seq.camera in cameras)
        and (subjects is None or seq.subject in subjects)
    ]
