"""
Seedable synthetic motion used as the desk-scale corpus. A skeleton with fixed
bone lengths is animated with low-frequency sinusoidal joint rotations while
its root follows a smooth path, and the 3D joints are projected to 2D with a
fixed pinhole camera.
"""

import dataclasses
import math
import typing as t

import numpy as np

from posedata.sequences import PoseSequence, normalize_screen
from posedata.skeleton import H36M_PARENTS, Skeleton

# Bone vectors (child relative to parent) of the 17-joint layout in millimeters.
# The y axis points down, like image rows.
H36M_REST_OFFSETS = np.array(
    [
        [0.0, 0.0, 0.0],
        [-130.0, 0.0, 0.0],
        [0.0, 450.0, 0.0],
        [0.0, 440.0, 0.0],
        [130.0, 0.0, 0.0],
        [0.0, 450.0, 0.0],
        [0.0, 440.0, 0.0],
        [0.0, -230.0, 0.0],
        [0.0, -250.0, 0.0],
        [0.0, -110.0, 20.0],
        [0.0, -120.0, 0.0],
        [150.0, 20.0, 0.0],
        [0.0, 280.0, 0.0],
        [0.0, 250.0, 0.0],
        [-150.0, 20.0, 0.0],
        [0.0, 280.0, 0.0],
        [0.0, 250.0, 0.0],
    ]
)

MAX_JOINT_AMPLITUDE = 0.35  # rad
JOINT_FREQUENCY_RANGE = (0.1, 0.8)  # Hz
RANDOM_BONE_LENGTHS = (100.0, 400.0)  # mm


@dataclasses.dataclass(frozen=True)
class PinholeCamera:
    """
    Camera on a circle around the world origin, looking at it.
    :param yaw: Rotation of the camera around the vertical axis in radians
    :param distance: Distance from the camera center to the world origin in mm
    """

    focal: float = 1000.0
    width: int = 1000
    height: int = 1000
    yaw: float = 0.0
    distance: float = 5000.0

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        rotation = _rotation_y(-self.yaw)
        return points @ rotation.T + np.array([0.0, 0.0, self.distance])

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project camera-space points (..., 3) to pixels (..., 2)"""
        principal = np.array([self.width / 2.0, self.height / 2.0])
        return self.focal * points[..., :2] / points[..., 2:3] + principal

    def project_normalized(self, points: np.ndarray) -> np.ndarray:
        return normalize_screen(self.project(points), self.width, self.height)


@dataclasses.dataclass(frozen=True)
class SyntheticMotion:
    """Generated joint trajectory in camera space together with its camera"""

    joints_camera: np.ndarray
    camera: PinholeCamera
    skeleton: Skeleton
    fps: float

    def sequence(self, **labels: str) -> PoseSequence:
        root = self.skeleton.root_index
        targets = self.joints_camera - self.joints_camera[:, root : root + 1]
        return PoseSequence(
            frames=self.camera.project_normalized(self.joints_camera),
            targets=targets,
            fps=self.fps,
            **labels,
        )


def _rotation_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    one, zero = np.ones_like(c), np.zeros_like(c)
    return np.stack(
        [
            np.stack([one, zero, zero], -1),
            np.stack([zero, c, -s], -1),
            np.stack([zero, s, c], -1),
        ],
        -2,
    )


def _rotation_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    one, zero = np.ones_like(c), np.zeros_like(c)
    return np.stack(
        [
            np.stack([c, zero, s], -1),
            np.stack([zero, one, zero], -1),
            np.stack([-s, zero, c], -1),
        ],
        -2,
    )


def _rotation_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    one, zero = np.ones_like(c), np.zeros_like(c)
    return np.stack(
        [
            np.stack([c, -s, zero], -1),
            np.stack([s, c, zero], -1),
            np.stack([zero, zero, one], -1),
        ],
        -2,
    )


def rest_offsets(skeleton: Skeleton, rng: np.random.Generator) -> np.ndarray:
    """
    Bone vectors of the skeleton at rest. The 17-joint layout has a human-like
    rest pose, any other layout gets random directions and lengths.
    """
    if skeleton.parents == H36M_PARENTS and skeleton.root_index == 0:
        return H36M_REST_OFFSETS.copy()

    directions = rng.normal(size=(skeleton.num_joints, 3))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    lengths = rng.uniform(*RANDOM_BONE_LENGTHS, size=(skeleton.num_joints, 1))
    offsets = directions * lengths
    offsets[skeleton.root_index] = 0.0
    return offsets


def generate_motion(
    skeleton: Skeleton,
    num_frames: int,
    seed: int,
    camera: t.Optional[PinholeCamera] = None,
    fps: float = 50.0,
) -> SyntheticMotion:
    """
    Animate the skeleton for num_frames frames. The motion depends on the seed
    only, so the same motion can be seen from several cameras.
    """
    if num_frames < 1:
        raise ValueError(f"Need at least one frame, got {num_frames}")
    camera = camera or PinholeCamera()
    rng = np.random.default_rng(seed)
    offsets = rest_offsets(skeleton, rng)
    num_joints = skeleton.num_joints
    time = np.arange(num_frames) / fps

    amplitudes = rng.uniform(0.0, MAX_JOINT_AMPLITUDE, size=(num_joints, 3))
    frequencies = rng.uniform(*JOINT_FREQUENCY_RANGE, size=(num_joints, 3))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(num_joints, 3))
    # T×J×3 Euler angles
    angles = amplitudes * np.sin(
        2.0 * math.pi * frequencies * time[:, None, None] + phases
    )
    local = (
        _rotation_z(angles[..., 2]) @ _rotation_y(angles[..., 1])
    ) @ _rotation_x(angles[..., 0])

    yaw_phase, path_phase = rng.uniform(0.0, 2.0 * math.pi, size=2)
    heading = rng.uniform(-math.pi, math.pi) + 0.5 * np.sin(
        2.0 * math.pi * 0.05 * time + yaw_phase
    )
    root_path = np.stack(
        [
            300.0 * np.sin(2.0 * math.pi * 0.07 * time + path_phase),
            30.0 * np.sin(2.0 * math.pi * 0.9 * time),
            400.0 * np.sin(2.0 * math.pi * 0.05 * time + path_phase),
        ],
        axis=-1,
    )

    joints = np.zeros((num_frames, num_joints, 3))
    global_rotation = np.zeros((num_frames, num_joints, 3, 3))
    root = skeleton.root_index
    global_rotation[:, root] = _rotation_y(heading)
    joints[:, root] = root_path
    for joint in skeleton.topological_order()[1:]:
        parent = skeleton.parents[joint]
        global_rotation[:, joint] = global_rotation[:, parent] @ local[:, joint]
        joints[:, joint] = joints[:, parent] + np.einsum(
            "tij,j->ti", global_rotation[:, joint], offsets[joint]
        )

    return SyntheticMotion(
        joints_camera=camera.world_to_camera(joints),
        camera=camera,
        skeleton=skeleton,
        fps=fps,
    )


def camera_ring(num_cameras: int, **camera_args: t.Any) -> t.List[PinholeCamera]:
    """Cameras spread evenly around the subject"""
    return [
        PinholeCamera(yaw=2.0 * math.pi * index / num_cameras, **camera_args)
        for index in range(num_cameras)
    ]


def synth_generate(
    skeleton: Skeleton,
    num_frames: int,
    seed: int,
    pinhole: t.Optional[PinholeCamera] = None,
    fps: float = 50.0,
    **labels: str,
) -> PoseSequence:
    """
    Generate one synthetic sequence with geometrically consistent 2D frames
    and root-relative 3D targets.
    :param pinhole: Projection camera, the default camera if None
    :param labels: Sequence labels (subject, action, camera, name)
    """
    motion = generate_motion(skeleton, num_frames, seed, camera=pinhole, fps=fps)
    return motion.sequence(**labels)
