"""
Dataset on disk: a JSON manifest plus one PSEQ binary array file per sequence
and coordinate kind (2D frames and 3D targets are stored separately).

PSEQ layout, all little-endian: magic b"PSEQ", format version (u32), then
T, J, C (u32 each), then T·J·C binary32 values in row-major order.
"""

import logging
import os
import struct
import typing as t

import numpy as np
import pydantic

from posedata.sequences import PoseDataException, PoseSequence
from posedata.skeleton import Skeleton

PSEQ_MAGIC = b"PSEQ"
PSEQ_VERSION = 1
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"

_HEADER = struct.Struct("<4sIIII")


# Custom Exceptions
class ShapeMismatchException(PoseDataException):
    """Exception raised when an array file does not match its declared shape"""


class MissingFileException(PoseDataException):
    """Exception raised when a file referenced by a manifest does not exist"""


class UnsupportedFormatException(PoseDataException):
    """Exception raised for an unknown magic number or format version"""


class SequenceRecord(pydantic.BaseModel):
    """One sequence entry of a dataset manifest"""

    model_config = pydantic.ConfigDict(extra="forbid")

    name: str
    frames_file: str
    targets_file: t.Optional[str] = None
    num_frames: int = pydantic.Field(ge=0)
    has_targets: bool
    fps: float = 50.0
    subject: str = ""
    action: str = ""
    camera: str = ""


class Normalization(pydantic.BaseModel):
    """Image size used to normalize the 2D frames"""

    model_config = pydantic.ConfigDict(extra="forbid")

    width: int = pydantic.Field(gt=0)
    height: int = pydantic.Field(gt=0)


class DatasetManifest(pydantic.BaseModel):
    """Index of a dataset directory"""

    model_config = pydantic.ConfigDict(extra="forbid")

    format_version: int = MANIFEST_VERSION
    skeleton: Skeleton
    sequences: t.List[SequenceRecord] = []
    normalization: Normalization


def write_pseq(path: str, array: np.ndarray):
    """
    Write a T×J×C array as a PSEQ file.
    """
    array = np.asarray(array)
    if array.ndim != 3:
        raise ShapeMismatchException(f"PSEQ arrays must be T×J×C, got {array.shape}")
    header = _HEADER.pack(PSEQ_MAGIC, PSEQ_VERSION, *array.shape)
    with open(path, "wb") as file:
        file.write(header)
        file.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_pseq(path: str) -> np.ndarray:
    """
    Read a PSEQ file into a float32 T×J×C array.
    """
    if not os.path.exists(path):
        raise MissingFileException(f"Array file {path} does not exist")

    with open(path, "rb") as file:
        data = file.read()

    if len(data) < _HEADER.size:
        raise UnsupportedFormatException(f"{path} is too short to hold a header")
    magic, version, *shape = _HEADER.unpack_from(data)
    if magic != PSEQ_MAGIC:
        raise UnsupportedFormatException(f"{path} has bad magic bytes {magic!r}")
    if version != PSEQ_VERSION:
        raise UnsupportedFormatException(
            f"{path} has format version {version}, expected {PSEQ_VERSION}"
        )

    count = int(np.prod(shape))
    payload = data[_HEADER.size :]
    if len(payload) != count * 4:
        raise ShapeMismatchException(
            f"{path} declares shape {tuple(shape)} but holds {len(payload) // 4}"
            " values"
        )
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)


def _manifest_path(path: str) -> str:
    if os.path.isdir(path):
        return os.path.join(path, MANIFEST_NAME)
    return path


def read_manifest(path: str) -> DatasetManifest:
    path = _manifest_path(path)
    if not os.path.exists(path):
        raise MissingFileException(f"Manifest {path} does not exist")

    with open(path, "r", encoding="utf-8") as file:
        raw = file.read()

    manifest = DatasetManifest.model_validate_json(raw)
    if manifest.format_version != MANIFEST_VERSION:
        raise UnsupportedFormatException(
            f"Manifest {path} has format version {manifest.format_version},"
            f" expected {MANIFEST_VERSION}"
        )
    return manifest


def _load_array(directory: str, file_name: str, num_frames: int, shape: tuple):
    array = read_pseq(os.path.join(directory, file_name))
    expected = (num_frames,) + shape
    if array.shape != expected:
        raise ShapeMismatchException(
            f"{file_name} holds an array of shape {array.shape}, the manifest"
            f" declares {expected}"
        )
    return array


def load_dataset(path: str) -> t.List[PoseSequence]:
    """
    Load every sequence of a dataset.
    :param path: The manifest file or the directory holding manifest.json
    """
    manifest_path = _manifest_path(path)
    manifest = read_manifest(manifest_path)
    directory = os.path.dirname(os.path.abspath(manifest_path))
    num_joints = manifest.skeleton.num_joints

    logging.info(f"Loading {len(manifest.sequences)} sequences from {directory}")
    sequences = []
    for record in manifest.sequences:
        frames = _load_array(
            directory, record.frames_file, record.num_frames, (num_joints, 2)
        )
        targets = None
        if record.has_targets:
            if record.targets_file is None:
                raise MissingFileException(
                    f"Sequence {record.name} declares targets but names no file"
                )
            targets = _load_array(
                directory, record.targets_file, record.num_frames, (num_joints, 3)
            )
        sequences.append(
            PoseSequence(
                frames=frames,
                targets=targets,
                fps=record.fps,
                subject=record.subject,
                action=record.action,
                camera=record.camera,
                name=record.name,
            )
        )
    return sequences


def load_skeleton(path: str) -> Skeleton:
    return read_manifest(path).skeleton


def save_dataset(
    sequences: t.Sequence[PoseSequence],
    out_dir: str,
    skeleton: Skeleton,
    width: int = 1000,
    height: int = 1000,
) -> str:
    """
    Write sequences as PSEQ files plus a manifest and return the manifest path.
    """
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for index, seq in enumerate(sequences):
        if seq.num_joints != skeleton.num_joints:
            raise ShapeMismatchException(
                f"Sequence {seq.name} has {seq.num_joints} joints, the skeleton"
                f" has {skeleton.num_joints}"
            )
        name = seq.name or f"seq{index:04d}"
        frames_file = f"{name}.2d.pseq"
        write_pseq(os.path.join(out_dir, frames_file), seq.frames)
        targets_file = None
        if seq.has_targets:
            targets_file = f"{name}.3d.pseq"
            write_pseq(os.path.join(out_dir, targets_file), seq.targets)
        records.append(
            SequenceRecord(
                name=name,
                frames_file=frames_file,
                targets_file=targets_file,
                num_frames=seq.num_frames,
                has_targets=seq.has_targets,
                fps=seq.fps,
                subject=seq.subject,
                action=seq.action,
                camera=seq.camera,
            )
        )

    manifest = DatasetManifest(
        skeleton=skeleton,
        sequences=records,
        normalization=Normalization(width=width, height=height),
    )
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    with open(manifest_path, "w", encoding="utf-8") as file:
        file.write(manifest.model_dump_json(indent=2))
    logging.info(f"Wrote {len(records)} sequences to {out_dir}")
    return manifest_path
