"""
Window datasets feeding both training stages.

All randomness of a sample (flip coin, mask plan) is drawn from a generator
seeded by (seed, epoch, sample index, purpose), so a sample is the same no
matter which worker process builds it or in which order it is requested.
"""

import enum
import typing as t

import numpy as np
import torch
from torch.utils import data

from masking.masking import MaskConfig, build_plan
from posedata.sequences import (
    PoseDataException,
    PoseSequence,
    WindowSample,
    extract_window,
    flip_window,
)
from posedata.skeleton import Skeleton
from stmo.model import PlanBatch


class Purpose(enum.IntEnum):
    FLIP = 0
    MASK = 1
    NOISE = 2
    SHUFFLE = 3
    SHUFFLE_BATCHES = 4
    DROPOUT = 5


def sample_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *(int(k) for k in keys)])


def sequence_sort_key(seq: PoseSequence) -> t.Tuple[str, ...]:
    return (seq.subject, seq.action, seq.camera, seq.name)


def canonical_order(sequences: t.Iterable[PoseSequence]) -> t.List[PoseSequence]:
    return sorted(sequences, key=sequence_sort_key)


def window_centers(
    sequences: t.Sequence[PoseSequence], center_stride: int = 1
) -> t.List[t.Tuple[int, int]]:
    """(sequence index, center frame) of every window"""
    return [
        (seq_index, center)
        for seq_index, seq in enumerate(sequences)
        for center in range(0, seq.num_frames, center_stride)
    ]


class WindowDataset(data.Dataset):
    """
    Windows of N frames sampled every s frames, one per center frame.
    :param mask_config: Draw a mask plan per sample (Stage I)
    :param require_targets: Reject sequences without 3D targets (Stage II)
    """

    def __init__(
        self,
        sequences: t.Sequence[PoseSequence],
        skeleton: Skeleton,
        n_frames: int,
        stride: int = 1,
        center_stride: int = 1,
        seed: int = 0,
        flip: bool = False,
        mask_config: t.Optional[MaskConfig] = None,
        require_targets: bool = False,
    ):
        self.sequences = canonical_order(sequences)
        if not self.sequences:
            raise PoseDataException("Cannot build windows from zero sequences")
        for seq in self.sequences:
            if seq.num_joints != skeleton.num_joints:
                raise PoseDataException(
                    f"Sequence '{seq.name}' has {seq.num_joints} joints, the"
                    f" skeleton has {skeleton.num_joints}"
                )
            if require_targets and not seq.has_targets:
                raise PoseDataException(f"Sequence '{seq.name}' has no 3D targets")
        self.skeleton = skeleton
        self.n_frames = n_frames
        self.stride = stride
        self.seed = seed
        self.flip = flip
        self.mask_config = mask_config
        self.require_targets = require_targets
        self.centers = window_centers(self.sequences, center_stride)
        self.epoch = 0

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.centers)

    def window(self, index: int) -> WindowSample:
        seq_index, center = self.centers[index]
        return extract_window(
            self.sequences[seq_index], center, self.n_frames, self.stride
        )

    def __getitem__(self, index: int) -> t.Dict[str, torch.Tensor]:
        window = self.window(index)
        flipped = False
        if self.flip:
            flipped = bool(
                sample_rng(self.seed, self.epoch, index, Purpose.FLIP).random() < 0.5
            )
            if flipped:
                window = flip_window(window, self.skeleton)

        item = {
            "inputs": torch.tensor(window.inputs, dtype=torch.float32),
            "flipped": torch.tensor(flipped),
            "index": torch.tensor(index),
        }
        if self.require_targets:
            item["target_center"] = torch.tensor(
                window.target_center, dtype=torch.float32
            )
            item["targets_all"] = torch.tensor(window.targets_all, dtype=torch.float32)
        if self.mask_config is not None:
            rng = sample_rng(self.seed, self.epoch, index, Purpose.MASK)
            plan = build_plan(
                self.mask_config, self.n_frames, self.skeleton.num_joints, rng
            )
            item["keep_index"] = torch.tensor(plan.unmasked_order, dtype=torch.long)
            item["masked_index"] = torch.tensor(plan.masked_frames, dtype=torch.long)
            item["spatial_mask"] = torch.from_numpy(
                plan.spatial_mask_matrix(self.skeleton.num_joints)
            )
        return item


def plans_of(batch: t.Mapping[str, torch.Tensor]) -> PlanBatch:
    """Mask plans of a collated Stage I batch"""
    return PlanBatch(
        keep_index=batch["keep_index"],
        masked_index=batch["masked_index"],
        spatial_mask=batch["spatial_mask"],
    )


def make_loader(
    dataset: WindowDataset,
    batch_size: int,
    shuffle: bool,
    epoch: int = 0,
    workers: int = 0,
) -> data.DataLoader:
    """
    Batches of the dataset for one epoch. The batch order is drawn from a
    generator seeded by (seed, epoch), never from the global torch RNG.
    """
    dataset.set_epoch(epoch)
    generator = torch.Generator()
    seed_state = np.random.SeedSequence(
        [dataset.seed, epoch, int(Purpose.SHUFFLE_BATCHES)]
    ).generate_state(1)
    generator.manual_seed(int(seed_state[0]))
    return data.DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        num_workers=workers,
        generator=generator,
        persistent_workers=False,
    )
