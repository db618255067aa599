"""
Skeleton topology: joint names, parent tree, root joint and the left/right
pairing used when flipping poses horizontally.
"""

import typing as t

import numpy as np
import pydantic

H36M_JOINT_NAMES = (
    "hip",
    "right_hip",
    "right_knee",
    "right_foot",
    "left_hip",
    "left_knee",
    "left_foot",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
)
H36M_PARENTS = (0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
H36M_LR_PAIRS = ((4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16))


class Skeleton(pydantic.BaseModel):
    """Joint topology shared by every pose of a dataset"""

    model_config = pydantic.ConfigDict(extra="forbid", frozen=True)

    joint_names: t.Tuple[str, ...]
    parents: t.Tuple[int, ...]
    root_index: int = 0
    lr_pairs: t.Tuple[t.Tuple[int, int], ...] = ()

    @pydantic.model_validator(mode="after")
    def _check_topology(self) -> "Skeleton":
        num_joints = len(self.parents)
        if num_joints < 2:
            raise ValueError(f"A skeleton needs at least 2 joints, got {num_joints}")
        if len(self.joint_names) != num_joints:
            raise ValueError(
                f"Got {len(self.joint_names)} joint names for {num_joints} joints"
            )
        if not 0 <= self.root_index < num_joints:
            raise ValueError(f"Root index {self.root_index} out of range")
        for joint, parent in enumerate(self.parents):
            if not 0 <= parent < num_joints:
                raise ValueError(f"Parent {parent} of joint {joint} out of range")
            if parent == joint and joint != self.root_index:
                raise ValueError(f"Joint {joint} is its own parent but not the root")
        if self.parents[self.root_index] != self.root_index:
            raise ValueError("The parent of the root joint must be the root itself")

        # Every joint must reach the root without revisiting a joint
        for joint in range(num_joints):
            seen = {joint}
            current = joint
            while current != self.root_index:
                current = self.parents[current]
                if current in seen:
                    raise ValueError(f"Parent graph has a cycle through {joint}")
                seen.add(current)

        paired = [index for pair in self.lr_pairs for index in pair]
        if len(paired) != len(set(paired)):
            raise ValueError(f"Left/right pairs repeat an index: {self.lr_pairs}")
        if self.root_index in paired:
            raise ValueError("The root joint cannot be part of a left/right pair")
        if any(not 0 <= index < num_joints for index in paired):
            raise ValueError(f"Left/right pair index out of range: {self.lr_pairs}")
        return self

    @classmethod
    def h36m17(cls) -> "Skeleton":
        """The default 17-joint layout"""
        return cls(
            joint_names=H36M_JOINT_NAMES,
            parents=H36M_PARENTS,
            root_index=0,
            lr_pairs=H36M_LR_PAIRS,
        )

    @classmethod
    def from_parents(
        cls,
        parents: t.Sequence[int],
        lr_pairs: t.Sequence[t.Tuple[int, int]] = (),
        root_index: int = 0,
    ) -> "Skeleton":
        """Build a skeleton with generated joint names, mostly for toy layouts"""
        return cls(
            joint_names=tuple(f"joint{i}" for i in range(len(parents))),
            parents=tuple(parents),
            root_index=root_index,
            lr_pairs=tuple(tuple(pair) for pair in lr_pairs),
        )

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    def bones(self) -> t.List[t.Tuple[int, int]]:
        """(child, parent) pairs for every non-root joint"""
        return [
            (joint, parent)
            for joint, parent in enumerate(self.parents)
            if joint != self.root_index
        ]

    def topological_order(self) -> t.List[int]:
        """Joint indices ordered so that each parent precedes its children"""
        order = [self.root_index]
        children: t.Dict[int, t.List[int]] = {}
        for child, parent in self.bones():
            children.setdefault(parent, []).append(child)
        for joint in order:
            order.extend(children.get(joint, []))
        return order

    def flip_permutation(self) -> np.ndarray:
        """Index array mapping every joint to its mirrored partner"""
        permutation = np.arange(self.num_joints)
        for left, right in self.lr_pairs:
            permutation[left] = right
            permutation[right] = left
        return permutation
