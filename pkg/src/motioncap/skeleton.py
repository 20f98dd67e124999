"""Skeleton layout, six-part grouping, root-relative coordinates and velocities."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

PARTS = ("LeftArm", "RightArm", "Torso", "LeftLeg", "RightLeg", "Root")
PART_INDEX = {name: i for i, name in enumerate(PARTS)}


class LayoutError(ValueError):
    pass


class SequenceLengthError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonLayout:
    joint_names: tuple[str, ...]
    part_map: tuple[str, ...]  # part name for each joint
    root_joint: int

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "part_map", tuple(self.part_map))
        if len(self.part_map) != len(self.joint_names):
            raise LayoutError("part_map must assign every joint")
        unknown = set(self.part_map) - set(PARTS)
        if unknown:
            raise LayoutError(f"unknown parts {sorted(unknown)}")
        if not 0 <= self.root_joint < len(self.joint_names):
            raise LayoutError(f"root joint {self.root_joint} not in layout")
        roots = [j for j, p in enumerate(self.part_map) if p == "Root"]
        if roots != [self.root_joint]:
            raise LayoutError("the Root part must contain exactly the root joint")

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    def part_joints(self, part: str) -> list[int]:
        return [j for j, p in enumerate(self.part_map) if p == part]

    def to_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "part_map": list(self.part_map),
            "root_joint": self.root_joint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonLayout":
        return cls(tuple(d["joint_names"]), tuple(d["part_map"]), int(d["root_joint"]))


def default_layout() -> SkeletonLayout:
    """13 joints: root, 4 torso, and 2 per limb."""
    joints = [
        ("pelvis", "Root"),
        ("spine", "Torso"),
        ("chest", "Torso"),
        ("neck", "Torso"),
        ("head", "Torso"),
        ("l_elbow", "LeftArm"),
        ("l_wrist", "LeftArm"),
        ("r_elbow", "RightArm"),
        ("r_wrist", "RightArm"),
        ("l_knee", "LeftLeg"),
        ("l_ankle", "LeftLeg"),
        ("r_knee", "RightLeg"),
        ("r_ankle", "RightLeg"),
    ]
    return SkeletonLayout(tuple(n for n, _ in joints), tuple(p for _, p in joints), 0)


@dataclass(frozen=True)
class MotionSequence:
    positions: np.ndarray  # T x J x D, meters
    layout: SkeletonLayout
    frame_rate: float = 20.0
    velocities: np.ndarray | None = field(default=None)  # T x J x D, meters/frame

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3:
            raise ValueError(f"positions must be T x J x D, got shape {pos.shape}")
        if pos.shape[1] != self.layout.n_joints:
            raise LayoutError(f"{pos.shape[1]} joints in data, {self.layout.n_joints} in layout")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.velocities is not None:
            vel = np.asarray(self.velocities, dtype=np.float64)
            if vel.shape != pos.shape:
                raise ValueError("velocities must match positions in shape")
            vel.setflags(write=False)
            object.__setattr__(self, "velocities", vel)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]


def to_root_relative(seq: MotionSequence) -> MotionSequence:
    """Express every non-root joint as an offset from the same-frame root."""
    root = seq.layout.root_joint
    pos = seq.positions
    rel = pos - pos[:, root : root + 1, :]
    rel[:, root, :] = pos[:, root, :]
    return replace(seq, positions=rel, velocities=None)


def compute_velocities(seq: MotionSequence) -> MotionSequence:
    """Backward differences, ``V[0] = 0``."""
    if seq.n_frames < 2:
        raise SequenceLengthError("velocities need at least two frames")
    pos = seq.positions
    vel = np.zeros_like(pos)
    vel[1:] = pos[1:] - pos[:-1]
    return replace(seq, velocities=vel)


def gather_parts(seq: MotionSequence) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-part ``T x (n_joints_in_part * D)`` arrays for positions and velocities.

    Joints inside a part are ordered by their name so that storage order
    never leaks into the features.
    """
    if seq.velocities is None:
        seq = compute_velocities(seq)
    t, _, d = seq.positions.shape
    xs, vs = [], []
    for part in PARTS:
        joints = sorted(seq.layout.part_joints(part), key=lambda j: seq.layout.joint_names[j])
        xs.append(seq.positions[:, joints, :].reshape(t, len(joints) * d))
        vs.append(seq.velocities[:, joints, :].reshape(t, len(joints) * d))
    return xs, vs


def prepare(seq: MotionSequence) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Root-relative conversion, velocities, and part gathering in one go."""
    return gather_parts(compute_velocities(to_root_relative(seq)))


def motion_to_dict(seq: MotionSequence) -> dict:
    return {
        "layout": seq.layout.to_dict(),
        "frame_rate": seq.frame_rate,
        "frames": seq.positions.tolist(),
    }


def motion_from_dict(d: dict) -> MotionSequence:
    layout = SkeletonLayout.from_dict(d["layout"])
    frames = np.asarray(d["frames"], dtype=np.float64)
    if frames.ndim != 3 or frames.shape[1] != layout.n_joints:
        raise LayoutError(
            f"frames have shape {frames.shape}, expected T x {layout.n_joints} x D"
        )
    if frames.shape[0] < 2:
        raise SequenceLengthError("a motion file needs at least two frames")
    return MotionSequence(frames, layout, float(d.get("frame_rate", 20.0)))


def save_motion(path, seq: MotionSequence) -> None:
    Path(path).write_text(json.dumps(motion_to_dict(seq)))


def load_motion(path) -> MotionSequence:
    return motion_from_dict(json.loads(Path(path).read_text()))
