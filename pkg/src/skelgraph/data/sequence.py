"""Skeleton sequences, graph construction and sliding-window samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError, FormatError, ParameterError


@dataclass
class SkeletonSequence:
    """Frames of paired 2D/3D joints for one subject.

    p2d is (L, J, 2) in normalized image coordinates; p3d is (L, J, 3) in
    meters in the camera frame. ``images`` holds one optional file path per
    frame. p2d may be ``None`` for prediction documents that carry 3D only.
    """

    joints: int
    fps: float
    bones: list[tuple[int, int]]
    path_joint: int
    p3d: np.ndarray
    p2d: np.ndarray | None = None
    images: list[str | None] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bones = [(int(a), int(b)) for a, b in self.bones]
        self.p3d = np.asarray(self.p3d, dtype=np.float64)
        if self.p2d is not None:
            self.p2d = np.asarray(self.p2d, dtype=np.float64)
        self.validate()

    def __len__(self) -> int:
        return self.p3d.shape[0]

    def validate(self) -> None:
        j = self.joints
        if j < 1:
            raise FormatError(f"joints must be positive, got {j}")
        if self.fps <= 0:
            raise FormatError(f"fps must be positive, got {self.fps}")
        if not 0 <= self.path_joint < j:
            raise FormatError(f"path_joint {self.path_joint} out of range for {j} joints")
        for k, (a, b) in enumerate(self.bones):
            if not (0 <= a < j and 0 <= b < j):
                raise FormatError(f"bones[{k}] = ({a}, {b}) has an index outside [0, {j})")
        if self.p3d.ndim != 3 or self.p3d.shape[0] == 0:
            raise FormatError("sequence needs at least one frame")
        if self.p3d.shape[1:] != (j, 3):
            raise FormatError(f"p3d frames have shape {self.p3d.shape[1:]}, expected ({j}, 3)")
        if not np.all(np.isfinite(self.p3d)):
            raise FormatError("p3d contains non-finite coordinates")
        if self.p2d is not None:
            if self.p2d.shape != (self.p3d.shape[0], j, 2):
                raise FormatError(f"p2d shape {self.p2d.shape} inconsistent with {self.p3d.shape[0]} frames of {j} joints")
            if not np.all(np.isfinite(self.p2d)):
                raise FormatError("p2d contains non-finite coordinates")
        if self.images is not None and len(self.images) != self.p3d.shape[0]:
            raise FormatError("images list length differs from frame count")

    @property
    def has_images(self) -> bool:
        return self.images is not None and all(img is not None for img in self.images)


@dataclass
class SpatioTemporalGraph:
    """Observed 2D vertices (T, J, 2) with per-timestep adjacency (T, J, J)."""

    vertices: np.ndarray
    adjacency: np.ndarray
    bones: list[tuple[int, int]]

    def __post_init__(self):
        t, j = self.vertices.shape[:2]
        if self.vertices.shape != (t, j, 2):
            raise DataError(f"vertices must be (T, J, 2), got {self.vertices.shape}")
        if self.adjacency.shape != (t, j, j):
            raise DataError(f"adjacency must be ({t}, {j}, {j}), got {self.adjacency.shape}")

    @property
    def T(self) -> int:
        return self.vertices.shape[0]

    @property
    def J(self) -> int:
        return self.vertices.shape[1]


@dataclass
class Sample:
    """One observation/prediction window.

    ``target`` holds torso-centered future poses and ``target_path`` the
    absolute torso trajectory; their sum restores the source frames.
    """

    obs_graph: SpatioTemporalGraph
    target: np.ndarray
    target_path: np.ndarray
    path_joint: int
    images: list[str | None] | None = None
    source: str = ""
    start: int = 0

    @property
    def absolute_target(self) -> np.ndarray:
        return uncenter(self.target, self.target_path)


def build_adjacency(bones, joints: int, steps: int = 1) -> np.ndarray:
    """Binary symmetric adjacency with self-loops, repeated over ``steps``."""
    a = np.eye(joints)
    for k, (i, j) in enumerate(bones):
        if not (0 <= i < joints and 0 <= j < joints):
            raise FormatError(f"bone {k} = ({i}, {j}) out of range for {joints} joints")
        a[i, j] = a[j, i] = 1.0
    return np.repeat(a[None], steps, axis=0)


def center_on_torso(frames: np.ndarray, path_joint: int) -> tuple[np.ndarray, np.ndarray]:
    frames = np.asarray(frames)
    if not 0 <= path_joint < frames.shape[-2]:
        raise ParameterError(f"path_joint {path_joint} out of range")
    path = frames[..., path_joint, :].copy()
    return frames - path[..., None, :], path


def uncenter(centered: np.ndarray, path: np.ndarray) -> np.ndarray:
    return centered + path[..., None, :]


def window_samples(seq: SkeletonSequence, obs: int, pred: int, stride: int = 1,
                   use_images: bool = False) -> list[Sample]:
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if obs < 1 or pred < 1:
        raise ParameterError("observation and prediction lengths must be >= 1")
    if seq.p2d is None:
        raise DataError("sequence has no 2D observations")
    total = obs + pred
    length = len(seq)
    if length < total:
        return []
    adjacency = build_adjacency(seq.bones, seq.joints, obs)
    samples = []
    for start in range(0, length - total + 1, stride):
        future = seq.p3d[start + obs : start + total]
        centered, path = center_on_torso(future, seq.path_joint)
        images = None
        if use_images and seq.images is not None:
            base = seq.meta.get("base_dir")
            images = [None if ref is None else (ref if base is None or Path(ref).is_absolute() else str(Path(base) / ref))
                      for ref in seq.images[start : start + obs]]
        samples.append(Sample(
            obs_graph=SpatioTemporalGraph(seq.p2d[start : start + obs].copy(), adjacency.copy(), list(seq.bones)),
            target=centered,
            target_path=path,
            path_joint=seq.path_joint,
            images=images,
            source=str(seq.meta.get("name", "")),
            start=start,
        ))
    return samples


@dataclass
class InputNormalization:
    """Dataset-level constants mapping raw data into the model's frame.

    2D observations are scaled per axis to [-1, 1] using the training-set
    range; 3D outputs live relative to ``offset3d`` (mean training torso
    position).
    """

    p2d_min: np.ndarray
    p2d_max: np.ndarray
    offset3d: np.ndarray

    @classmethod
    def identity(cls) -> "InputNormalization":
        return cls(np.array([-1.0, -1.0]), np.array([1.0, 1.0]), np.zeros(3))

    @classmethod
    def fit(cls, samples: list[Sample]) -> "InputNormalization":
        if not samples:
            raise DataError("no samples to fit normalization on")
        obs = np.concatenate([s.obs_graph.vertices.reshape(-1, 2) for s in samples])
        lo, hi = obs.min(axis=0), obs.max(axis=0)
        span = np.where(hi - lo > 1e-12, hi - lo, 1.0)
        hi = lo + span
        offset = np.mean(np.concatenate([s.target_path for s in samples]), axis=0)
        return cls(lo, hi, offset)

    def normalize_2d(self, p2d: np.ndarray) -> np.ndarray:
        return 2.0 * (p2d - self.p2d_min) / (self.p2d_max - self.p2d_min) - 1.0

    def model_target(self, sample: Sample) -> np.ndarray:
        """Absolute future poses shifted by the dataset offset."""
        return sample.absolute_target - self.offset3d

    def to_dict(self) -> dict:
        return {"p2d_min": self.p2d_min.tolist(), "p2d_max": self.p2d_max.tolist(),
                "offset3d": self.offset3d.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "InputNormalization":
        return cls(np.asarray(d["p2d_min"], dtype=np.float64), np.asarray(d["p2d_max"], dtype=np.float64),
                   np.asarray(d["offset3d"], dtype=np.float64))
