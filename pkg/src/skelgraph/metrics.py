"""Evaluation metrics: per-timestep MPJPE curves, ADE, FDE and STB_sigma.

Pose arrays are in meters; every curve and scalar is reported in mm.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError, UsageError

CHECKPOINT_SECONDS = (0.5, 1.0, 1.5, 2.0)
MM = 1000.0


@dataclass
class MetricsReport:
    pose_curve: list[float]
    path_curve: list[float]
    ade: float
    fde: float
    stb_sigma: float
    sampled_checkpoints: dict[str, dict[str, float]] = field(default_factory=dict)
    checkpoints_truncated: bool = False
    num_samples: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def mpjpe_curve(p, p_hat, joints=None) -> np.ndarray:
    """Per-timestep mean joint distance in mm.

    ``joints`` selects a subset (an int picks a single joint, e.g. the torso
    for the path curve); ``None`` uses every joint.
    """
    p, p_hat = np.asarray(p, dtype=np.float64), np.asarray(p_hat, dtype=np.float64)
    if p.shape != p_hat.shape or p.ndim != 3 or p.shape[-1] != 3:
        raise DimensionError(f"expected two (T, J, 3) arrays, got {p.shape} and {p_hat.shape}")
    err = np.linalg.norm(p_hat - p, axis=-1)
    if joints is not None:
        err = err[:, np.atleast_1d(joints)]
    return err.mean(axis=1) * MM


def _curves(pose_curve, path_curve) -> tuple[np.ndarray, np.ndarray]:
    pose, path = np.asarray(pose_curve, dtype=np.float64), np.asarray(path_curve, dtype=np.float64)
    if pose.size == 0 or path.size == 0:
        raise UsageError("metric curves must be non-empty")
    return pose, path


def ade(pose_curve, path_curve) -> float:
    pose, path = _curves(pose_curve, path_curve)
    if pose.shape != path.shape:
        raise UsageError("pose and path curves must have equal length")
    return float((pose.mean() + path.mean()) / 2)


def fde(pose_curve, path_curve) -> float:
    pose, path = _curves(pose_curve, path_curve)
    return float((pose[-1] + path[-1]) / 2)


def stb_sigma(pose_curve, path_curve) -> float:
    """Root of the mean of the two curves' population variances."""
    pose, path = _curves(pose_curve, path_curve)
    return float(np.sqrt((pose.var() + path.var()) / 2))


def checkpoint_indices(steps: int, fps: float) -> tuple[list[tuple[float, int]], bool]:
    """0-based indices round(fps * s) - 1 for the standard horizons that fit."""
    if fps <= 0:
        raise ParameterError("fps must be positive")
    picked = []
    for s in CHECKPOINT_SECONDS:
        idx = int(round(fps * s)) - 1
        if 0 <= idx < steps:
            picked.append((s, idx))
    return picked, len(picked) < len(CHECKPOINT_SECONDS)


def report_from_curves(pose_curve, path_curve, fps: float, num_samples: int = 1,
                       ade_mode: str = "all") -> MetricsReport:
    pose, path = _curves(pose_curve, path_curve)
    picked, truncated = checkpoint_indices(len(pose), fps)
    sampled = {f"{s:g}s": {"index": idx, "pose": float(pose[idx]), "path": float(path[idx])} for s, idx in picked}
    if ade_mode == "all":
        ade_value = ade(pose, path)
    elif ade_mode == "checkpoints":
        if not picked:
            raise UsageError("no checkpoint falls inside the prediction horizon")
        ix = [idx for _, idx in picked]
        ade_value = ade(pose[ix], path[ix])
    else:
        raise UsageError(f"unknown ade_mode {ade_mode!r}")
    return MetricsReport(
        pose_curve=pose.tolist(), path_curve=path.tolist(), ade=ade_value, fde=fde(pose, path),
        stb_sigma=stb_sigma(pose, path), sampled_checkpoints=sampled, checkpoints_truncated=truncated,
        num_samples=num_samples,
    )


def report(p, p_hat, fps: float, path_joint: int = 0, center: bool = True) -> MetricsReport:
    """Metrics for one window of absolute poses (T, J, 3) in meters.

    The path curve follows ``path_joint``; the pose curve uses all joints,
    expressed relative to ``path_joint`` when ``center`` is set so that pose
    and path errors are measured separately.
    """
    p, p_hat = np.asarray(p, dtype=np.float64), np.asarray(p_hat, dtype=np.float64)
    path_curve = mpjpe_curve(p, p_hat, joints=path_joint)
    if center:
        p = p - p[:, path_joint : path_joint + 1]
        p_hat = p_hat - p_hat[:, path_joint : path_joint + 1]
    return report_from_curves(mpjpe_curve(p, p_hat), path_curve, fps)


def aggregate(reports: list[MetricsReport], fps: float) -> MetricsReport:
    """Sample-weighted mean of the curves, scalars recomputed from the means."""
    if not reports:
        raise UsageError("no reports to aggregate")
    weights = [r.num_samples for r in reports]
    pose = np.average([r.pose_curve for r in reports], axis=0, weights=weights)
    path = np.average([r.path_curve for r in reports], axis=0, weights=weights)
    return report_from_curves(pose, path, fps, num_samples=sum(r.num_samples for r in reports))
