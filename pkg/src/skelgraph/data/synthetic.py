"""Procedural skeleton motion used in place of the real capture datasets.

The template is a torso joint (index 0, the path joint) with up to five
limb chains hanging off it. Every frame is the template under a rigid
rotation per chain about the torso plus a global heading and translation,
so bone lengths are constant by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ParameterError
from .sequence import SkeletonSequence

MOTIONS = ("static", "linear", "gait")

# rest directions of the limb chains: head, left arm, right arm, left leg, right leg
_CHAIN_DIRS = np.array([
    [0.0, 1.0, 0.0],
    [-1.0, 0.35, 0.15],
    [1.0, 0.35, -0.15],
    [-0.3, -1.0, 0.1],
    [0.3, -1.0, -0.1],
])
_CHAIN_PHASE = np.array([0.0, np.pi, 0.0, 0.0, np.pi])
_CHAIN_AMP = np.array([0.15, 1.0, 1.0, 1.0, 1.0])
_BEND = 0.35  # rad of extra bend per joint down a chain


@dataclass
class SynthConfig:
    n_sequences: int = 8
    length: int = 120
    joints: int = 21
    fps: float = 30.0
    seed: int = 0
    motion: str = "gait"
    bone_length: float = 0.25
    speed_range: tuple[float, float] = (0.3, 1.0)
    velocity: tuple[float, float, float] | None = None
    swing_amplitude: float = 0.5
    gait_frequency: float = 1.0
    noise: float = 0.0
    projection_scale: float = 0.25
    images: bool = False
    image_size: int = 64

    def __post_init__(self):
        if self.motion not in MOTIONS:
            raise ParameterError(f"motion must be one of {MOTIONS}, got {self.motion!r}")
        if self.joints < 2:
            raise ParameterError("synthetic skeletons need at least 2 joints")
        if self.length < 1 or self.n_sequences < 0:
            raise ParameterError("length must be >= 1 and n_sequences >= 0")
        if self.fps <= 0:
            raise ParameterError("fps must be positive")


def _rot_z(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    z, o = np.zeros_like(theta), np.ones_like(theta)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def _rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def template_skeleton(joints: int, bone_length: float = 0.25):
    """Return (rest offsets (J, 3) relative to the torso, bones, chain id per joint).

    Joint 0 is the torso; joint j >= 1 belongs to chain (j - 1) % 5.
    """
    offsets = np.zeros((joints, 3))
    chain = np.full(joints, -1)
    last = {}
    bones = []
    for j in range(1, joints):
        c = (j - 1) % 5
        depth = (j - 1) // 5
        d = _rot_z(np.array(_BEND * depth * (1 if c % 2 else -1))) @ _CHAIN_DIRS[c]
        d = d / np.linalg.norm(d)
        parent = last.get(c, 0)
        offsets[j] = offsets[parent] + bone_length * d
        bones.append((parent, j))
        chain[j] = c
        last[c] = j
    return offsets, bones, chain


def _sequence(cfg: SynthConfig, rng: np.random.Generator, index: int) -> SkeletonSequence:
    offsets, bones, chain = template_skeleton(cfg.joints, cfg.bone_length)
    t = np.arange(cfg.length) / cfg.fps

    heading = rng.uniform(-np.pi / 6, np.pi / 6)
    start = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.1, 0.1), rng.uniform(3.0, 4.0)])
    if cfg.motion == "static":
        velocity = np.zeros(3)
    elif cfg.velocity is not None:
        velocity = np.asarray(cfg.velocity, dtype=np.float64)
    else:
        speed = rng.uniform(*cfg.speed_range)
        direction = rng.choice([-1.0, 1.0])
        velocity = speed * direction * np.array([np.cos(heading), 0.0, -np.sin(heading)])
    phase = rng.uniform(0, 2 * np.pi)

    if cfg.motion == "gait":
        angle = cfg.swing_amplitude * np.sin(2 * np.pi * cfg.gait_frequency * t[:, None]
                                             + phase + _CHAIN_PHASE[None, :])
        angle = angle * _CHAIN_AMP[None, :]  # (L, 5)
    else:
        angle = np.zeros((cfg.length, 5))

    yaw = _rot_y(heading)
    rot = _rot_z(angle)  # (L, 5, 3, 3)
    local = np.zeros((cfg.length, cfg.joints, 3))
    for j in range(1, cfg.joints):
        local[:, j] = rot[:, chain[j]] @ offsets[j]
    path = start + t[:, None] * velocity
    p3d = local @ yaw.T + path[:, None, :]

    p2d = p3d[:, :, :2] * cfg.projection_scale
    if cfg.noise > 0:
        p2d = p2d + rng.normal(0.0, cfg.noise, size=p2d.shape)
    return SkeletonSequence(
        joints=cfg.joints, fps=cfg.fps, bones=bones, path_joint=0, p3d=p3d, p2d=p2d,
        meta={"name": f"seq_{index:04d}", "velocity": velocity.tolist(), "phase": phase},
    )


def synthesize(cfg: SynthConfig) -> list[SkeletonSequence]:
    """Generate ``cfg.n_sequences`` sequences; each gets its own seeded stream."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_sequences)
    return [_sequence(cfg, np.random.default_rng(s), i) for i, s in enumerate(seeds)]


def render_frame(p2d: np.ndarray, size: int = 64, background=(0.2, 0.3, 0.4),
                 projection_scale: float = 0.25) -> np.ndarray:
    """Flat procedural image: solid background plus a bright square per joint."""
    img = np.empty((3, size, size))
    img[:] = np.asarray(background)[:, None, None]
    # p2d spans roughly +-projection_scale * 2.5 m around the origin
    half = 2.5 * projection_scale
    px = np.clip(((p2d[:, 0] + half) / (2 * half) * (size - 1)).round().astype(int), 0, size - 1)
    py = np.clip(((half - p2d[:, 1]) / (2 * half) * (size - 1)).round().astype(int), 0, size - 1)
    for j, (x, y) in enumerate(zip(px, py)):
        shade = 0.5 + 0.5 * (j + 1) / len(p2d)
        img[:, max(0, y - 1) : y + 2, max(0, x - 1) : x + 2] = shade
    return img


def attach_images(seq: SkeletonSequence, out_dir: Path, cfg: SynthConfig, rng: np.random.Generator) -> None:
    """Render one PNG per frame under ``out_dir`` and record relative paths."""
    from .io import save_image

    name = seq.meta["name"]
    background = tuple(rng.uniform(0.1, 0.6, size=3))
    refs = []
    for t in range(len(seq)):
        rel = Path("images") / name / f"frame_{t:04d}.png"
        save_image(render_frame(seq.p2d[t], cfg.image_size, background, cfg.projection_scale), out_dir / rel)
        refs.append(rel.as_posix())
    seq.images = refs
