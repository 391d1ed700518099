"""Sequence ingestion, windowing and synthetic motion."""

from .io import load_directory, load_image, load_sequence, save_sequence
from .sequence import (
    InputNormalization,
    Sample,
    SkeletonSequence,
    SpatioTemporalGraph,
    build_adjacency,
    center_on_torso,
    uncenter,
    window_samples,
)
from .synthetic import SynthConfig, synthesize, template_skeleton

__all__ = [
    "InputNormalization", "Sample", "SkeletonSequence", "SpatioTemporalGraph", "SynthConfig",
    "build_adjacency", "center_on_torso", "load_directory", "load_image", "load_sequence",
    "save_sequence", "synthesize", "template_skeleton", "uncenter", "window_samples",
]
