"""Skeleton-graph 3D motion forecasting from 2D skeleton observations."""

__version__ = "0.1.0"
