"""Training objective: mean squared joint error plus the skeleton consistency terms.

All functions accept (..., T, J, 3) arrays; any leading batch axes are
averaged over together with time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DiffArray, abs_, as_diff, cosine_similarity, getitem, mean, sum_, vector_norm
from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.0005
    lambda2: float = 0.1

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("loss weights must be non-negative")


def _pair(p, p_hat) -> tuple[DiffArray, DiffArray]:
    p, p_hat = as_diff(p), as_diff(p_hat)
    if p.shape != p_hat.shape:
        raise DimensionError(f"ground truth {p.shape} and prediction {p_hat.shape} differ")
    if p.ndim < 2 or p.shape[-1] != 3:
        raise DimensionError(f"poses must end in (J, 3), got {p.shape}")
    if p.shape[-2] < 2:
        raise DimensionError("skeleton consistency needs at least 2 joints")
    return p, p_hat


def scl_cos(p, p_hat, pairs: np.ndarray | None = None) -> DiffArray:
    """Mean |C(P_i, P_{i+1}) - C(P~_i, P~_{i+1})| over consecutive joint indices.

    ``pairs`` (K, 2) replaces the consecutive-index pairs, e.g. with bones.
    """
    p, p_hat = _pair(p, p_hat)
    j = p.shape[-2]
    if pairs is None:
        first, second = np.arange(j - 1), np.arange(1, j)
    else:
        pairs = np.asarray(pairs)
        first, second = pairs[:, 0], pairs[:, 1]
    idx_a = (Ellipsis, first, slice(None))
    idx_b = (Ellipsis, second, slice(None))
    c_true = cosine_similarity(getitem(p, idx_a), getitem(p, idx_b))
    c_pred = cosine_similarity(getitem(p_hat, idx_a), getitem(p_hat, idx_b))
    return mean(abs_(c_true - c_pred))


def scl_l2(p, p_hat) -> DiffArray:
    """Mean | |P_i - P_j| - |P~_i - P~_j| | over all unordered joint pairs."""
    p, p_hat = _pair(p, p_hat)
    i, j = np.triu_indices(p.shape[-2], k=1)
    d_true = vector_norm(getitem(p, (Ellipsis, j, slice(None))) - getitem(p, (Ellipsis, i, slice(None))))
    d_pred = vector_norm(getitem(p_hat, (Ellipsis, j, slice(None))) - getitem(p_hat, (Ellipsis, i, slice(None))))
    return mean(abs_(d_true - d_pred))


def scl(p, p_hat, weights: LossWeights = LossWeights(), pairs=None) -> DiffArray:
    p, p_hat = _pair(p, p_hat)
    total = as_diff(np.zeros((), dtype=p.dtype))
    if weights.lambda1:
        total = total + weights.lambda1 * scl_cos(p, p_hat, pairs)
    if weights.lambda2:
        total = total + weights.lambda2 * scl_l2(p, p_hat)
    return total


def data_term(p, p_hat) -> DiffArray:
    """Mean over time and joints of the squared Euclidean joint error."""
    p, p_hat = as_diff(p), as_diff(p_hat)
    if p.shape != p_hat.shape:
        raise DimensionError(f"ground truth {p.shape} and prediction {p_hat.shape} differ")
    diff = p_hat - p
    return mean(sum_(diff * diff, axis=-1))


def _center(x: DiffArray, joint: int) -> DiffArray:
    return x - getitem(x, (Ellipsis, slice(joint, joint + 1), slice(None)))


def total_loss(p, p_hat, weights: LossWeights = LossWeights(), center_joint: int | None = None,
               pairs=None) -> DiffArray:
    """Data term plus weighted consistency terms.

    With ``center_joint`` set, the consistency terms see both skeletons
    re-expressed relative to that joint while the data term keeps the
    given frame.
    """
    p, p_hat = as_diff(p), as_diff(p_hat)
    loss = data_term(p, p_hat)
    if weights.lambda1 or weights.lambda2:
        if p.shape[-2] < 2:
            return loss
        if center_joint is not None:
            p, p_hat = _center(p, center_joint), _center(p_hat, center_joint)
        loss = loss + scl(p, p_hat, weights, pairs)
    return loss
