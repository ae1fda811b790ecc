"""Masked warping of reference features and weighted max-pool fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, InvalidInputError
from .motion import DenseMotion
from .tensor import PaddingMode, grid_sample, grid_sample_backward


@dataclass(frozen=True, eq=False)
class AggregateResult:
    """Fused features and, per element, the index of the winning reference.

    ``argmax_index`` has the same ``(C, H, W)`` layout as ``features``.
    """

    features: np.ndarray
    argmax_index: np.ndarray


def _check_mask(feature, mask):
    if mask.shape != feature.shape[1:]:
        raise DimensionError(f"mask shape {mask.shape} != feature dims {feature.shape[1:]}")


def warp_and_mask(feature: np.ndarray, flow: np.ndarray, mask: np.ndarray,
                  padding: PaddingMode = PaddingMode.BORDER) -> np.ndarray:
    feature = np.asarray(feature)
    mask = np.asarray(mask)
    _check_mask(feature, mask)
    return mask[None] * grid_sample(feature, flow, padding)


def warp_and_mask_backward(feature, flow, mask, grad_out, padding=PaddingMode.BORDER):
    """Returns gradients w.r.t. ``(feature, flow, mask)``."""
    feature = np.asarray(feature)
    mask = np.asarray(mask)
    _check_mask(feature, mask)
    warped = grid_sample(feature, flow, padding)
    grad_mask = np.sum(grad_out * warped, axis=0)
    grad_feature, grad_flow = grid_sample_backward(feature, flow, grad_out * mask[None], padding)
    return grad_feature, grad_flow, grad_mask


def apply_motion(eps_r: np.ndarray, motion: DenseMotion,
                 padding: PaddingMode = PaddingMode.BORDER) -> np.ndarray:
    """Deform a ``(C, H, W)`` reference feature with the motion's flow and
    multiply by its occlusion mask, broadcast over channels."""
    return warp_and_mask(eps_r, motion.flow, motion.occlusion, padding)


def temporal_weights(ref_indices: Sequence[int], target_index: int, sigma: float) -> np.ndarray:
    """``exp(-(d_r - d_min) / sigma)`` with ``d_r = |target - ref_r|``.

    The nearest reference always gets weight 1. Weights are floored at the
    smallest positive normal double so that a far reference never underflows
    to exactly zero.
    """
    if len(ref_indices) == 0:
        raise InvalidInputError("reference list is empty")
    if not sigma > 0:
        raise InvalidInputError(f"sigma must be > 0, got {sigma}")
    dist = np.abs(target_index - np.asarray(ref_indices, dtype=np.float64))
    return np.maximum(np.exp(-(dist - dist.min()) / sigma), np.finfo(np.float64).tiny)


def temporal_weights_dsigma(ref_indices: Sequence[int], target_index: int, sigma: float) -> np.ndarray:
    """Derivative of :func:`temporal_weights` with respect to ``sigma``."""
    dist = np.abs(target_index - np.asarray(ref_indices, dtype=np.float64))
    excess = dist - dist.min()
    return np.exp(-excess / sigma) * excess / sigma ** 2


def _stack(deformed, weights):
    weights = np.asarray(weights, dtype=np.float64)
    if len(deformed) == 0:
        raise DimensionError("no deformed features to aggregate")
    if len(deformed) != weights.shape[0]:
        raise DimensionError(f"{len(deformed)} features but {weights.shape[0]} weights")
    shape = np.shape(deformed[0])
    if any(np.shape(d) != shape for d in deformed):
        raise DimensionError("deformed features do not share a shape")
    stack = np.stack([np.asarray(d) for d in deformed])
    return stack, weights


def aggregate(deformed: Sequence[np.ndarray], weights) -> AggregateResult:
    """Element-wise ``max_r weights[r] * deformed[r]``; ties go to the lowest r."""
    stack, weights = _stack(deformed, weights)
    scaled = weights.reshape((-1,) + (1,) * (stack.ndim - 1)) * stack
    winner = np.argmax(scaled, axis=0)
    fused = np.take_along_axis(scaled, winner[None], axis=0)[0]
    return AggregateResult(fused, winner)


def aggregate_backward(deformed: Sequence[np.ndarray], weights, grad_out: np.ndarray):
    """Subgradient of :func:`aggregate`; all mass goes to the winning branch.

    Returns ``(list of per-reference gradients, gradient w.r.t. weights)``.
    """
    stack, weights = _stack(deformed, weights)
    winner = aggregate(deformed, weights).argmax_index
    grads = []
    grad_w = np.zeros_like(weights)
    for r in range(stack.shape[0]):
        routed = np.where(winner == r, grad_out, 0.0)
        grads.append(routed * weights[r])
        grad_w[r] = np.sum(routed * stack[r])
    return grads, grad_w
