"""Sparse keypoints to dense motion.

A deterministic first-order construction stands in for a learned dense motion
network: every keypoint proposes a local affine motion, the proposals are
blended with Gaussian weights around the target keypoints, and a background
candidate with zero displacement absorbs a fixed floor weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, InvalidInputError
from .tensor import identity_flow, pixel_spacing

DEFAULT_KP_VARIANCE = 0.01
DEFAULT_BETA = 5.0
DEFAULT_W_BG = 0.01
GRID_EXTENT = 0.6


@dataclass(frozen=True)
class SimilarityTransform:
    """``u -> scale * R(rotation) @ u + translation`` in normalized coordinates."""

    rotation: float = 0.0
    scale: float = 1.0
    translation: tuple = (0.0, 0.0)

    @property
    def linear(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.linear.T + np.asarray(self.translation, dtype=np.float64)

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64) - np.asarray(self.translation)
        return points @ np.linalg.inv(self.linear).T


@dataclass(frozen=True)
class Keypoint:
    position: np.ndarray
    jacobian: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.clip(np.asarray(self.position, dtype=np.float64).reshape(2), -1.0, 1.0)
        object.__setattr__(self, "position", pos)
        if self.jacobian is not None:
            jac = np.asarray(self.jacobian, dtype=np.float64).reshape(2, 2)
            _check_jacobians(jac[None])
            object.__setattr__(self, "jacobian", jac)


def _check_jacobians(jacobians: np.ndarray) -> None:
    if not np.all(np.isfinite(jacobians)):
        raise InvalidInputError("keypoint jacobian is not finite")
    det = np.linalg.det(jacobians)
    if np.any(np.abs(det) <= 1e-8):
        raise InvalidInputError("keypoint jacobian is singular (|det| <= 1e-8)")


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """K keypoints of one frame, stored as ``(K, 2)`` positions and optional
    ``(K, 2, 2)`` jacobians."""

    frame_index: int
    positions: np.ndarray
    jacobians: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.clip(np.asarray(self.positions, dtype=np.float64), -1.0, 1.0)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise DimensionError(f"positions must be (K>=1, 2), got {pos.shape}")
        object.__setattr__(self, "positions", pos)
        if self.jacobians is not None:
            jac = np.asarray(self.jacobians, dtype=np.float64)
            if jac.shape != (pos.shape[0], 2, 2):
                raise DimensionError(f"jacobians must be (K, 2, 2), got {jac.shape}")
            _check_jacobians(jac)
            object.__setattr__(self, "jacobians", jac)

    @classmethod
    def from_points(cls, frame_index: int, points: Sequence[Keypoint]) -> "KeypointSet":
        positions = np.array([p.position for p in points])
        if all(p.jacobian is not None for p in points):
            jacobians = np.array([p.jacobian for p in points])
        elif any(p.jacobian is not None for p in points):
            raise InvalidInputError("either all or no keypoints may carry a jacobian")
        else:
            jacobians = None
        return cls(frame_index, positions, jacobians)

    @property
    def num_keypoints(self) -> int:
        return self.positions.shape[0]

    @property
    def points(self) -> list:
        jac = self.jacobians
        return [Keypoint(self.positions[k], None if jac is None else jac[k])
                for k in range(self.num_keypoints)]

    def jacobians_or_identity(self) -> np.ndarray:
        if self.jacobians is None:
            return np.broadcast_to(np.eye(2), (self.num_keypoints, 2, 2))
        return self.jacobians

    def __eq__(self, other):
        if not isinstance(other, KeypointSet):
            return NotImplemented
        if self.frame_index != other.frame_index or (self.jacobians is None) != (other.jacobians is None):
            return False
        same = np.array_equal(self.positions, other.positions)
        if self.jacobians is not None:
            same = same and np.array_equal(self.jacobians, other.jacobians)
        return bool(same)


@dataclass(frozen=True, eq=False)
class DenseMotion:
    """Flow ``(H, W, 2)`` into the reference frame plus an ``(H, W)`` occlusion mask."""

    flow: np.ndarray
    occlusion: np.ndarray
    # Set when the caller asked for derivatives w.r.t. kp_variance.
    dflow_dvariance: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.flow.ndim != 3 or self.flow.shape[2] != 2:
            raise DimensionError(f"flow must be (H, W, 2), got {self.flow.shape}")
        if self.occlusion.shape != self.flow.shape[:2]:
            raise DimensionError("flow and occlusion must share spatial dims")
        if not np.all((self.occlusion >= 0) & (self.occlusion <= 1)):
            raise InvalidInputError("occlusion values must lie in [0, 1]")


def blend_displacement(points: np.ndarray, ref_kp: KeypointSet, tgt_kp: KeypointSet,
                       kp_variance: float = DEFAULT_KP_VARIANCE, w_bg: float = DEFAULT_W_BG,
                       with_derivative: bool = False):
    """Displacement ``flow(z) - z`` at arbitrary target-frame points ``z``.

    Args:
        points: ``(..., 2)`` array of normalized target coordinates.
        with_derivative: also return d(displacement)/d(kp_variance).

    Returns:
        ``(..., 2)`` displacement, or ``(displacement, derivative)``.
    """
    if ref_kp.num_keypoints != tgt_kp.num_keypoints:
        raise DimensionError(
            f"keypoint count mismatch: {ref_kp.num_keypoints} vs {tgt_kp.num_keypoints}")
    if not kp_variance > 0:
        raise InvalidInputError(f"kp_variance must be > 0, got {kp_variance}")
    if w_bg < 0:
        raise InvalidInputError(f"w_bg must be >= 0, got {w_bg}")
    tgt_jac = tgt_kp.jacobians_or_identity()
    if tgt_kp.jacobians is not None and np.any(np.abs(np.linalg.det(tgt_jac)) <= 1e-8):
        raise InvalidInputError("singular target jacobian")
    # K x 2 x 2 local affine maps from target to reference neighbourhoods
    affine = ref_kp.jacobians_or_identity() @ np.linalg.inv(tgt_jac)
    offset = affine - np.eye(2)

    z = np.asarray(points, dtype=np.float64)
    rel = z[..., None, :] - tgt_kp.positions                              # (..., K, 2)
    cand = (ref_kp.positions - tgt_kp.positions) + np.einsum("kij,...kj->...ki", offset, rel)
    sq = np.sum(rel * rel, axis=-1)                                       # (..., K)
    logits = -sq / (2.0 * kp_variance)
    log_bg = math.log(w_bg) if w_bg > 0 else -math.inf
    top = np.maximum(logits.max(axis=-1), log_bg)
    ek = np.exp(logits - top[..., None])
    norm = ek.sum(axis=-1) + np.exp(log_bg - top)
    weights = ek / norm[..., None]
    disp = np.sum(weights[..., None] * cand, axis=-2)
    if not with_derivative:
        return disp
    dlogit = sq / (2.0 * kp_variance ** 2)
    mean_dlogit = np.sum(weights * dlogit, axis=-1)
    dweights = weights * (dlogit - mean_dlogit[..., None])
    ddisp = np.sum(dweights[..., None] * cand, axis=-2)
    return disp, ddisp


def _central_difference_matrix(n: int, spacing: float) -> np.ndarray:
    """Matrix form of ``np.gradient`` along one axis (second order inside,
    first order at the two ends)."""
    mat = np.zeros((n, n))
    if n == 1:
        return mat
    mat[0, 0], mat[0, 1] = -1.0, 1.0
    mat[-1, -2], mat[-1, -1] = -1.0, 1.0
    for i in range(1, n - 1):
        mat[i, i - 1], mat[i, i + 1] = -0.5, 0.5
    return mat / spacing


def divergence(displacement: np.ndarray) -> np.ndarray:
    """Central-difference divergence of an ``(H, W, 2)`` displacement field,
    in normalized units."""
    h, w, _ = displacement.shape
    dw = _central_difference_matrix(w, pixel_spacing(w))
    dh = _central_difference_matrix(h, pixel_spacing(h))
    return displacement[..., 0] @ dw.T + dh @ displacement[..., 1]


def divergence_adjoint(grad: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`divergence`: maps an ``(H, W)`` gradient on the
    divergence back to an ``(H, W, 2)`` gradient on the displacement."""
    h, w = grad.shape
    dw = _central_difference_matrix(w, pixel_spacing(w))
    dh = _central_difference_matrix(h, pixel_spacing(h))
    return np.stack([grad @ dw, dh.T @ grad], axis=-1)


def occlusion_from_flow(flow: np.ndarray, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Mask ``exp(-beta * |div(flow - identity)|)`` with values in [0, 1]."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise DimensionError(f"flow must be (H, W, 2), got {flow.shape}")
    if beta < 0:
        raise InvalidInputError(f"beta must be >= 0, got {beta}")
    if beta == 0:
        return np.ones(flow.shape[:2])
    disp = flow - identity_flow(*flow.shape[:2])
    return np.exp(-beta * np.abs(divergence(disp)))


def sparse_to_dense(ref_kp: KeypointSet, tgt_kp: KeypointSet, height: int, width: int,
                    kp_variance: float = DEFAULT_KP_VARIANCE, beta: float = DEFAULT_BETA,
                    w_bg: float = DEFAULT_W_BG, with_derivative: bool = False) -> DenseMotion:
    """Dense motion from target pixels into the reference frame.

    Each keypoint k proposes ``p_ref + J_ref J_tgt^-1 (z - p_tgt)``; the
    proposals and an identity background candidate are blended with weights
    proportional to ``exp(-|z - p_tgt|^2 / (2 kp_variance))`` and ``w_bg``.
    """
    grid = identity_flow(height, width)
    if with_derivative:
        disp, ddisp = blend_displacement(grid, ref_kp, tgt_kp, kp_variance, w_bg, True)
    else:
        disp, ddisp = blend_displacement(grid, ref_kp, tgt_kp, kp_variance, w_bg), None
    flow = grid + disp
    return DenseMotion(flow, occlusion_from_flow(flow, beta), ddisp)


def keypoints_from_motion(gt_motion: SimilarityTransform, grid_k: int = 3,
                          frame_index: int = 0, with_jacobians: bool = True) -> KeypointSet:
    """Transport a ``grid_k x grid_k`` grid on ``[-0.6, 0.6]^2`` by ``gt_motion``."""
    if grid_k < 1:
        raise InvalidInputError(f"grid_k must be >= 1, got {grid_k}")
    axis = np.linspace(-GRID_EXTENT, GRID_EXTENT, grid_k) if grid_k > 1 else np.zeros(1)
    gx, gy = np.meshgrid(axis, axis)
    base = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    positions = gt_motion.apply(base)
    jac = np.broadcast_to(gt_motion.linear, (base.shape[0], 2, 2)).copy() if with_jacobians else None
    return KeypointSet(frame_index, positions, jac)
