"""InfoNCE agreement loss between features warped from different references.

Positive pairs are two references' deformed features for the same target;
every other sample in the batch provides the negatives.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidInputError


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.1
    epsilon: float = 1e-8
    similarity: str = "cosine"
    # Average the loss over both anchoring directions instead of side_1 only.
    symmetric: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidInputError(f"tau must be > 0, got {self.tau}")
        if not 0 < self.epsilon <= 1e-6:
            raise InvalidInputError(f"epsilon must be in (0, 1e-6], got {self.epsilon}")
        if self.similarity != "cosine":
            raise InvalidInputError(f"unsupported similarity {self.similarity!r}")


@dataclass(frozen=True, eq=False)
class ContrastiveBatch:
    """Positive pairs ``(side_1[i], side_2[i])`` as two ``(B, D)`` arrays."""

    side_1: np.ndarray
    side_2: np.ndarray

    def __post_init__(self):
        s1 = np.atleast_2d(np.asarray(self.side_1, dtype=np.float64))
        s2 = np.atleast_2d(np.asarray(self.side_2, dtype=np.float64))
        if s1.shape != s2.shape or s1.shape[0] < 1:
            raise DimensionError(f"batch sides must match with B >= 1: {s1.shape} vs {s2.shape}")
        if not (np.all(np.isfinite(s1)) and np.all(np.isfinite(s2))):
            raise InvalidInputError("non-finite feature in contrastive batch")
        object.__setattr__(self, "side_1", s1)
        object.__setattr__(self, "side_2", s2)


def pool_feature(fm: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean of a ``(C, H, W)`` map."""
    fm = np.asarray(fm, dtype=np.float64)
    return fm.reshape(fm.shape[0], -1).mean(axis=1)


def pool_feature_backward(shape, grad: np.ndarray) -> np.ndarray:
    c, h, w = shape
    return np.broadcast_to(np.asarray(grad).reshape(c, 1, 1) / (h * w), shape).copy()


def cosine_sim(a, b, epsilon: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(a @ b / max(np.linalg.norm(a) * np.linalg.norm(b), epsilon))


def _similarity_matrix(x, y, epsilon):
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    prod = nx[:, None] * ny[None, :]
    return (x @ y.T) / np.maximum(prod, epsilon), nx, ny, prod


def _directed_loss(x, y, cfg):
    sim, nx, ny, prod = _similarity_matrix(x, y, cfg.epsilon)
    logits = sim / cfg.tau
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    loss = float(np.mean(lse - np.diag(logits)))

    b = x.shape[0]
    softmax = np.exp(logits - lse[:, None])
    g_sim = (softmax - np.eye(b)) / (b * cfg.tau)
    active = prod > cfg.epsilon
    inv = 1.0 / np.maximum(prod, cfg.epsilon)
    # d sim_ij / d x_i = y_j / P_ij - sim_ij x_i / |x_i|^2 when P_ij > eps, else y_j / eps
    with np.errstate(divide="ignore", invalid="ignore"):
        gs_act = np.where(active, g_sim * sim, 0.0)
        inv_nx2 = np.where(nx > 0, 1.0 / nx ** 2, 0.0)
        inv_ny2 = np.where(ny > 0, 1.0 / ny ** 2, 0.0)
    gx = (g_sim * inv) @ y - gs_act.sum(axis=1)[:, None] * x * inv_nx2[:, None]
    gy = (g_sim * inv).T @ x - gs_act.sum(axis=0)[:, None] * y * inv_ny2[:, None]
    return loss, gx, gy


def info_nce_with_grad(batch: ContrastiveBatch, cfg: ContrastiveConfig = ContrastiveConfig()):
    """Loss and its gradients ``(loss, d/d side_1, d/d side_2)``."""
    x, y = batch.side_1, batch.side_2
    loss, gx, gy = _directed_loss(x, y, cfg)
    if cfg.symmetric:
        loss_r, gy_r, gx_r = _directed_loss(y, x, cfg)
        return 0.5 * (loss + loss_r), 0.5 * (gx + gx_r), 0.5 * (gy + gy_r)
    return loss, gx, gy


def info_nce(batch: ContrastiveBatch, cfg: ContrastiveConfig = ContrastiveConfig()) -> float:
    """Mean over anchors i of
    ``-log(exp(s_ii / tau) / sum_j exp(s_ij / tau))``, ``s_ij = cos(side_1[i], side_2[j])``.

    The positive term is part of the denominator, so the loss is never negative.
    """
    return info_nce_with_grad(batch, cfg)[0]


def _as_sample_stack(deformed_pooled) -> np.ndarray:
    feats = np.asarray(deformed_pooled, dtype=np.float64)
    if feats.ndim != 3:
        raise DimensionError(f"expected (B, N, D) pooled features, got shape {feats.shape}")
    if feats.shape[1] < 2:
        raise InvalidInputError(f"need at least two references per sample, got {feats.shape[1]}")
    return feats


def multi_ref_contrastive_with_grad(deformed_pooled, cfg: ContrastiveConfig = ContrastiveConfig()):
    """Mean InfoNCE over all unordered reference pairs ``(a, b)``, ``a < b``.

    An unordered pair has no natural anchor side, so each pair is scored in
    both directions and averaged; this keeps the loss invariant to the order
    of the reference list.

    Args:
        deformed_pooled: ``(B, N, D)`` pooled features, N references per sample.

    Returns:
        ``(loss, gradient of shape (B, N, D))``.
    """
    feats = _as_sample_stack(deformed_pooled)
    pairs = list(itertools.combinations(range(feats.shape[1]), 2))
    total = 0.0
    grad = np.zeros_like(feats)
    pair_cfg = dataclasses.replace(cfg, symmetric=True)
    for a, b in pairs:
        loss, ga, gb = info_nce_with_grad(ContrastiveBatch(feats[:, a], feats[:, b]), pair_cfg)
        total += loss
        grad[:, a] += ga
        grad[:, b] += gb
    return total / len(pairs), grad / len(pairs)


def multi_ref_contrastive(deformed_pooled, cfg: ContrastiveConfig = ContrastiveConfig()) -> float:
    return multi_ref_contrastive_with_grad(deformed_pooled, cfg)[0]
