"""Toy optimisation of the deterministic animation parameters.

The free parameters are ``kp_variance``, ``beta`` and the aggregation
``sigma``, optimised in log space so they stay positive. The objective is the
reconstruction MSE of each target plus the multi-reference contrastive loss
over the batch, and its gradient is assembled from the analytic
vector-Jacobian products of every stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .aggregation import (aggregate, aggregate_backward, temporal_weights,
                          temporal_weights_dsigma, warp_and_mask, warp_and_mask_backward)
from .contrastive import ContrastiveConfig, multi_ref_contrastive_with_grad, pool_feature, \
    pool_feature_backward
from .errors import DivergenceError, InvalidInputError
from .motion import DEFAULT_BETA, DEFAULT_KP_VARIANCE, DEFAULT_W_BG, blend_displacement, \
    divergence, divergence_adjoint
from .pipeline import downsample_features, upsample_generator, upsample_generator_backward
from .synth import SynthConfig, synth_sequence
from .tensor import PaddingMode, identity_flow


@dataclass(frozen=True, eq=False)
class Sample:
    """One target frame with the references used to animate it."""

    target_index: int
    target_frame: np.ndarray
    target_kp: object
    ref_indices: tuple
    ref_features: tuple
    ref_kps: tuple


@dataclass(frozen=True)
class ToyBenchmark:
    """Fixed batch: one sample per synthetic sequence, each with four random
    reference frames and one random target frame."""

    seeds: tuple = (0, 1, 2, 3)
    num_refs: int = 4
    selection_seed: int = 2024
    synth: SynthConfig = field(default_factory=SynthConfig)

    def build(self) -> list:
        rng = np.random.default_rng(self.selection_seed)
        samples = []
        for seed in self.seeds:
            cfg = SynthConfig(**{**self.synth.__dict__, "seed": seed})
            seq = synth_sequence(cfg)
            picks = rng.choice(seq.num_frames, self.num_refs + 1, replace=False)
            refs, target = sorted(int(p) for p in picks[:-1]), int(picks[-1])
            samples.append(Sample(
                target, seq.frames[target], seq.gt_keypoints[target], tuple(refs),
                tuple(downsample_features(seq.frames[r]) for r in refs),
                tuple(seq.gt_keypoints[r] for r in refs)))
        return samples


@dataclass(frozen=True)
class ToyObjective:
    samples: tuple
    w_bg: float = DEFAULT_W_BG
    padding: PaddingMode = PaddingMode.ZEROS
    contrastive: ContrastiveConfig = ContrastiveConfig()
    contrastive_weight: float = 1.0

    def loss_and_grad(self, log_params):
        """Composite loss and its gradient w.r.t. ``log(kp_variance, beta, sigma)``."""
        log_params = np.asarray(log_params, dtype=np.float64)
        kv, beta, sigma = np.exp(log_params)
        g_kv = g_beta = g_sigma = 0.0
        mse_total = 0.0
        nb = len(self.samples)
        caches, pooled = [], []
        for s in self.samples:
            _, h, w = s.ref_features[0].shape
            grid = identity_flow(h, w)
            per_ref = []
            for feat, kp in zip(s.ref_features, s.ref_kps):
                disp, ddisp = blend_displacement(grid, kp, s.target_kp, kv, self.w_bg, True)
                flow = grid + disp
                div = divergence(disp)
                mask = np.exp(-beta * np.abs(div))
                warped = warp_and_mask(feat, flow, mask, self.padding)
                per_ref.append((feat, flow, ddisp, div, mask, warped))
            lam = temporal_weights(s.ref_indices, s.target_index, sigma)
            deformed = [r[5] for r in per_ref]
            fused = aggregate(deformed, lam).features
            recon = upsample_generator(fused)
            err = recon - s.target_frame
            mse_total += float(np.mean(err ** 2))
            caches.append((per_ref, lam, deformed, err))
            pooled.append([pool_feature(d) for d in deformed])

        con, g_pooled = multi_ref_contrastive_with_grad(np.array(pooled), self.contrastive)
        loss = mse_total / nb + self.contrastive_weight * con

        for b, (s, (per_ref, lam, deformed, err)) in enumerate(zip(self.samples, caches)):
            g_recon = 2.0 * err / (err.size * nb)
            g_fused = upsample_generator_backward(g_recon)
            g_deformed, g_lam = aggregate_backward(deformed, lam, g_fused)
            g_sigma += float(np.sum(g_lam * temporal_weights_dsigma(s.ref_indices, s.target_index, sigma)))
            for r, (feat, flow, ddisp, div, mask, warped) in enumerate(per_ref):
                g_def = g_deformed[r] + self.contrastive_weight * pool_feature_backward(
                    feat.shape, g_pooled[b, r])
                _, g_flow, g_mask = warp_and_mask_backward(feat, flow, mask, g_def, self.padding)
                g_beta += float(np.sum(g_mask * -np.abs(div) * mask))
                g_div = g_mask * (-beta * np.sign(div) * mask)
                g_disp = g_flow + divergence_adjoint(g_div)
                g_kv += float(np.sum(g_disp * ddisp))
        grad = np.array([g_kv * kv, g_beta * beta, g_sigma * sigma])
        return loss, grad

    def loss(self, log_params) -> float:
        return self.loss_and_grad(log_params)[0]


def default_log_params(sigma: float = 4.0) -> np.ndarray:
    return np.log([DEFAULT_KP_VARIANCE, DEFAULT_BETA, sigma])


@dataclass
class TrainResult:
    losses: list
    log_params: np.ndarray

    @property
    def params(self) -> dict:
        kv, beta, sigma = np.exp(self.log_params)
        return {"kp_variance": float(kv), "beta": float(beta), "sigma": float(sigma)}


def train_toy(objective: ToyObjective, steps: int = 50, lr: float = 1e-2,
              init=None, optimizer: str = "adam", betas=(0.9, 0.999), eps: float = 1e-8,
              weight_decay: float = 0.0) -> TrainResult:
    """Gradient descent on the log-parameters; returns the loss before each step
    and after the last one.

    ``optimizer`` is ``"adam"`` (AdamW-style update, decoupled weight decay)
    or ``"sgd"``.
    """
    if steps < 1:
        raise InvalidInputError(f"steps must be >= 1, got {steps}")
    if optimizer not in ("adam", "sgd"):
        raise InvalidInputError(f"unknown optimizer {optimizer!r}")
    theta = np.array(default_log_params() if init is None else init, dtype=np.float64)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    losses = []
    for step in range(steps + 1):
        loss, grad = objective.loss_and_grad(theta)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise DivergenceError(step)
        losses.append(loss)
        if step == steps:
            break
        if optimizer == "sgd":
            theta = theta - lr * grad
            continue
        m = betas[0] * m + (1 - betas[0]) * grad
        v = betas[1] * v + (1 - betas[1]) * grad ** 2
        m_hat = m / (1 - betas[0] ** (step + 1))
        v_hat = v / (1 - betas[1] ** (step + 1))
        theta = theta - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * theta)
    return TrainResult(losses, theta)
