"""Finite-difference verification of every analytic gradient in the package.

Each registered check draws random, well-conditioned trial points: sample
positions stay clear of the bilinear kinks at integer pixel coordinates,
max-pool inputs keep a margin between the winner and the runner-up, and a
trial is redrawn when a non-zero analytic coordinate is so small that
float64 round-off in the central difference would dominate it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .aggregation import aggregate, aggregate_backward, apply_motion, warp_and_mask_backward
from .contrastive import (ContrastiveBatch, ContrastiveConfig, info_nce_with_grad,
                          multi_ref_contrastive_with_grad)
from .motion import DenseMotion
from .synth import SynthConfig
from .tensor import DifferentiableOp, PaddingMode, gradient_check, grid_sample, \
    grid_sample_backward
from .training import ToyBenchmark, ToyObjective

KINK_MARGIN = 0.1      # fractional pixel position kept in [0.1, 0.9]
TIE_MARGIN = 1e-3      # gap between the best and second-best weighted feature
MAX_REDRAWS = 50


@dataclass(frozen=True)
class GradCheck:
    name: str
    op: DifferentiableOp
    which_input: int
    sample: Callable          # rng -> list of inputs
    tolerance: float = 1e-4
    min_grad: float = 1e-5    # smallest non-zero analytic coordinate accepted


# ---------------------------------------------------------------------------
# trial generators


def _flow_clear_of_kinks(rng, h, w, spread=1.2):
    """Random flow whose pixel coordinates sit at least KINK_MARGIN from integers."""
    flow = np.empty((h, w, 2))
    for axis, n in ((0, w), (1, h)):
        reach = spread * (n - 1) / 2.0
        cell = rng.integers(int(np.floor(-reach + (n - 1) / 2.0)),
                            int(np.ceil(reach + (n - 1) / 2.0)), (h, w))
        frac = rng.uniform(KINK_MARGIN, 1.0 - KINK_MARGIN, (h, w))
        flow[..., axis] = (cell + frac) * 2.0 / (n - 1) - 1.0
    return flow


def _feature_shape(rng):
    return int(rng.integers(1, 4)), int(rng.integers(3, 7)), int(rng.integers(3, 7))


def _grid_sample_inputs(rng):
    c, h, w = _feature_shape(rng)
    return [rng.standard_normal((c, h, w)), _flow_clear_of_kinks(rng, h, w)]


def _motion_inputs(rng):
    c, h, w = _feature_shape(rng)
    return [rng.standard_normal((c, h, w)), _flow_clear_of_kinks(rng, h, w),
            rng.uniform(0.05, 0.95, (h, w))]


def _aggregate_inputs(rng):
    n = int(rng.integers(1, 5))
    c, h, w = _feature_shape(rng)
    weights = rng.uniform(0.2, 1.0, n)
    for _ in range(MAX_REDRAWS):
        stack = rng.standard_normal((n, c, h, w))
        scaled = np.sort(weights[:, None, None, None] * stack, axis=0)
        if n == 1 or np.min(scaled[-1] - scaled[-2]) >= TIE_MARGIN:
            return [stack, weights]
    raise RuntimeError("could not draw a tie-free aggregate input")


def _contrastive_pair(rng):
    b = int(rng.choice([2, 4, 8]))
    d = int(rng.choice([4, 16]))
    return [rng.standard_normal((b, d)), rng.standard_normal((b, d))]


def _multi_ref_inputs(rng):
    b = int(rng.choice([2, 4, 8]))
    n = int(rng.integers(2, 5))
    d = int(rng.choice([4, 16]))
    return [rng.standard_normal((b, n, d))]


# ---------------------------------------------------------------------------
# ops


def _grid_sample_op(padding):
    return DifferentiableOp(
        f"grid_sample[{padding.value}]",
        lambda f, fl: grid_sample(f, fl, padding),
        lambda f, fl, g: grid_sample_backward(f, fl, g, padding))


def _apply_motion_op(padding):
    return DifferentiableOp(
        f"apply_motion[{padding.value}]",
        lambda f, fl, m: apply_motion(f, DenseMotion(fl, m), padding),
        lambda f, fl, m, g: warp_and_mask_backward(f, fl, m, g, padding))


def _aggregate_backward(stack, weights, grad):
    grads, gw = aggregate_backward(list(stack), weights, grad)
    return np.stack(grads), gw


AGGREGATE_OP = DifferentiableOp(
    "aggregate",
    lambda stack, w: aggregate(list(stack), w).features,
    _aggregate_backward)


def _info_nce_op(cfg):
    def forward(s1, s2):
        return info_nce_with_grad(ContrastiveBatch(s1, s2), cfg)[0]

    def backward(s1, s2, g):
        _, g1, g2 = info_nce_with_grad(ContrastiveBatch(s1, s2), cfg)
        return g * g1, g * g2

    return DifferentiableOp(f"info_nce[tau={cfg.tau},sym={cfg.symmetric}]", forward, backward)


def _multi_ref_op(cfg):
    return DifferentiableOp(
        f"multi_ref_contrastive[tau={cfg.tau}]",
        lambda p: multi_ref_contrastive_with_grad(p, cfg)[0],
        lambda p, g: (g * multi_ref_contrastive_with_grad(p, cfg)[1],))


def toy_objective_op(objective: ToyObjective) -> DifferentiableOp:
    return DifferentiableOp(
        "train_toy_composite",
        objective.loss,
        lambda theta, g: (g * objective.loss_and_grad(theta)[1],))


def small_toy_objective() -> ToyObjective:
    """A reduced toy batch (32x32 frames, three sequences, three references)
    so that a hundred composite checks fit in the time budget."""
    bench = ToyBenchmark(seeds=(0, 1, 2), num_refs=3,
                         synth=SynthConfig(width=32, height=32, num_frames=16))
    return ToyObjective(tuple(bench.build()))


def _toy_params(rng):
    kv = np.exp(rng.uniform(np.log(0.005), np.log(0.1)))
    beta = np.exp(rng.uniform(np.log(0.2), np.log(8.0)))
    sigma = np.exp(rng.uniform(np.log(1.0), np.log(16.0)))
    return [np.log([kv, beta, sigma])]


def default_checks(include_composite: bool = True) -> list:
    checks = []
    for padding in PaddingMode:
        op = _grid_sample_op(padding)
        checks.append(GradCheck(f"{op.name}/feature", op, 0, _grid_sample_inputs))
        checks.append(GradCheck(f"{op.name}/flow", op, 1, _grid_sample_inputs))
    for padding in PaddingMode:
        op = _apply_motion_op(padding)
        for i, part in enumerate(("feature", "flow", "mask")):
            checks.append(GradCheck(f"{op.name}/{part}", op, i, _motion_inputs))
    checks.append(GradCheck("aggregate/features", AGGREGATE_OP, 0, _aggregate_inputs))
    checks.append(GradCheck("aggregate/weights", AGGREGATE_OP, 1, _aggregate_inputs))
    for cfg in (ContrastiveConfig(tau=0.1), ContrastiveConfig(tau=1.0),
                ContrastiveConfig(tau=0.1, symmetric=True)):
        op = _info_nce_op(cfg)
        for i in (0, 1):
            checks.append(GradCheck(f"{op.name}/side_{i + 1}", op, i, _contrastive_pair,
                                    tolerance=1e-5, min_grad=1e-4))
    op = _multi_ref_op(ContrastiveConfig())
    checks.append(GradCheck(op.name, op, 0, _multi_ref_inputs, min_grad=1e-4))
    if include_composite:
        op = toy_objective_op(small_toy_objective())
        checks.append(GradCheck(op.name, op, 0, _toy_params))
    return checks


# ---------------------------------------------------------------------------
# runner


def _conditioned(check: GradCheck, rng):
    """Draw inputs until every non-zero analytic coordinate clears ``min_grad``."""
    for _ in range(MAX_REDRAWS):
        inputs = check.sample(rng)
        base = np.asarray(check.op.forward(*inputs))
        proj = np.random.default_rng(0).standard_normal(base.shape)
        grad = np.abs(np.asarray(check.op.backward(*inputs, proj)[check.which_input]))
        nonzero = grad[grad > 0]
        if nonzero.size == 0 or nonzero.min() >= check.min_grad:
            return inputs
    raise RuntimeError(f"{check.name}: no well-conditioned trial in {MAX_REDRAWS} draws")


@dataclass(frozen=True)
class CheckResult:
    name: str
    trials: int
    max_rel_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def run_suite(trials: int = 100, seed: int = 0, epsilon: float = 1e-6,
              checks=None) -> list:
    """Run every check for ``trials`` random points; one result per check."""
    results = []
    for k, check in enumerate(checks if checks is not None else default_checks()):
        rng = np.random.default_rng([seed, k])
        start = time.perf_counter()
        worst = 0.0
        for _ in range(trials):
            inputs = _conditioned(check, rng)
            # same projection seed as the conditioning pass
            err = gradient_check(check.op, inputs, epsilon, check.which_input, seed=0)
            worst = max(worst, err)
        results.append(CheckResult(check.name, trials, worst, check.tolerance,
                                   time.perf_counter() - start))
    return results
