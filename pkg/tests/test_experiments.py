import math
from dataclasses import replace

import numpy as np
import pytest

from mrdac.errors import DivergenceError, InvalidInputError
from mrdac.experiments import (ABLATION_COLUMNS, BENCHMARK_PARAMS, AblationResult, MacConfig,
                               ablate_strategies, mac_profile, match_quant_step, stream_bits)
from mrdac.gradsuite import small_toy_objective
from mrdac.scheduler import GopConfig, Strategy
from mrdac.synth import SynthConfig, synth_sequence
from mrdac.training import ToyBenchmark, ToyObjective, default_log_params, train_toy

STILL = SynthConfig(num_frames=24, max_rotation_deg=0.0, max_translation=0.0, max_scale_delta=0.0)


def test_mac_profile_is_affine_in_reference_count():
    totals = [mac_profile(MacConfig(), n)["total_macs"] for n in (1, 2, 3, 4)]
    steps = {b - a for a, b in zip(totals, totals[1:])}
    assert len(steps) == 1
    for cfg in (MacConfig(width=128, height=96), MacConfig(num_keypoints=16, channels=8)):
        t = [mac_profile(cfg, n)["total_macs"] for n in (1, 2, 3, 4)]
        assert t[1] - t[0] == t[2] - t[1] == t[3] - t[2]


def test_mac_profile_single_reference_hand_count():
    # 64x64 frame, stride 2 -> 32x32 grid (1024 positions), C=3, K=9
    positions, channels, k = 32 * 32, 3, 9
    features = positions * channels                    # 3072
    extract = 4 * features                             # 2x2 box mean
    affine = 8 * k                                     # two 2x2 products per keypoint
    blend = positions * (k * (2 + 4 + 2) + 2)          # distance, candidate, accumulate; background
    div = 2 * positions
    sample = 4 * features
    mask_and_weight = 2 * features
    generator = 4 * 64 * 64 * channels
    hand = extract + affine + blend + div + sample + mask_and_weight + generator
    assert hand == 157768
    prof = mac_profile(MacConfig(), 1)
    assert prof["total_macs"] == hand
    assert prof["macs_per_pixel"] == hand / 4096
    assert prof["breakdown"]["max_pool"] == 0
    with pytest.raises(InvalidInputError):
        mac_profile(MacConfig(), 0)


def test_zero_motion_ablation_ties():
    result = ablate_strategies(range(5), synth=STILL, with_ms_ssim=False)
    psnrs = [v["psnr_db"] for v in result.summary.values()]
    assert max(psnrs) - min(psnrs) <= 0.01
    assert result.ordering_ok


def test_ablation_needs_five_seeds():
    with pytest.raises(InvalidInputError):
        ablate_strategies(range(4))


def test_ablation_csv_and_ordering_rule():
    rows = [{"strategy": s, "seed": 0, "quant_log2": 6, "total_bits": 1, "kbps": 1.0,
             "mean_psnr_db": 30.0, "mean_ms_ssim": 0.9} for s in ("RRB", "RP", "RP_RRB")]
    summary = {"RRB": {"psnr_db": 30.0}, "RP": {"psnr_db": 30.05}, "RP_RRB": {"psnr_db": 29.96}}
    result = AblationResult(rows, summary)
    assert result.ordering_ok
    lines = result.to_csv().splitlines()
    assert lines[0] == ",".join(ABLATION_COLUMNS)
    assert len(lines) == 4
    summary["RP_RRB"]["psnr_db"] = 29.9
    assert not result.ordering_ok


def test_matched_step_is_finest_within_budget():
    seq = synth_sequence(SynthConfig(seed=0, num_frames=24))
    gop = GopConfig(strategy=Strategy.RP, max_refs=2)
    budget = stream_bits(seq, GopConfig(max_refs=2), BENCHMARK_PARAMS)
    q = match_quant_step(seq, gop, BENCHMARK_PARAMS, budget)
    assert stream_bits(seq, gop, replace(BENCHMARK_PARAMS, quant_log2=q)) <= budget
    if q < 10:
        assert stream_bits(seq, gop, replace(BENCHMARK_PARAMS, quant_log2=q + 1)) > budget


def test_toy_batch_shape():
    samples = ToyBenchmark().build()
    assert len(samples) == 4
    for s in samples:
        assert len(s.ref_indices) == 4 and s.target_index not in s.ref_indices


def test_zero_learning_rate_keeps_loss_constant():
    objective = small_toy_objective()
    result = train_toy(objective, steps=5, lr=0.0)
    assert len(result.losses) == 6
    assert len(set(result.losses)) == 1
    assert np.array_equal(result.log_params, default_log_params())


def test_training_gradient_matches_difference():
    objective = small_toy_objective()
    theta = default_log_params()
    _, grad = objective.loss_and_grad(theta)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (objective.loss(theta + e) - objective.loss(theta - e)) / (2 * h)
        assert abs(grad[i] - fd) <= 1e-4 * max(abs(fd), 1e-8)


def test_training_lowers_loss():
    objective = small_toy_objective()
    for optimizer, lr in (("adam", 1e-2), ("sgd", 1e-2)):
        result = train_toy(objective, steps=10, lr=lr, optimizer=optimizer)
        assert result.losses[-1] < result.losses[0]
        assert set(result.params) == {"kp_variance", "beta", "sigma"}


class _BlowsUp:
    def __init__(self, at):
        self.at, self.calls = at, 0

    def loss_and_grad(self, theta):
        self.calls += 1
        loss = math.nan if self.calls > self.at else 1.0
        return loss, np.ones(3)


def test_divergence_names_the_step():
    with pytest.raises(DivergenceError) as info:
        train_toy(_BlowsUp(3), steps=10, lr=0.1)
    assert info.value.step == 3
    assert "step 3" in str(info.value)


def test_train_argument_errors():
    objective = _BlowsUp(100)
    with pytest.raises(InvalidInputError):
        train_toy(objective, steps=0)
    with pytest.raises(InvalidInputError):
        train_toy(objective, optimizer="lbfgs")


def test_objective_contrastive_weight_zero_is_pure_mse():
    samples = tuple(ToyBenchmark(seeds=(0, 1), num_refs=2,
                                 synth=SynthConfig(width=32, height=32, num_frames=16)).build())
    theta = default_log_params()
    full = ToyObjective(samples, w_bg=0.01).loss(theta)
    mse_only = ToyObjective(samples, w_bg=0.01, contrastive_weight=0.0).loss(theta)
    assert 0.0 < mse_only < full
