import math
import warnings

import numpy as np
import pytest

from mrdac.errors import DimensionError, InvalidInputError, NoOverlapError
from mrdac.metrics import (PSNR_CAP_DB, RDCurve, RDPoint, bd_rate, ms_ssim,
                           ms_ssim_scales, psnr)
from mrdac.synth import SynthConfig, synth_sequence
from support import oracle_ms_ssim, random_image_pair


def test_ms_ssim_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        a, b = random_image_pair(rng)
        worst = max(worst, abs(ms_ssim(a, b) - oracle_ms_ssim(a, b)))
    assert worst <= 1e-6


def test_ms_ssim_full_five_scales_matches_oracle():
    rng = np.random.default_rng(1)
    a = np.clip(rng.uniform(0, 1, (176, 180, 1)), 0, 1)
    b = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)
    assert ms_ssim_scales(176, 180) == 5
    assert abs(ms_ssim(a, b) - oracle_ms_ssim(a, b)) <= 1e-6


def _frame():
    return synth_sequence(SynthConfig(seed=5, num_frames=2)).frames[0]


def test_ms_ssim_examples():
    x = _frame()
    assert ms_ssim(x, x) == 1.0
    assert ms_ssim(x, 1.0 - x) < 0.5
    noisy = x + 0.01 * np.random.default_rng(2).standard_normal(x.shape)
    value = ms_ssim(x, noisy)
    assert 0.95 < value < 1.0
    assert abs(value - oracle_ms_ssim(x, noisy)) <= 1e-3


def test_ms_ssim_range_and_errors():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a, b = rng.uniform(0, 1, (2, 32, 32, 3))
        assert 0.0 <= ms_ssim(a, b) <= 1.0
    with pytest.raises(DimensionError):
        ms_ssim(np.zeros((32, 32)), np.zeros((32, 31)))
    with pytest.raises(DimensionError):
        ms_ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_psnr_examples():
    x = np.full((4, 4, 3), 0.5)
    assert psnr(x, x) == PSNR_CAP_DB == 99.0
    assert math.isclose(psnr(x, x + 0.1), 20.0, rel_tol=1e-12)
    assert math.isclose(psnr(np.zeros((2, 2)), np.ones((2, 2))), 0.0, abs_tol=1e-15)
    rng = np.random.default_rng(4)
    a, b = rng.uniform(0, 1, (2, 8, 8))
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(DimensionError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


RATES = [100.0, 200.0, 400.0, 800.0]
QUALITY = [30.0, 33.5, 36.0, 38.0]


def test_bd_rate_examples():
    anchor = RDCurve.from_arrays(RATES, QUALITY)
    halved = RDCurve.from_arrays([r / 2 for r in RATES], QUALITY)
    doubled = RDCurve.from_arrays([r * 2 for r in RATES], QUALITY)
    assert abs(bd_rate(anchor, halved) + 50.0) <= 0.5
    assert abs(bd_rate(anchor, doubled) - 100.0) <= 1.0
    assert abs(bd_rate(anchor, anchor)) <= 1e-9


def test_bd_rate_antisymmetric_sign():
    a = RDCurve.from_arrays(RATES, QUALITY)
    b = RDCurve.from_arrays([90.0, 170.0, 380.0, 700.0], [30.5, 33.0, 36.5, 38.5])
    assert bd_rate(a, b) * bd_rate(b, a) < 0


def test_bd_rate_without_overlap():
    a = RDCurve.from_arrays(RATES, QUALITY)
    b = RDCurve.from_arrays(RATES, [q + 20 for q in QUALITY])
    with pytest.raises(NoOverlapError):
        bd_rate(a, b)


def test_rd_curve_validation():
    with pytest.raises(InvalidInputError):
        RDCurve.from_arrays(RATES[:3], QUALITY[:3])
    with pytest.raises(InvalidInputError):
        RDCurve.from_arrays([100.0, 100.0, 200.0, 300.0], QUALITY)
    with pytest.raises(InvalidInputError):
        RDPoint(0.0, 30.0)
    with pytest.raises(InvalidInputError):
        RDPoint(10.0, float("nan"))
    with pytest.warns(UserWarning):
        RDCurve.from_arrays(RATES, [30.0, 29.0, 31.0, 32.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        curve = RDCurve.from_arrays(list(reversed(RATES)), list(reversed(QUALITY)))
    assert list(curve.rates) == RATES
