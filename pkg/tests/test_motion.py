import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrdac.errors import DimensionError, InvalidInputError
from mrdac.motion import (DenseMotion, Keypoint, KeypointSet, SimilarityTransform,
                          blend_displacement, divergence, divergence_adjoint,
                          keypoints_from_motion, occlusion_from_flow, sparse_to_dense)
from mrdac.pipeline import downsample_features
from mrdac.synth import SynthConfig, synth_sequence
from mrdac.tensor import grid_sample, identity_flow


def kps(positions, jacobians=None, frame=0):
    return KeypointSet(frame, np.array(positions, dtype=float),
                       None if jacobians is None else np.array(jacobians, dtype=float))


def test_keypoint_clamps_and_rejects_singular_jacobian():
    kp = Keypoint((1.7, -3.0))
    assert tuple(kp.position) == (1.0, -1.0)
    with pytest.raises(InvalidInputError):
        Keypoint((0, 0), np.zeros((2, 2)))


def test_identical_keypoints_give_identity_flow():
    a = kps([[0.1, -0.2], [0.5, 0.4], [-0.6, 0.3]])
    motion = sparse_to_dense(a, a, 9, 7)
    assert np.array_equal(motion.flow, identity_flow(9, 7))
    assert np.array_equal(motion.occlusion, np.ones((9, 7)))


def test_single_translated_keypoint_large_variance_is_uniform_shift():
    ref, tgt = kps([[0.2, 0.0]]), kps([[0.0, 0.0]])
    motion = sparse_to_dense(ref, tgt, 8, 8, kp_variance=1e6, beta=0.0, w_bg=0.0)
    shift = motion.flow - identity_flow(8, 8)
    assert np.max(np.abs(shift - np.array([0.2, 0.0]))) <= 1e-6


def test_two_opposite_keypoints_match_locally():
    ref = kps([[-0.5 + 0.1, 0.0], [0.5 - 0.1, 0.0]])
    tgt = kps([[-0.5, 0.0], [0.5, 0.0]])
    disp = blend_displacement(tgt.positions, ref, tgt, kp_variance=0.005, w_bg=0.01)
    assert np.allclose(disp[0], [0.1, 0.0], atol=1e-3)
    assert np.allclose(disp[1], [-0.1, 0.0], atol=1e-3)


def test_keypoint_count_mismatch_and_singular_target():
    with pytest.raises(DimensionError):
        sparse_to_dense(kps([[0, 0]]), kps([[0, 0], [1, 1]]), 4, 4)
    singular = KeypointSet.__new__(KeypointSet)
    object.__setattr__(singular, "frame_index", 0)
    object.__setattr__(singular, "positions", np.zeros((1, 2)))
    object.__setattr__(singular, "jacobians", np.zeros((1, 2, 2)))
    with pytest.raises(InvalidInputError):
        sparse_to_dense(kps([[0, 0]]), singular, 4, 4)


def test_occlusion_examples():
    grid = identity_flow(6, 6)
    assert np.array_equal(occlusion_from_flow(grid, 5.0), np.ones((6, 6)))
    assert np.allclose(occlusion_from_flow(grid + [0.3, -0.1], 5.0), 1.0, atol=1e-12)
    expansion = grid * 1.1          # displacement 0.1 * z, divergence 0.2
    assert np.allclose(occlusion_from_flow(expansion, 5.0), math.exp(-1.0), atol=1e-12)
    assert np.array_equal(occlusion_from_flow(expansion, 0.0), np.ones((6, 6)))
    with pytest.raises(InvalidInputError):
        occlusion_from_flow(grid, -1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0, 20))
def test_occlusion_in_unit_interval(seed, beta):
    flow = np.random.default_rng(seed).uniform(-2, 2, (5, 6, 2))
    mask = occlusion_from_flow(flow, beta)
    assert np.all((mask >= 0) & (mask <= 1))


def test_divergence_adjoint_is_transpose():
    rng = np.random.default_rng(0)
    disp = rng.standard_normal((5, 7, 2))
    g = rng.standard_normal((5, 7))
    assert np.isclose(np.sum(divergence(disp) * g), np.sum(disp * divergence_adjoint(g)))


def test_divergence_matches_numpy_gradient():
    rng = np.random.default_rng(1)
    disp = rng.standard_normal((6, 5, 2))
    expect = np.gradient(disp[..., 0], 2 / 4, axis=1) + np.gradient(disp[..., 1], 2 / 5, axis=0)
    assert np.allclose(divergence(disp), expect)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_translation_equivariance_without_background(seed):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(-0.5, 0.5, (4, 2))
    tgt = rng.uniform(-0.5, 0.5, (4, 2))
    t = rng.uniform(-0.3, 0.3, 2)
    z = rng.uniform(-1, 1, (20, 2))
    flow = z + blend_displacement(z, kps(ref), kps(tgt), 0.05, 0.0)
    moved = (z + t) + blend_displacement(z + t, kps(ref + t), kps(tgt + t), 0.05, 0.0)
    assert np.max(np.abs(moved - (flow + t))) <= 1e-6


def test_variance_derivative_matches_difference():
    rng = np.random.default_rng(2)
    ref, tgt = kps(rng.uniform(-0.5, 0.5, (3, 2))), kps(rng.uniform(-0.5, 0.5, (3, 2)))
    z = rng.uniform(-1, 1, (10, 2))
    _, d = blend_displacement(z, ref, tgt, 0.03, 0.01, with_derivative=True)
    h = 1e-6
    fd = (blend_displacement(z, ref, tgt, 0.03 + h, 0.01) - blend_displacement(z, ref, tgt, 0.03 - h, 0.01)) / (2 * h)
    assert np.allclose(d, fd, rtol=1e-5, atol=1e-8)


def test_keypoints_from_motion_examples():
    ident = keypoints_from_motion(SimilarityTransform(), grid_k=2)
    assert sorted(map(tuple, ident.positions)) == sorted((x, y) for x in (-0.6, 0.6) for y in (-0.6, 0.6))
    moved = keypoints_from_motion(SimilarityTransform(translation=(0.1, 0.0)), grid_k=2)
    assert np.allclose(moved.positions, ident.positions + [0.1, 0.0])
    assert np.allclose(moved.jacobians, np.eye(2))
    rot = keypoints_from_motion(SimilarityTransform(rotation=math.pi / 2), grid_k=3)
    i = int(np.argmin(np.linalg.norm(ident_grid(3) - [0.6, 0.0], axis=1)))
    assert np.allclose(rot.positions[i], [0.0, 0.6], atol=1e-12)
    assert np.allclose(rot.jacobians[i], [[0, -1], [1, 0]], atol=1e-12)


def ident_grid(k):
    return keypoints_from_motion(SimilarityTransform(), grid_k=k).positions


def test_jacobian_flow_reproduces_similarity_motion():
    ref_t = SimilarityTransform(rotation=0.3, scale=1.05, translation=(0.05, -0.02))
    tgt_t = SimilarityTransform(rotation=-0.2, scale=0.95, translation=(-0.03, 0.04))
    ref, tgt = keypoints_from_motion(ref_t, 3), keypoints_from_motion(tgt_t, 3)
    motion = sparse_to_dense(ref, tgt, 16, 16, w_bg=0.0)
    grid = identity_flow(16, 16)
    expect = ref_t.apply(tgt_t.inverse_apply(grid))
    assert np.allclose(motion.flow, expect, atol=1e-12)


def test_dense_motion_validates_mask():
    with pytest.raises((DimensionError, InvalidInputError)):
        DenseMotion(identity_flow(3, 3), np.ones((3, 4)))
    with pytest.raises(InvalidInputError):
        DenseMotion(identity_flow(3, 3), np.full((3, 3), 1.5))


def test_warping_beats_identity_on_rotating_sequences():
    for seed in range(5):
        seq = synth_sequence(SynthConfig(seed=seed, num_frames=33))
        for r, t in [(0, 16), (16, 32), (8, 30)]:
            ref = downsample_features(seq.frames[r])
            tgt = downsample_features(seq.frames[t])
            motion = sparse_to_dense(seq.gt_keypoints[r], seq.gt_keypoints[t], 32, 32,
                                     kp_variance=0.05, beta=0.0)
            warped = grid_sample(ref, motion.flow)
            assert np.mean((warped - tgt) ** 2) < np.mean((ref - tgt) ** 2)
