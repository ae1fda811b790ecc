"""Seeded synthetic talking-head stand-ins: a value-noise texture moved by a
smooth, time-varying similarity transform, with exact ground-truth motion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .motion import SimilarityTransform, keypoints_from_motion
from .tensor import identity_flow

# Texture-space extent covered by the lattice; transformed frames stay well inside.
_TEXTURE_EXTENT = 3.0


@dataclass(frozen=True)
class SynthConfig:
    width: int = 64
    height: int = 64
    num_frames: int = 64
    fps: float = 25.0
    seed: int = 0
    max_rotation_deg: float = 30.0
    max_translation: float = 0.1
    max_scale_delta: float = 0.1
    octaves: int = 3
    # coarsest noise cell, normalized units (0.5 = 16 px on a 64 px frame)
    base_cell: float = 0.5
    waypoint_every: int = 16
    grid_k: int = 3
    with_jacobians: bool = True


@dataclass(frozen=True, eq=False)
class Sequence:
    frames: np.ndarray           # (T, H, W, 3) in [0, 1]
    fps: float
    gt_motion: tuple             # SimilarityTransform per frame
    gt_keypoints: tuple          # KeypointSet per frame

    def __post_init__(self):
        t = self.frames.shape[0]
        if not (len(self.gt_motion) == t == len(self.gt_keypoints)):
            raise InvalidInputError("frames, gt_motion and gt_keypoints lengths differ")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


class ValueNoise:
    """Sum of bilinearly blended lattice noises with smootherstep fades.

    Evaluated at arbitrary continuous points, so moved frames are exact
    renderings rather than resampled images.
    """

    def __init__(self, rng: np.random.Generator, octaves: int, base_cell: float):
        self.cells = [base_cell / 2 ** o for o in range(octaves)]
        self.amps = np.array([0.5 ** o for o in range(octaves)])
        self.amps = self.amps / self.amps.sum()
        self.lattices = [rng.random((int(2 * _TEXTURE_EXTENT / c) + 3,) * 2) for c in self.cells]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        out = np.zeros(points.shape[:-1])
        for cell, amp, lat in zip(self.cells, self.amps, self.lattices):
            g = (np.clip(points, -_TEXTURE_EXTENT, _TEXTURE_EXTENT) + _TEXTURE_EXTENT) / cell
            i = np.minimum(np.floor(g).astype(np.int64), lat.shape[0] - 2)
            f = _fade(g - i)
            ix, iy = i[..., 0], i[..., 1]
            fx, fy = f[..., 0], f[..., 1]
            top = lat[iy, ix] + fx * (lat[iy, ix + 1] - lat[iy, ix])
            bot = lat[iy + 1, ix] + fx * (lat[iy + 1, ix + 1] - lat[iy + 1, ix])
            out += amp * (top + fy * (bot - top))
        return out


class Texture:
    """Two-colour palette mixed by a noise field, plus weak per-channel detail."""

    def __init__(self, rng: np.random.Generator, octaves: int, base_cell: float):
        self.colors = rng.uniform(0.1, 0.9, size=(2, 3))
        self.mix = ValueNoise(rng, octaves, base_cell)
        self.detail = [ValueNoise(rng, octaves, base_cell) for _ in range(3)]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        n = self.mix(points)[..., None]
        rgb = self.colors[0] * (1 - n) + self.colors[1] * n
        detail = np.stack([d(points) for d in self.detail], axis=-1)
        return np.clip(rgb + 0.2 * (detail - 0.5), 0.0, 1.0)


def _ease(a, b, s):
    w = 0.5 - 0.5 * math.cos(math.pi * s)
    return a + (b - a) * w


def motion_trajectory(cfg: SynthConfig, rng: np.random.Generator) -> list:
    """Per-frame similarity transforms eased between seeded waypoints."""
    n_way = (cfg.num_frames - 1) // cfg.waypoint_every + 2
    rot = np.radians(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg, n_way))
    scale = 1.0 + rng.uniform(-cfg.max_scale_delta, cfg.max_scale_delta, n_way)
    trans = rng.uniform(-cfg.max_translation, cfg.max_translation, (n_way, 2))
    out = []
    for t in range(cfg.num_frames):
        k, rem = divmod(t, cfg.waypoint_every)
        s = rem / cfg.waypoint_every
        out.append(SimilarityTransform(
            rotation=float(_ease(rot[k], rot[k + 1], s)),
            scale=float(_ease(scale[k], scale[k + 1], s)),
            translation=(float(_ease(trans[k, 0], trans[k + 1, 0], s)),
                         float(_ease(trans[k, 1], trans[k + 1, 1], s))),
        ))
    return out


def render(texture, transform: SimilarityTransform, height: int, width: int) -> np.ndarray:
    """Frame showing the texture moved by ``transform``: pixel z shows texture(T^-1 z)."""
    grid = identity_flow(height, width)
    return texture(transform.inverse_apply(grid))


def synth_sequence(cfg: SynthConfig) -> Sequence:
    """Deterministic synthetic sequence for ``cfg`` (same config, same bits)."""
    if cfg.num_frames < 2:
        raise InvalidInputError(f"num_frames must be >= 2, got {cfg.num_frames}")
    rng = np.random.default_rng(cfg.seed)
    texture = Texture(rng, cfg.octaves, cfg.base_cell)
    motion = motion_trajectory(cfg, rng)
    frames = np.stack([render(texture, m, cfg.height, cfg.width) for m in motion])
    keypoints = tuple(keypoints_from_motion(m, cfg.grid_k, t, cfg.with_jacobians)
                      for t, m in enumerate(motion))
    return Sequence(frames, cfg.fps, tuple(motion), keypoints)
