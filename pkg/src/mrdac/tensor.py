"""Dense tensor substrate: bilinear grid sampling and finite-difference checks.

Tensors are plain ``numpy`` arrays. Feature maps are ``(C, H, W)`` and flow
fields are ``(H, W, 2)`` arrays of normalized sampling coordinates, with
``flow[..., 0]`` the x (column) coordinate and ``flow[..., 1]`` the y (row)
coordinate. ``(-1, -1)`` is the centre of the top-left pixel and ``(1, 1)``
the centre of the bottom-right pixel.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, InvalidInputError

# Pixel coordinates this close to an integer are snapped onto it, so that the
# identity flow reproduces its input bit for bit.
_SNAP = 1e-9


class PaddingMode(enum.Enum):
    BORDER = "border"
    ZEROS = "zeros"


def identity_flow(height: int, width: int, dtype=np.float64) -> np.ndarray:
    """Flow that maps every pixel onto its own centre."""
    ys = np.linspace(-1.0, 1.0, height, dtype=dtype) if height > 1 else np.zeros(1, dtype)
    xs = np.linspace(-1.0, 1.0, width, dtype=dtype) if width > 1 else np.zeros(1, dtype)
    flow = np.empty((height, width, 2), dtype=dtype)
    flow[..., 0] = xs[None, :]
    flow[..., 1] = ys[:, None]
    return flow


def pixel_spacing(size: int) -> float:
    """Distance between neighbouring pixel centres in normalized units."""
    return 2.0 / (size - 1) if size > 1 else 2.0


def check_feature_flow(feature: np.ndarray, flow: np.ndarray) -> None:
    if feature.ndim != 3:
        raise DimensionError(f"feature must be (C, H, W), got shape {feature.shape}")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise DimensionError(f"flow must be (H, W, 2), got shape {flow.shape}")
    if flow.shape[:2] != feature.shape[1:]:
        raise DimensionError(
            f"flow spatial dims {flow.shape[:2]} differ from feature dims {feature.shape[1:]}"
        )
    if not np.all(np.isfinite(flow)):
        raise InvalidInputError("flow contains non-finite values")


def _to_pixel(coord: np.ndarray, size: int) -> np.ndarray:
    pix = (coord + 1.0) * (0.5 * (size - 1))
    near = np.rint(pix)
    return np.where(np.abs(pix - near) < _SNAP, near, pix)


def _axis_taps(coord, size, padding):
    """Lower/upper tap indices, validity masks, fractional weight and d(pixel)/d(coord)."""
    pix = _to_pixel(coord, size)
    scale = 0.5 * (size - 1)
    if padding is PaddingMode.BORDER:
        inside = (pix > 0) & (pix < size - 1)
        pix = np.clip(pix, 0.0, size - 1)
        lo = np.minimum(np.floor(pix), max(size - 2, 0)).astype(np.int64)
        hi = np.minimum(lo + 1, size - 1)
        frac = pix - lo
        valid_lo = np.ones(pix.shape, dtype=bool)
        valid_hi = valid_lo
        dpix = np.where(inside, scale, 0.0)
    else:
        lo = np.floor(pix).astype(np.int64)
        hi = lo + 1
        frac = pix - lo
        valid_lo = (lo >= 0) & (lo <= size - 1)
        valid_hi = (hi >= 0) & (hi <= size - 1)
        lo = np.clip(lo, 0, size - 1)
        hi = np.clip(hi, 0, size - 1)
        dpix = np.full(pix.shape, scale)
    return lo, hi, valid_lo, valid_hi, frac, dpix


def _corners(feature, flow, padding):
    _, h, w = feature.shape
    x0, x1, vx0, vx1, wx, dxs = _axis_taps(flow[..., 0], w, padding)
    y0, y1, vy0, vy1, wy, dys = _axis_taps(flow[..., 1], h, padding)
    v00 = feature[:, y0, x0] * (vy0 & vx0)
    v01 = feature[:, y0, x1] * (vy0 & vx1)
    v10 = feature[:, y1, x0] * (vy1 & vx0)
    v11 = feature[:, y1, x1] * (vy1 & vx1)
    taps = (x0, x1, vx0, vx1, wx, dxs, y0, y1, vy0, vy1, wy, dys)
    return (v00, v01, v10, v11), taps


def grid_sample(feature: np.ndarray, flow: np.ndarray,
                padding: PaddingMode = PaddingMode.BORDER) -> np.ndarray:
    """Bilinearly sample ``feature`` at the normalized coordinates in ``flow``.

    Args:
        feature: ``(C, H, W)`` array.
        flow: ``(H, W, 2)`` array of ``(x, y)`` sampling positions.
        padding: ``BORDER`` clamps out-of-range coordinates to the edge,
            ``ZEROS`` reads neighbours outside the image as zero.

    Returns:
        ``(C, H, W)`` array of sampled values.
    """
    feature = np.asarray(feature)
    flow = np.asarray(flow)
    check_feature_flow(feature, flow)
    (v00, v01, v10, v11), taps = _corners(feature, flow, padding)
    wx, wy = taps[4], taps[10]
    # weighted-sum form: a tap whose weight is exactly 0 leaves no round-off
    top = (1.0 - wx) * v00 + wx * v01
    bottom = (1.0 - wx) * v10 + wx * v11
    return (1.0 - wy) * top + wy * bottom


def grid_sample_backward(feature: np.ndarray, flow: np.ndarray, grad_out: np.ndarray,
                         padding: PaddingMode = PaddingMode.BORDER):
    """Vector-Jacobian product of :func:`grid_sample`.

    Returns ``(grad_feature, grad_flow)`` for an upstream gradient
    ``grad_out`` of shape ``(C, H, W)``.
    """
    feature = np.asarray(feature)
    flow = np.asarray(flow)
    check_feature_flow(feature, flow)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != feature.shape:
        raise DimensionError(f"grad_out shape {grad_out.shape} != {feature.shape}")
    c, h, w = feature.shape
    (v00, v01, v10, v11), taps = _corners(feature, flow, padding)
    x0, x1, vx0, vx1, wx, dxs, y0, y1, vy0, vy1, wy, dys = taps

    dout_dx = ((1 - wy) * (v01 - v00) + wy * (v11 - v10)) * dxs
    dout_dy = ((1 - wx) * (v10 - v00) + wx * (v11 - v01)) * dys
    grad_flow = np.stack([(grad_out * dout_dx).sum(axis=0),
                          (grad_out * dout_dy).sum(axis=0)], axis=-1)

    grad_feature = np.zeros(c * h * w, dtype=np.result_type(feature, grad_out))
    offsets = (np.arange(c) * (h * w))[:, None]
    corners = (
        (y0, x0, (1 - wy) * (1 - wx) * (vy0 & vx0)),
        (y0, x1, (1 - wy) * wx * (vy0 & vx1)),
        (y1, x0, wy * (1 - wx) * (vy1 & vx0)),
        (y1, x1, wy * wx * (vy1 & vx1)),
    )
    flat_grad = grad_out.reshape(c, -1)
    for yi, xi, weight in corners:
        idx = offsets + (yi * w + xi).reshape(1, -1)
        grad_feature += np.bincount(idx.ravel(), weights=(flat_grad * weight.reshape(1, -1)).ravel(),
                                    minlength=c * h * w)
    return grad_feature.reshape(c, h, w), grad_flow


@dataclass(frozen=True)
class DifferentiableOp:
    """A forward function paired with its vector-Jacobian product.

    ``backward(*inputs, grad_out)`` must return one gradient per input, each
    shaped like that input.
    """

    name: str
    forward: Callable
    backward: Callable


def gradient_check(op: DifferentiableOp, inputs: Sequence, epsilon: float = 1e-6,
                   which_input: int = 0, seed: int = 0) -> float:
    """Compare the analytic gradient of ``op`` against central differences.

    Vector-valued outputs are reduced to a scalar through a fixed random
    projection drawn from ``seed``. The error of one coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``; the maximum
    over all coordinates of ``inputs[which_input]`` is returned.
    """
    if not 0 < epsilon <= 1e-2:
        raise InvalidInputError(f"epsilon must be in (0, 1e-2], got {epsilon}")
    inputs = [np.array(x, dtype=np.float64) if isinstance(x, (np.ndarray, list, float))
              else x for x in inputs]
    base = np.asarray(op.forward(*inputs), dtype=np.float64)
    if not np.all(np.isfinite(base)):
        raise InvalidInputError(f"{op.name}: forward value is non-finite")
    proj = np.random.default_rng(seed).standard_normal(base.shape)

    def objective(args):
        value = np.asarray(op.forward(*args), dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise InvalidInputError(f"{op.name}: forward value is non-finite")
        return float(np.sum(value * proj))

    analytic = np.asarray(op.backward(*inputs, proj)[which_input], dtype=np.float64)
    target = np.asarray(inputs[which_input], dtype=np.float64)
    numeric = np.zeros(target.shape)
    for i in range(target.size):
        args = list(inputs)
        plus = target.copy()
        plus.flat[i] += epsilon
        args[which_input] = plus
        f_plus = objective(args)
        minus = target.copy()
        minus.flat[i] -= epsilon
        args[which_input] = minus
        f_minus = objective(args)
        numeric.flat[i] = (f_plus - f_minus) / (2 * epsilon)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))
