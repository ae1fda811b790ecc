"""Oracles and input generators shared by the test modules."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mrdac import bitstream as bs
from mrdac.metrics import MS_SSIM_WEIGHTS
from mrdac.motion import KeypointSet

# MS-SSIM by brute force: explicit 11x11 windows, two-pass moments, no separable filtering


def _oracle_window():
    x = np.arange(11) - 5.0
    g = np.exp(-x ** 2 / (2 * 1.5 ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _oracle_ssim_terms(x, y):
    w = _oracle_window()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    wx = sliding_window_view(x, (11, 11))
    wy = sliding_window_view(y, (11, 11))
    lum, cs = [], []
    for i in range(wx.shape[0]):
        for j in range(wx.shape[1]):
            px, py = wx[i, j], wy[i, j]
            mx, my = np.sum(w * px), np.sum(w * py)
            vx = np.sum(w * (px - mx) ** 2)
            vy = np.sum(w * (py - my) ** 2)
            cxy = np.sum(w * (px - mx) * (py - my))
            lum.append((2 * mx * my + c1) / (mx ** 2 + my ** 2 + c1))
            cs.append((2 * cxy + c2) / (vx + vy + c2))
    return np.mean(lum), np.mean(cs)


def _oracle_halve(img):
    h, w = img.shape[0] // 2, img.shape[1] // 2
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = img[2 * i:2 * i + 2, 2 * j:2 * j + 2].mean()
    return out


def oracle_ms_ssim(a, b):
    values = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        scales = []
        while len(scales) < 5 and min(x.shape) >= 11:
            scales.append((x, y))
            x, y = _oracle_halve(x), _oracle_halve(y)
        weights = np.array(MS_SSIM_WEIGHTS[:len(scales)])
        weights /= weights.sum()
        prod = 1.0
        for j, (sx, sy) in enumerate(scales):
            lum, cs = _oracle_ssim_terms(sx, sy)
            term = lum * cs if j == len(scales) - 1 else cs
            prod *= max(term, 0.0) ** weights[j]
        values.append(prod)
    return min(max(float(np.mean(values)), 0.0), 1.0)


def random_image_pair(rng):
    h, w = int(rng.integers(24, 72)), int(rng.integers(24, 72))
    c = int(rng.choice([1, 3]))
    base = rng.uniform(0, 1, (h // 4 + 2, w // 4 + 2, c))
    # smooth content: nearest-upsampled blocks plus fine detail
    a = np.repeat(np.repeat(base, 4, axis=0), 4, axis=1)[:h, :w] + 0.1 * rng.standard_normal((h, w, c))
    b = a + float(rng.choice([0.01, 0.05, 0.2, 1.0])) * rng.standard_normal((h, w, c))
    return np.clip(a, 0, 1), np.clip(b, 0, 1)


# bitstream fuzzing


def random_stream(rng):
    k = int(rng.integers(1, 6))
    jac = bool(rng.random() < 0.5)
    header = bs.BitstreamHeader(
        width=int(rng.integers(1, 4096)), height=int(rng.integers(1, 4096)),
        fps_numerator=int(rng.integers(1, 65536)), fps_denominator=int(rng.integers(1, 1002)),
        num_keypoints=k, quant_log2=int(rng.integers(1, 17)), has_jacobians=jac,
        strategy=str(rng.choice(bs.STRATEGY_CODES)), gop_size=int(rng.integers(1, 100)),
        rp_interval=int(rng.integers(1, 100)), max_refs=int(rng.integers(1, 8)),
        max_delay_ms=int(rng.integers(0, 10_000)), kp_variance=float(rng.uniform(1e-4, 1)),
        beta=float(rng.uniform(0, 10)), w_bg=float(rng.uniform(0, 1)),
        agg_sigma=float(rng.uniform(0.1, 50)), padding=str(rng.choice(bs.PADDING_CODES)))
    count = header.values_per_frame
    records, refs, pred = [], [], None
    for t in range(int(rng.integers(0, 8))):
        q = [int(v) for v in rng.integers(-200, 200, count)]
        if not refs or rng.random() < 0.3:
            records.append(bs.FrameRecord(t, bs.FrameKind.REFERENCE, (), bs.encode_payload(q)))
            refs.append(t)
        else:
            chosen = rng.choice(refs, size=int(rng.integers(1, len(refs) + 1)), replace=False)
            records.append(bs.FrameRecord(t, bs.FrameKind.ANIMATED, tuple(int(r) for r in chosen),
                                          bs.encode_payload(q, pred)))
        pred = q
    return header, records


def keypoint_trajectory(num_frames, k, rng):
    pos = np.cumsum(rng.normal(0, 0.01, (num_frames, k, 2)), axis=0) + rng.uniform(-0.5, 0.5, (k, 2))
    jac = np.eye(2) + np.cumsum(rng.normal(0, 0.005, (num_frames, k, 2, 2)), axis=0)
    return [KeypointSet(t, pos[t], jac[t]) for t in range(num_frames)]
