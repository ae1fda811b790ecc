"""Benchmarks built on the pipeline: reference-count sweeps, strategy
ablations at matched bits, and an analytic MAC count."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from . import bitstream as bs
from .errors import InvalidInputError
from .pipeline import CodecParams, encode_sequence, run_pipeline
from .scheduler import GopConfig, Strategy
from .synth import SynthConfig, synth_sequence
from .tensor import PaddingMode

# Benchmark synthesis settings. The library defaults (kp_variance 0.01,
# beta 5) leave most of a 32x32 feature grid outside every keypoint's
# Gaussian and darken all rotated regions through the divergence mask, so
# every strategy collapses to the same low quality. A wider kernel and a
# milder mask keep motion and aggregation effects visible.
BENCHMARK_PARAMS = CodecParams(kp_variance=0.05, beta=1.0, w_bg=0.01,
                               padding=PaddingMode.ZEROS, quant_log2=6)
BENCHMARK_SEEDS = tuple(range(10))
BENCHMARK_SYNTH = SynthConfig()          # 64x64, T=64, rotation within +-30 degrees


def benchmark_sequences(seeds: Iterable[int] = BENCHMARK_SEEDS,
                        synth: SynthConfig = BENCHMARK_SYNTH) -> list:
    return [synth_sequence(replace(synth, seed=int(s))) for s in seeds]


def mean_quality(seqs, gop: GopConfig, params: CodecParams = BENCHMARK_PARAMS,
                 with_ms_ssim: bool = False) -> dict:
    reports = [run_pipeline(s, gop, params, with_ms_ssim=with_ms_ssim) for s in seqs]
    out = {"psnr_db": float(np.mean([r.mean_psnr for r in reports]))}
    if with_ms_ssim:
        out["ms_ssim"] = float(np.mean([r.mean_ms_ssim for r in reports]))
    if all(r.bitrate for r in reports):
        out["kbps"] = float(np.mean([r.bitrate["kbps"] for r in reports]))
    return out


def reference_count_sweep(seqs, counts=(1, 2, 4), strategy: Strategy = Strategy.RP_RRB,
                          params: CodecParams = BENCHMARK_PARAMS, gop_template: GopConfig = GopConfig()):
    """Mean PSNR for each reference count at a fixed quantization step."""
    return {n: mean_quality(seqs, replace(gop_template, strategy=strategy, max_refs=n), params)["psnr_db"]
            for n in counts}


# ---------------------------------------------------------------------------
# strategy ablation


ABLATION_COLUMNS = ("strategy", "seed", "quant_log2", "total_bits", "kbps",
                    "mean_psnr_db", "mean_ms_ssim")


@dataclass
class AblationResult:
    rows: list
    summary: dict                    # strategy -> {"psnr_db", "ms_ssim", "kbps"}
    slack_db: float = 0.1

    @property
    def ordering_ok(self) -> bool:
        """RP_RRB >= RP >= RRB on mean PSNR, within the slack."""
        q = {k: v["psnr_db"] for k, v in self.summary.items()}
        need = [("RP_RRB", "RP"), ("RP", "RRB")]
        return all(q[a] >= q[b] - self.slack_db for a, b in need if a in q and b in q)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: row[k] for k in ABLATION_COLUMNS})
        return buf.getvalue()


def stream_bits(seq, gop: GopConfig, params: CodecParams) -> int:
    data, _, _ = encode_sequence(seq, gop, params)
    return bs.bitrate_report(data, bs.CostModel(params.ref_cost_bits))["total_bits"]


def match_quant_step(seq, gop: GopConfig, params: CodecParams, budget_bits: int,
                     candidates=range(2, 11)) -> int:
    """Finest ``quant_log2`` whose total bits stay within ``budget_bits``
    (the coarsest candidate when none do)."""
    candidates = sorted(candidates)
    chosen = candidates[0]
    for q in candidates:
        if stream_bits(seq, gop, replace(params, quant_log2=q)) <= budget_bits:
            chosen = q
    return chosen


def ablate_strategies(seeds: Iterable[int], gop_template: GopConfig = GopConfig(max_refs=2),
                      params: CodecParams = BENCHMARK_PARAMS,
                      synth: SynthConfig = BENCHMARK_SYNTH,
                      strategies=(Strategy.RRB, Strategy.RP, Strategy.RP_RRB),
                      anchor: Strategy = Strategy.RRB, with_ms_ssim: bool = True) -> AblationResult:
    """Run each strategy on every seed at a bit budget matched to ``anchor``.

    The budget per seed is the anchor's total bits (reference costs
    included) at ``params.quant_log2``; every strategy then uses the finest
    quantization step that fits.
    """
    seeds = list(seeds)
    if len(seeds) < 5:
        raise InvalidInputError(f"an ablation needs at least 5 seeds, got {len(seeds)}")
    if params.quant_log2 is None:
        raise InvalidInputError("matched-bit ablation needs a quantized stream")
    rows = []
    for seed in seeds:
        seq = synth_sequence(replace(synth, seed=int(seed)))
        budget = stream_bits(seq, replace(gop_template, strategy=anchor), params)
        for strategy in strategies:
            gop = replace(gop_template, strategy=strategy)
            q = match_quant_step(seq, gop, params, budget)
            report = run_pipeline(seq, gop, replace(params, quant_log2=q), with_ms_ssim=with_ms_ssim)
            rows.append({
                "strategy": Strategy(strategy).value, "seed": int(seed), "quant_log2": q,
                "total_bits": report.bitrate["total_bits"], "kbps": report.bitrate["kbps"],
                "mean_psnr_db": report.mean_psnr, "mean_ms_ssim": report.mean_ms_ssim,
            })
    summary = {}
    for strategy in strategies:
        name = Strategy(strategy).value
        sel = [r for r in rows if r["strategy"] == name]
        summary[name] = {
            "psnr_db": float(np.mean([r["mean_psnr_db"] for r in sel])),
            "ms_ssim": float(np.mean([r["mean_ms_ssim"] for r in sel])),
            "kbps": float(np.mean([r["kbps"] for r in sel])),
        }
    return AblationResult(rows, summary)


# ---------------------------------------------------------------------------
# complexity


@dataclass(frozen=True)
class MacConfig:
    width: int = 64
    height: int = 64
    channels: int = 3
    num_keypoints: int = 9
    feature_stride: int = 2


def mac_profile(cfg: MacConfig = MacConfig(), num_refs: int = 1) -> dict:
    """Analytic multiply-accumulate count of one animated frame.

    Per reference, on the ``h x w`` feature grid with ``C`` channels and
    ``K`` keypoints:

    * feature extraction, 2x2 box mean: 4 per feature element;
    * per-keypoint affine ``J_ref J_tgt^-1``: 8 per keypoint;
    * motion blending per pixel: each keypoint costs 2 (squared distance),
      4 (affine candidate) and 2 (weighted accumulation); the background
      candidate adds 2;
    * divergence: 2 per pixel;
    * bilinear sampling: 4 per feature element;
    * occlusion masking and the temporal weight: 1 each per feature element.

    Shared: the N-way max costs ``N - 1`` per feature element, and the
    generator (bilinear upsampling) 4 per output element. Transcendentals
    (the softmax and mask exponentials) are not counted.
    """
    if num_refs < 1:
        raise InvalidInputError(f"num_refs must be >= 1, got {num_refs}")
    s = cfg.feature_stride
    h, w = cfg.height // s, cfg.width // s
    c, k = cfg.channels, cfg.num_keypoints
    feat = c * h * w
    per_ref = {
        "extract": s * s * feat,
        "keypoint_affine": 8 * k,
        "motion_blend": (8 * k + 2) * h * w,
        "divergence": 2 * h * w,
        "grid_sample": 4 * feat,
        "mask": feat,
        "temporal_weight": feat,
    }
    shared = {
        "max_pool": (num_refs - 1) * feat,
        "generator": 4 * cfg.height * cfg.width * c,
    }
    breakdown = {name: num_refs * v for name, v in per_ref.items()}
    breakdown.update(shared)
    total = sum(breakdown.values())
    return {
        "num_refs": num_refs,
        "total_macs": total,
        "macs_per_pixel": total / (cfg.height * cfg.width),
        "breakdown": breakdown,
    }
