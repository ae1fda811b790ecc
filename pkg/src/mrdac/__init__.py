"""Multi-reference animation codec simulator.

Warping, occlusion masking, temporally weighted max-pool aggregation and a
batch contrastive loss, all with analytic gradients. Around them sit a
keypoint bitstream with reference scheduling, plus rate-distortion tools.
"""

from .aggregation import aggregate, apply_motion, temporal_weights
from .bitstream import Bitstream, BitstreamHeader, FrameRecord, bitrate_report, parse, serialize
from .contrastive import ContrastiveBatch, ContrastiveConfig, info_nce, multi_ref_contrastive
from .errors import (DimensionError, DivergenceError, InvalidInputError, MrdacError,
                     NoOverlapError, ParseError, UnsupportedVersionError)
from .experiments import ablate_strategies, mac_profile
from .metrics import RDCurve, bd_rate, ms_ssim, psnr
from .motion import KeypointSet, occlusion_from_flow, sparse_to_dense
from .pipeline import CodecParams, decode_stream, encode_sequence, run_pipeline
from .scheduler import GopConfig, Role, Strategy, plan, validate_plan
from .synth import SynthConfig, synth_sequence
from .tensor import PaddingMode, grid_sample, gradient_check
from .training import ToyBenchmark, ToyObjective, train_toy

__version__ = "0.1.0"

__all__ = [
    "aggregate", "apply_motion", "temporal_weights", "Bitstream", "BitstreamHeader",
    "FrameRecord", "bitrate_report", "parse", "serialize", "ContrastiveBatch",
    "ContrastiveConfig", "info_nce", "multi_ref_contrastive", "DimensionError",
    "DivergenceError", "InvalidInputError", "MrdacError", "NoOverlapError", "ParseError",
    "UnsupportedVersionError", "ablate_strategies", "mac_profile", "RDCurve", "bd_rate",
    "ms_ssim", "psnr", "KeypointSet", "occlusion_from_flow", "sparse_to_dense", "CodecParams",
    "decode_stream", "encode_sequence", "run_pipeline", "GopConfig", "Role", "Strategy",
    "plan", "validate_plan", "SynthConfig", "synth_sequence", "PaddingMode", "grid_sample",
    "gradient_check", "ToyBenchmark", "ToyObjective", "train_toy",
]
