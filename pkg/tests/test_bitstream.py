from dataclasses import replace

import numpy as np
import pytest

from mrdac import bitstream as bs
from mrdac.errors import DimensionError, InvalidInputError, ParseError, UnsupportedVersionError
from mrdac.experiments import BENCHMARK_SEEDS, stream_bits
from mrdac.motion import KeypointSet
from mrdac.pipeline import (CodecParams, animate, build_header, decode_keypoints, decode_stream,
                            encode_keypoints, encode_sequence)
from mrdac.scheduler import GopConfig, Strategy, plan
from mrdac.synth import SynthConfig, synth_sequence
from support import keypoint_trajectory, random_stream

HEADER = bs.BitstreamHeader(width=64, height=64, fps_numerator=25, fps_denominator=1,
                            num_keypoints=2, quant_log2=6, has_jacobians=False)


def _records(n_animated=3):
    recs = [bs.FrameRecord(0, bs.FrameKind.REFERENCE, (), bs.encode_payload([1, 2, 3, 4]))]
    for t in range(1, n_animated + 1):
        recs.append(bs.FrameRecord(t, bs.FrameKind.ANIMATED, (0,),
                                   bs.encode_payload([t, 2, 3, 4], [1, 2, 3, 4])))
    return recs


def test_payload_bit_examples():
    assert bs.payload_bits([0]) == "1"
    assert bs.payload_bits([1]) == "011"
    assert bs.payload_bits([-1]) == "010"
    assert bs.payload_bits([7], [7]) == "1"
    assert bs.encode_payload([0]) == b"\x80"


def test_zigzag_examples():
    assert [bs.zigzag(n) for n in (0, -1, 1, -2, 2)] == [0, 1, 2, 3, 4]
    assert all(bs.unzigzag(bs.zigzag(n)) == n for n in range(-300, 300))


def test_decode_payload_zero_residual():
    assert bs.decode_payload(bs.encode_payload([5], [5]), [5], 1) == [5]
    assert bs.decode_payload(b"\x80", [5], 1) == [5]


def test_quantize_examples():
    kp = KeypointSet(0, np.array([[0.5, 0.0], [-0.2578125, 0.25]]))
    assert bs.quantize_keypoints(kp, 1 / 64) == [32, 0, -17, 16]
    with pytest.raises(InvalidInputError):
        bs.quantize_keypoints(kp, 0.0)


def test_dequantize_is_index_times_step():
    kp = bs.dequantize_keypoints([32, 0, -17, 16], 1 / 64, 2, False, frame_index=3)
    assert kp.frame_index == 3
    assert np.array_equal(kp.positions, [[0.5, 0.0], [-17 / 64, 0.25]])
    with pytest.raises(DimensionError):
        bs.dequantize_keypoints([1, 2, 3], 1 / 64, 2, False)


def test_payload_round_trip_fuzz():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        n = int(rng.integers(1, 60))
        scale = int(rng.choice([2, 64, 5000, 2 ** 20]))
        cur = [int(v) for v in rng.integers(-scale, scale, n)]
        pred = None if rng.random() < 0.3 else [int(v) for v in rng.integers(-scale, scale, n)]
        assert bs.decode_payload(bs.encode_payload(cur, pred), pred, n) == cur


def test_container_round_trip_fuzz():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        header, records = random_stream(rng)
        data = bs.serialize(header, records)
        parsed = bs.parse(data)
        assert parsed.header == header
        assert list(parsed.records) == records
        assert bs.serialize(parsed.header, parsed.records) == data


def test_header_only_and_small_streams():
    empty = bs.serialize(HEADER, [])
    assert bs.parse(empty) == bs.Bitstream(HEADER, ())
    data = bs.serialize(HEADER, _records())
    assert bs.serialize(*vars(bs.parse(data)).values()) == data


def test_every_truncation_is_rejected():
    data = bs.serialize(HEADER, _records())
    for n in range(len(data)):
        with pytest.raises(ParseError):
            bs.parse(data[:n])


def test_malformed_streams_name_the_problem():
    data = bytearray(bs.serialize(HEADER, _records()))
    with pytest.raises(ParseError, match="bad magic"):
        bs.parse(b"XXXX" + bytes(data[4:]))
    bumped = bytes(data[:4]) + bytes([bs.VERSION + 1]) + bytes(data[5:])
    with pytest.raises(UnsupportedVersionError):
        bs.parse(bumped)
    with pytest.raises(ParseError, match="trailing"):
        bs.parse(bytes(data) + b"\x00")
    dangling = _records()
    dangling[2] = bs.FrameRecord(2, bs.FrameKind.ANIMATED, (7,), dangling[2].payload)
    with pytest.raises(ParseError) as info:
        bs.serialize(HEADER, dangling)
    assert "frame 2" in str(info.value)
    with pytest.raises(ParseError) as info:
        bs.parse(bs._pack(HEADER, dangling))
    assert info.value.record == "#2 (frame 2)"


def test_reference_to_animated_frame_is_rejected():
    recs = _records()
    recs[2] = bs.FrameRecord(2, bs.FrameKind.ANIMATED, (1,), recs[2].payload)
    with pytest.raises(ParseError, match="undeclared reference"):
        bs.parse(bs._pack(HEADER, recs))


def test_invalid_headers_are_rejected():
    for bad in (dict(num_keypoints=0), dict(quant_log2=0), dict(quant_log2=17),
                dict(strategy="FOO"), dict(padding="mirror")):
        with pytest.raises(InvalidInputError):
            bs.serialize(replace(HEADER, **bad), [])
    raw = bytearray(bs.serialize(HEADER, []))
    raw[13] = 0          # num_keypoints
    with pytest.raises(ParseError, match="invalid header"):
        bs.parse(bytes(raw))


def test_payload_errors_carry_bit_offsets():
    with pytest.raises(ParseError) as info:
        bs.decode_payload(b"\x00", None, 1)
    assert info.value.bit_offset == 8
    with pytest.raises(ParseError, match="padding"):
        bs.decode_payload(b"\x81", None, 1)
    with pytest.raises(ParseError, match="trailing"):
        bs.decode_payload(b"\x80\x00", None, 1)


@pytest.mark.parametrize("strategy", list(Strategy))
def test_decoder_keypoints_do_not_drift(strategy):
    rng = np.random.default_rng(2)
    kps = keypoint_trajectory(1000, 9, rng)
    gop = GopConfig(strategy=strategy, gop_size=50, rp_interval=50, max_refs=2)
    schedule = plan(1000, gop)
    header = build_header((64, 64), 25.0, 9, True, gop, CodecParams(quant_log2=8))
    records, encoder_side = encode_keypoints(kps, schedule, header)
    decoder_side = decode_keypoints(bs.parse(bs.serialize(header, records)))
    assert sorted(decoder_side) == list(range(1000))
    for t in range(1000):
        assert decoder_side[t] == encoder_side[t]


def test_bitrate_one_second_example():
    recs = [bs.FrameRecord(0, bs.FrameKind.REFERENCE)]
    recs += [bs.FrameRecord(t, bs.FrameKind.ANIMATED, (0,)) for t in range(1, 25)]
    report = bs.bitrate_report(bs.serialize(HEADER, recs), bs.CostModel(10_000))
    assert report["total_bits"] == 10_000
    assert report["kbps"] == 10.0
    assert report["num_frames"] == 25


def test_bitrate_monotone_in_reference_cost_and_breakdown():
    data = bs.serialize(HEADER, _records())
    low = bs.bitrate_report(data, bs.CostModel(1000))
    high = bs.bitrate_report(data, bs.CostModel(2000))
    assert high["kbps"] > low["kbps"]
    assert low["breakdown"]["REFERENCE"] == 1000 + 8 * len(_records()[0].payload)
    assert low["container_bits"] == 8 * len(data)
    per_frame = bs.bitrate_report(data, bs.CostModel(1000, per_frame={0: 5}))
    assert per_frame["total_bits"] == low["total_bits"] - 995


def test_bitrate_without_references_and_errors():
    stream = bs.Bitstream(HEADER, tuple(bs.FrameRecord(t, bs.FrameKind.ANIMATED, (0,), b"\x80")
                                        for t in range(1, 4)))
    report = bs.bitrate_report(stream)
    assert report["breakdown"]["REFERENCE"] == 0
    assert report["breakdown"]["ANIMATED"] == 24
    with pytest.raises(InvalidInputError):
        bs.bitrate_report(bs.serialize(HEADER, []))
    with pytest.raises(InvalidInputError):
        bs.CostModel(0)


def test_halving_step_never_lowers_payload_bits():
    gop = GopConfig(strategy=Strategy.RP_RRB, max_refs=2)
    for seed in BENCHMARK_SEEDS:
        seq = synth_sequence(SynthConfig(seed=seed))
        bits = [stream_bits(seq, gop, CodecParams(quant_log2=q)) for q in range(2, 15)]
        assert all(b >= a for a, b in zip(bits, bits[1:])), (seed, bits)


def test_fine_quantization_converges_to_unquantized():
    seq = synth_sequence(SynthConfig(seed=3, num_frames=24))
    gop = GopConfig(strategy=Strategy.RP_RRB, max_refs=2)
    params = CodecParams(quant_log2=14)
    data, schedule, _ = encode_sequence(seq, gop, params)
    decoded = decode_stream(data, {t: seq.frames[t] for t in schedule.reference_frames})
    sigma = params.sigma_for(gop)
    for t in schedule.animated_frames:
        refs = [(r, seq.frames[r], seq.gt_keypoints[r]) for r in schedule.refs[t]]
        exact = animate(seq.gt_keypoints[t], t, refs, params, sigma)
        assert np.mean((decoded.frames[t] - exact) ** 2) <= 1e-6
