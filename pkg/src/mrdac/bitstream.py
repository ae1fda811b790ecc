"""Container format for the keypoint side channel.

Layout (all multi-byte integers big-endian, bits packed MSB first)::

    header
      magic            4 bytes  b"MRDC"
      version          u8       1
      width, height    u16 u16
      fps_num, fps_den u16 u16
      num_keypoints    u8       K >= 1
      quant_log2       u8       q in [1, 16], step = 2**-q
      flags            u8       bit 0: keypoints carry jacobians
      strategy         u8       index into Strategy
      gop_size         u16
      rp_interval      u16
      max_refs         u8
      max_delay_ms     u32
      kp_variance, beta, w_bg, agg_sigma   4 x float64
      padding          u8       0 = border, 1 = zeros
      num_records      u32
    record (repeated, in coding order)
      frame_index      u32
      kind             u8       0 = REFERENCE, 1 = ANIMATED
      num_refs         u8       followed by num_refs x u32 frame indices
      payload_length   u16      followed by payload bytes

Payloads hold the quantized keypoint indices (positions, then jacobian
entries) as signed exp-Golomb residuals against the previous record's
indices; prediction restarts at every REFERENCE record.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, InvalidInputError, ParseError, UnsupportedVersionError
from .motion import KeypointSet

MAGIC = b"MRDC"
VERSION = 1
DEFAULT_QUANT_LOG2 = 6
DEFAULT_REF_COST_BITS = 40000

_HEADER = struct.Struct(">4sBHHHHBBBBHHBI4dBI")
_RECORD_HEAD = struct.Struct(">IBB")


class FrameKind(enum.IntEnum):
    REFERENCE = 0
    ANIMATED = 1


# ---------------------------------------------------------------------------
# bit level I/O


class BitWriter:
    def __init__(self):
        self._bits = []

    def write_bit(self, bit):
        self._bits.append(1 if bit else 0)

    def write_uint(self, value, nbits):
        for shift in range(nbits - 1, -1, -1):
            self._bits.append((value >> shift) & 1)

    def write_ue(self, value):
        """Unsigned exp-Golomb: floor(log2(v+1)) zeros, then v+1 in binary."""
        code = value + 1
        nbits = code.bit_length()
        self._bits.extend([0] * (nbits - 1))
        self.write_uint(code, nbits)

    def write_se(self, value):
        self.write_ue(zigzag(value))

    @property
    def bit_length(self):
        return len(self._bits)

    def bitstring(self):
        return "".join(map(str, self._bits))

    def to_bytes(self):
        padded = self._bits + [0] * (-len(self._bits) % 8)
        out = bytearray()
        for i in range(0, len(padded), 8):
            byte = 0
            for bit in padded[i:i + 8]:
                byte = (byte << 1) | bit
            out.append(byte)
        return bytes(out)


class BitReader:
    def __init__(self, data: bytes):
        self._data = bytes(data)
        self.pos = 0

    @property
    def total_bits(self):
        return 8 * len(self._data)

    def read_bit(self):
        if self.pos >= self.total_bits:
            raise ParseError("truncated payload", bit_offset=self.pos)
        byte = self._data[self.pos >> 3]
        bit = (byte >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return bit

    def read_uint(self, nbits):
        value = 0
        for _ in range(nbits):
            value = (value << 1) | self.read_bit()
        return value

    def read_ue(self):
        start = self.pos
        zeros = 0
        while self.read_bit() == 0:
            zeros += 1
            if zeros > 64:
                raise ParseError("exp-Golomb prefix longer than 64 bits", bit_offset=start)
        return ((1 << zeros) | self.read_uint(zeros)) - 1

    def read_se(self):
        return unzigzag(self.read_ue())


def zigzag(n: int) -> int:
    return 2 * n if n >= 0 else -2 * n - 1


def unzigzag(k: int) -> int:
    return k // 2 if k % 2 == 0 else -(k + 1) // 2


# ---------------------------------------------------------------------------
# keypoint quantization and payload coding


def round_half_away(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_keypoints(kps: KeypointSet, step: float) -> list:
    """Integer indices ``round(value / step)``: positions row-major, then
    jacobian entries when present."""
    if not step > 0:
        raise InvalidInputError(f"quantization step must be > 0, got {step}")
    values = [kps.positions.ravel()]
    if kps.jacobians is not None:
        values.append(kps.jacobians.ravel())
    return [int(v) for v in round_half_away(np.concatenate(values) / step)]


def dequantize_keypoints(indices: Sequence[int], step: float, num_keypoints: int,
                         has_jacobians: bool, frame_index: int = 0) -> KeypointSet:
    values = np.asarray(indices, dtype=np.float64) * step
    npos = 2 * num_keypoints
    expected = npos + (4 * num_keypoints if has_jacobians else 0)
    if values.size != expected:
        raise DimensionError(f"expected {expected} indices, got {values.size}")
    positions = values[:npos].reshape(num_keypoints, 2)
    jac = values[npos:].reshape(num_keypoints, 2, 2) if has_jacobians else None
    return KeypointSet(frame_index, positions, jac)


def values_per_keypoint(has_jacobians: bool) -> int:
    return 6 if has_jacobians else 2


def encode_payload(current_q: Sequence[int], predictor_q: Optional[Sequence[int]] = None) -> bytes:
    return _payload_writer(current_q, predictor_q).to_bytes()


def payload_bits(current_q: Sequence[int], predictor_q: Optional[Sequence[int]] = None) -> str:
    """The unpadded payload as a string of '0'/'1'."""
    return _payload_writer(current_q, predictor_q).bitstring()


def _payload_writer(current_q, predictor_q):
    if predictor_q is not None and len(predictor_q) != len(current_q):
        raise DimensionError(f"predictor length {len(predictor_q)} != {len(current_q)}")
    writer = BitWriter()
    for i, value in enumerate(current_q):
        residual = int(value) - (int(predictor_q[i]) if predictor_q is not None else 0)
        writer.write_se(residual)
    return writer


def decode_payload(data: bytes, predictor_q: Optional[Sequence[int]], count: int) -> list:
    """Inverse of :func:`encode_payload` for ``count`` indices."""
    if predictor_q is not None and len(predictor_q) != count:
        raise DimensionError(f"predictor length {len(predictor_q)} != {count}")
    reader = BitReader(data)
    out = []
    for i in range(count):
        residual = reader.read_se()
        out.append(residual + (int(predictor_q[i]) if predictor_q is not None else 0))
    end = reader.pos
    if reader.total_bits - end >= 8:
        raise ParseError("payload has trailing bytes", bit_offset=end)
    while reader.pos < reader.total_bits:
        if reader.read_bit():
            raise ParseError("non-zero padding bits", bit_offset=reader.pos - 1)
    return out


# ---------------------------------------------------------------------------
# container


STRATEGY_CODES = ("RRB", "RP", "RP_RRB", "BIDIR")
PADDING_CODES = ("border", "zeros")


@dataclass(frozen=True)
class BitstreamHeader:
    width: int
    height: int
    fps_numerator: int
    fps_denominator: int
    num_keypoints: int
    quant_log2: int
    has_jacobians: bool
    strategy: str = "RRB"
    gop_size: int = 8
    rp_interval: int = 8
    max_refs: int = 1
    max_delay_ms: int = 2000
    kp_variance: float = 0.01
    beta: float = 5.0
    w_bg: float = 0.01
    agg_sigma: float = 4.0
    padding: str = "zeros"
    version: int = VERSION

    @property
    def fps(self) -> float:
        return self.fps_numerator / self.fps_denominator

    @property
    def step(self) -> float:
        return 2.0 ** -self.quant_log2

    @property
    def values_per_frame(self) -> int:
        return self.num_keypoints * values_per_keypoint(self.has_jacobians)

    def validate(self):
        if self.num_keypoints < 1:
            raise InvalidInputError("header must declare K >= 1 keypoints")
        if not 1 <= self.quant_log2 <= 16:
            raise InvalidInputError(f"quant_log2 must be in [1, 16], got {self.quant_log2}")
        if self.fps_numerator < 1 or self.fps_denominator < 1:
            raise InvalidInputError("fps numerator and denominator must be positive")
        if self.strategy not in STRATEGY_CODES:
            raise InvalidInputError(f"unknown strategy {self.strategy!r}")
        if self.padding not in PADDING_CODES:
            raise InvalidInputError(f"unknown padding {self.padding!r}")


@dataclass(frozen=True)
class FrameRecord:
    frame_index: int
    kind: FrameKind
    ref_list: tuple = ()
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "kind", FrameKind(self.kind))
        object.__setattr__(self, "ref_list", tuple(int(r) for r in self.ref_list))
        object.__setattr__(self, "payload", bytes(self.payload))


@dataclass(frozen=True)
class Bitstream:
    header: BitstreamHeader
    records: tuple = field(default_factory=tuple)


def check_records(records: Sequence[FrameRecord]) -> None:
    """Raise ``ParseError`` unless every ANIMATED record only references
    earlier REFERENCE records and frame indices are unique."""
    seen = set()
    references = set()
    for pos, rec in enumerate(records):
        name = f"#{pos} (frame {rec.frame_index})"
        if rec.frame_index in seen:
            raise ParseError("duplicate frame index", record=name)
        seen.add(rec.frame_index)
        if rec.kind is FrameKind.REFERENCE:
            if rec.ref_list:
                raise ParseError("REFERENCE record carries a ref_list", record=name)
            references.add(rec.frame_index)
        else:
            if not rec.ref_list:
                raise ParseError("ANIMATED record has an empty ref_list", record=name)
            dangling = [r for r in rec.ref_list if r not in references]
            if dangling:
                raise ParseError(f"ref_list names undeclared reference frames {dangling}",
                                 record=name)


def serialize(header: BitstreamHeader, records: Sequence[FrameRecord]) -> bytes:
    header.validate()
    check_records(records)
    return _pack(header, records)


def _pack(header, records):
    out = bytearray(_HEADER.pack(
        MAGIC, header.version, header.width, header.height,
        header.fps_numerator, header.fps_denominator, header.num_keypoints,
        header.quant_log2, int(bool(header.has_jacobians)),
        STRATEGY_CODES.index(header.strategy), header.gop_size, header.rp_interval,
        header.max_refs, header.max_delay_ms,
        header.kp_variance, header.beta, header.w_bg, header.agg_sigma,
        PADDING_CODES.index(header.padding), len(records)))
    for rec in records:
        out += _RECORD_HEAD.pack(rec.frame_index, int(rec.kind), len(rec.ref_list))
        out += struct.pack(f">{len(rec.ref_list)}I", *rec.ref_list)
        out += struct.pack(">H", len(rec.payload)) + rec.payload
    return bytes(out)


def parse(data: bytes) -> Bitstream:
    data = bytes(data)
    if len(data) < 5:
        raise ParseError("stream shorter than magic and version")
    if data[:4] != MAGIC:
        raise ParseError(f"bad magic {data[:4]!r}")
    if data[4] != VERSION:
        raise UnsupportedVersionError(f"unsupported version {data[4]}")
    if len(data) < _HEADER.size:
        raise ParseError("truncated header")
    (_, version, width, height, fps_num, fps_den, k, q, flags, strategy, gop, rp,
     max_refs, delay, kp_var, beta, w_bg, sigma, padding, nrec) = _HEADER.unpack_from(data)
    if flags & ~1:
        raise ParseError(f"unknown header flags {flags:#x}")
    if strategy >= len(STRATEGY_CODES) or padding >= len(PADDING_CODES):
        raise ParseError("header enum out of range")
    header = BitstreamHeader(width, height, fps_num, fps_den, k, q, bool(flags & 1),
                             STRATEGY_CODES[strategy], gop, rp, max_refs, delay,
                             kp_var, beta, w_bg, sigma, PADDING_CODES[padding], version)
    try:
        header.validate()
    except InvalidInputError as exc:
        raise ParseError(f"invalid header: {exc}") from None

    pos = _HEADER.size
    records = []
    for i in range(nrec):
        if pos + _RECORD_HEAD.size > len(data):
            raise ParseError("truncated record header", record=f"#{i}")
        frame_index, kind, nrefs = _RECORD_HEAD.unpack_from(data, pos)
        pos += _RECORD_HEAD.size
        if kind not in (0, 1):
            raise ParseError(f"unknown record kind {kind}", record=f"#{i} (frame {frame_index})")
        if pos + 4 * nrefs + 2 > len(data):
            raise ParseError("truncated ref_list", record=f"#{i} (frame {frame_index})")
        refs = struct.unpack_from(f">{nrefs}I", data, pos)
        pos += 4 * nrefs
        (length,) = struct.unpack_from(">H", data, pos)
        pos += 2
        if pos + length > len(data):
            raise ParseError("truncated payload", record=f"#{i} (frame {frame_index})")
        records.append(FrameRecord(frame_index, FrameKind(kind), refs, data[pos:pos + length]))
        pos += length
    if pos != len(data):
        raise ParseError(f"{len(data) - pos} trailing bytes after last record")
    check_records(records)
    return Bitstream(header, tuple(records))


# ---------------------------------------------------------------------------
# rate accounting


@dataclass(frozen=True)
class CostModel:
    """Modeled bits of one intra-coded reference frame.

    ``per_frame`` overrides ``reference_frame_bits`` for individual frame
    indices.
    """

    reference_frame_bits: int = DEFAULT_REF_COST_BITS
    per_frame: Optional[dict] = None

    def __post_init__(self):
        values = [self.reference_frame_bits] + list((self.per_frame or {}).values())
        if any(v <= 0 for v in values):
            raise InvalidInputError("reference frame cost must be positive")

    def bits_for(self, frame_index: int) -> int:
        if self.per_frame and frame_index in self.per_frame:
            return self.per_frame[frame_index]
        return self.reference_frame_bits


def bitrate_report(stream, cost: CostModel = CostModel(), num_frames: Optional[int] = None) -> dict:
    """Rate summary of a stream (bytes or :class:`Bitstream`).

    ``kbps = (payload bits + reference bits) * fps / (1000 * num_frames)``;
    container framing is reported as ``container_bits`` but not counted.
    """
    if isinstance(stream, (bytes, bytearray)):
        container_bits = 8 * len(stream)
        stream = parse(stream)
    else:
        container_bits = 8 * len(_pack(stream.header, stream.records))
    records = stream.records
    n = len(records) if num_frames is None else num_frames
    if n <= 0:
        raise InvalidInputError("stream contains no frames")
    fps = stream.header.fps
    if not fps > 0:
        raise InvalidInputError("invalid frame rate")
    ref_payload = sum(8 * len(r.payload) for r in records if r.kind is FrameKind.REFERENCE)
    anim_payload = sum(8 * len(r.payload) for r in records if r.kind is FrameKind.ANIMATED)
    ref_cost = sum(cost.bits_for(r.frame_index) for r in records if r.kind is FrameKind.REFERENCE)
    total = ref_payload + anim_payload + ref_cost
    return {
        "total_bits": total,
        "kbps": total * fps / (1000.0 * n),
        "num_frames": n,
        "payload_bits": ref_payload + anim_payload,
        "container_bits": container_bits,
        "breakdown": {
            "REFERENCE": ref_payload + ref_cost,
            "ANIMATED": anim_payload,
        },
    }
