"""Random-mask and stochastic-quantization encodings of model deltas.

Wire format (little-endian, tag byte first)::

    dense      tag=0 | float32 x n
    masked     tag=1 | keep bitmap, ceil(n/8) bytes | float32 x kept
    quantized  tag=2 | bits (1 byte) | s_min f32 | s_max f32 | codes, ceil(bits*n/8) bytes

``n`` (the parameter count) is fixed by the model architecture and known to
both ends, so it is not transmitted.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream

__all__ = [
    "PayloadError",
    "CompressionSpec",
    "QuantizedTensor",
    "UpdatePayload",
    "kept_count",
    "random_mask",
    "apply_mask",
    "quantize",
    "dequantize",
    "pack_codes",
    "unpack_codes",
    "encode_dense",
    "encode_masked",
    "encode_quantized",
    "encode",
    "decode",
    "dense_size",
    "masked_size",
    "quantized_size",
]

TAG_DENSE, TAG_MASKED, TAG_QUANTIZED = 0, 1, 2
_MODES = {TAG_DENSE: "dense", TAG_MASKED: "masked", TAG_QUANTIZED: "quantized"}
ALLOWED_BITS = (1, 2, 4, 8)


class PayloadError(ValueError):
    """Corrupt, truncated or unrecognised payload."""


@dataclass(frozen=True)
class CompressionSpec:
    """How a client ships its delta.

    ``none`` keeps the float64 delta exact (bytes are still accounted as a
    dense payload); ``dense`` round-trips it through float32. For ``mask``,
    ``keep_fraction`` is the share of entries transmitted; pass
    ``1 - z`` to zero a fraction ``z`` instead.
    """

    kind: str = "none"
    keep_fraction: float | None = None
    bits: int | None = None

    def __post_init__(self):
        if self.kind not in ("none", "dense", "mask", "quantize"):
            raise ValueError(f"unknown compression kind {self.kind!r}")
        if self.kind == "mask":
            if self.keep_fraction is None or not 0.0 <= self.keep_fraction <= 1.0:
                raise ValueError("mask compression needs keep_fraction in [0, 1]")
        if self.kind == "quantize" and self.bits not in ALLOWED_BITS:
            raise ValueError(f"quantize compression needs bits in {ALLOWED_BITS}, got {self.bits}")

    @property
    def label(self) -> str:
        if self.kind == "mask":
            return f"mask{self.keep_fraction:g}"
        if self.kind == "quantize":
            return f"quant{self.bits}"
        return self.kind


def kept_count(keep_fraction: float, n: int) -> int:
    """round(keep_fraction * n), halves rounding up."""
    return min(n, int(math.floor(keep_fraction * n + 0.5)))


def random_mask(n: int, keep_fraction: float, rng: RngStream) -> np.ndarray:
    """Boolean mask with exactly ``kept_count`` True entries, uniformly placed."""
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in [0, 1], got {keep_fraction}")
    mask = np.zeros(n, dtype=bool)
    mask[rng.shuffle(n)[: kept_count(keep_fraction, n)]] = True
    return mask


def apply_mask(delta, keep_fraction: float, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise product of ``delta`` with a fresh random 0/1 mask.

    Returns ``(masked_delta, mask)``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    mask = random_mask(delta.shape[0], keep_fraction, rng)
    return np.where(mask, delta, 0.0), mask


@dataclass(frozen=True)
class QuantizedTensor:
    bits: int
    s_min: float
    s_max: float
    codes: np.ndarray  # one uint8 code per entry

    @property
    def numel(self) -> int:
        return self.codes.shape[0]

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1


def _f32_down(x: float) -> float:
    f = np.float32(x)
    if float(f) > x:
        f = np.nextafter(f, np.float32(-np.inf))
    return float(f)


def _f32_up(x: float) -> float:
    f = np.float32(x)
    if float(f) < x:
        f = np.nextafter(f, np.float32(np.inf))
    return float(f)


def quantize(delta, bits: int, rng: RngStream) -> QuantizedTensor:
    """Unbiased stochastic rounding onto ``2**bits`` evenly spaced levels.

    Levels span [min, max] of the whole vector; each value goes to one of
    its two bracketing levels with probability proportional to proximity.
    With ``bits=1`` a value becomes max with probability
    (v - min) / (max - min) and min otherwise. The range limits are widened
    outward to float32 so they can be sent in the header without bias.
    """
    if bits not in ALLOWED_BITS:
        raise ValueError(f"bits must be one of {ALLOWED_BITS}, got {bits}")
    v = np.asarray(delta, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantize non-finite values")
    if v.size == 0:
        return QuantizedTensor(bits, 0.0, 0.0, np.zeros(0, dtype=np.uint8))
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        c = float(np.float32(lo))
        return QuantizedTensor(bits, c, c, np.zeros(v.shape[0], dtype=np.uint8))
    s_min, s_max = _f32_down(lo), _f32_up(hi)
    L = (1 << bits) - 1
    u = (v - s_min) / (s_max - s_min) * L
    # values sitting on a level must reproduce it exactly
    r = np.rint(u)
    u = np.where(np.abs(u - r) < 1e-9, r, u)
    u = np.clip(u, 0.0, L)
    base = np.floor(u)
    frac = u - base
    up = rng.uniform(v.shape[0]) < frac
    codes = np.minimum(base + up, L).astype(np.uint8)
    return QuantizedTensor(bits, s_min, s_max, codes)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    codes = np.asarray(q.codes)
    if codes.size and int(codes.max()) > q.levels:
        raise PayloadError(f"code {int(codes.max())} out of range for {q.bits}-bit quantization")
    if q.s_max == q.s_min:
        return np.full(codes.shape[0], q.s_min)
    return q.s_min + codes.astype(np.float64) * ((q.s_max - q.s_min) / q.levels)


def pack_codes(codes, bits: int) -> bytes:
    """Pack ``bits``-wide codes LSB-first into ceil(bits * n / 8) bytes."""
    codes = np.asarray(codes, dtype=np.uint8)
    bitplanes = (codes[:, None] >> np.arange(bits, dtype=np.uint8)) & 1
    return np.packbits(bitplanes.ravel(), bitorder="little").tobytes()


def unpack_codes(buf: bytes, bits: int, n: int) -> np.ndarray:
    flat = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=bits * n, bitorder="little")
    weights = (1 << np.arange(bits)).astype(np.uint8)
    return (flat.reshape(n, bits) * weights).sum(axis=1).astype(np.uint8)


def dense_size(n: int) -> int:
    return 1 + 4 * n


def masked_size(n: int, kept: int) -> int:
    return 1 + (n + 7) // 8 + 4 * kept


def quantized_size(n: int, bits: int) -> int:
    return 2 + 8 + (bits * n + 7) // 8


@dataclass(frozen=True)
class UpdatePayload:
    mode: str
    data: bytes
    numel: int

    @property
    def byte_size(self) -> int:
        return len(self.data)

    @property
    def body_size(self) -> int:
        """Size without the mode/bits tag bytes."""
        return len(self.data) - (2 if self.mode == "quantized" else 1)


def encode_dense(delta) -> UpdatePayload:
    v = np.asarray(delta, dtype="<f4")
    return UpdatePayload("dense", bytes([TAG_DENSE]) + v.tobytes(), v.shape[0])


def encode_masked(delta, mask) -> UpdatePayload:
    delta = np.asarray(delta, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != delta.shape:
        raise ValueError(f"mask shape {mask.shape} vs delta shape {delta.shape}")
    bitmap = np.packbits(mask, bitorder="little").tobytes()
    values = delta[mask].astype("<f4").tobytes()
    return UpdatePayload("masked", bytes([TAG_MASKED]) + bitmap + values, delta.shape[0])


def encode_quantized(q: QuantizedTensor) -> UpdatePayload:
    header = bytes([TAG_QUANTIZED, q.bits]) + struct.pack("<ff", q.s_min, q.s_max)
    return UpdatePayload("quantized", header + pack_codes(q.codes, q.bits), q.numel)


def encode(delta, spec: CompressionSpec, rng: RngStream | None = None) -> UpdatePayload:
    """Compress (as configured) and serialise a delta vector."""
    if spec.kind in ("none", "dense"):
        return encode_dense(delta)
    if rng is None:
        raise ValueError(f"{spec.kind} compression needs a random stream")
    if spec.kind == "mask":
        masked, mask = apply_mask(delta, spec.keep_fraction, rng)
        return encode_masked(masked, mask)
    return encode_quantized(quantize(delta, spec.bits, rng))


def decode(payload, numel: int) -> np.ndarray:
    """Inverse of :func:`encode` for a delta of ``numel`` entries."""
    data = payload.data if isinstance(payload, UpdatePayload) else bytes(payload)
    if not data:
        raise PayloadError("empty payload")
    tag = data[0]
    if tag not in _MODES:
        raise PayloadError(f"unknown mode tag {tag}")
    if tag == TAG_DENSE:
        if len(data) != dense_size(numel):
            raise PayloadError(f"dense payload is {len(data)} bytes, expected {dense_size(numel)}")
        return np.frombuffer(data, dtype="<f4", offset=1).astype(np.float64)
    if tag == TAG_MASKED:
        nb = (numel + 7) // 8
        if len(data) < 1 + nb:
            raise PayloadError("truncated mask bitmap")
        mask = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=1, count=nb),
                             count=numel, bitorder="little").astype(bool)
        kept = int(mask.sum())
        if len(data) != masked_size(numel, kept):
            raise PayloadError(f"masked payload is {len(data)} bytes, expected {masked_size(numel, kept)}")
        out = np.zeros(numel)
        out[mask] = np.frombuffer(data, dtype="<f4", offset=1 + nb)
        return out
    if len(data) < 10:
        raise PayloadError("truncated quantization header")
    bits = data[1]
    if bits not in ALLOWED_BITS:
        raise PayloadError(f"unsupported bit width {bits}")
    if len(data) != quantized_size(numel, bits):
        raise PayloadError(f"quantized payload is {len(data)} bytes, expected {quantized_size(numel, bits)}")
    s_min, s_max = struct.unpack_from("<ff", data, 2)
    codes = unpack_codes(data[10:], bits, numel)
    return dequantize(QuantizedTensor(bits, s_min, s_max, codes))
