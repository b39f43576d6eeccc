"""Packed storage for quantized matrices, plus compression accounting.

Row encodings (each row is packed independently, then rows concatenate
in order, then all scales follow as float16 little-endian, row-major):

* ternary rows: 5 codes per byte.  Each code c in {-1, 0, +1} becomes the
  trit c + 1, and a byte holds trit_0 + 3*trit_1 + ... + 81*trit_4 with
  trit_0 the earliest column, so byte values lie in [0, 242].  A short
  final block pads with trit 1 (code 0).
* int4 rows: two codes per byte, earliest column in the low nibble, each
  stored as code + 8 in [1, 15]; a dangling final nibble pads with 0.
* int8 rows: one signed byte per code.

Blob file layout (little-endian):

    offset  size  field
    0       8     magic b"RZRQPAKD"
    8       4     version, u32 = 1
    12      1     format tag, u8: 0 ternary, 1 nibble, 2 byte, 3 mixed
    13      3     zero padding
    16      8     rows, u64
    24      8     cols, u64
    32      4     group_size, u32
    36      4     zero padding
    40      8     beta, f64
    48      8     epsilon, f64
    56      8     row-mode digest: first 8 bytes of SHA-256 over the
                  row-mode byte array
    64      rows  row modes, u8 each (BitMode values)
    ...           packed code payload
    ...           scales, float16 LE, row-major

The format tag summarizes the whole blob; matrices quantized under a
mixed allocation plan carry both ternary and int4 rows and use tag 3.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .manifest import LayerRole, ModelManifest
from .quantize import BitMode, GroupQuantConfig, QuantizedGroupMatrix
from .tensorio import atomic_write_bytes

__all__ = [
    "PACKED_MAGIC",
    "PackFormat",
    "PackedBlob",
    "pack",
    "unpack",
    "save_blob",
    "load_blob",
    "packed_row_bytes",
    "CompressionPolicy",
    "CompressionReport",
    "compression_report",
    "TERNARY_PHYSICAL_BITS",
    "SCALE_BITS",
    "UNQUANTIZED_BITS",
]

PACKED_MAGIC = b"RZRQPAKD"
_VERSION = 1

# Five base-3 digits per byte: 3**5 = 243 values, so 1.6 bits per weight.
TERNARY_PHYSICAL_BITS = 8.0 / 5.0
SCALE_BITS = 16.0
UNQUANTIZED_BITS = 16.0

_POW3 = np.array([1, 3, 9, 27, 81], dtype=np.uint8)


class PackFormat(IntEnum):
    TERNARY_PACK = 0
    NIBBLE_PACK = 1
    BYTE_PACK = 2
    MIXED_PACK = 3

    @property
    def label(self) -> str:
        return {
            PackFormat.TERNARY_PACK: "ternary-pack",
            PackFormat.NIBBLE_PACK: "nibble-pack",
            PackFormat.BYTE_PACK: "byte-pack",
            PackFormat.MIXED_PACK: "mixed-pack",
        }[self]


_MODE_FORMAT = {
    BitMode.TERNARY: PackFormat.TERNARY_PACK,
    BitMode.INT4: PackFormat.NIBBLE_PACK,
    BitMode.INT8: PackFormat.BYTE_PACK,
}


def packed_row_bytes(mode: BitMode, cols: int) -> int:
    """Closed-form packed size of one row's codes in bytes."""
    if mode is BitMode.TERNARY:
        return -(-cols // 5)
    if mode is BitMode.INT4:
        return -(-cols // 2)
    return cols


@dataclass
class PackedBlob:
    """In-memory form of a packed matrix: header fields, payload, scales."""

    format: PackFormat
    rows: int
    cols: int
    group_size: int
    beta: float
    epsilon: float
    row_modes: np.ndarray
    payload: bytes
    scales: np.ndarray  # (rows, num_groups) float16

    @property
    def row_mode_digest(self) -> bytes:
        return hashlib.sha256(self.row_modes.astype(np.uint8).tobytes()).digest()[:8]


# ----------------------------------------------------------------------
# row encoders / decoders
# ----------------------------------------------------------------------

def _pack_ternary_row(codes: np.ndarray) -> bytes:
    trits = (codes.astype(np.int16) + 1).astype(np.uint8)
    pad = (-trits.size) % 5
    if pad:
        trits = np.concatenate([trits, np.ones(pad, dtype=np.uint8)])
    return (trits.reshape(-1, 5) * _POW3).sum(axis=1, dtype=np.uint16).astype(np.uint8).tobytes()


def _unpack_ternary_row(buf: np.ndarray, cols: int) -> np.ndarray:
    if buf.max(initial=0) > 242:
        raise FormatError(f"ternary byte {int(buf.max())} out of range [0, 242]")
    vals = buf.astype(np.int16)
    trits = np.empty((buf.size, 5), dtype=np.int16)
    for k in range(5):
        trits[:, k] = vals % 3
        vals //= 3
    return (trits.reshape(-1)[:cols] - 1).astype(np.int8)


def _pack_int4_row(codes: np.ndarray) -> bytes:
    stored = (codes.astype(np.int16) + 8).astype(np.uint8)
    pad = stored.size % 2
    if pad:
        stored = np.concatenate([stored, np.zeros(1, dtype=np.uint8)])
    pairs = stored.reshape(-1, 2)
    return (pairs[:, 0] | (pairs[:, 1] << 4)).astype(np.uint8).tobytes()


def _unpack_int4_row(buf: np.ndarray, cols: int) -> np.ndarray:
    lo = (buf & 0x0F).astype(np.int16)
    hi = (buf >> 4).astype(np.int16)
    stored = np.empty(buf.size * 2, dtype=np.int16)
    stored[0::2] = lo
    stored[1::2] = hi
    stored = stored[:cols]
    if stored.min(initial=1) < 1:
        raise FormatError("int4 nibble 0 inside row data (only valid as padding)")
    return (stored - 8).astype(np.int8)


# ----------------------------------------------------------------------
# blob construction
# ----------------------------------------------------------------------

def pack(q: QuantizedGroupMatrix) -> PackedBlob:
    """Pack a quantized matrix into its storage encoding.

    Code ranges are re-checked against each row's claimed mode so a
    corrupted matrix fails here rather than producing an undecodable
    payload.
    """
    chunks = []
    for i in range(q.rows):
        mode = q.mode_of(i)
        row = q.codes[i]
        if np.abs(row.astype(np.int32)).max(initial=0) > mode.qmax:
            raise ValidationError(f"row {i}: code out of range for {mode.label}")
        if mode is BitMode.TERNARY:
            chunks.append(_pack_ternary_row(row))
        elif mode is BitMode.INT4:
            chunks.append(_pack_int4_row(row))
        else:
            chunks.append(row.astype(np.int8).tobytes())
    present = {q.mode_of(i) for i in range(q.rows)}
    fmt = _MODE_FORMAT[next(iter(present))] if len(present) == 1 else PackFormat.MIXED_PACK
    return PackedBlob(
        format=fmt,
        rows=q.rows,
        cols=q.cols,
        group_size=q.config.group_size,
        beta=q.config.beta,
        epsilon=q.config.epsilon,
        row_modes=q.row_modes.copy(),
        payload=b"".join(chunks),
        scales=q.scales.copy(),
    )


def unpack(blob: PackedBlob) -> QuantizedGroupMatrix:
    """Decode a blob back to codes and scales.

    Inverse of pack: unpack(pack(q)) reproduces q exactly, including the
    grouping config.
    """
    expected = sum(packed_row_bytes(BitMode(int(m)), blob.cols) for m in blob.row_modes)
    if len(blob.payload) != expected:
        raise FormatError(f"payload is {len(blob.payload)} bytes, expected {expected}")
    codes = np.empty((blob.rows, blob.cols), dtype=np.int8)
    offset = 0
    raw = np.frombuffer(blob.payload, dtype=np.uint8)
    for i, tag in enumerate(blob.row_modes):
        mode = BitMode(int(tag))
        nbytes = packed_row_bytes(mode, blob.cols)
        piece = raw[offset : offset + nbytes]
        offset += nbytes
        if mode is BitMode.TERNARY:
            codes[i] = _unpack_ternary_row(piece, blob.cols)
        elif mode is BitMode.INT4:
            codes[i] = _unpack_int4_row(piece, blob.cols)
        else:
            codes[i] = piece.view(np.int8)
    config = GroupQuantConfig(group_size=blob.group_size, beta=blob.beta, epsilon=blob.epsilon)
    return QuantizedGroupMatrix(codes=codes, scales=blob.scales, row_modes=blob.row_modes, config=config)


# ----------------------------------------------------------------------
# file round trip
# ----------------------------------------------------------------------

def save_blob(path: str | Path, blob: PackedBlob) -> None:
    """Write a blob file (atomic)."""
    header = PACKED_MAGIC
    header += struct.pack("<IB3x", _VERSION, int(blob.format))
    header += struct.pack("<QQ", blob.rows, blob.cols)
    header += struct.pack("<I4xdd", blob.group_size, blob.beta, blob.epsilon)
    header += blob.row_mode_digest
    header += blob.row_modes.astype(np.uint8).tobytes()
    scales = np.ascontiguousarray(blob.scales.astype("<f2"))
    atomic_write_bytes(path, header + blob.payload + scales.tobytes())


def load_blob(path: str | Path) -> PackedBlob:
    """Read and validate a blob file."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read blob {path}: {exc}") from exc
    if len(raw) < 64:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:8] != PACKED_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}, expected {PACKED_MAGIC!r}")
    version, fmt_tag = struct.unpack_from("<IB", raw, 8)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        fmt = PackFormat(fmt_tag)
    except ValueError:
        raise FormatError(f"{path}: unknown format tag {fmt_tag}") from None
    rows, cols = struct.unpack_from("<QQ", raw, 16)
    group_size, beta, epsilon = struct.unpack_from("<I4xdd", raw, 32)
    digest = raw[56:64]
    if rows <= 0 or cols <= 0:
        raise FormatError(f"{path}: bad shape {rows}x{cols}")
    if len(raw) < 64 + rows:
        raise FormatError(f"{path}: truncated row-mode table")
    row_modes = np.frombuffer(raw, dtype=np.uint8, offset=64, count=rows).copy()
    if not np.all(np.isin(row_modes, [int(m) for m in BitMode])):
        raise FormatError(f"{path}: row-mode table contains an unknown tag")
    if hashlib.sha256(row_modes.tobytes()).digest()[:8] != digest:
        raise FormatError(f"{path}: row-mode digest mismatch")
    if group_size <= 0:
        raise FormatError(f"{path}: bad group_size {group_size}")
    payload_len = sum(packed_row_bytes(BitMode(int(m)), cols) for m in row_modes)
    num_groups = -(-cols // group_size)
    scales_len = rows * num_groups * 2
    start = 64 + rows
    if len(raw) != start + payload_len + scales_len:
        raise FormatError(
            f"{path}: file is {len(raw)} bytes, expected {start + payload_len + scales_len}"
        )
    payload = raw[start : start + payload_len]
    scales = np.frombuffer(raw, dtype="<f2", offset=start + payload_len, count=rows * num_groups)
    return PackedBlob(
        format=fmt,
        rows=rows,
        cols=cols,
        group_size=group_size,
        beta=float(beta),
        epsilon=float(epsilon),
        row_modes=row_modes,
        payload=bytes(payload),
        scales=scales.reshape(rows, num_groups).copy(),
    )


# ----------------------------------------------------------------------
# compression accounting
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CompressionPolicy:
    """Storage policy used to score a manifest.

    ``decoder_bits`` may be fractional (a mixed-plan effective width such
    as 1.88); embedding and lm_head layers use ``embedding_bits``.  Norm
    layers and anything with quantize = false stay at 16 bits with no
    scale overhead.
    """

    decoder_bits: float
    embedding_bits: float = 4.0
    group_size: int = 256

    def __post_init__(self):
        if not self.decoder_bits > 0 or not self.embedding_bits > 0:
            raise ValidationError("bit widths must be positive")
        if self.group_size < 1:
            raise ValidationError(f"group_size must be >= 1, got {self.group_size}")


def _physical_bits(nominal: float) -> float:
    """Packed code bits per weight for a nominal width (no scales).

    Widths inside [1.58, 4] are treated as a row mix of ternary and int4
    with 4-bit fraction (nominal - 1.58) / 2.42; packed ternary costs
    8/5 bits.  Anything outside that band is stored at its nominal width.
    """
    lo, hi = 1.58, 4.0
    if lo <= nominal <= hi:
        frac4 = (nominal - lo) / (hi - lo)
        return 4.0 * frac4 + TERNARY_PHYSICAL_BITS * (1.0 - frac4)
    return nominal


@dataclass(frozen=True)
class LayerCompression:
    name: str
    role: str
    params: int
    quantized: bool
    nominal_bits: float
    physical_bits: float


@dataclass(frozen=True)
class CompressionReport:
    model: str
    policy: CompressionPolicy
    layers: tuple[LayerCompression, ...]
    total_params: int
    quantized_params: int
    quantization_proportion: float  # percent
    nominal_bits_per_weight: float
    physical_bits_per_weight: float
    compression_ratio_nominal: float
    compression_ratio_physical: float

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "decoder_bits": self.policy.decoder_bits,
            "embedding_bits": self.policy.embedding_bits,
            "group_size": self.policy.group_size,
            "total_params": self.total_params,
            "quantized_params": self.quantized_params,
            "quantization_proportion": self.quantization_proportion,
            "nominal_bits_per_weight": self.nominal_bits_per_weight,
            "physical_bits_per_weight": self.physical_bits_per_weight,
            "compression_ratio_nominal": self.compression_ratio_nominal,
            "compression_ratio_physical": self.compression_ratio_physical,
        }


def compression_report(manifest: ModelManifest, policy: CompressionPolicy) -> CompressionReport:
    """Score a manifest under a storage policy.

    Quantized layers cost their code bits plus one 16-bit scale per
    group_size weights; unquantized layers cost 16 bits flat.  Tied
    lm_head layers are excluded entirely.  The compression ratio is 16
    divided by the parameter-weighted average bits per weight.
    """
    scale_overhead = SCALE_BITS / policy.group_size
    rows = []
    nominal_total = 0.0
    physical_total = 0.0
    for layer in manifest.counted_layers():
        if not layer.quantize or layer.role is LayerRole.NORM:
            nominal = physical = UNQUANTIZED_BITS
            quantized = False
        else:
            width = (
                policy.embedding_bits
                if layer.role in (LayerRole.EMBEDDING, LayerRole.LM_HEAD)
                else policy.decoder_bits
            )
            nominal = width + scale_overhead
            physical = _physical_bits(width) + scale_overhead
            quantized = True
        rows.append(
            LayerCompression(
                name=layer.name,
                role=layer.role.value,
                params=layer.params,
                quantized=quantized,
                nominal_bits=nominal,
                physical_bits=physical,
            )
        )
        nominal_total += layer.params * nominal
        physical_total += layer.params * physical
    total = manifest.total_params
    quantized_params = sum(r.params for r in rows if r.quantized)
    nominal_avg = nominal_total / total
    physical_avg = physical_total / total
    return CompressionReport(
        model=manifest.name,
        policy=policy,
        layers=tuple(rows),
        total_params=total,
        quantized_params=quantized_params,
        quantization_proportion=100.0 * quantized_params / total,
        nominal_bits_per_weight=nominal_avg,
        physical_bits_per_weight=physical_avg,
        compression_ratio_nominal=UNQUANTIZED_BITS / nominal_avg,
        compression_ratio_physical=UNQUANTIZED_BITS / physical_avg,
    )
