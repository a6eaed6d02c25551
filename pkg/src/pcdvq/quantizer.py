"""Decoupled direction/magnitude encoding of regularized weights.

Each k-group ``v`` of a regularized column is stored as two indices: the
direction codeword with the largest cosine to ``v`` and the radius nearest
to ``||v||``. The pair is spliced into one ``a + b`` bit word
(direction in the low ``a`` bits) and words are packed back to back into a
little-endian bit stream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .codebooks import (
    DirectionCodebook,
    MagnitudeCodebook,
    fnv1a64,
    serialize_codebook,
)
from .errors import (
    CodebookMismatchError,
    FormatError,
    RangeError,
    ShapeError,
    ValidationError,
)
from .transforms import (
    _is_power_of_two,
    column_scales,
    inverse_randomized_hadamard,
    randomized_hadamard,
)

__all__ = [
    "QuantConfig",
    "QuantizedTensor",
    "PreparedCodebooks",
    "codebook_hash",
    "quantize_vector",
    "dequantize_vector",
    "quantize_groups",
    "quantize_tensor",
    "dequantize_tensor",
    "regularized_groups",
    "pack_indices",
    "unpack_indices",
    "serialize_quantized",
    "deserialize_quantized",
    "scalar_quantize",
    "FLAG_DEGENERATE",
]

FLAG_DEGENERATE = 0x01
_CHUNK = 128


@dataclass(frozen=True)
class QuantConfig:
    k: int = 8
    a: int = 14
    b: int = 2
    tau: float = 0.9999
    tol: float = 1e-6
    max_iter: int = 200
    sign_seed: int = 0

    def __post_init__(self):
        if self.k != 8:
            raise ValidationError("E8 direction codebooks need k = 8")
        if self.a < 1 or self.b < 1:
            raise ValidationError("direction and magnitude bits must both be at least 1")
        if self.a + self.b > 56:
            raise ValidationError("a + b must not exceed 56 bits per vector")

    @property
    def bits_per_weight(self) -> float:
        return (self.a + self.b) / self.k


def codebook_hash(cb) -> int:
    return fnv1a64(serialize_codebook(cb))


class PreparedCodebooks:
    """Codebooks as the quantizer sees them.

    Values are taken at the float32 precision of their serialized form so a
    codebook built in memory and the same codebook loaded from disk encode
    identically. Directions are renormalized after rounding.
    """

    def __init__(self, cd: DirectionCodebook, cr: MagnitudeCodebook):
        if cd.k != cr.k:
            raise ValidationError(f"direction codebook has k={cd.k}, magnitude codebook k={cr.k}")
        dirs = np.asarray(cd.entries, dtype=np.float32).astype(np.float64)
        self.directions = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        self.radii = np.asarray(cr.entries, dtype=np.float32).astype(np.float64)
        self.a = cd.bits
        self.b = cr.bits
        self.k = cd.k
        self.cd = cd
        self.cr = cr

    @classmethod
    def of(cls, cd, cr=None) -> "PreparedCodebooks":
        return cd if isinstance(cd, cls) else cls(cd, cr)


def quantize_groups(v: np.ndarray, cd, cr=None):
    """Encode the rows of ``v`` (n x k).

    Returns ``(dir_idx, mag_idx, degenerate)``; ``degenerate`` marks zero
    rows, which map to direction 0 and the smallest radius.
    """
    pc = PreparedCodebooks.of(cd, cr)
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != pc.k:
        raise ShapeError(f"expected rows of length {pc.k}, got array of shape {v.shape}")
    n = len(v)
    dir_idx = np.empty(n, dtype=np.int64)
    mag_idx = np.empty(n, dtype=np.int64)
    norms = np.sqrt(np.einsum("ij,ij->i", v, v))
    dirs_t = np.ascontiguousarray(pc.directions.T)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        # argmax of the dot product is argmax of the cosine for a positive norm
        dir_idx[start:stop] = np.argmax(v[start:stop] @ dirs_t, axis=1)
        mag_idx[start:stop] = np.argmin(np.abs(norms[start:stop, None] - pc.radii[None, :]), axis=1)
    degenerate = norms == 0.0
    return dir_idx, mag_idx, degenerate


def quantize_vector(v, cd, cr=None) -> tuple[int, int]:
    """Indices of the best direction (by cosine) and nearest radius for one vector.

    Ties go to the lowest index. A zero vector maps to ``(0, 0)``; use
    :func:`quantize_groups` to see the degeneracy flag.
    """
    d, m, _ = quantize_groups(np.asarray(v, dtype=np.float64)[None, :], cd, cr)
    return int(d[0]), int(m[0])


def _reconstruct(dir_idx, mag_idx, pc: PreparedCodebooks) -> np.ndarray:
    dir_idx = np.asarray(dir_idx)
    mag_idx = np.asarray(mag_idx)
    if np.any((dir_idx < 0) | (dir_idx >= len(pc.directions))):
        raise RangeError(f"direction index out of range [0, {len(pc.directions)})")
    if np.any((mag_idx < 0) | (mag_idx >= len(pc.radii))):
        raise RangeError(f"magnitude index out of range [0, {len(pc.radii)})")
    return pc.directions[dir_idx] * pc.radii[mag_idx][..., None]


def dequantize_vector(dir_idx: int, mag_idx: int, cd, cr=None) -> np.ndarray:
    return _reconstruct(int(dir_idx), int(mag_idx), PreparedCodebooks.of(cd, cr))


# --------------------------------------------------------------------------
# bit packing

def pack_indices(dir_idx, mag_idx, a: int, b: int) -> bytes:
    """Splice ``dir | mag << a`` into ``a + b`` bit words, LSB-first stream."""
    dir_idx = np.asarray(dir_idx, dtype=np.int64).ravel()
    mag_idx = np.asarray(mag_idx, dtype=np.int64).ravel()
    if dir_idx.shape != mag_idx.shape:
        raise ValidationError("direction and magnitude index arrays differ in length")
    if np.any((dir_idx < 0) | (dir_idx >= (1 << a))):
        raise RangeError(f"direction index does not fit in {a} bits")
    if np.any((mag_idx < 0) | (mag_idx >= (1 << b))):
        raise RangeError(f"magnitude index does not fit in {b} bits")
    width = a + b
    words = (dir_idx.astype(np.uint64)) | (mag_idx.astype(np.uint64) << np.uint64(a))
    shifts = np.arange(width, dtype=np.uint64)
    bits = ((words[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.ravel(), bitorder="little").tobytes()


def packed_size(count: int, a: int, b: int) -> int:
    return (count * (a + b) + 7) // 8


def unpack_indices(blob: bytes, count: int, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
    width = a + b
    if len(blob) != packed_size(count, a, b):
        raise FormatError(f"packed blob has {len(blob)} bytes, {packed_size(count, a, b)} expected")
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), bitorder="little")
    bits = bits[: count * width].reshape(count, width).astype(np.uint64)
    words = np.zeros(count, dtype=np.uint64)
    for i in range(width):
        words |= bits[:, i] << np.uint64(i)
    dir_idx = (words & np.uint64((1 << a) - 1)).astype(np.int64)
    mag_idx = (words >> np.uint64(a)).astype(np.int64)
    return dir_idx, mag_idx


# --------------------------------------------------------------------------
# tensors

@dataclass(frozen=True)
class QuantizedTensor:
    shape: tuple[int, int]
    k: int
    a: int
    b: int
    sign_seed: int
    scales: np.ndarray
    blob: bytes
    dir_hash: int
    mag_hash: int
    flags: int = 0

    @property
    def vector_count(self) -> int:
        return self.shape[0] * self.shape[1] // self.k

    @property
    def bits_per_weight(self) -> float:
        return (self.a + self.b) / self.k

    def indices(self) -> tuple[np.ndarray, np.ndarray]:
        return unpack_indices(self.blob, self.vector_count, self.a, self.b)


def _check_tensor_shape(w: np.ndarray, k: int) -> None:
    if w.ndim != 2 or w.size == 0:
        raise ShapeError(f"expected a non-empty 2-D weight matrix, got shape {w.shape}")
    p, q = w.shape
    if not _is_power_of_two(p):
        raise ShapeError(f"row count {p} is not a power of two")
    if (p * q) % k:
        raise ShapeError(f"p*q = {p * q} is not divisible by k = {k}")


def regularized_groups(w, sign_seed: int, k: int = 8):
    """Regularize ``w`` and cut it into k-groups in column-major order.

    Returns ``(groups, scales)`` with ``groups`` of shape (p*q/k, k), float64
    values taken from the float32 regularized matrix.
    """
    w = np.asarray(w, dtype=np.float32)
    _check_tensor_shape(w, k)
    scales = column_scales(w)
    y = randomized_hadamard(w, sign_seed)
    y /= scales.astype(np.float64)
    y = y.astype(np.float32).astype(np.float64)
    return y.reshape(-1, order="F").reshape(-1, k), scales


def quantize_tensor(w, cfg: QuantConfig | int, cd, cr=None) -> QuantizedTensor:
    """Regularize, group, encode and pack a weight matrix.

    ``cfg`` may be a :class:`QuantConfig` or just the sign seed.
    """
    pc = PreparedCodebooks.of(cd, cr)
    sign_seed = cfg.sign_seed if isinstance(cfg, QuantConfig) else int(cfg)
    if isinstance(cfg, QuantConfig) and (cfg.a, cfg.b, cfg.k) != (pc.a, pc.b, pc.k):
        raise ValidationError(
            f"config asks for (k, a, b) = {(cfg.k, cfg.a, cfg.b)}, "
            f"codebooks provide {(pc.k, pc.a, pc.b)}"
        )
    w = np.asarray(w, dtype=np.float32)
    groups, scales = regularized_groups(w, sign_seed, pc.k)
    dir_idx, mag_idx, degenerate = quantize_groups(groups, pc)
    return QuantizedTensor(
        shape=(int(w.shape[0]), int(w.shape[1])),
        k=pc.k,
        a=pc.a,
        b=pc.b,
        sign_seed=int(sign_seed) & 0xFFFFFFFFFFFFFFFF,
        scales=scales,
        blob=pack_indices(dir_idx, mag_idx, pc.a, pc.b),
        dir_hash=codebook_hash(pc.cd),
        mag_hash=codebook_hash(pc.cr),
        flags=FLAG_DEGENERATE if np.any(degenerate) else 0,
    )


def reconstruct_regularized(qt: QuantizedTensor, cd, cr=None) -> np.ndarray:
    """Decoded groups laid back into a p x q matrix in the regularized domain."""
    pc = PreparedCodebooks.of(cd, cr)
    if codebook_hash(pc.cd) != qt.dir_hash:
        raise CodebookMismatchError("direction codebook does not match the one used for encoding")
    if codebook_hash(pc.cr) != qt.mag_hash:
        raise CodebookMismatchError("magnitude codebook does not match the one used for encoding")
    if (pc.k, pc.a, pc.b) != (qt.k, qt.a, qt.b):
        raise CodebookMismatchError("codebook sizes do not match the quantized tensor")
    dir_idx, mag_idx = qt.indices()
    groups = _reconstruct(dir_idx, mag_idx, pc)
    return groups.reshape(-1).reshape(qt.shape, order="F")


def dequantize_tensor(qt: QuantizedTensor, cd, cr=None) -> np.ndarray:
    """Decode, restore each column to norm ``sqrt(p)`` and undo the regularization.

    The column renormalization makes every output column carry exactly the
    norm recorded by its stored scale.
    """
    y = reconstruct_regularized(qt, cd, cr)
    p = qt.shape[0]
    norms = np.sqrt(np.einsum("ij,ij->j", y, y))
    gain = np.where(norms > 0, np.sqrt(p) / np.where(norms > 0, norms, 1.0), 1.0)
    y *= gain * np.asarray(qt.scales, dtype=np.float64)
    return inverse_randomized_hadamard(y, qt.sign_seed).astype(np.float32)


_QT_HEADER = struct.Struct("<4sHIIBBBBQQQ")
_QT_MAGIC = b"PCDQ"


def serialize_quantized(qt: QuantizedTensor) -> bytes:
    p, q = qt.shape
    header = _QT_HEADER.pack(
        _QT_MAGIC, 1, p, q, qt.k, qt.a, qt.b, qt.flags, qt.sign_seed, qt.dir_hash, qt.mag_hash
    )
    scales = np.ascontiguousarray(qt.scales, dtype="<f4").tobytes()
    return header + scales + qt.blob


def deserialize_quantized(data: bytes) -> QuantizedTensor:
    if len(data) < _QT_HEADER.size:
        raise FormatError("quantized tensor truncated inside header")
    magic, version, p, q, k, a, b, flags, seed, dh, mh = _QT_HEADER.unpack_from(data)
    if magic != _QT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_QT_MAGIC!r}")
    if version != 1:
        raise FormatError(f"unsupported quantized tensor version {version}")
    if k == 0 or p == 0 or q == 0 or (p * q) % k:
        raise FormatError(f"inconsistent shape {p}x{q} for k={k}")
    count = p * q // k
    expected = _QT_HEADER.size + 4 * q + packed_size(count, a, b)
    if len(data) != expected:
        raise FormatError(f"quantized tensor is {len(data)} bytes, header implies {expected}")
    off = _QT_HEADER.size
    scales = np.frombuffer(data[off : off + 4 * q], dtype="<f4").astype(np.float32)
    return QuantizedTensor(
        shape=(p, q), k=k, a=a, b=b, sign_seed=seed, scales=scales,
        blob=bytes(data[off + 4 * q :]), dir_hash=dh, mag_hash=mh, flags=flags,
    )


# --------------------------------------------------------------------------
# scalar baseline

def scalar_quantize(w, bits: int) -> np.ndarray:
    """Symmetric per-tensor round-to-nearest (ties to even), returned dequantized.

    Scale is ``max|w| / (2**(bits-1) - 1)``; an all-zero input is returned as is.
    """
    if not (2 <= bits <= 8):
        raise ValidationError(f"scalar quantization supports 2..8 bits, got {bits}")
    w = np.asarray(w, dtype=np.float64)
    maxabs = float(np.max(np.abs(w))) if w.size else 0.0
    if maxabs == 0.0:
        return w.copy()
    levels = (1 << (bits - 1)) - 1
    q = np.clip(np.rint(w * levels / maxabs), -(levels + 1), levels)
    # multiply first: maxabs / levels can underflow for subnormal inputs
    return q * maxabs / levels
