"""Gaussian regularization of weight columns and polar coordinate maps.

Columns are rotated by a randomized Hadamard transform (sign flip followed by
a normalized Walsh-Hadamard transform) and divided by ``||x|| / sqrt(p)`` so
that every entry is approximately standard normal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DimensionError

__all__ = [
    "RegularizedMatrix",
    "PolarVector",
    "fwht",
    "random_signs",
    "randomized_hadamard",
    "inverse_randomized_hadamard",
    "regularize_matrix",
    "deregularize_matrix",
    "to_polar",
    "from_polar",
]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _check_length(n: int) -> None:
    if not _is_power_of_two(n):
        raise DimensionError(f"length {n} is not a power of two")


def fwht(x: np.ndarray) -> np.ndarray:
    """Normalized fast Walsh-Hadamard transform along axis 0.

    Computes ``H_n @ x / sqrt(n)`` for the Sylvester Hadamard matrix ``H_n``.
    ``x`` may be a vector or a matrix whose columns are transformed
    independently. The result is float64; the transform is its own inverse.
    """
    y = np.array(x, dtype=np.float64, copy=True)
    n = y.shape[0]
    _check_length(n)
    tail = y.shape[1:]
    h = 1
    while h < n:
        # butterfly on pairs (i, i + h) inside blocks of length 2h
        blocks = y.reshape((n // (2 * h), 2, h) + tail)
        a = blocks[:, 0].copy()
        b = blocks[:, 1]
        blocks[:, 0] += b
        blocks[:, 1] = a - b
        h *= 2
    y /= np.sqrt(n)
    return y


def random_signs(n: int, sign_seed: int) -> np.ndarray:
    """The +-1 diagonal keyed by ``sign_seed``.

    Drawn from a Philox counter-based generator so the same seed yields the
    same signs on every platform and numpy version that supports Philox.
    """
    _check_length(n)
    rng = np.random.Generator(np.random.Philox(key=int(sign_seed) & 0xFFFFFFFFFFFFFFFF))
    bits = rng.integers(0, 2, size=n, dtype=np.int8)
    return (1 - 2 * bits).astype(np.float64)


def randomized_hadamard(x: np.ndarray, sign_seed: int) -> np.ndarray:
    """``fwht(D @ x)`` with ``D`` the sign diagonal for ``sign_seed``."""
    x = np.asarray(x, dtype=np.float64)
    signs = random_signs(x.shape[0], sign_seed)
    return fwht(x * signs.reshape((-1,) + (1,) * (x.ndim - 1)))


def inverse_randomized_hadamard(y: np.ndarray, sign_seed: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    signs = random_signs(y.shape[0], sign_seed)
    return fwht(y) * signs.reshape((-1,) + (1,) * (y.ndim - 1))


@dataclass(frozen=True)
class RegularizedMatrix:
    """Weights after column-wise Gaussianization.

    ``values`` is p x q float32, ``scales`` the q per-column factors
    ``||col|| / sqrt(p)`` (float32) and ``sign_seed`` keys the sign diagonal.
    """

    values: np.ndarray
    scales: np.ndarray
    sign_seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _as_weight_matrix(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float32)
    if w.ndim != 2 or w.size == 0:
        raise DimensionError(f"expected a non-empty 2-D weight matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DimensionError("weight matrix contains NaN or Inf")
    return w


def column_scales(w: np.ndarray) -> np.ndarray:
    """Per-column ``||col|| / sqrt(p)`` rounded to float32."""
    w = _as_weight_matrix(w)
    norms = np.sqrt(np.einsum("ij,ij->j", w, w, dtype=np.float64))
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateError(f"column {int(bad[0])} has zero norm; scale is undefined")
    return (norms / np.sqrt(w.shape[0])).astype(np.float32)


def regularize_matrix(w, sign_seed: int) -> RegularizedMatrix:
    """Rotate every column with one shared randomized Hadamard transform and
    rescale it to squared norm ``p``."""
    w = _as_weight_matrix(w)
    _check_length(w.shape[0])
    scales = column_scales(w)
    y = randomized_hadamard(w, sign_seed)
    y /= scales.astype(np.float64)
    return RegularizedMatrix(values=y.astype(np.float32), scales=scales, sign_seed=int(sign_seed))


def deregularize_matrix(r: RegularizedMatrix) -> np.ndarray:
    values = np.asarray(r.values, dtype=np.float64)
    scales = np.asarray(r.scales, dtype=np.float64)
    if values.ndim != 2 or scales.shape != (values.shape[1],):
        raise DimensionError(
            f"scales of shape {scales.shape} do not match values of shape {values.shape}"
        )
    _check_length(values.shape[0])
    x = inverse_randomized_hadamard(values * scales, r.sign_seed)
    return x.astype(np.float32)


@dataclass(frozen=True)
class PolarVector:
    """Hyperspherical coordinates of a k-vector.

    ``angles[:-1]`` lie in [0, pi], the last angle in [0, 2 pi).
    """

    angles: np.ndarray
    radius: float

    @property
    def k(self) -> int:
        return len(self.angles) + 1


def to_polar(v) -> PolarVector:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 2:
        raise DimensionError("to_polar needs a 1-D vector with at least 2 entries")
    radius = float(np.sqrt(np.dot(v, v)))
    if radius == 0.0:
        raise DegenerateError("zero vector has no direction")
    # tail[i] = sqrt(sum_{j > i} v_j^2)
    sq = v * v
    tail = np.sqrt(np.cumsum(sq[::-1])[::-1][1:])
    angles = np.arctan2(tail, v[:-1])
    # the last angle carries the sign of v_k
    last = np.arctan2(v[-1], v[-2])
    if last < 0.0:
        last += 2.0 * np.pi
        # -tiny + 2 pi rounds to 2 pi, outside the half-open range
        if last >= 2.0 * np.pi:
            last = 0.0
    angles[-1] = last
    return PolarVector(angles=angles, radius=radius)


def from_polar(pv: PolarVector) -> np.ndarray:
    angles = np.asarray(pv.angles, dtype=np.float64)
    k = angles.shape[0] + 1
    out = np.empty(k, dtype=np.float64)
    running = float(pv.radius)
    for i, phi in enumerate(angles):
        out[i] = running * np.cos(phi)
        running *= np.sin(phi)
    out[k - 1] = running
    return out
