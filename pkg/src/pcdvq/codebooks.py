"""Codebook construction.

* direction codebooks: greedy max-min selection over normalized E8 lattice
  points, enumerated shell by shell;
* magnitude codebooks: Lloyd-Max quantizer for the chi density;
* coupled codebooks: plain k-means with k-means++ seeding (the baseline).

Codebooks serialize to the little-endian ``PCDC`` format.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chi import chi_cdf, chi_partial_expectation, chi_partial_moment, chi_quantile
from .errors import CapacityError, DomainError, FormatError, ValidationError

__all__ = [
    "E8Pool",
    "DirectionCodebook",
    "MagnitudeCodebook",
    "CoupledCodebook",
    "e8_shell",
    "enumerate_e8_directions",
    "greedy_order",
    "greedy_direction_codebook",
    "build_direction_codebook",
    "lloyd_max_magnitude_codebook",
    "magnitude_distortion",
    "kmeans_codebook",
    "serialize_codebook",
    "deserialize_codebook",
    "save_codebook",
    "load_codebook",
    "fnv1a64",
]

POOL_MARGIN = 4
MAX_SHELL = 24  # squared norm; ~1.2M directions, far beyond a=16


# --------------------------------------------------------------------------
# E8 enumeration

def _small_primes(limit: int) -> list[int]:
    return [p for p in range(2, limit + 1) if all(p % d for d in range(2, int(p**0.5) + 1))]


def _vectors_with_square_sum(values: np.ndarray, dim: int, target: int, min_sq: int) -> np.ndarray:
    """All integer vectors over ``values`` with sum of squares == target.

    Built one coordinate at a time, discarding prefixes that cannot reach the
    target (each remaining coordinate contributes at least ``min_sq``).
    """
    sq = values * values
    prefix = np.zeros((1, 0), dtype=np.int64)
    partial = np.zeros(1, dtype=np.int64)
    for pos in range(dim):
        remaining = dim - pos - 1
        cand = partial[:, None] + sq[None, :]
        keep = cand + remaining * min_sq <= target
        if remaining == 0:
            keep &= cand == target
        rows, cols = np.nonzero(keep)
        prefix = np.concatenate([prefix[rows], values[cols][:, None]], axis=1)
        partial = cand[rows, cols]
    return prefix


def e8_shell(squared_norm: int) -> np.ndarray:
    """E8 points of the given squared norm, as doubled integer coordinates.

    Rows are ``2 x`` for lattice points ``x``: either all even (integer
    points) or all odd (half-integer points), with ``sum(2x) = 0 mod 4``.
    Sorted lexicographically.
    """
    if squared_norm <= 0 or squared_norm % 2:
        return np.zeros((0, 8), dtype=np.int64)
    target = 4 * squared_norm
    bound = int(math.isqrt(target))
    evens = np.arange(-bound - (bound % 2), bound + 1, 2, dtype=np.int64)
    evens = evens[np.abs(evens) <= bound]
    odds = np.arange(-bound, bound + 1, dtype=np.int64)
    odds = odds[odds % 2 == 1]
    pts = np.concatenate(
        [
            _vectors_with_square_sum(evens, 8, target, 0),
            _vectors_with_square_sum(odds, 8, target, 1),
        ]
    )
    pts = pts[pts.sum(axis=1) % 4 == 0]
    order = np.lexsort(pts.T[::-1])
    return pts[order]


def _is_primitive(points2: np.ndarray) -> np.ndarray:
    """True where the lattice point is not an integer multiple (>1) of another."""
    g = np.gcd.reduce(np.abs(points2), axis=1)
    primitive = np.ones(len(points2), dtype=bool)
    for p in _small_primes(int(g.max()) if len(g) else 1):
        rows = np.flatnonzero(g % p == 0)
        if rows.size == 0:
            continue
        z = points2[rows] // p
        parity = z % 2
        uniform = np.all(parity == parity[:, :1], axis=1)
        in_lattice = uniform & (z.sum(axis=1) % 4 == 0)
        primitive[rows[in_lattice]] = False
    return primitive


@dataclass(frozen=True)
class E8Pool:
    """Distinct E8 directions in (shell, lexicographic) order.

    ``points2`` keeps the doubled integer coordinates so cosines between pool
    members can be formed from exact integer dot products.
    """

    points2: np.ndarray
    shells: tuple[int, ...]

    @property
    def directions(self) -> np.ndarray:
        return self.points2 / self.norms[:, None]

    @property
    def norms(self) -> np.ndarray:
        return np.sqrt((self.points2 * self.points2).sum(axis=1).astype(np.float64))

    def __len__(self) -> int:
        return len(self.points2)


def enumerate_e8_directions(min_count: int, max_shell: int = MAX_SHELL) -> E8Pool:
    """Grow the pool one whole shell at a time until it holds ``min_count``
    directions. Points that are multiples of an earlier shell's points are
    dropped; antipodal pairs are both kept."""
    if min_count < 1:
        raise ValidationError("min_count must be at least 1")
    chunks: list[np.ndarray] = []
    shells: list[int] = []
    total = 0
    sq = 2
    while total < min_count:
        if sq > max_shell:
            raise CapacityError(
                f"E8 shells up to squared norm {max_shell} give {total} directions, "
                f"{min_count} required"
            )
        pts = e8_shell(sq)
        pts = pts[_is_primitive(pts)]
        chunks.append(pts)
        shells.append(sq)
        total += len(pts)
        sq += 2
    return E8Pool(points2=np.concatenate(chunks), shells=tuple(shells))


# --------------------------------------------------------------------------
# greedy direction codebook

@dataclass(frozen=True)
class DirectionCodebook:
    """``2**bits`` unit vectors of dimension ``k``."""

    entries: np.ndarray
    bits: int
    provenance: dict = field(default_factory=dict, compare=False)

    @property
    def k(self) -> int:
        return self.entries.shape[1]

    def __len__(self) -> int:
        return len(self.entries)

    def prefix(self, bits: int) -> "DirectionCodebook":
        """First ``2**bits`` greedy selections (a valid smaller codebook)."""
        if bits > self.bits:
            raise ValidationError(f"cannot take a {bits}-bit prefix of a {self.bits}-bit codebook")
        prov = dict(self.provenance, prefix_of=self.bits)
        return DirectionCodebook(self.entries[: 1 << bits].copy(), bits, prov)


def _pool_arrays(pool) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pool, E8Pool):
        vecs = pool.points2.astype(np.float64)
        return vecs, np.sqrt(np.einsum("ij,ij->i", vecs, vecs))
    vecs = np.asarray(pool, dtype=np.float64)
    if vecs.ndim != 2:
        raise ValidationError("direction pool must be a 2-D array of unit vectors")
    return vecs, np.sqrt(np.einsum("ij,ij->i", vecs, vecs))


def greedy_order(pool, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the first ``count`` greedy max-min picks from ``pool``.

    Start from a seeded random pool member, then repeatedly take the
    candidate whose largest cosine to everything chosen so far is smallest
    (lowest pool index on ties). Each candidate's running maximum is cached
    and refreshed against the newest pick only.

    Returns ``(order, min_max_cos)`` where ``min_max_cos[i]`` is the objective
    value at which pick ``i`` (i >= 1) was made.
    """
    vecs, norms = _pool_arrays(pool)
    n = len(vecs)
    if count > n:
        raise CapacityError(f"pool of {n} directions cannot supply {count} entries")
    if count < 1:
        raise ValidationError("count must be at least 1")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    order = np.empty(count, dtype=np.int64)
    objective = np.full(count, np.nan)
    order[0] = first
    max_cos = (vecs @ vecs[first]) / (norms * norms[first])
    max_cos[first] = np.inf
    for i in range(1, count):
        pick = int(np.argmin(max_cos))
        order[i] = pick
        objective[i] = max_cos[pick]
        cos = (vecs @ vecs[pick]) / (norms * norms[pick])
        np.maximum(max_cos, cos, out=max_cos)
        max_cos[pick] = np.inf
    return order, objective


def greedy_direction_codebook(pool, a: int, seed: int = 0) -> DirectionCodebook:
    if a < 0:
        raise ValidationError("direction bits must be non-negative")
    vecs, norms = _pool_arrays(pool)
    order, objective = greedy_order(pool, 1 << a, seed)
    entries = vecs[order] / norms[order, None]
    prov = {
        "pool_size": len(vecs),
        "shells_used": list(pool.shells) if isinstance(pool, E8Pool) else [],
        "seed": int(seed),
        "min_max_cos": objective,
    }
    return DirectionCodebook(entries=entries, bits=a, provenance=prov)


def build_direction_codebook(a: int, seed: int = 0, max_shell: int = MAX_SHELL) -> DirectionCodebook:
    """E8 pool of at least ``4 * 2**a`` directions, then greedy selection."""
    pool = enumerate_e8_directions(POOL_MARGIN * (1 << a), max_shell=max_shell)
    return greedy_direction_codebook(pool, a, seed)


# --------------------------------------------------------------------------
# Lloyd-Max magnitude codebook

@dataclass(frozen=True)
class MagnitudeCodebook:
    """Sorted radii with their decision boundaries ``[0, mid..., max_r]``."""

    entries: np.ndarray
    boundaries: np.ndarray
    bits: int
    k: int
    tau: float
    iterations: int = 0
    converged: bool = True
    movement: float = 0.0
    history: list = field(default_factory=list, compare=False, repr=False)

    @property
    def max_r(self) -> float:
        return float(self.boundaries[-1])

    def __len__(self) -> int:
        return len(self.entries)


def _midpoint_boundaries(radii: np.ndarray, max_r: float) -> np.ndarray:
    return np.concatenate([[0.0], 0.5 * (radii[:-1] + radii[1:]), [max_r]])


def magnitude_distortion(radii, k: int, max_r: float) -> float:
    """Expected ``(t - nearest radius)^2`` under the chi density on ``[0, max_r]``."""
    radii = np.sort(np.asarray(radii, dtype=np.float64))
    u = _midpoint_boundaries(radii, max_r)
    lo, hi = u[:-1], u[1:]
    m0 = chi_partial_moment(lo, hi, k, 0)
    m1 = chi_partial_moment(lo, hi, k, 1)
    m2 = chi_partial_moment(lo, hi, k, 2)
    return float(np.sum(m2 - 2.0 * radii * m1 + radii * radii * m0))


def lloyd_max_magnitude_codebook(
    b: int, k: int = 8, tau: float = 0.9999, tol: float = 1e-6, max_iter: int = 200
) -> MagnitudeCodebook:
    """Lloyd-Max quantizer for the chi(k) density truncated at its ``tau`` quantile.

    Radii start evenly spread over ``[0, max_r]``; each round sets boundaries
    to midpoints and moves every radius to its cell's conditional mean.
    Stops once no radius moves by ``tol`` or more, or after ``max_iter``
    rounds (``converged=False``). ``history`` holds ``(radii, distortion)``
    for the initial state and every round.
    """
    if b < 0:
        raise ValidationError("magnitude bits must be non-negative")
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    if tol <= 0 or max_iter < 1:
        raise ValidationError("tol must be positive and max_iter at least 1")
    n = 1 << b
    max_r = chi_quantile(tau, k)
    radii = (np.arange(n) + 0.5) * (max_r / n)
    history = [(radii.copy(), magnitude_distortion(radii, k, max_r))]
    converged = False
    movement = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        u = _midpoint_boundaries(radii, max_r)
        cdf = np.atleast_1d(chi_cdf(u, k))
        mass = cdf[1:] - cdf[:-1]
        first = np.atleast_1d(chi_partial_expectation(u[:-1], u[1:], k))
        with np.errstate(invalid="ignore", divide="ignore"):
            new = np.where(mass > 0, first / mass, radii)
        movement = float(np.max(np.abs(new - radii)))
        radii = new
        history.append((radii.copy(), magnitude_distortion(radii, k, max_r)))
        if movement < tol:
            converged = True
            break
    return MagnitudeCodebook(
        entries=radii,
        boundaries=_midpoint_boundaries(radii, max_r),
        bits=b,
        k=k,
        tau=float(tau),
        iterations=it,
        converged=converged,
        movement=movement,
        history=history,
    )


# --------------------------------------------------------------------------
# k-means baseline

@dataclass(frozen=True)
class CoupledCodebook:
    entries: np.ndarray
    bits: int
    distortion_history: list = field(default_factory=list, compare=False, repr=False)

    @property
    def k(self) -> int:
        return self.entries.shape[1]

    def __len__(self) -> int:
        return len(self.entries)


def nearest_euclidean(x: np.ndarray, centers: np.ndarray, chunk: int = 256):
    """Index of and squared distance to the nearest center for every row of ``x``."""
    c_sq = np.einsum("ij,ij->i", centers, centers)
    labels = np.empty(len(x), dtype=np.int64)
    dist = np.empty(len(x), dtype=np.float64)
    for start in range(0, len(x), chunk):
        block = x[start : start + chunk]
        d = c_sq[None, :] - 2.0 * (block @ centers.T)
        idx = np.argmin(d, axis=1)
        labels[start : start + chunk] = idx
        diff = block - centers[idx]
        dist[start : start + chunk] = np.einsum("ij,ij->i", diff, diff)
    return labels, dist


def _kmeans_pp(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((n, x.shape[1]))
    centers[0] = x[rng.integers(len(x))]
    d2 = np.einsum("ij,ij->i", x - centers[0], x - centers[0])
    for j in range(1, n):
        total = d2.sum()
        if total > 0:
            cum = np.cumsum(d2)
            idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            idx = min(idx, len(x) - 1)
        else:
            idx = int(rng.integers(len(x)))
        centers[j] = x[idx]
        diff = x - centers[j]
        np.minimum(d2, np.einsum("ij,ij->i", diff, diff), out=d2)
    return centers


def kmeans_codebook(vectors, n_bits: int, iters: int = 50, seed: int = 0) -> CoupledCodebook:
    """Lloyd's k-means with k-means++ seeding.

    An empty cluster is re-seeded with the data point currently farthest
    from its own center. ``distortion_history`` records the mean squared
    error after each assignment step and never increases.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError("k-means input must be a 2-D array of vectors")
    n = 1 << n_bits
    if len(x) < n:
        raise CapacityError(f"{len(x)} vectors cannot seed {n} clusters")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, n, rng)
    labels, dist = nearest_euclidean(x, centers)
    history = [float(dist.mean())]
    for _ in range(iters):
        counts = np.bincount(labels, minlength=n)
        sums = np.stack([np.bincount(labels, weights=x[:, j], minlength=n) for j in range(x.shape[1])], axis=1)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            # distances to the centers points are still assigned to
            diff = x - centers[labels]
            far = np.einsum("ij,ij->i", diff, diff)
            for c in empty:
                idx = int(np.argmax(far))
                centers[c] = x[idx]
                far[idx] = -1.0
        new_labels, dist = nearest_euclidean(x, centers)
        history.append(float(dist.mean()))
        if np.array_equal(new_labels, labels) and not empty.size:
            labels = new_labels
            break
        labels = new_labels
    return CoupledCodebook(entries=centers, bits=n_bits, distortion_history=history)


# --------------------------------------------------------------------------
# serialization

MAGIC = b"PCDC"
VERSION = 1
KIND_DIRECTION, KIND_MAGNITUDE, KIND_COUPLED = 0, 1, 2
_HEADER = struct.Struct("<4sHBBBBdI")


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def serialize_codebook(cb) -> bytes:
    if isinstance(cb, DirectionCodebook):
        kind, k, tau = KIND_DIRECTION, cb.k, 0.0
        payload = np.ascontiguousarray(cb.entries, dtype="<f4").tobytes()
    elif isinstance(cb, MagnitudeCodebook):
        kind, k, tau = KIND_MAGNITUDE, cb.k, cb.tau
        payload = np.concatenate([cb.entries, cb.boundaries]).astype("<f4").tobytes()
    elif isinstance(cb, CoupledCodebook):
        kind, k, tau = KIND_COUPLED, cb.k, 0.0
        payload = np.ascontiguousarray(cb.entries, dtype="<f4").tobytes()
    else:
        raise TypeError(f"not a codebook: {type(cb).__name__}")
    if k > 255 or cb.bits > 255:
        raise ValidationError("k and bits must fit in one byte")
    header = _HEADER.pack(MAGIC, VERSION, kind, k, cb.bits, 0, tau, len(cb.entries))
    return header + payload


def deserialize_codebook(data: bytes):
    if len(data) < _HEADER.size:
        raise FormatError(f"codebook truncated: {len(data)} bytes, header needs {_HEADER.size}")
    magic, version, kind, k, bits, _reserved, tau, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported codebook version {version}")
    if kind not in (KIND_DIRECTION, KIND_MAGNITUDE, KIND_COUPLED):
        raise FormatError(f"unknown codebook kind {kind}")
    if k == 0 or count != (1 << bits):
        raise FormatError(f"entry count {count} inconsistent with bits={bits}, k={k}")
    n_floats = count * k if kind != KIND_MAGNITUDE else 2 * count + 1
    body = data[_HEADER.size :]
    if len(body) != 4 * n_floats:
        raise FormatError(f"payload is {len(body)} bytes, header implies {4 * n_floats}")
    values = np.frombuffer(body, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError("codebook contains non-finite values")
    if kind == KIND_DIRECTION:
        return DirectionCodebook(entries=values.reshape(count, k), bits=bits)
    if kind == KIND_COUPLED:
        return CoupledCodebook(entries=values.reshape(count, k), bits=bits)
    entries, boundaries = values[:count], values[count:]
    if np.any(np.diff(entries) <= 0):
        raise FormatError("magnitude radii are not strictly increasing")
    return MagnitudeCodebook(entries=entries, boundaries=boundaries, bits=bits, k=k, tau=tau)


def save_codebook(cb, path) -> None:
    from .io import atomic_write_bytes

    atomic_write_bytes(Path(path), serialize_codebook(cb))


def load_codebook(path):
    return deserialize_codebook(Path(path).read_bytes())
