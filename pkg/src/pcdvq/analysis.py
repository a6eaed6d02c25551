"""Error decomposition and the synthetic sensitivity studies.

Squared reconstruction error of a vector splits exactly into a magnitude
part ``(|v| - |v_hat|)^2`` and a direction part ``2 |v| |v_hat| (1 - cos)``.
The experiments below measure both parts on i.i.d. Gaussian data, where
regularized weights live.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codebooks import (
    DirectionCodebook,
    build_direction_codebook,
    kmeans_codebook,
    lloyd_max_magnitude_codebook,
    nearest_euclidean,
)
from .errors import DimensionError, ValidationError
from .quantizer import PreparedCodebooks, quantize_groups

__all__ = [
    "ErrorBreakdown",
    "Report",
    "SensitivityReport",
    "mse_decompose",
    "decompose_rows",
    "aggregate_breakdown",
    "direction_only_mse",
    "magnitude_only_mse",
    "sensitivity_bits_experiment",
    "sensitivity_dimension_experiment",
    "compare_decoupled_vs_coupled",
    "direction_codebook_ablation",
    "codebook_coherence",
    "bit_accounting",
    "MAX_COUPLED_BITS",
]

MAX_COUPLED_BITS = 12


@dataclass(frozen=True)
class ErrorBreakdown:
    total_mse: float
    direction_mse: float
    magnitude_mse: float

    @property
    def direction_share(self) -> float:
        return self.direction_mse / self.total_mse if self.total_mse > 0 else 0.0


def decompose_rows(v, v_hat) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row ``(total, direction, magnitude)`` squared errors.

    The direction term is evaluated as ``|v| |v_hat| * |u - u_hat|^2`` on the
    unit vectors, which equals ``2 |v| |v_hat| (1 - cos)`` without the
    cancellation in ``1 - cos`` for nearly collinear pairs.
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    v_hat = np.atleast_2d(np.asarray(v_hat, dtype=np.float64))
    if v.shape != v_hat.shape:
        raise DimensionError(f"shape mismatch: {v.shape} vs {v_hat.shape}")
    n = np.sqrt(np.einsum("ij,ij->i", v, v))
    n_hat = np.sqrt(np.einsum("ij,ij->i", v_hat, v_hat))
    both = (n > 0) & (n_hat > 0)
    u = np.divide(v, n[:, None], out=np.zeros_like(v), where=both[:, None])
    u_hat = np.divide(v_hat, n_hat[:, None], out=np.zeros_like(v_hat), where=both[:, None])
    du = u - u_hat
    direction = np.where(both, n * n_hat * np.einsum("ij,ij->i", du, du), 0.0)
    magnitude = (n - n_hat) ** 2
    diff = v - v_hat
    total = np.einsum("ij,ij->i", diff, diff)
    return total, direction, magnitude


def mse_decompose(v, v_hat) -> ErrorBreakdown:
    v = np.asarray(v, dtype=np.float64)
    v_hat = np.asarray(v_hat, dtype=np.float64)
    if v.ndim != 1 or v.shape != v_hat.shape:
        raise DimensionError(f"expected two vectors of equal length, got {v.shape} and {v_hat.shape}")
    t, d, m = decompose_rows(v, v_hat)
    return ErrorBreakdown(float(t[0]), float(d[0]), float(m[0]))


def aggregate_breakdown(v, v_hat) -> ErrorBreakdown:
    """Mean per-vector breakdown over the rows of ``v``."""
    t, d, m = decompose_rows(v, v_hat)
    return ErrorBreakdown(float(np.mean(t)), float(np.mean(d)), float(np.mean(m)))


# --------------------------------------------------------------------------
# reports

@dataclass
class Report:
    """A titled table of equal-length numeric columns plus scalar metadata."""

    title: str
    columns: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(np.atleast_1d(c)) for c in self.columns.values()}
        if len(lengths) > 1:
            raise ValidationError(f"report columns differ in length: {sorted(lengths)}")
        self.columns = {k: np.atleast_1d(np.asarray(v)) for k, v in self.columns.items()}

    def __getitem__(self, key: str) -> np.ndarray:
        return self.columns[key]

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @staticmethod
    def _fmt(x) -> str:
        if isinstance(x, (int, np.integer)):
            return str(int(x))
        if isinstance(x, (float, np.floating)):
            return f"{float(x):.6g}"
        return str(x)

    def to_table(self) -> str:
        names = list(self.columns)
        cells = [[self._fmt(x) for x in self.columns[n]] for n in names]
        widths = [max([len(n)] + [len(c) for c in col]) for n, col in zip(names, cells)]
        lines = [f"# {self.title}"]
        lines += [f"# {k}: {self._fmt(v)}" for k, v in self.meta.items()]
        lines.append("  ".join(n.rjust(w) for n, w in zip(names, widths)))
        for row in zip(*cells):
            lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
        return "\n".join(lines) + "\n"

    def to_keyvalue(self) -> str:
        lines = [f"title: {self.title}"]
        lines += [f"{k}: {self._fmt(v)}" for k, v in self.meta.items()]
        lines += [f"{k}: {' '.join(self._fmt(x) for x in col)}" for k, col in self.columns.items()]
        return "\n".join(lines) + "\n"


SensitivityReport = Report


# --------------------------------------------------------------------------
# experiments

def _gaussian(n: int, k: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, k))


def direction_only_mse(v: np.ndarray, directions: np.ndarray) -> float:
    """Keep every norm, snap every direction to the max-cosine codeword."""
    norms = np.linalg.norm(v, axis=1)
    d = np.asarray(directions, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    idx = np.empty(len(v), dtype=np.int64)
    for start in range(0, len(v), 256):
        idx[start : start + 256] = np.argmax(v[start : start + 256] @ d.T, axis=1)
    v_hat = d[idx] * norms[:, None]
    diff = v - v_hat
    return float(np.mean(np.einsum("ij,ij->i", diff, diff)))


def magnitude_only_mse(v: np.ndarray, radii: np.ndarray) -> float:
    """Keep every direction, snap every norm to the nearest radius."""
    norms = np.linalg.norm(v, axis=1)
    radii = np.asarray(radii, dtype=np.float64)
    r_hat = radii[np.argmin(np.abs(norms[:, None] - radii[None, :]), axis=1)]
    # the error is purely radial
    return float(np.mean((norms - r_hat) ** 2))


def sensitivity_bits_experiment(
    n_samples: int = 100_000,
    k: int = 8,
    bit_grid=(4, 6, 8, 10),
    seed: int = 0,
    tau: float = 0.9999,
    direction_codebook: DirectionCodebook | None = None,
) -> Report:
    """Quantize only directions, or only magnitudes, with ``2**x`` codewords.

    Direction codebooks for all ``x`` are prefixes of one greedy E8 run, so
    a larger codebook always contains the smaller one.
    """
    bit_grid = sorted(int(x) for x in bit_grid)
    if not bit_grid or bit_grid[0] < 1:
        raise ValidationError("bit grid must contain positive bit counts")
    if bit_grid[-1] > MAX_COUPLED_BITS:
        raise ValidationError(f"bit grid exceeds the desk-scale limit of {MAX_COUPLED_BITS} bits")
    if k != 8:
        raise ValidationError("direction codebooks are E8-based and need k = 8")
    v = _gaussian(n_samples, k, seed)
    full = direction_codebook or build_direction_codebook(bit_grid[-1], seed=seed)
    if full.bits < bit_grid[-1]:
        raise ValidationError(f"direction codebook has {full.bits} bits, grid needs {bit_grid[-1]}")
    dir_mse, mag_mse = [], []
    for x in bit_grid:
        dir_mse.append(direction_only_mse(v, full.prefix(x).entries))
        cr = lloyd_max_magnitude_codebook(x, k=k, tau=tau)
        mag_mse.append(magnitude_only_mse(v, cr.entries))
    return Report(
        title="direction-only vs magnitude-only quantization",
        columns={
            "bits": np.array(bit_grid),
            "direction_only_mse": np.array(dir_mse),
            "magnitude_only_mse": np.array(mag_mse),
        },
        meta={"k": k, "samples": n_samples, "seed": seed},
    )


def sensitivity_dimension_experiment(
    n_samples: int = 100_000,
    dim_grid=(2, 4, 8, 16),
    bits: int = 10,
    seed: int = 0,
    iters: int = 25,
) -> Report:
    """Coupled k-means VQ at a fixed index width, error split per dimension."""
    if bits > MAX_COUPLED_BITS:
        raise ValidationError(f"coupled k-means limited to {MAX_COUPLED_BITS} bits at desk scale")
    rows = {"k": [], "direction_mse": [], "magnitude_mse": [], "total_mse": []}
    for k in dim_grid:
        v = _gaussian(n_samples, int(k), seed)
        cb = kmeans_codebook(v, bits, iters=iters, seed=seed)
        labels, _ = nearest_euclidean(v, cb.entries)
        eb = aggregate_breakdown(v, cb.entries[labels])
        rows["k"].append(int(k))
        rows["direction_mse"].append(eb.direction_mse)
        rows["magnitude_mse"].append(eb.magnitude_mse)
        rows["total_mse"].append(eb.total_mse)
    return Report(
        title="coupled k-means error split by vector dimension",
        columns={name: np.array(col) for name, col in rows.items()},
        meta={"bits": bits, "samples": n_samples, "seed": seed},
    )


def compare_decoupled_vs_coupled(
    n_samples: int = 100_000,
    k: int = 8,
    total_bits: int = 12,
    seed: int = 0,
    b: int = 2,
    iters: int = 25,
    tau: float = 0.9999,
) -> Report:
    """Same Gaussian sample through the decoupled quantizer (a = total - b)
    and through coupled k-means with ``total_bits`` bits."""
    if total_bits > MAX_COUPLED_BITS:
        raise ValidationError(f"coupled k-means limited to {MAX_COUPLED_BITS} bits at desk scale")
    a = total_bits - b
    if a < 1:
        raise ValidationError(f"total_bits={total_bits} leaves no direction bits with b={b}")
    v = _gaussian(n_samples, k, seed)
    pc = PreparedCodebooks(build_direction_codebook(a, seed=seed), lloyd_max_magnitude_codebook(b, k=k, tau=tau))
    d, m, _ = quantize_groups(v, pc)
    decoupled = aggregate_breakdown(v, pc.directions[d] * pc.radii[m][:, None])
    cb = kmeans_codebook(v, total_bits, iters=iters, seed=seed)
    labels, _ = nearest_euclidean(v, cb.entries)
    coupled = aggregate_breakdown(v, cb.entries[labels])
    return Report(
        title="decoupled polar VQ vs coupled k-means at equal index bits",
        columns={
            "scheme": np.array(["decoupled", "coupled"]),
            "direction_mse": np.array([decoupled.direction_mse, coupled.direction_mse]),
            "magnitude_mse": np.array([decoupled.magnitude_mse, coupled.magnitude_mse]),
            "total_mse": np.array([decoupled.total_mse, coupled.total_mse]),
        },
        meta={"k": k, "total_bits": total_bits, "a": a, "b": b, "samples": n_samples, "seed": seed},
    )


def direction_codebook_ablation(
    n_samples: int = 100_000, a: int = 10, seed: int = 0, iters: int = 25
) -> Report:
    """Direction-only MSE of greedy-E8, random Gaussian and k-means direction codebooks.

    The k-means codebook is trained on a separate sample of unit directions
    and its centers renormalized; the random codebook is ``2**a`` normalized
    Gaussian draws.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n_samples, 8))
    random_dirs = rng.standard_normal((1 << a, 8))
    train = rng.standard_normal((n_samples, 8))
    train /= np.linalg.norm(train, axis=1, keepdims=True)
    km = kmeans_codebook(train, a, iters=iters, seed=seed).entries
    greedy = build_direction_codebook(a, seed=seed).entries
    return Report(
        title="direction codebook ablation",
        columns={
            "codebook": np.array(["greedy_e8", "random_gaussian", "kmeans"]),
            "direction_mse": np.array(
                [direction_only_mse(v, greedy), direction_only_mse(v, random_dirs), direction_only_mse(v, km)]
            ),
        },
        meta={"a": a, "samples": n_samples, "seed": seed},
    )


def codebook_coherence(cd, chunk: int = 2048) -> dict[str, float]:
    """Exact pairwise statistics over distinct entries of a direction codebook."""
    entries = cd.entries if isinstance(cd, DirectionCodebook) else cd
    d = np.asarray(entries, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    n = len(d)
    if n < 2:
        raise ValidationError("coherence needs at least two codewords")
    nearest = np.empty(n)
    for start in range(0, n, chunk):
        g = d[start : start + chunk] @ d.T
        rows = np.arange(g.shape[0])
        g[rows, start + rows] = -np.inf
        nearest[start : start + chunk] = g.max(axis=1)
    nearest = np.clip(nearest, -1.0, 1.0)
    max_cos = float(nearest.max())
    return {
        "max_pairwise_cosine": max_cos,
        "min_pairwise_angle": float(math.acos(max_cos)),
        "mean_nearest_angle": float(np.mean(np.arccos(nearest))),
    }


def bit_accounting(p: int, q: int, k: int, a: int, b: int, scale_bits: int = 16) -> dict[str, float]:
    """Bits per weight and compression ratios.

    ``bpw`` is the index cost ``(a + b) / k``; ``bpw_with_scales`` adds one
    ``scale_bits`` scale per column.
    """
    bpw = (a + b) / k
    bpw_scales = bpw + scale_bits * q / (p * q)
    return {
        "bpw": bpw,
        "bpw_with_scales": bpw_scales,
        "ratio_vs_fp16": 16.0 / bpw,
        "ratio_vs_fp32": 32.0 / bpw,
        "ratio_vs_fp16_with_scales": 16.0 / bpw_scales,
        "memory_reduction_vs_fp16": 1.0 - bpw / 16.0,
    }
