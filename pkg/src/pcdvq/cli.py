"""``pcdvq`` command line.

Subcommands: build-codebooks, quantize, dequantize, analyze, bench.
Exit codes: 0 ok, 2 invalid input, 3 bad file format, 4 codebook mismatch, 5 I/O.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis
from .codebooks import (
    DirectionCodebook,
    MagnitudeCodebook,
    MAX_SHELL,
    build_direction_codebook,
    deserialize_codebook,
    lloyd_max_magnitude_codebook,
    serialize_codebook,
)
from .errors import CodebookMismatchError, FormatError, PCDVQError, ValidationError
from .io import atomic_write_bytes, read_tensor, write_tensor
from .quantizer import (
    FLAG_DEGENERATE,
    PreparedCodebooks,
    QuantConfig,
    deserialize_quantized,
    dequantize_tensor,
    quantize_tensor,
    reconstruct_regularized,
    regularized_groups,
    serialize_quantized,
)

EXIT_OK, EXIT_VALIDATION, EXIT_FORMAT, EXIT_MISMATCH, EXIT_IO = 0, 2, 3, 4, 5


def _emit(key: str, value) -> None:
    if isinstance(value, float):
        # shortest repr round-trips exactly
        value = repr(value)
    print(f"{key}: {value}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _thread_limit():
    value = os.environ.get("PCDVQ_THREADS")
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(value)))


def _load_codebooks(dir_path, mag_path) -> tuple[DirectionCodebook, MagnitudeCodebook]:
    cd = deserialize_codebook(Path(dir_path).read_bytes())
    cr = deserialize_codebook(Path(mag_path).read_bytes())
    if not isinstance(cd, DirectionCodebook):
        raise FormatError(f"{dir_path} is not a direction codebook")
    if not isinstance(cr, MagnitudeCodebook):
        raise FormatError(f"{mag_path} is not a magnitude codebook")
    return cd, cr


def _print_breakdown(prefix: str, eb: analysis.ErrorBreakdown) -> None:
    _emit(f"{prefix}total_mse", eb.total_mse)
    _emit(f"{prefix}direction_mse", eb.direction_mse)
    _emit(f"{prefix}magnitude_mse", eb.magnitude_mse)
    _emit(f"{prefix}identity_residual", abs(eb.direction_mse + eb.magnitude_mse - eb.total_mse))


# --------------------------------------------------------------------------
# commands

def cmd_build_codebooks(args) -> int:
    cfg = QuantConfig(k=args.k, a=args.a, b=args.b, tau=args.tau, tol=args.tol, max_iter=args.max_iter)
    out_dir = Path(args.out_dir)
    dir_path = Path(args.dir_codebook or out_dir / f"direction_k{cfg.k}_a{cfg.a}_seed{args.seed}.pcdc")
    mag_path = Path(args.mag_codebook or out_dir / f"magnitude_k{cfg.k}_b{cfg.b}.pcdc")

    t0 = time.perf_counter()
    cd = build_direction_codebook(cfg.a, seed=args.seed, max_shell=args.max_shell)
    t1 = time.perf_counter()
    cr = lloyd_max_magnitude_codebook(cfg.b, k=cfg.k, tau=cfg.tau, tol=cfg.tol, max_iter=cfg.max_iter)
    t2 = time.perf_counter()

    atomic_write_bytes(dir_path, serialize_codebook(cd))
    atomic_write_bytes(mag_path, serialize_codebook(cr))

    prov = cd.provenance
    _emit("direction_codebook", dir_path)
    _emit("direction_entries", len(cd))
    _emit("pool_size", prov["pool_size"])
    _emit("shells_used", ",".join(str(s) for s in prov["shells_used"]))
    _emit("seed", prov["seed"])
    _emit("final_min_max_cos", float(prov["min_max_cos"][-1]) if len(cd) > 1 else float("nan"))
    _emit("direction_seconds", t1 - t0)
    _emit("magnitude_codebook", mag_path)
    _emit("radii", " ".join(f"{r:.6f}" for r in cr.entries))
    _emit("max_r", cr.max_r)
    _emit("tau", cr.tau)
    _emit("lloyd_iterations", cr.iterations)
    _emit("lloyd_converged", cr.converged)
    _emit("lloyd_final_movement", cr.movement)
    _emit("magnitude_seconds", t2 - t1)
    return EXIT_OK


def cmd_quantize(args) -> int:
    cd, cr = _load_codebooks(args.dir_codebook, args.mag_codebook)
    w = read_tensor(args.input, args.shape)
    pc = PreparedCodebooks(cd, cr)
    qt = quantize_tensor(w, args.seed, pc)
    blob = serialize_quantized(qt)
    atomic_write_bytes(Path(args.out), blob)

    groups, _ = regularized_groups(w, args.seed, pc.k)
    recon = reconstruct_regularized(qt, pc).reshape(-1, order="F").reshape(-1, pc.k)
    acct = analysis.bit_accounting(*qt.shape, qt.k, qt.a, qt.b)
    _emit("output", args.out)
    _emit("shape", f"{qt.shape[0]}x{qt.shape[1]}")
    _emit("k", qt.k)
    _emit("a", qt.a)
    _emit("b", qt.b)
    _emit("sign_seed", qt.sign_seed)
    _emit("vectors", qt.vector_count)
    _emit("bpw", acct["bpw"])
    _emit("bpw_with_scales", acct["bpw_with_scales"])
    _emit("file_bytes", len(blob))
    _emit("degenerate_groups", "yes" if qt.flags & FLAG_DEGENERATE else "no")
    _print_breakdown("regularized_", analysis.aggregate_breakdown(groups, recon))
    return EXIT_OK


def cmd_dequantize(args) -> int:
    cd, cr = _load_codebooks(args.dir_codebook, args.mag_codebook)
    qt = deserialize_quantized(Path(args.input).read_bytes())
    w_hat = dequantize_tensor(qt, cd, cr)
    original = read_tensor(args.compare) if args.compare else None
    if original is not None and original.shape != w_hat.shape:
        raise ValidationError(f"--compare tensor is {original.shape}, quantized tensor is {w_hat.shape}")
    write_tensor(args.out, w_hat)
    _emit("output", args.out)
    _emit("shape", f"{qt.shape[0]}x{qt.shape[1]}")
    if original is not None:
        k = qt.k
        v = original.astype(np.float64).reshape(-1, order="F").reshape(-1, k)
        v_hat = w_hat.astype(np.float64).reshape(-1, order="F").reshape(-1, k)
        _print_breakdown("", analysis.aggregate_breakdown(v, v_hat))
        _emit("max_abs_error", float(np.max(np.abs(original - w_hat))))
    return EXIT_OK


def cmd_analyze(args) -> int:
    wanted = [e.strip() for e in args.experiments.split(",") if e.strip()]
    unknown = set(wanted) - {"bits", "dims", "compare", "ablation"}
    if unknown:
        raise ValidationError(f"unknown experiments: {', '.join(sorted(unknown))}")
    if max(args.grid) > analysis.MAX_COUPLED_BITS or args.bits > analysis.MAX_COUPLED_BITS \
            or args.total_bits > analysis.MAX_COUPLED_BITS:
        raise ValidationError(f"bit counts above {analysis.MAX_COUPLED_BITS} are infeasible for k-means baselines")
    if any(d < 1 for d in args.dims):
        raise ValidationError("dimensions must be positive")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _emit("seed", args.seed)
    _emit("samples", args.samples)
    reports = {}
    if "bits" in wanted:
        reports["sensitivity_bits"] = analysis.sensitivity_bits_experiment(
            args.samples, 8, args.grid, args.seed
        )
    if "dims" in wanted:
        reports["sensitivity_dims"] = analysis.sensitivity_dimension_experiment(
            args.samples, args.dims, args.bits, args.seed, iters=args.iters
        )
    if "compare" in wanted:
        reports["decoupled_vs_coupled"] = analysis.compare_decoupled_vs_coupled(
            args.samples, 8, args.total_bits, args.seed, iters=args.iters
        )
    if "ablation" in wanted:
        reports["direction_ablation"] = analysis.direction_codebook_ablation(
            args.samples, args.grid[-1] if args.grid else 10, args.seed, iters=args.iters
        )
    for name, report in reports.items():
        atomic_write_bytes(out_dir / f"{name}.txt", report.to_table().encode())
        atomic_write_bytes(out_dir / f"{name}.kv", report.to_keyvalue().encode())
        print(report.to_table())
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = QuantConfig(a=args.a, b=args.b)
    t0 = time.perf_counter()
    if args.dir_codebook and args.mag_codebook:
        cd, cr = _load_codebooks(args.dir_codebook, args.mag_codebook)
    else:
        cd = build_direction_codebook(cfg.a, seed=args.seed)
        cr = lloyd_max_magnitude_codebook(cfg.b, k=cfg.k, tau=cfg.tau)
    t_build = time.perf_counter() - t0
    if (cd.bits, cr.bits) != (cfg.a, cfg.b):
        raise ValidationError(f"codebooks have (a, b) = {(cd.bits, cr.bits)}, flags ask for {(cfg.a, cfg.b)}")
    pc = PreparedCodebooks(cd, cr)
    w = np.random.default_rng(args.seed).standard_normal((args.rows, args.cols)).astype(np.float32)

    t0 = time.perf_counter()
    regularized_groups(w, args.seed, cfg.k)
    t_reg = time.perf_counter() - t0
    t0 = time.perf_counter()
    qt = quantize_tensor(w, args.seed, pc)
    t_q = time.perf_counter() - t0
    t0 = time.perf_counter()
    w_hat = dequantize_tensor(qt, pc)
    t_dq = time.perf_counter() - t0

    acct = analysis.bit_accounting(args.rows, args.cols, cfg.k, cfg.a, cfg.b)
    _emit("shape", f"{args.rows}x{args.cols}")
    _emit("seed", args.seed)
    _emit("codebook_seconds", t_build)
    _emit("regularize_seconds", t_reg)
    _emit("quantize_seconds", t_q)
    _emit("dequantize_seconds", t_dq)
    for key, value in acct.items():
        _emit(key, value)
    _emit("weight_mse", float(np.mean((w.astype(np.float64) - w_hat) ** 2)))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcdvq", description="Polar-decoupled vector quantization of weight matrices.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-codebooks", help="build direction (greedy E8) and magnitude (Lloyd-Max) codebooks")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--a", type=int, default=14, help="direction bits")
    p.add_argument("--b", type=int, default=2, help="magnitude bits")
    p.add_argument("--tau", type=float, default=0.9999)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-shell", type=int, default=MAX_SHELL, help="largest E8 squared norm to enumerate")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--dir-codebook")
    p.add_argument("--mag-codebook")
    p.set_defaults(func=cmd_build_codebooks)

    p = sub.add_parser("quantize", help="quantize a raw float32 tensor")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--shape", help="sidecar file (default: <in>.shape)")
    p.add_argument("--dir-codebook", required=True)
    p.add_argument("--mag-codebook", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="sign seed of the randomized Hadamard transform")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dequantize", help="reconstruct a raw float32 tensor")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--dir-codebook", required=True)
    p.add_argument("--mag-codebook", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--compare", help="original tensor to report errors against")
    p.set_defaults(func=cmd_dequantize)

    p = sub.add_parser("analyze", help="run the synthetic sensitivity studies")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--grid", type=_int_list, default=[4, 6, 8, 10], help="bit grid for the bits study")
    p.add_argument("--dims", type=_int_list, default=[2, 4, 8, 16])
    p.add_argument("--bits", type=int, default=10, help="coupled k-means bits for the dimension study")
    p.add_argument("--total-bits", type=int, default=12)
    p.add_argument("--iters", type=int, default=25, help="k-means iterations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--experiments", default="bits,dims,compare")
    p.add_argument("--out-dir", default="reports")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="time the pipeline on a synthetic Gaussian tensor")
    p.add_argument("--rows", type=int, default=4096)
    p.add_argument("--cols", type=int, default=4096)
    p.add_argument("--a", type=int, default=14)
    p.add_argument("--b", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dir-codebook")
    p.add_argument("--mag-codebook")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except CodebookMismatchError as exc:
        print(f"codebook mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PCDVQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
