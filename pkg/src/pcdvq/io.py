"""File plumbing: raw float32 tensors with a ``key: value`` sidecar, atomic writes."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = [
    "atomic_write_bytes",
    "sidecar_path",
    "read_sidecar",
    "write_sidecar",
    "read_tensor",
    "write_tensor",
]


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".shape")


def read_sidecar(path) -> dict[str, str]:
    fields = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key: value', got {line!r}")
        key, value = line.split(":", 1)
        fields[key.strip()] = value.strip()
    return fields


def write_sidecar(path, rows: int, cols: int) -> None:
    text = f"rows: {rows}\ncols: {cols}\ndtype: float32\nbyteorder: little\n"
    atomic_write_bytes(sidecar_path(path), text.encode())


def read_tensor(path, sidecar=None) -> np.ndarray:
    """Load a raw little-endian float32 matrix described by its sidecar.

    The sidecar defaults to ``<path>.shape`` and must give ``rows`` and ``cols``.
    """
    path = Path(path)
    meta = read_sidecar(sidecar if sidecar is not None else sidecar_path(path))
    try:
        rows, cols = int(meta["rows"]), int(meta["cols"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"sidecar for {path} needs integer 'rows' and 'cols'") from exc
    if meta.get("dtype", "float32") != "float32":
        raise FormatError(f"only float32 tensors are supported, sidecar says {meta['dtype']}")
    data = path.read_bytes()
    if len(data) != 4 * rows * cols:
        raise FormatError(f"{path} holds {len(data)} bytes, expected {4 * rows * cols} for {rows}x{cols}")
    return np.frombuffer(data, dtype="<f4").reshape(rows, cols).astype(np.float32)


def write_tensor(path, w: np.ndarray) -> None:
    w = np.ascontiguousarray(w, dtype="<f4")
    atomic_write_bytes(Path(path), w.tobytes())
    write_sidecar(path, *w.shape)
