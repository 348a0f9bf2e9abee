"""On-disk dataset archives.

An archive is a directory holding ``manifest.txt`` (``key = value`` lines)
and one binary file per realization. Each binary file is::

    magic     8 bytes   b"PSNAPSH1"
    n_t, n_x  2 x uint64
    bounds    4 x float64   x_min, x_max, t_min, t_max
    n_params  uint32
    params    n_params x (uint16 name length, utf-8 name, float64 value)
    field     n_t * n_x float64, row-major

All numbers are little-endian, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import FieldSnapshot, Grid1D

FORMAT_VERSION = 1
MAGIC = b"PSNAPSH1"
MANIFEST = "manifest.txt"


class ArchiveError(ValueError):
    """Malformed, truncated or mismatched archive."""


def encode_snapshot(snap: FieldSnapshot) -> bytes:
    g = snap.grid
    parts = [MAGIC, struct.pack("<QQ", g.n_t, g.n_x),
             struct.pack("<4d", g.x_min, g.x_max, g.t_min, g.t_max),
             struct.pack("<I", len(snap.params))]
    for name, value in snap.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<d", float(value)))
    parts.append(np.ascontiguousarray(snap.u, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise ArchiveError(f"{self.source}: truncated at byte offset {len(self.data)} while "
                               f"reading {what} (needed bytes {self.pos}..{end})")
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_snapshot(data: bytes, source: str = "<bytes>") -> FieldSnapshot:
    r = _Reader(data, source)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise ArchiveError(f"{source}: not a snapshot file (bad magic at byte offset 0)")
    n_t, n_x = r.unpack("<QQ", "shape")
    x_min, x_max, t_min, t_max = r.unpack("<4d", "grid bounds")
    (n_params,) = r.unpack("<I", "parameter count")
    params = {}
    for i in range(n_params):
        (length,) = r.unpack("<H", f"parameter {i} name length")
        name = r.take(length, f"parameter {i} name").decode("utf-8")
        (params[name],) = r.unpack("<d", f"parameter {name!r}")
    body = r.take(8 * n_t * n_x, "field values")
    if r.pos != len(data):
        raise ArchiveError(f"{source}: {len(data) - r.pos} trailing bytes after offset {r.pos}")
    u = np.frombuffer(body, dtype="<f8").reshape(n_t, n_x).astype(float)
    return FieldSnapshot(Grid1D(x_min, x_max, int(n_x), t_min, t_max, int(n_t)), u, params)


def _file_name(i: int) -> str:
    return f"realization_{i:05d}.bin"


def save_dataset(path, snapshots: Sequence[FieldSnapshot], case: dict | None = None,
                 seed: int | None = None) -> Path:
    """Write an archive directory; existing realization files are replaced."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for old in path.glob("realization_*.bin"):
        old.unlink()
    for i, snap in enumerate(snapshots):
        (path / _file_name(i)).write_bytes(encode_snapshot(snap))
    lines = [f"format_version = {FORMAT_VERSION}",
             f"n_realizations = {len(snapshots)}",
             f"seed = {'' if seed is None else int(seed)}",
             f"case = {json.dumps(case or {}, sort_keys=True)}"]
    (path / MANIFEST).write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    f = path / MANIFEST
    if not f.exists():
        raise ArchiveError(f"{path}: no {MANIFEST}")
    out = {}
    for n, line in enumerate(f.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise ArchiveError(f"{f}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    for key in ("format_version", "n_realizations"):
        if key not in out:
            raise ArchiveError(f"{f}: missing {key}")
    out["format_version"] = int(out["format_version"])
    out["n_realizations"] = int(out["n_realizations"])
    out["seed"] = int(out["seed"]) if out.get("seed") else None
    out["case"] = json.loads(out.get("case") or "{}")
    return out


def load_dataset(path) -> tuple[list[FieldSnapshot], dict]:
    """Snapshots and manifest of an archive written by :func:`save_dataset`."""
    path = Path(path)
    manifest = read_manifest(path)
    if manifest["format_version"] != FORMAT_VERSION:
        raise ArchiveError(f"{path}: format version {manifest['format_version']}, "
                           f"this reader handles {FORMAT_VERSION}")
    files = sorted(path.glob("realization_*.bin"))
    if len(files) != manifest["n_realizations"]:
        raise ArchiveError(f"{path}: manifest lists {manifest['n_realizations']} realizations, "
                           f"found {len(files)} files")
    expected = [path / _file_name(i) for i in range(len(files))]
    if files != expected:
        raise ArchiveError(f"{path}: realization files are not numbered 0..{len(files) - 1}")
    snaps = [decode_snapshot(f.read_bytes(), str(f)) for f in files]
    return snaps, manifest
