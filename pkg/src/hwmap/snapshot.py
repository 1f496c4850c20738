"""Binary field snapshots.

Layout (all little-endian)::

    magic      6 bytes   b"HWMAP1"
    bom        uint16    0xFEFF
    version    uint16
    n          uint16
    flags      uint16    bit 0: u_t planes present
    eta        int16
    sizes      n x uint32
    L          float64
    t          float64
    payload    uint64    byte count of what follows
    planes     float64   u components 0..2, then u_t components 0..2 if flagged,
                         each plane row-major over the grid

A trajectory directory holds ``frame_%06d.hwm`` files plus ``trajectory.json``.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    SnapshotFormatError,
    SnapshotLayoutError,
    SnapshotTruncatedError,
)
from .geometry import TargetSpec
from .spectral import Grid
from .trajectory import Trajectory

MAGIC = b"HWMAP1"
VERSION = 1
BOM = 0xFEFF
FLAG_UT = 1
_FIXED = struct.Struct("<6sHHHHh")
_TAIL = struct.Struct("<ddQ")
MANIFEST = "trajectory.json"


class MissingRatesError(ConfigurationError):
    """Snapshots lack the u_t planes an operation needs."""

    code = "snapshot-missing-ut"


@dataclass(frozen=True)
class SnapshotHeader:
    n: int
    sizes: tuple
    length: float
    eta: int
    time: float
    has_ut: bool
    version: int = VERSION

    @property
    def points(self):
        return int(np.prod(self.sizes))

    @property
    def payload_bytes(self):
        return 8 * 3 * self.points * (2 if self.has_ut else 1)

    def pack(self):
        flags = FLAG_UT if self.has_ut else 0
        head = _FIXED.pack(MAGIC, BOM, self.version, self.n, flags, self.eta)
        sizes = struct.pack(f"<{self.n}I", *self.sizes)
        return head + sizes + _TAIL.pack(self.length, self.time, self.payload_bytes)


def write_snapshot(path, u, grid: Grid, eta, time=0.0, u_t=None):
    u = np.asarray(u, dtype="<f8")
    if u.shape != (3,) + grid.shape:
        raise SnapshotLayoutError(f"u has shape {u.shape}, expected {(3,) + grid.shape}")
    if u_t is not None:
        u_t = np.asarray(u_t, dtype="<f8")
        if u_t.shape != u.shape:
            raise SnapshotLayoutError("u_t shape differs from u")
    header = SnapshotHeader(grid.n, grid.shape, float(grid.length), int(eta), float(time), u_t is not None)
    payload = np.ascontiguousarray(u).tobytes()
    if u_t is not None:
        payload += np.ascontiguousarray(u_t).tobytes()
    with open(path, "wb") as fh:
        fh.write(header.pack())
        fh.write(payload)
    return header


def read_header(buf):
    if len(buf) < _FIXED.size:
        if not MAGIC.startswith(bytes(buf[: len(MAGIC)])):
            raise SnapshotFormatError("bad magic")
        raise SnapshotTruncatedError("header truncated")
    magic, bom, version, n, flags, eta = _FIXED.unpack_from(buf, 0)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if bom != BOM:
        raise SnapshotFormatError("byte-order marker mismatch")
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    if n not in (1, 2, 3):
        raise SnapshotLayoutError(f"invalid dimension {n}")
    if flags & ~FLAG_UT:
        raise SnapshotLayoutError(f"unknown flag bits {flags:#x}")
    if eta not in (1, -1):
        raise SnapshotLayoutError(f"invalid eta {eta}")
    off = _FIXED.size
    need = off + 4 * n + _TAIL.size
    if len(buf) < need:
        raise SnapshotTruncatedError("header truncated")
    sizes = struct.unpack_from(f"<{n}I", buf, off)
    off += 4 * n
    length, time, payload = _TAIL.unpack_from(buf, off)
    header = SnapshotHeader(n, tuple(sizes), length, eta, time, bool(flags & FLAG_UT), version)
    if payload != header.payload_bytes:
        raise SnapshotLayoutError(
            f"payload length {payload} inconsistent with sizes/flags ({header.payload_bytes})"
        )
    return header, need


def read_snapshot(path):
    """Return (header, u, u_t or None). Nothing is returned on any error."""
    with open(path, "rb") as fh:
        buf = fh.read()
    header, off = read_header(buf)
    body = len(buf) - off
    if body < header.payload_bytes:
        raise SnapshotTruncatedError(f"payload has {body} of {header.payload_bytes} bytes")
    if body > header.payload_bytes:
        raise SnapshotLayoutError("trailing bytes after payload")
    shape = (3,) + header.sizes
    count = 3 * header.points
    u = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).astype(float)
    u_t = None
    if header.has_ut:
        u_t = np.frombuffer(buf, dtype="<f8", count=count, offset=off + 8 * count).reshape(shape).astype(float)
    return header, u, u_t


def frame_name(i):
    return f"frame_{i:06d}.hwm"


def write_trajectory(directory, traj: Trajectory, every=1, extra=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    eta = traj.target.eta if traj.target is not None else 1
    frames = []
    for i in range(0, traj.nt, every):
        name = frame_name(i)
        write_snapshot(d / name, traj.u[i], traj.grid, eta, float(traj.times[i]),
                       None if traj.u_t is None else traj.u_t[i])
        frames.append(name)
    manifest = {
        "schema": 1,
        "n": traj.grid.n,
        "size": traj.grid.size,
        "length": traj.grid.length,
        "target": None if traj.target is None else traj.target.kind,
        "base_point": None if traj.target is None else list(traj.target.base_point),
        "dt": traj.dt * every,
        "t0": traj.t0,
        "frames": frames,
    }
    if extra:
        manifest.update(extra)
    with open(d / MANIFEST, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return d / MANIFEST


def read_trajectory(directory, require_ut=False):
    d = Path(directory)
    mpath = d / MANIFEST
    if not mpath.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {d}")
    with open(mpath) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SnapshotFormatError(f"unreadable manifest: {exc}") from exc
    grid = Grid(manifest["n"], manifest["size"], manifest["length"])
    target = None
    if manifest.get("target"):
        target = TargetSpec(manifest["target"], tuple(manifest["base_point"]))
    us, uts = [], []
    for name in manifest["frames"]:
        header, u, u_t = read_snapshot(d / name)
        if header.sizes != grid.shape or header.n != grid.n:
            raise SnapshotLayoutError(f"{name} does not match the manifest grid")
        if target is not None and header.eta != target.eta:
            raise SnapshotLayoutError(f"{name} eta differs from the manifest target")
        us.append(u)
        uts.append(u_t)
    have = [x is not None for x in uts]
    if require_ut and not all(have):
        raise MissingRatesError("trajectory snapshots carry no u_t planes")
    u_t = np.stack(uts) if all(have) else None
    return Trajectory(grid, manifest["dt"], np.stack(us), u_t, target, manifest.get("t0", 0.0))


def atomic_write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
