"""On-disk trajectory dataset format.

A dataset is one binary file plus a human-readable JSON sidecar holding
generation provenance (solver parameters, per-sample seeds, tolerances).
The binary layout is little-endian throughout:

    offset  field
    0       magic "ECFD" (4 bytes)
    4       format version, u16
    6       endianness flag, u8 (1 = little; anything else is rejected)
    7       storage precision, u8 (32 or 64)
    8       ndim, u8
    9       boundary code, u8 (0 periodic, 1 neumann, 2 wall)
    10      problem tag, 12 bytes ASCII, NUL padded
    22      split tag, 12 bytes ASCII, NUL padded
    34      channels, u16
    36      samples, u32
    40      snapshots, u32
    44      master seed, i64
    52      resolution, ndim * u32
    ...     axis lengths, ndim * f64
    ...     conservation mask, channels * u8
    ...     payload byte count, u64
    ...     payload CRC32, u32
    ...     payload

The payload is the trajectory array in C order, sample-major then
time-major then channel then row-major space, as little-endian f32 or
f64.  Writes go to a temporary file in the target directory and are
renamed into place, so readers never observe a half-written file.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .correction import ConservationMask
from .datasets import Problem, TrajectoryDataset
from .grid import Boundary, GridSpec, Precision

__all__ = ["DatasetFormatError", "write_dataset", "read_dataset", "sidecar_path"]

MAGIC = b"ECFD"
FORMAT_VERSION = 1
_LITTLE = 1

_BOUNDARY_CODES = {Boundary.PERIODIC: 0, Boundary.NEUMANN: 1, Boundary.WALL: 2}
_BOUNDARY_FROM_CODE = {v: k for k, v in _BOUNDARY_CODES.items()}

_FIXED_HEAD = struct.Struct("<4sHBBBB12s12sHIIq")


class DatasetFormatError(ValueError):
    """The bytes on disk do not form a valid dataset file."""


def sidecar_path(path: str | os.PathLike) -> Path:
    return Path(str(path) + ".json")


def _tag(text: str) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > 12:
        raise ValueError(f"tag {text!r} longer than 12 bytes")
    return raw.ljust(12, b"\0")


def _untag(raw: bytes) -> str:
    return raw.rstrip(b"\0").decode("ascii")


def write_dataset(dataset: TrajectoryDataset, path: str | os.PathLike) -> Path:
    """Serialize a dataset (binary payload + JSON sidecar), atomically.

    The stored dtype follows ``dataset.precision``; an F64 round trip is
    bit-exact, an F32 one rounds each value to the nearest float32.
    """
    path = Path(path)
    dtype = dataset.precision.dtype
    payload = np.ascontiguousarray(dataset.data, dtype=dtype).tobytes()
    grid = dataset.grid

    head = _FIXED_HEAD.pack(
        MAGIC,
        FORMAT_VERSION,
        _LITTLE,
        dtype.itemsize * 8,
        grid.ndim,
        _BOUNDARY_CODES[grid.boundary],
        _tag(dataset.problem.value),
        _tag(dataset.split),
        dataset.channels,
        dataset.n_samples,
        dataset.n_snapshots,
        dataset.master_seed,
    )
    tail = struct.pack(f"<{grid.ndim}I", *grid.resolution)
    tail += struct.pack(f"<{grid.ndim}d", *grid.lengths)
    tail += struct.pack(f"<{dataset.channels}B", *(int(f) for f in dataset.mask.flags))
    tail += struct.pack("<QI", len(payload), zlib.crc32(payload))

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(head)
            fh.write(tail)
            fh.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise

    meta = {
        "problem": dataset.problem.value,
        "split": dataset.split,
        "params": dataset.params,
        "sample_seeds": dataset.sample_seeds,
        "master_seed": dataset.master_seed,
        "frame_times": [float(t) for t in dataset.frame_times],
        "tolerances": dataset.tolerances,
        "generator_version": dataset.generator_version,
        "precision": dataset.precision.value,
    }
    side = sidecar_path(path)
    tmp_side = side.with_suffix(side.suffix + ".tmp")
    tmp_side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    os.replace(tmp_side, side)
    return path


def _read_exact(fh, n: int, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise DatasetFormatError(f"truncated file: expected {n} bytes of {what}, got {len(raw)}")
    return raw


def read_dataset(path: str | os.PathLike) -> TrajectoryDataset:
    """Parse and validate a dataset file; inverse of :func:`write_dataset`.

    Values are widened to float64 for computation regardless of the
    storage precision, which is preserved as a tag.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = _FIXED_HEAD.unpack(_read_exact(fh, _FIXED_HEAD.size, "header"))
        (magic, version, endian, bits, ndim, boundary_code,
         problem_raw, split_raw, channels, samples, snapshots, master_seed) = head
        if magic != MAGIC:
            raise DatasetFormatError(f"bad magic {magic!r}, not a dataset file")
        if version > FORMAT_VERSION:
            raise DatasetFormatError(f"unsupported format version {version} (reader supports <= {FORMAT_VERSION})")
        if endian != _LITTLE:
            raise DatasetFormatError(f"unsupported endianness flag {endian}; payload must be little-endian")
        if bits not in (32, 64):
            raise DatasetFormatError(f"unsupported precision {bits} bits")
        if boundary_code not in _BOUNDARY_FROM_CODE:
            raise DatasetFormatError(f"unknown boundary code {boundary_code}")
        if ndim not in (1, 2):
            raise DatasetFormatError(f"unsupported dimensionality {ndim}")

        resolution = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "resolution"))
        lengths = struct.unpack(f"<{ndim}d", _read_exact(fh, 8 * ndim, "lengths"))
        flags = struct.unpack(f"<{channels}B", _read_exact(fh, channels, "mask"))
        payload_nbytes, crc = struct.unpack("<QI", _read_exact(fh, 12, "payload descriptor"))

        expected = samples * snapshots * channels * int(np.prod(resolution)) * (bits // 8)
        if payload_nbytes != expected:
            raise DatasetFormatError(
                f"payload size mismatch: header declares {payload_nbytes} bytes, shape needs {expected}"
            )
        payload = _read_exact(fh, payload_nbytes, "payload")
        if fh.read(1):
            raise DatasetFormatError("trailing bytes after payload")
    if zlib.crc32(payload) != crc:
        raise DatasetFormatError("payload checksum mismatch, file is corrupt")

    side = sidecar_path(path)
    if not side.exists():
        raise DatasetFormatError(f"sidecar metadata {side.name} missing")
    meta = json.loads(side.read_text())

    dtype = np.dtype("<f4") if bits == 32 else np.dtype("<f8")
    data = np.frombuffer(payload, dtype=dtype).reshape(samples, snapshots, channels, *resolution)
    grid = GridSpec(lengths=lengths, resolution=resolution, boundary=_BOUNDARY_FROM_CODE[boundary_code])
    return TrajectoryDataset(
        problem=Problem(_untag(problem_raw)),
        grid=grid,
        data=data.astype(np.float64),
        mask=ConservationMask(tuple(bool(f) for f in flags)),
        params=meta["params"],
        sample_seeds=meta["sample_seeds"],
        master_seed=master_seed,
        split=_untag(split_raw),
        frame_times=np.asarray(meta["frame_times"], dtype=np.float64),
        precision=Precision.F32 if bits == 32 else Precision.F64,
        tolerances=meta.get("tolerances", {}),
        generator_version=meta.get("generator_version", "unknown"),
    )
