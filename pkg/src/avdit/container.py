"""Versioned binary tensor container (``.avdt``).

Layout, all integers little-endian::

    b"AVDT" | version:u32 | count:u32
    count x ( name_len:u32 | name:utf-8 | ndim:u32 | dims:u64*ndim | dtype:u8 | payload )
    sha256 of everything above (32 bytes)
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"AVDT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_TAGS = {dt: tag for tag, dt in _DTYPES.items()}


class ContainerError(ValueError):
    pass


class VersionMismatch(ContainerError):
    def __init__(self, found: int, expected: int = VERSION):
        super().__init__(f"container version {found} is not supported (this build reads version {expected})")
        self.found = found
        self.expected = expected


def encode(tensors: dict[str, np.ndarray], version: int = VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<II", version, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if dt not in _TAGS:
            raise ContainerError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(struct.pack("<B", _TAGS[dt]))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 44 or blob[:4] != MAGIC:
        raise ContainerError("not an AVDT container")
    body, digest = blob[:-32], blob[-32:]
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise VersionMismatch(version)
    if hashlib.sha256(body).digest() != digest:
        raise ContainerError("checksum mismatch: container is corrupted")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off:off + n].decode("utf-8")
        off += n
        (ndim,) = struct.unpack_from("<I", body, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}Q", body, off)
        off += 8 * ndim
        (tag,) = struct.unpack_from("<B", body, off)
        off += 1
        if tag not in _DTYPES:
            raise ContainerError(f"{name}: unknown dtype tag {tag}")
        dt = _DTYPES[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        out[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(dims).copy()
        off += nbytes
    if off != len(body):
        raise ContainerError("trailing bytes after the last entry")
    return out


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    atomic_write(path, encode(tensors))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def checksum(path: str | Path) -> str:
    return Path(path).read_bytes()[-32:].hex()


def text_entry(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def entry_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")
