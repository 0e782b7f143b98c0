"""Binary and image file formats.

``raypath`` (magic ``RAYP``), little-endian::

    header: magic[4] version:u32 count:u64
    record: ray_index:u64 tx:u16 rx:u16 base_length:f64 amplitude:f64 n_hits:u16
            n_hits * (mesh_id:u32 triangle:u32 u:f64 v:f64)

``cube`` (magic ``RCUB``), little-endian::

    header: magic[4] version:u32 dims:u32[3] (channels, chirps, samples) dtype:u32
    body:   row-major interleaved float32 (re, im) when dtype == 1

PNG images put positive Doppler at the top and range increasing to the right.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from typing import Tuple, Union

import numpy as np
from PIL import Image

from .tracer import PathTable

RAYP_MAGIC = b"RAYP"
RCUB_MAGIC = b"RCUB"
FORMAT_VERSION = 1
DTYPE_COMPLEX64 = 1

_RAYP_HEADER = struct.Struct("<4sIQ")
_RCUB_HEADER = struct.Struct("<4sIIIII")
_RECORD_HEAD = struct.Struct("<QHHddH")
_HIT = struct.Struct("<IIdd")

PathLike = Union[str, os.PathLike]


class FormatError(ValueError):
    pass


def _record_dtype(n_hits: int) -> np.dtype:
    fields = [("ray", "<u8"), ("tx", "<u2"), ("rx", "<u2"), ("length", "<f8"),
              ("amplitude", "<f8"), ("n_hits", "<u2")]
    if n_hits:
        hit = np.dtype([("mesh", "<u4"), ("tri", "<u4"), ("u", "<f8"), ("v", "<f8")])
        fields.append(("hits", hit, (n_hits,)))
    return np.dtype(fields)


def encode_raypath(paths: PathTable) -> bytes:
    n = len(paths)
    header = _RAYP_HEADER.pack(RAYP_MAGIC, FORMAT_VERSION, n)
    if n == 0:
        return header
    if np.any(paths.n_hits > 0xFFFF) or np.any(paths.tx_index > 0xFFFF) or np.any(paths.rx_index > 0xFFFF):
        raise FormatError("hit count or antenna index does not fit in u16")
    sizes = _RECORD_HEAD.size + _HIT.size * paths.n_hits
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    body = np.zeros(int(sizes.sum()), dtype=np.uint8)
    for k in np.unique(paths.n_hits):
        rows = np.flatnonzero(paths.n_hits == k)
        rec = np.zeros(len(rows), dtype=_record_dtype(int(k)))
        rec["ray"] = paths.ray_index[rows]
        rec["tx"] = paths.tx_index[rows]
        rec["rx"] = paths.rx_index[rows]
        rec["length"] = paths.base_length[rows]
        rec["amplitude"] = paths.amplitude[rows]
        rec["n_hits"] = k
        if k:
            rec["hits"]["mesh"] = paths.hit_mesh[rows, :k]
            rec["hits"]["tri"] = paths.hit_tri[rows, :k]
            rec["hits"]["u"] = paths.hit_u[rows, :k]
            rec["hits"]["v"] = paths.hit_v[rows, :k]
        raw = rec.view(np.uint8).reshape(len(rows), -1)
        body[offsets[rows][:, None] + np.arange(raw.shape[1])[None, :]] = raw
    return header + body.tobytes()


def decode_raypath(data: bytes) -> PathTable:
    if len(data) < _RAYP_HEADER.size:
        raise FormatError("truncated raypath header")
    magic, version, count = _RAYP_HEADER.unpack_from(data, 0)
    if magic != RAYP_MAGIC:
        raise FormatError(f"bad raypath magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported raypath version {version}")
    pos = _RAYP_HEADER.size
    heads = []
    hit_rows = []
    try:
        for _ in range(count):
            head = _RECORD_HEAD.unpack_from(data, pos)
            pos += _RECORD_HEAD.size
            k = head[5]
            hits = np.frombuffer(data, dtype=_record_dtype(1)["hits"].base, count=k, offset=pos)
            pos += _HIT.size * k
            heads.append(head)
            hit_rows.append(hits)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated raypath body: {exc}") from None
    if pos != len(data):
        raise FormatError("trailing bytes after raypath records")
    if count == 0:
        return PathTable.empty()
    width = max(1, max(h[5] for h in heads))
    mesh = np.full((count, width), -1, np.int64)
    tri = np.full((count, width), -1, np.int64)
    u = np.zeros((count, width))
    v = np.zeros((count, width))
    for i, hits in enumerate(hit_rows):
        k = len(hits)
        mesh[i, :k] = hits["mesh"]
        tri[i, :k] = hits["tri"]
        u[i, :k] = hits["u"]
        v[i, :k] = hits["v"]
    cols = list(zip(*heads))
    return PathTable(np.array(cols[0], dtype=np.uint64), cols[5], mesh, tri, u, v,
                     cols[3], cols[4], cols[1], cols[2])


def write_raypath(path: PathLike, paths: PathTable) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_raypath(paths))


def read_raypath(path: PathLike) -> PathTable:
    with open(path, "rb") as fh:
        return decode_raypath(fh.read())


def encode_cube(samples: np.ndarray) -> bytes:
    """``samples`` is ``(chirps, samples)`` or ``(channels, chirps, samples)``."""
    arr = np.asarray(samples)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise FormatError(f"cube must be 2-D or 3-D, got shape {arr.shape}")
    header = _RCUB_HEADER.pack(RCUB_MAGIC, FORMAT_VERSION, *arr.shape, DTYPE_COMPLEX64)
    return header + np.ascontiguousarray(arr, dtype="<c8").tobytes()


def decode_cube(data: bytes) -> np.ndarray:
    if len(data) < _RCUB_HEADER.size:
        raise FormatError("truncated cube header")
    magic, version, d0, d1, d2, tag = _RCUB_HEADER.unpack_from(data, 0)
    if magic != RCUB_MAGIC:
        raise FormatError(f"bad cube magic {magic!r}")
    if version != FORMAT_VERSION or tag != DTYPE_COMPLEX64:
        raise FormatError(f"unsupported cube version {version} / dtype {tag}")
    expected = _RCUB_HEADER.size + d0 * d1 * d2 * 8
    if len(data) != expected:
        raise FormatError(f"cube body has {len(data)} bytes, expected {expected}")
    body = np.frombuffer(data, dtype="<c8", offset=_RCUB_HEADER.size)
    return body.reshape(d0, d1, d2).astype(np.complex64)


def write_cube(path: PathLike, samples: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_cube(samples))


def read_cube(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_cube(fh.read())


def db_to_gray(db: np.ndarray, dynamic_range: float = 60.0) -> np.ndarray:
    """Map ``[-dynamic_range, 0]`` dB onto 0..255."""
    scaled = np.clip((np.asarray(db, dtype=np.float64) + dynamic_range) / dynamic_range, 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def write_db_png(path: PathLike, db: np.ndarray, dynamic_range: float = 60.0) -> None:
    Image.fromarray(np.ascontiguousarray(db_to_gray(db, dynamic_range)[::-1])).save(path, optimize=False)


def write_mask_png(path: PathLike, mask: np.ndarray) -> None:
    img = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)[::-1]
    Image.fromarray(np.ascontiguousarray(img)).save(path, optimize=False)


def read_png(path: PathLike) -> np.ndarray:
    """Pixel array in map orientation (row 0 = most negative Doppler)."""
    return np.asarray(Image.open(path))[::-1]


def sha256_file(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(path: PathLike, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
