"""Monte-Carlo shooting-and-bouncing-rays tracer that keeps per-hit meta data.

Each launched ray walks up to ``max_bounces`` triangle hits. After every hit
the point is joined to the receiver by a shadow ray; each successful join
becomes one :class:`PathRecord` whose hit list holds every bounce so far as
``(mesh_id, triangle_index, u, v)``. The records are all the later stages
need: replay rebuilds hit points from them, annotation filters on them.
"""
from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .accel import AccelIndex, build_accel
from .scene import Material, Scene

CHUNK_RAYS = 1 << 15


@dataclass(frozen=True)
class HitRecord:
    mesh_id: int
    triangle_index: int
    bary_u: float
    bary_v: float


@dataclass(frozen=True)
class PathRecord:
    ray_index: int
    hits: Tuple[HitRecord, ...]
    base_length: float
    amplitude: float
    tx_index: int = 0
    rx_index: int = 0

    @property
    def n_hits(self) -> int:
        return len(self.hits)

    @property
    def mesh_ids(self) -> Tuple[int, ...]:
        return tuple(h.mesh_id for h in self.hits)


class PathTable:
    """Column store of path records; behaves as a read-only sequence of :class:`PathRecord`.

    Hit columns have shape ``(n_paths, width)`` and are padded with ``-1``
    (ids) or ``0.0`` (barycentrics) beyond ``n_hits``.
    """

    def __init__(self, ray_index, n_hits, hit_mesh, hit_tri, hit_u, hit_v,
                 base_length, amplitude, tx_index=None, rx_index=None):
        n = len(ray_index)
        self.ray_index = np.asarray(ray_index, dtype=np.uint64).reshape(n)
        self.n_hits = np.asarray(n_hits, dtype=np.int64).reshape(n)
        width = max(np.asarray(hit_mesh).reshape(n, -1).shape[1], 1) if n else 1
        self.hit_mesh = np.asarray(hit_mesh, dtype=np.int64).reshape(n, -1) if n else np.zeros((0, width), np.int64)
        self.hit_tri = np.asarray(hit_tri, dtype=np.int64).reshape(self.hit_mesh.shape)
        self.hit_u = np.asarray(hit_u, dtype=np.float64).reshape(self.hit_mesh.shape)
        self.hit_v = np.asarray(hit_v, dtype=np.float64).reshape(self.hit_mesh.shape)
        self.base_length = np.asarray(base_length, dtype=np.float64).reshape(n)
        self.amplitude = np.asarray(amplitude, dtype=np.float64).reshape(n)
        self.tx_index = (np.zeros(n, np.int64) if tx_index is None
                         else np.broadcast_to(np.asarray(tx_index, dtype=np.int64), (n,)).copy())
        self.rx_index = (np.zeros(n, np.int64) if rx_index is None
                         else np.broadcast_to(np.asarray(rx_index, dtype=np.int64), (n,)).copy())

    @classmethod
    def empty(cls, width: int = 1) -> "PathTable":
        z = np.zeros((0, width))
        return cls([], [], z, z, z, z, [], [])

    @classmethod
    def from_records(cls, records: Sequence[PathRecord]) -> "PathTable":
        if not records:
            return cls.empty()
        width = max(r.n_hits for r in records)
        n = len(records)
        mesh = np.full((n, width), -1, np.int64)
        tri = np.full((n, width), -1, np.int64)
        u = np.zeros((n, width))
        v = np.zeros((n, width))
        for i, r in enumerate(records):
            for k, h in enumerate(r.hits):
                mesh[i, k], tri[i, k], u[i, k], v[i, k] = (
                    h.mesh_id, h.triangle_index, h.bary_u, h.bary_v)
        return cls([r.ray_index for r in records], [r.n_hits for r in records],
                   mesh, tri, u, v, [r.base_length for r in records],
                   [r.amplitude for r in records],
                   [r.tx_index for r in records], [r.rx_index for r in records])

    @classmethod
    def concatenate(cls, tables: Sequence["PathTable"]) -> "PathTable":
        tables = [t for t in tables if len(t)]
        if not tables:
            return cls.empty()
        width = max(t.width for t in tables)

        def pad(a, fill):
            return np.concatenate([
                np.pad(x, ((0, 0), (0, width - x.shape[1])), constant_values=fill)
                for x in a])

        return cls(np.concatenate([t.ray_index for t in tables]),
                   np.concatenate([t.n_hits for t in tables]),
                   pad([t.hit_mesh for t in tables], -1), pad([t.hit_tri for t in tables], -1),
                   pad([t.hit_u for t in tables], 0.0), pad([t.hit_v for t in tables], 0.0),
                   np.concatenate([t.base_length for t in tables]),
                   np.concatenate([t.amplitude for t in tables]),
                   np.concatenate([t.tx_index for t in tables]),
                   np.concatenate([t.rx_index for t in tables]))

    @property
    def width(self) -> int:
        return self.hit_mesh.shape[1]

    def __len__(self) -> int:
        return len(self.ray_index)

    def __iter__(self) -> Iterator[PathRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            return self.record(int(key))
        return self.subset(key)

    def record(self, i: int) -> PathRecord:
        if i < 0:
            i += len(self)
        k = self.n_hits[i]
        hits = tuple(HitRecord(int(self.hit_mesh[i, j]), int(self.hit_tri[i, j]),
                               float(self.hit_u[i, j]), float(self.hit_v[i, j]))
                     for j in range(k))
        return PathRecord(int(self.ray_index[i]), hits, float(self.base_length[i]),
                          float(self.amplitude[i]), int(self.tx_index[i]), int(self.rx_index[i]))

    def subset(self, index) -> "PathTable":
        """Rows selected by a boolean mask, index array or slice (order preserved)."""
        index = np.arange(len(self))[index]
        return PathTable(self.ray_index[index], self.n_hits[index], self.hit_mesh[index],
                         self.hit_tri[index], self.hit_u[index], self.hit_v[index],
                         self.base_length[index], self.amplitude[index],
                         self.tx_index[index], self.rx_index[index])

    def hit_keys(self) -> List[Tuple[int, Tuple[Tuple[int, int], ...]]]:
        """(ray_index, ((mesh, tri), ...)) per path, for matching across traces."""
        return [(int(self.ray_index[i]),
                 tuple((int(self.hit_mesh[i, k]), int(self.hit_tri[i, k]))
                       for k in range(self.n_hits[i])))
                for i in range(len(self))]

    def equals(self, other: "PathTable") -> bool:
        if len(self) != len(other):
            return False
        cols = ("ray_index", "n_hits", "base_length", "amplitude", "tx_index", "rx_index")
        if not all(np.array_equal(getattr(self, c), getattr(other, c)) for c in cols):
            return False
        w = min(self.width, other.width)
        return all(np.array_equal(getattr(self, c)[:, :w], getattr(other, c)[:, :w])
                   for c in ("hit_mesh", "hit_tri", "hit_u", "hit_v"))


@dataclass(frozen=True)
class AntennaPattern:
    """Direction-dependent gain ``cos(az)**k_az * cos(el)**k_el``, zero behind the antenna.

    Azimuth and elevation are measured in the frame spanned by ``boresight``
    and ``up``. With ``k_az == k_el == k`` this is ``cos(angle off boresight)**k``.
    ``isotropic=True`` gives unit gain everywhere.
    """

    isotropic: bool = True
    boresight: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    up: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    k_az: float = 0.0
    k_el: float = 0.0

    @classmethod
    def raised_cosine(cls, k: float, boresight=(1.0, 0.0, 0.0), up=(0.0, 0.0, 1.0),
                      k_el: Optional[float] = None) -> "AntennaPattern":
        return cls(False, tuple(boresight), tuple(up), float(k),
                   float(k if k_el is None else k_el))

    def __post_init__(self):
        if self.k_az < 0 or self.k_el < 0:
            raise ValueError("pattern exponents must be non-negative")

    def frame(self) -> np.ndarray:
        f = np.asarray(self.boresight, dtype=np.float64)
        f = f / np.linalg.norm(f)
        up = np.asarray(self.up, dtype=np.float64)
        up = up - np.dot(up, f) * f
        if np.linalg.norm(up) < 1e-9:
            raise ValueError("pattern 'up' vector is parallel to boresight")
        up /= np.linalg.norm(up)
        left = np.cross(up, f)
        return np.array([f, left, up])

    def packed(self) -> np.ndarray:
        f, left, up = self.frame()
        return np.concatenate([[1.0 if self.isotropic else 0.0], f, left, up,
                               [self.k_az, self.k_el]])


def antenna_gain(pattern: AntennaPattern, direction) -> float:
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    return float(_kernels.gain(pattern.packed(), d[0], d[1], d[2]))


@dataclass(frozen=True)
class TraceConfig:
    ray_count: int
    max_bounces: int = 3
    rng_seed: int = 0
    tx_position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rx_position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    tx_index: int = 0
    rx_index: int = 0
    time: float = 0.0

    def __post_init__(self):
        if self.ray_count < 1:
            raise ValueError("ray_count must be >= 1")
        if self.max_bounces < 1:
            raise ValueError("max_bounces must be >= 1")
        if not (0 <= self.rng_seed < 2 ** 64):
            raise ValueError("rng_seed must fit in 64 unsigned bits")


def sample_bounce(incoming, normal, material: Material, rng: np.random.Generator,
                  size: Optional[int] = None):
    """Draw outgoing direction(s) for a ray reflecting off a surface.

    With probability ``material.specular_probability`` the mirror direction is
    returned, otherwise a cosine-weighted direction around the normal. The
    normal is flipped to face the incoming ray first.

    Returns ``(direction, kind)`` with kind ``"specular"`` or ``"diffuse"``;
    with ``size`` given, returns an ``(size, 3)`` array and a boolean
    specular mask instead.
    """
    d = np.asarray(incoming, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    d = d / np.linalg.norm(d)
    n = n / np.linalg.norm(n)
    if np.dot(n, d) > 0:
        n = -n
    xi = rng.random((1 if size is None else size, 3))
    dirs, specular = _kernels.bounce_batch(d, n, float(material.specular_probability), xi)
    if size is None:
        return dirs[0], ("specular" if specular[0] else "diffuse")
    return dirs, specular


def _material_columns(scene: Scene, index: AccelIndex):
    spec = np.empty(index.n_triangles)
    refl = np.empty(index.n_triangles)
    for m in scene.meshes:
        sel = index.tri_mesh == m.id
        mat = scene.materials[m.material_id]
        spec[sel] = mat.specular_probability
        refl[sel] = mat.reflectivity
    return spec, refl


def _trace_chunk(first: int, count: int, cfg: TraceConfig, index: AccelIndex,
                 pattern_tx: np.ndarray, pattern_rx: np.ndarray,
                 spec: np.ndarray, refl: np.ndarray) -> PathTable:
    b = cfg.max_bounces
    chain_tri = np.full((count, b), -1, dtype=np.int64)
    chain_u = np.zeros((count, b))
    chain_v = np.zeros((count, b))
    connected = np.zeros((count, b), dtype=np.bool_)
    lengths = np.zeros((count, b))
    amplitudes = np.zeros((count, b))
    _kernels.trace_rays(first, count, np.uint64(cfg.rng_seed), b,
                        np.asarray(cfg.tx_position, dtype=np.float64),
                        np.asarray(cfg.rx_position, dtype=np.float64),
                        pattern_tx, pattern_rx, *index.kernel_args(), spec, refl,
                        chain_tri, chain_u, chain_v, connected, lengths, amplitudes)
    rows, bounce = np.nonzero(connected)
    if len(rows) == 0:
        return PathTable.empty(b)
    n_hits = bounce + 1
    keep = np.arange(b)[None, :] < n_hits[:, None]
    tri = np.where(keep, chain_tri[rows], -1)
    mesh = np.where(keep, index.tri_mesh[np.maximum(tri, 0)], -1)
    local = np.where(keep, index.tri_local[np.maximum(tri, 0)], -1)
    return PathTable(rows.astype(np.uint64) + np.uint64(first), n_hits, mesh, local,
                     np.where(keep, chain_u[rows], 0.0), np.where(keep, chain_v[rows], 0.0),
                     lengths[rows, bounce], amplitudes[rows, bounce],
                     cfg.tx_index, cfg.rx_index)


def trace_paths(scene: Scene, cfg: TraceConfig,
                pattern_tx: AntennaPattern = AntennaPattern(),
                pattern_rx: AntennaPattern = AntennaPattern(),
                workers: int = 1, index: Optional[AccelIndex] = None) -> PathTable:
    """Trace ``cfg.ray_count`` rays and return every path that reached RX.

    Rays are processed in fixed-size chunks, so the result is identical for
    any ``workers`` count. Records come out sorted by ``(ray_index, n_hits)``.
    """
    if not scene.meshes:
        return PathTable.empty(cfg.max_bounces)
    if index is None:
        index = build_accel(scene, cfg.time)
    spec, refl = _material_columns(scene, index)
    ptx, prx = pattern_tx.packed(), pattern_rx.packed()
    chunks = [(s, min(CHUNK_RAYS, cfg.ray_count - s))
              for s in range(0, cfg.ray_count, CHUNK_RAYS)]

    def run(chunk):
        return _trace_chunk(chunk[0], chunk[1], cfg, index, ptx, prx, spec, refl)

    if workers <= 1 or len(chunks) == 1:
        tables = [run(c) for c in chunks]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            tables = list(pool.map(run, chunks))
    return PathTable.concatenate(tables) if tables else PathTable.empty(cfg.max_bounces)
