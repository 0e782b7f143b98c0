"""Per-chirp and per-antenna path lengths recomputed from stored hit meta data.

No ray is traced here. A stored hit ``(mesh, triangle, u, v)`` is moved with
its triangle by re-evaluating the barycentric combination on the triangle's
vertices at the chirp time; antenna displacement only swaps the first and
last path segments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .scene import Scene, SceneError, vertices_at
from .signal import ChirpMatrix, RadarParams, synthesize_if
from .tracer import PathRecord, PathTable

BARY_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class AntennaLayout:
    """TX and RX element positions; ``reference`` is the (tx, rx) pair that was traced."""

    tx_positions: np.ndarray
    rx_positions: np.ndarray
    reference: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        tx = np.array(self.tx_positions, dtype=np.float64).reshape(-1, 3)
        rx = np.array(self.rx_positions, dtype=np.float64).reshape(-1, 3)
        if len(tx) == 0 or len(rx) == 0:
            raise ValueError("layout needs at least one TX and one RX position")
        if not (np.all(np.isfinite(tx)) and np.all(np.isfinite(rx))):
            raise ValueError("antenna positions must be finite")
        ref = tuple(int(i) for i in self.reference)
        if not (0 <= ref[0] < len(tx) and 0 <= ref[1] < len(rx)):
            raise ValueError(f"reference pair {ref} out of range")
        object.__setattr__(self, "tx_positions", tx)
        object.__setattr__(self, "rx_positions", rx)
        object.__setattr__(self, "reference", ref)

    @classmethod
    def monostatic(cls, position=(0.0, 0.0, 0.0)) -> "AntennaLayout":
        return cls([position], [position])

    @property
    def reference_tx(self) -> np.ndarray:
        return self.tx_positions[self.reference[0]]

    @property
    def reference_rx(self) -> np.ndarray:
        return self.rx_positions[self.reference[1]]

    def pairs(self) -> List[Tuple[int, int]]:
        """All (tx, rx) channels, TX-major."""
        return [(t, r) for t in range(len(self.tx_positions))
                for r in range(len(self.rx_positions))]


@dataclass(eq=False)
class RadarCube:
    """IF samples per channel: ``samples[c]`` belongs to ``pairs[c]``."""

    samples: np.ndarray
    pairs: List[Tuple[int, int]]
    params: RadarParams

    def channel(self, tx: int, rx: int) -> ChirpMatrix:
        return ChirpMatrix(self.samples[self.pairs.index((tx, rx))], self.params)


def replay_hit_position(u, v, v1, v2, v3) -> np.ndarray:
    """Hit point ``(1-u-v)*v1 + u*v2 + v*v3``; broadcasts over leading axes."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(u < -BARY_SLACK) or np.any(v < -BARY_SLACK) or np.any(u + v > 1.0 + BARY_SLACK):
        raise ValueError("barycentric coordinates outside the triangle")
    w = 1.0 - u - v
    return (w[..., None] * np.asarray(v1) + u[..., None] * np.asarray(v2)
            + v[..., None] * np.asarray(v3))


class Replayer:
    """Precomputed gather plan that turns stored hits into points at any time.

    Only the vertices of meshes actually referenced by ``paths`` are
    evaluated, and static meshes are evaluated once.
    """

    def __init__(self, paths: PathTable, scene: Scene, layout: AntennaLayout):
        self.paths = paths
        self.scene = scene
        self.layout = layout
        n, width = paths.hit_mesh.shape
        self.valid = np.arange(width)[None, :] < paths.n_hits[:, None]
        used = sorted(set(np.unique(paths.hit_mesh[self.valid]).tolist()))
        offsets = {}
        offset = 0
        for mesh_id in used:
            if not scene.has_mesh(mesh_id):
                raise SceneError(f"path references unknown mesh {mesh_id}")
            offsets[mesh_id] = offset
            offset += len(scene.mesh(mesh_id).vertices)
        self.mesh_ids = used
        self.animated = [m for m in used if scene.is_animated(m)]
        self._static = {m: vertices_at(scene, m, 0.0) for m in used if m not in self.animated}

        corner_ids = np.zeros((n, width, 3), dtype=np.int64)
        for mesh_id in used:
            sel = (paths.hit_mesh == mesh_id) & self.valid
            tris = paths.hit_tri[sel]
            mesh = scene.mesh(mesh_id)
            if tris.size and (tris.min() < 0 or tris.max() >= mesh.n_triangles):
                raise SceneError(f"path references a triangle outside mesh {mesh_id}")
            corner_ids[sel] = mesh.triangles[tris] + offsets[mesh_id]
        self.corner_ids = corner_ids
        u = np.where(self.valid, paths.hit_u, 0.0)
        v = np.where(self.valid, paths.hit_v, 0.0)
        if np.any(u < -BARY_SLACK) or np.any(v < -BARY_SLACK) or np.any(u + v > 1 + BARY_SLACK):
            raise ValueError("stored barycentric coordinates outside the triangle")
        self.u = u
        self.v = v
        self.last = np.maximum(paths.n_hits - 1, 0)
        self._cached_points = None

    def vertex_buffer(self, t: float) -> np.ndarray:
        if not self.mesh_ids:
            return np.zeros((0, 3))
        return np.concatenate([
            self._static[m] if m in self._static else vertices_at(self.scene, m, t)
            for m in self.mesh_ids])

    def hit_points(self, t: float) -> np.ndarray:
        """Replayed hit points, shape ``(n_paths, width, 3)``; padding rows are garbage."""
        if not self.animated and self._cached_points is not None:
            return self._cached_points
        corners = self.vertex_buffer(t)[self.corner_ids]
        w = 1.0 - self.u - self.v
        points = (w[..., None] * corners[:, :, 0] + self.u[..., None] * corners[:, :, 1]
                  + self.v[..., None] * corners[:, :, 2])
        if not self.animated:
            self._cached_points = points
        return points

    def at_time(self, t: float):
        """Reference-pair lengths and first/last hit points at time ``t``."""
        n = len(self.paths)
        if n == 0:
            empty = np.zeros((0, 3))
            return np.zeros(0), empty, empty
        points = self.hit_points(t)
        rows = np.arange(n)
        first = points[:, 0]
        last = points[rows, self.last]
        total = np.linalg.norm(first - self.layout.reference_tx, axis=1)
        if points.shape[1] > 1:
            inner = np.linalg.norm(points[:, 1:] - points[:, :-1], axis=2)
            total = total + np.where(self.valid[:, 1:], inner, 0.0).sum(axis=1)
        total = total + np.linalg.norm(last - self.layout.reference_rx, axis=1)
        return total, first, last


def lengths_at_chirp(paths: PathTable, scene: Scene, layout: AntennaLayout, j: int,
                     params: RadarParams) -> np.ndarray:
    """Reference-pair path lengths at chirp ``j`` (time ``j * T_d``)."""
    return Replayer(paths, scene, layout).at_time(j * params.chirp_interval)[0]


def displace_path(length, p_first, p_last, x_tx, x_rx, x_tx_new, x_rx_new):
    """Path length after moving the antennas from (x_tx, x_rx) to (x_tx_new, x_rx_new).

    ``length`` may be a :class:`PathRecord` (its ``base_length`` is used), a
    float or an array; points broadcast over leading axes. Only the first
    and last segments change: the part of the path inside the scene is kept.
    """
    if isinstance(length, PathRecord):
        length = length.base_length
    p_first = np.asarray(p_first, dtype=np.float64)
    p_last = np.asarray(p_last, dtype=np.float64)
    out = (np.asarray(length, dtype=np.float64)
           - np.linalg.norm(p_first - x_tx, axis=-1) + np.linalg.norm(p_first - x_tx_new, axis=-1)
           - np.linalg.norm(p_last - x_rx, axis=-1) + np.linalg.norm(p_last - x_rx_new, axis=-1))
    return float(out) if out.ndim == 0 else out


def replay_lengths(paths: PathTable, scene: Scene, layout: AntennaLayout,
                   params: RadarParams, pairs: Optional[Sequence[Tuple[int, int]]] = None) -> np.ndarray:
    """Path lengths for every channel and chirp, shape ``(n_pairs, n_chirps, n_paths)``."""
    pairs = layout.pairs() if pairs is None else list(pairs)
    replayer = Replayer(paths, scene, layout)
    out = np.empty((len(pairs), params.n_chirps, len(paths)))
    tx_ref, rx_ref = layout.reference_tx, layout.reference_rx
    for j in range(params.n_chirps):
        total, first, last = replayer.at_time(j * params.chirp_interval)
        for c, (tx, rx) in enumerate(pairs):
            if (tx, rx) == layout.reference:
                out[c, j] = total
            else:
                out[c, j] = displace_path(total, first, last, tx_ref, rx_ref,
                                          layout.tx_positions[tx], layout.rx_positions[rx])
    return out


def build_cube(paths: PathTable, scene: Scene, layout: AntennaLayout, params: RadarParams,
               noise_std: float = 0.0, rng: Optional[np.random.Generator] = None,
               lengths: Optional[np.ndarray] = None, workers: int = 1) -> RadarCube:
    """Radar cube for every (tx, rx) pair from one set of traced paths.

    Amplitudes are taken from the path records unchanged for all channels
    and chirps. Pass precomputed ``lengths`` from :func:`replay_lengths` to
    skip the replay step.
    """
    pairs = layout.pairs()
    if lengths is None:
        lengths = replay_lengths(paths, scene, layout, params, pairs)
    samples = np.empty((len(pairs), params.n_chirps, params.n_samples), dtype=np.complex128)
    for c in range(len(pairs)):
        samples[c] = synthesize_if(lengths[c], paths.amplitude, params,
                                   noise_std=noise_std, rng=rng, workers=workers).samples
    return RadarCube(samples, pairs, params)
