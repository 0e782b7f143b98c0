"""Median-split bounding-volume hierarchy over all scene triangles."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .scene import Scene, SceneError, vertices_at

LEAF_SIZE = 4


class Hit(NamedTuple):
    mesh_id: int
    triangle_index: int
    bary_u: float
    bary_v: float
    distance: float


@dataclass(frozen=True, eq=False)
class AccelIndex:
    """Flattened BVH. Node 0 is the root; ``left < 0`` marks a leaf."""

    time: float
    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    tri_mesh: np.ndarray
    tri_local: np.ndarray
    node_lo: np.ndarray
    node_hi: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    prim_order: np.ndarray

    @property
    def n_triangles(self) -> int:
        return len(self.v0)

    @property
    def n_nodes(self) -> int:
        return len(self.node_lo)

    @property
    def bounds(self):
        return self.node_lo[0].copy(), self.node_hi[0].copy()

    def kernel_args(self):
        return (self.node_lo, self.node_hi, self.node_left, self.node_right,
                self.node_start, self.node_count, self.prim_order,
                self.v0, self.v1, self.v2)

    def leaves(self):
        """Triangle index arrays of every leaf, in node order."""
        out = []
        for node in range(self.n_nodes):
            if self.node_left[node] < 0:
                s, c = self.node_start[node], self.node_count[node]
                out.append(self.prim_order[s:s + c].copy())
        return out

    def global_index(self, mesh_id: int, triangle_index: int) -> int:
        hits = np.flatnonzero((self.tri_mesh == mesh_id) & (self.tri_local == triangle_index))
        if len(hits) == 0:
            raise SceneError(f"no triangle {triangle_index} in mesh {mesh_id}")
        return int(hits[0])


def scene_triangles(scene: Scene, t: float = 0.0):
    """Triangle corner arrays at time ``t`` in global (mesh_id, index) order."""
    v0, v1, v2, mesh, local = [], [], [], [], []
    for m in scene.meshes:
        verts = vertices_at(scene, m.id, t)
        tris = m.triangles
        v0.append(verts[tris[:, 0]])
        v1.append(verts[tris[:, 1]])
        v2.append(verts[tris[:, 2]])
        mesh.append(np.full(len(tris), m.id, dtype=np.int64))
        local.append(np.arange(len(tris), dtype=np.int64))
    return (np.concatenate(v0), np.concatenate(v1), np.concatenate(v2),
            np.concatenate(mesh), np.concatenate(local))


def build_accel(scene: Scene, t: float = 0.0) -> AccelIndex:
    """Build the BVH over the scene's triangles as posed at time ``t``."""
    if not scene.meshes:
        raise SceneError("cannot build an acceleration index for an empty scene")
    v0, v1, v2, tri_mesh, tri_local = scene_triangles(scene, t)
    lo_tri = np.minimum(np.minimum(v0, v1), v2)
    hi_tri = np.maximum(np.maximum(v0, v1), v2)
    centroids = (v0 + v1 + v2) / 3.0

    order = np.arange(len(v0), dtype=np.int64)
    node_lo, node_hi, left, right, start, count = [], [], [], [], [], []

    def new_node():
        for lst, val in ((node_lo, None), (node_hi, None), (left, -1),
                         (right, -1), (start, 0), (count, 0)):
            lst.append(val)
        return len(left) - 1

    # iterative build over slices of ``order``
    root = new_node()
    pending = [(root, 0, len(order))]
    while pending:
        node, s, e = pending.pop()
        idx = order[s:e]
        node_lo[node] = lo_tri[idx].min(axis=0)
        node_hi[node] = hi_tri[idx].max(axis=0)
        if e - s <= LEAF_SIZE:
            start[node], count[node] = s, e - s
            continue
        cent = centroids[idx]
        axis = int(np.argmax(cent.max(axis=0) - cent.min(axis=0)))
        # stable sort keeps the build deterministic for equal centroids
        idx = idx[np.argsort(cent[:, axis], kind="stable")]
        order[s:e] = idx
        mid = s + (e - s) // 2
        l_node, r_node = new_node(), new_node()
        left[node], right[node] = l_node, r_node
        pending.append((r_node, mid, e))
        pending.append((l_node, s, mid))

    return AccelIndex(
        time=float(t), v0=v0, v1=v1, v2=v2, tri_mesh=tri_mesh, tri_local=tri_local,
        node_lo=np.array(node_lo), node_hi=np.array(node_hi),
        node_left=np.array(left, dtype=np.int64), node_right=np.array(right, dtype=np.int64),
        node_start=np.array(start, dtype=np.int64), node_count=np.array(count, dtype=np.int64),
        prim_order=order)


def intersect(index: AccelIndex, origin, direction) -> Optional[Hit]:
    """Nearest hit farther than the self-intersection epsilon, or ``None``."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    tri, t, u, v = _kernels.closest_hit(o[0], o[1], o[2], d[0], d[1], d[2],
                                        _kernels.EPSILON, np.inf, *index.kernel_args())
    if tri < 0:
        return None
    return Hit(int(index.tri_mesh[tri]), int(index.tri_local[tri]), u, v, t)


def intersect_batch(index: AccelIndex, origins, directions):
    """Vectorised :func:`intersect`: global triangle ids (-1 on miss), distance, u, v."""
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
    return _kernels.intersect_many(origins, directions, _kernels.EPSILON, *index.kernel_args())
