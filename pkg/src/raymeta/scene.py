"""Triangle meshes, materials and animation tracks.

A :class:`Scene` is immutable once built. Geometry is in meters, time in
seconds. :func:`vertices_at` answers where the vertices of a mesh are at a
given time, which is all the replay stage needs to move stored hit points.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy.spatial.transform import Rotation, Slerp


class SceneError(ValueError):
    """Raised for malformed geometry, materials or animation tracks."""


@dataclass(frozen=True)
class Material:
    specular_probability: float = 0.5
    reflectivity: float = 1.0

    def __post_init__(self):
        for name in ("specular_probability", "reflectivity"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise SceneError(f"material {name}={value} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class Mesh:
    """An object made of triangles. ``triangles`` holds 0-based vertex indices."""

    id: int
    vertices: np.ndarray
    triangles: np.ndarray
    material_id: int = 0

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) == 0:
            raise SceneError(f"mesh {self.id} has no triangles")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise SceneError(f"mesh {self.id} references a vertex index out of range")
        if not np.all(np.isfinite(vertices)):
            raise SceneError(f"mesh {self.id} has non-finite vertices")
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


@dataclass(frozen=True, eq=False)
class RigidTrack:
    """Keyframed rigid motion: ``x(t) = R(t) @ x_rest + T(t)``.

    Rotations are unit quaternions in scalar-last order ``(x, y, z, w)``.
    Queries outside the keyframe range clamp to the nearest keyframe.
    """

    times: np.ndarray
    translations: np.ndarray
    rotations: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64).reshape(-1)
        translations = np.array(self.translations, dtype=np.float64).reshape(-1, 3)
        if self.rotations is None:
            rotations = np.tile([0.0, 0.0, 0.0, 1.0], (len(times), 1))
        else:
            rotations = np.array(self.rotations, dtype=np.float64).reshape(-1, 4)
        if len(times) == 0:
            raise SceneError("rigid track needs at least one keyframe")
        if len(translations) != len(times) or len(rotations) != len(times):
            raise SceneError("rigid track: times, translations and rotations differ in length")
        if np.any(np.diff(times) <= 0):
            raise SceneError("rigid track keyframe times must be strictly increasing")
        norms = np.linalg.norm(rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise SceneError("rigid track quaternions must be unit-norm within 1e-6")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "translations", translations)
        object.__setattr__(self, "rotations", rotations)

    def pose(self, t: float):
        """Rotation matrix and translation at time ``t``."""
        times = self.times
        if len(times) == 1 or t <= times[0]:
            k = 0
            return Rotation.from_quat(self.rotations[k]).as_matrix(), self.translations[k]
        if t >= times[-1]:
            return Rotation.from_quat(self.rotations[-1]).as_matrix(), self.translations[-1]
        k = int(np.searchsorted(times, t, side="right")) - 1
        if t == times[k]:
            return Rotation.from_quat(self.rotations[k]).as_matrix(), self.translations[k]
        t0, t1 = times[k], times[k + 1]
        alpha = (t - t0) / (t1 - t0)
        translation = (1.0 - alpha) * self.translations[k] + alpha * self.translations[k + 1]
        slerp = Slerp([t0, t1], Rotation.from_quat(self.rotations[k:k + 2]))
        return slerp([t]).as_matrix()[0], translation


@dataclass(frozen=True, eq=False)
class VertexSequenceTrack:
    """Per-snapshot vertex arrays, linearly interpolated between snapshots."""

    times: np.ndarray
    vertices: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64).reshape(-1)
        vertices = np.array(self.vertices, dtype=np.float64)
        if vertices.ndim != 3 or vertices.shape[2] != 3 or len(vertices) != len(times):
            raise SceneError("vertex-sequence track needs one (V, 3) array per timestamp")
        if len(times) == 0:
            raise SceneError("vertex-sequence track needs at least one snapshot")
        if np.any(np.diff(times) <= 0):
            raise SceneError("vertex-sequence timestamps must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "vertices", vertices)

    def at(self, t: float) -> np.ndarray:
        times = self.times
        if t < times[0] or t > times[-1]:
            raise SceneError(
                f"t={t} outside vertex-sequence range [{times[0]}, {times[-1]}]")
        k = int(np.searchsorted(times, t, side="right")) - 1
        if k >= len(times) - 1 or t == times[k]:
            return self.vertices[min(k, len(times) - 1)].copy()
        alpha = (t - times[k]) / (times[k + 1] - times[k])
        return (1.0 - alpha) * self.vertices[k] + alpha * self.vertices[k + 1]


AnimationTrack = Union[RigidTrack, VertexSequenceTrack]


@dataclass(frozen=True, eq=False)
class Scene:
    meshes: List[Mesh]
    materials: List[Material] = field(default_factory=lambda: [Material()])
    tracks: Dict[int, AnimationTrack] = field(default_factory=dict)

    def __post_init__(self):
        meshes = sorted(self.meshes, key=lambda m: m.id)
        ids = [m.id for m in meshes]
        if len(set(ids)) != len(ids):
            raise SceneError(f"duplicate mesh IDs in {ids}")
        by_id = {m.id: m for m in meshes}
        for m in meshes:
            if not (0 <= m.material_id < len(self.materials)):
                raise SceneError(f"mesh {m.id} references unknown material {m.material_id}")
        for mesh_id, track in self.tracks.items():
            if mesh_id not in by_id:
                raise SceneError(f"animation track for unknown mesh {mesh_id}")
            if isinstance(track, VertexSequenceTrack):
                if track.vertices.shape[1] != len(by_id[mesh_id].vertices):
                    raise SceneError(
                        f"vertex-sequence track for mesh {mesh_id} has wrong vertex count")
        object.__setattr__(self, "meshes", meshes)
        object.__setattr__(self, "tracks", dict(self.tracks))
        object.__setattr__(self, "_by_id", by_id)

    def mesh(self, mesh_id: int) -> Mesh:
        try:
            return self._by_id[mesh_id]
        except KeyError:
            raise SceneError(f"unknown mesh ID {mesh_id}") from None

    def has_mesh(self, mesh_id: int) -> bool:
        return mesh_id in self._by_id

    @property
    def mesh_ids(self) -> List[int]:
        return [m.id for m in self.meshes]

    @property
    def n_triangles(self) -> int:
        return sum(m.n_triangles for m in self.meshes)

    def is_animated(self, mesh_id: int) -> bool:
        return mesh_id in self.tracks


def vertices_at(scene: Scene, mesh_id: int, t: float) -> np.ndarray:
    """Vertex positions of ``mesh_id`` at time ``t`` as a ``(V, 3)`` array."""
    mesh = scene.mesh(mesh_id)
    track = scene.tracks.get(mesh_id)
    if track is None:
        return mesh.vertices.copy()
    if isinstance(track, VertexSequenceTrack):
        return track.at(t)
    rotation, translation = track.pose(t)
    return mesh.vertices @ rotation.T + translation


def load_obj(path: Union[str, os.PathLike], mesh_id: int = 0, material_id: int = 0) -> Mesh:
    """Read the ``v``/``f`` subset of a Wavefront OBJ file.

    Face entries may carry ``/vt/vn`` suffixes, which are ignored. Only
    triangles are accepted.
    """
    vertices: List[List[float]] = []
    faces: List[List[int]] = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise SceneError(f"{path}:{lineno}: non-triangular face")
                face = []
                for token in parts[1:]:
                    index = int(token.split("/")[0])
                    # negative indices count back from the last vertex seen
                    index = index - 1 if index > 0 else len(vertices) + index
                    if not (0 <= index < len(vertices)):
                        raise SceneError(f"{path}:{lineno}: vertex index out of range")
                    face.append(index)
                faces.append(face)
    if not faces:
        raise SceneError(f"{path}: no faces")
    return Mesh(mesh_id, np.array(vertices), np.array(faces), material_id)


def save_obj(mesh: Mesh, path: Union[str, os.PathLike]) -> None:
    with open(path, "w") as fh:
        fh.write(f"# mesh {mesh.id}\n")
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def plate(mesh_id: int, center: Sequence[float], normal: Sequence[float],
          width: float, height: Optional[float] = None, material_id: int = 0,
          up: Sequence[float] = (0.0, 0.0, 1.0)) -> Mesh:
    """Rectangular two-triangle plate centered at ``center`` facing ``normal``."""
    height = width if height is None else height
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(up, n)) > 0.99:
        up = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    side = np.cross(up, n)
    side /= np.linalg.norm(side)
    up = np.cross(n, side)
    c = np.asarray(center, dtype=np.float64)
    hw, hh = 0.5 * width * side, 0.5 * height * up
    vertices = np.array([c - hw - hh, c + hw - hh, c + hw + hh, c - hw + hh])
    return Mesh(mesh_id, vertices, [[0, 1, 2], [0, 2, 3]], material_id)


def box(mesh_id: int, lower: Sequence[float], upper: Sequence[float],
        material_id: int = 0) -> Mesh:
    """Axis-aligned box with 12 triangles."""
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    corners = np.array([[hi[0] if i & 1 else lo[0],
                         hi[1] if i & 2 else lo[1],
                         hi[2] if i & 4 else lo[2]] for i in range(8)])
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4),
             (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    triangles = []
    for a, b, c, d in quads:
        triangles += [[a, b, c], [a, c, d]]
    return Mesh(mesh_id, corners, triangles, material_id)


def linear_track(velocity: Sequence[float], duration: float,
                 offset: Iterable[float] = (0.0, 0.0, 0.0)) -> RigidTrack:
    """Constant-velocity translation from ``offset`` over ``[0, duration]``."""
    start = np.asarray(list(offset), dtype=np.float64)
    end = start + np.asarray(velocity, dtype=np.float64) * duration
    return RigidTrack([0.0, duration], [start, end])
