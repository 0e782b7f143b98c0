"""Signal decomposition by filter rules over path meta data, and label masks.

Rules are small expression trees evaluated column-wise over a
:class:`~raymeta.tracer.PathTable`. In config files they are written in
prefix form, e.g.::

    ["and", ["bounce_count", ">", 1], ["contains_mesh", 3]]
"""
from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .replay import AntennaLayout, replay_lengths
from .scene import Scene
from .signal import ChirpMatrix, RadarParams, RangeDopplerMap, synthesize_if
from .tracer import PathTable

REST_SPAN = "rest"

_COMPARISONS = {
    "<": operator.lt, "<=": operator.le, "==": operator.eq, "=": operator.eq,
    "!=": operator.ne, ">=": operator.ge, ">": operator.gt,
}


class RuleError(ValueError):
    pass


class PartitionError(ValueError):
    pass


class Expr:
    """Boolean predicate over paths. Combine with ``&``, ``|`` and ``~``."""

    def evaluate(self, paths: PathTable) -> np.ndarray:
        raise NotImplementedError

    def mesh_refs(self) -> Set[int]:
        return set()

    def triangle_refs(self) -> List[Tuple[int, Tuple[int, ...]]]:
        return []

    def to_prefix(self) -> list:
        raise NotImplementedError

    def __and__(self, other: "Expr") -> "Expr":
        return And((self, other))

    def __or__(self, other: "Expr") -> "Expr":
        return Or((self, other))

    def __invert__(self) -> "Expr":
        return Not(self)


def _valid(paths: PathTable) -> np.ndarray:
    return np.arange(paths.width)[None, :] < paths.n_hits[:, None]


@dataclass(frozen=True)
class BounceCount(Expr):
    op: str
    k: int

    def __post_init__(self):
        if self.op not in _COMPARISONS:
            raise RuleError(f"unknown comparison {self.op!r}")

    def evaluate(self, paths):
        return _COMPARISONS[self.op](paths.n_hits, self.k)

    def to_prefix(self):
        return ["bounce_count", self.op, self.k]


@dataclass(frozen=True)
class ContainsMesh(Expr):
    mesh_id: int

    def evaluate(self, paths):
        return np.any((paths.hit_mesh == self.mesh_id) & _valid(paths), axis=1)

    def mesh_refs(self):
        return {self.mesh_id}

    def to_prefix(self):
        return ["contains_mesh", self.mesh_id]


@dataclass(frozen=True)
class FirstHitMesh(Expr):
    mesh_id: int

    def evaluate(self, paths):
        return (paths.hit_mesh[:, 0] == self.mesh_id) & (paths.n_hits > 0)

    def mesh_refs(self):
        return {self.mesh_id}

    def to_prefix(self):
        return ["first_hit_mesh", self.mesh_id]


@dataclass(frozen=True)
class OnlyMeshes(Expr):
    mesh_ids: Tuple[int, ...]

    def evaluate(self, paths):
        inside = np.isin(paths.hit_mesh, list(self.mesh_ids))
        return np.all(inside | ~_valid(paths), axis=1) & (paths.n_hits > 0)

    def mesh_refs(self):
        return set(self.mesh_ids)

    def to_prefix(self):
        return ["only_meshes", list(self.mesh_ids)]


@dataclass(frozen=True)
class TriangleIn(Expr):
    """Some hit lands on one of ``triangles`` of mesh ``mesh_id``."""

    mesh_id: int
    triangles: Tuple[int, ...]

    def evaluate(self, paths):
        on = (paths.hit_mesh == self.mesh_id) & np.isin(paths.hit_tri, list(self.triangles))
        return np.any(on & _valid(paths), axis=1)

    def mesh_refs(self):
        return {self.mesh_id}

    def triangle_refs(self):
        return [(self.mesh_id, self.triangles)]

    def to_prefix(self):
        return ["triangle_in", self.mesh_id, list(self.triangles)]


@dataclass(frozen=True)
class And(Expr):
    terms: Tuple[Expr, ...]

    def evaluate(self, paths):
        out = np.ones(len(paths), dtype=bool)
        for term in self.terms:
            out &= term.evaluate(paths)
        return out

    def mesh_refs(self):
        return set().union(*(t.mesh_refs() for t in self.terms))

    def triangle_refs(self):
        return [r for t in self.terms for r in t.triangle_refs()]

    def to_prefix(self):
        return ["and", *(t.to_prefix() for t in self.terms)]


@dataclass(frozen=True)
class Or(Expr):
    terms: Tuple[Expr, ...]

    def evaluate(self, paths):
        out = np.zeros(len(paths), dtype=bool)
        for term in self.terms:
            out |= term.evaluate(paths)
        return out

    def mesh_refs(self):
        return set().union(*(t.mesh_refs() for t in self.terms))

    def triangle_refs(self):
        return [r for t in self.terms for r in t.triangle_refs()]

    def to_prefix(self):
        return ["or", *(t.to_prefix() for t in self.terms)]


@dataclass(frozen=True)
class Not(Expr):
    term: Expr

    def evaluate(self, paths):
        return ~self.term.evaluate(paths)

    def mesh_refs(self):
        return self.term.mesh_refs()

    def triangle_refs(self):
        return self.term.triangle_refs()

    def to_prefix(self):
        return ["not", self.term.to_prefix()]


def _int(x, what):
    if isinstance(x, bool) or not isinstance(x, (int, np.integer)):
        raise RuleError(f"{what} must be an integer, got {x!r}")
    return int(x)


def _int_list(x, what):
    if not isinstance(x, (list, tuple)):
        raise RuleError(f"{what} must be a list of integers, got {x!r}")
    return tuple(_int(i, what) for i in x)


def parse_expr(tree) -> Expr:
    """Build an :class:`Expr` from its nested prefix-list form."""
    if not isinstance(tree, (list, tuple)) or not tree or not isinstance(tree[0], str):
        raise RuleError(f"malformed rule expression {tree!r}")
    head, args = tree[0].lower(), list(tree[1:])

    def arity(n):
        if len(args) != n:
            raise RuleError(f"{head!r} takes {n} argument(s), got {len(args)}")

    if head == "bounce_count":
        arity(2)
        return BounceCount(str(args[0]), _int(args[1], "bounce_count bound"))
    if head == "contains_mesh":
        arity(1)
        return ContainsMesh(_int(args[0], "mesh ID"))
    if head == "first_hit_mesh":
        arity(1)
        return FirstHitMesh(_int(args[0], "mesh ID"))
    if head == "only_meshes":
        arity(1)
        return OnlyMeshes(_int_list(args[0], "mesh ID"))
    if head == "triangle_in":
        arity(2)
        return TriangleIn(_int(args[0], "mesh ID"), _int_list(args[1], "triangle index"))
    if head in ("and", "or"):
        if not args:
            raise RuleError(f"{head!r} needs at least one operand")
        terms = tuple(parse_expr(a) for a in args)
        return And(terms) if head == "and" else Or(terms)
    if head == "not":
        arity(1)
        return Not(parse_expr(args[0]))
    raise RuleError(f"unknown rule atom {head!r}")


@dataclass(frozen=True)
class FilterRule:
    name: str
    expr: Expr

    @classmethod
    def parse(cls, name: str, tree) -> "FilterRule":
        return cls(name, parse_expr(tree))

    def select(self, paths: PathTable) -> np.ndarray:
        return np.asarray(self.expr.evaluate(paths), dtype=bool)

    def check_against(self, scene: Scene) -> List[str]:
        """Problems with mesh/triangle references, empty if all resolve."""
        problems = []
        for mesh_id in sorted(self.expr.mesh_refs()):
            if not scene.has_mesh(mesh_id):
                problems.append(f"rule {self.name!r} references unknown mesh ID {mesh_id}")
        for mesh_id, tris in self.expr.triangle_refs():
            if scene.has_mesh(mesh_id):
                n = scene.mesh(mesh_id).n_triangles
                bad = [t for t in tris if not 0 <= t < n]
                if bad:
                    problems.append(
                        f"rule {self.name!r} references triangles {bad} outside mesh {mesh_id}")
        return problems


@dataclass(frozen=True)
class Span:
    name: str
    indices: np.ndarray


@dataclass(eq=False)
class Decomposition:
    paths: PathTable
    spans: List[Span]
    mode: str

    def names(self) -> List[str]:
        return [s.name for s in self.spans]

    def span(self, name: str) -> Span:
        for s in self.spans:
            if s.name == name:
                return s
        raise KeyError(name)

    def span_paths(self, name: str) -> PathTable:
        return self.paths.subset(self.span(name).indices)


def apply_rules(paths: PathTable, rules: Sequence[FilterRule], mode: str = "partition") -> Decomposition:
    """Split ``paths`` into one span per rule.

    In ``"partition"`` mode a path selected by two rules is an error and
    unmatched paths go to a trailing ``"rest"`` span. ``"overlay"`` allows
    overlaps and adds no remainder.
    """
    if mode not in ("partition", "overlay"):
        raise RuleError(f"unknown decomposition mode {mode!r}")
    names = [r.name for r in rules]
    if len(set(names)) != len(names) or (mode == "partition" and REST_SPAN in names):
        raise RuleError(f"rule names must be unique (and not {REST_SPAN!r} in partition mode)")
    spans = []
    claimed = np.full(len(paths), -1, dtype=np.int64)
    for k, rule in enumerate(rules):
        selected = rule.select(paths)
        if mode == "partition":
            clash = selected & (claimed >= 0)
            if clash.any():
                other = rules[int(claimed[np.argmax(clash)])].name
                raise PartitionError(
                    f"rules {other!r} and {rule.name!r} both select {int(clash.sum())} path(s)")
            claimed[selected] = k
        spans.append(Span(rule.name, np.flatnonzero(selected)))
    if mode == "partition":
        spans.append(Span(REST_SPAN, np.flatnonzero(claimed < 0)))
    return Decomposition(paths, spans, mode)


def span_signal(decomposition: Decomposition, scene: Scene, layout: AntennaLayout,
                params: RadarParams, lengths: Optional[np.ndarray] = None,
                workers: int = 1) -> Dict[str, ChirpMatrix]:
    """IF chirp matrix of every span for the reference antenna pair.

    ``lengths`` (``n_chirps x n_paths``) may be passed to reuse a replay
    that was already computed for the full path set.
    """
    paths = decomposition.paths
    if lengths is None:
        lengths = replay_lengths(paths, scene, layout, params, [layout.reference])[0]
    out = {}
    for span in decomposition.spans:
        out[span.name] = synthesize_if(lengths[:, span.indices], paths.amplitude[span.indices],
                                       params, workers=workers)
    return out


@dataclass(eq=False)
class LabelMask:
    name: str
    mask: np.ndarray
    threshold_db: float
    reference_peak: float

    @property
    def shape(self):
        return self.mask.shape


def make_masks(span_maps: Union[Mapping[str, RangeDopplerMap], Iterable[Tuple[str, RangeDopplerMap]]],
               threshold_db: float = 25.0,
               reference: Union[None, float, RangeDopplerMap] = None) -> List[LabelMask]:
    """Binary masks: bins of each span map within ``threshold_db`` of the full map's peak.

    ``reference`` is the full map (or its peak magnitude). Without it the
    full map is taken as the sum of the span spectra, which is exact for a
    partition.
    """
    items = list(span_maps.items() if isinstance(span_maps, Mapping) else span_maps)
    if threshold_db <= 0:
        raise ValueError("threshold_db must be positive")
    if not items:
        return []
    shape = items[0][1].shape
    for name, m in items:
        if m.shape != shape:
            raise ValueError(f"span map {name!r} has shape {m.shape}, expected {shape}")
    if reference is None:
        peak = float(np.abs(sum(m.spectrum for _, m in items)).max())
    elif isinstance(reference, RangeDopplerMap):
        if reference.shape != shape:
            raise ValueError(f"reference map has shape {reference.shape}, expected {shape}")
        peak = float(reference.magnitude.max())
    else:
        peak = float(reference)
    masks = []
    for name, m in items:
        if peak <= 0:
            mask = np.zeros(shape, dtype=bool)
        else:
            mask = m.db(reference=peak) >= -threshold_db
        masks.append(LabelMask(name, mask, float(threshold_db), peak))
    return masks
