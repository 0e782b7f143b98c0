"""Run configuration: parsing, defaults and whole-file validation.

A run is described by one YAML (or JSON) file with the blocks ``scene``,
``radar``, ``trace``, ``layout``, ``rules`` and ``output``. :func:`validate`
collects every problem it finds before reporting, instead of stopping at the
first one. Relative file paths are resolved against the config file's
directory.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from .annotate import FilterRule, RuleError
from .replay import AntennaLayout
from .scene import (Material, Mesh, RigidTrack, Scene, SceneError, VertexSequenceTrack,
                    box, linear_track, load_obj, plate)
from .signal import RadarParams
from .tracer import AntennaPattern, TraceConfig

OUT_ENV = "RAYMETA_OUT"

RADAR_DEFAULTS = dict(f_c=77e9, bandwidth=1e9, chirp_duration=100e-6, chirp_interval=100e-6,
                      n_samples=256, n_chirps=128)
TRACE_DEFAULTS = dict(enabled=True, ray_count=100_000, max_bounces=3, seed=0, workers=1,
                      raypath=None)
OUTPUT_DEFAULTS = dict(directory="out", window="hann", zero_pad=2, threshold_db=25.0,
                       noise_std=0.0, dynamic_range_db=60.0)


class ConfigError(ValueError):
    """Carries the complete list of problems found in a config."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(eq=False)
class TraceBlock:
    enabled: bool
    config: Optional[TraceConfig]
    pattern_tx: AntennaPattern
    pattern_rx: AntennaPattern
    workers: int
    raypath: Optional[Path]


@dataclass(eq=False)
class OutputBlock:
    directory: Path
    window: Any
    zero_pad: int
    threshold_db: float
    noise_std: float
    dynamic_range_db: float


@dataclass(eq=False)
class RunConfig:
    scene: Scene
    radar: RadarParams
    trace: TraceBlock
    layout: AntennaLayout
    rules: List[FilterRule]
    mode: str
    output: OutputBlock
    raw: Dict[str, Any] = field(repr=False, default_factory=dict)
    source: Optional[Path] = None

    @property
    def seed(self) -> int:
        return self.trace.config.rng_seed if self.trace.config else int(self.raw["trace"]["seed"])

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


class _Collector:
    def __init__(self):
        self.errors: List[str] = []

    def add(self, msg: str):
        self.errors.append(msg)

    def number(self, block: dict, key: str, where: str, default=None, integer=False,
               minimum=None):
        value = block.get(key, default)
        if value is None:
            self.add(f"{where}.{key}: missing")
            return None
        try:
            if isinstance(value, bool):
                raise ValueError
            num = int(value) if integer else float(value)
            if integer and float(value) != num:
                raise ValueError
        except (TypeError, ValueError):
            self.add(f"{where}.{key}: expected a {'whole ' if integer else ''}number, got {value!r}")
            return None
        if minimum is not None and num < minimum:
            self.add(f"{where}.{key}: must be >= {minimum} (got {num})")
            return None
        return num

    def vector(self, value, where: str, n: int = 3):
        try:
            arr = np.asarray([float(x) for x in value], dtype=np.float64)
            if arr.shape != (n,) or not np.all(np.isfinite(arr)):
                raise ValueError
            return arr
        except (TypeError, ValueError):
            self.add(f"{where}: expected {n} finite numbers, got {value!r}")
            return None

    def vectors(self, value, where: str):
        if not isinstance(value, list) or not value:
            self.add(f"{where}: expected a non-empty list of 3-vectors")
            return None
        out = [self.vector(v, f"{where}[{i}]") for i, v in enumerate(value)]
        return None if any(v is None for v in out) else np.array(out)


def _block(raw: dict, name: str, c: _Collector) -> dict:
    value = raw.get(name, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        c.add(f"{name}: expected a mapping")
        return {}
    return value


def _mesh(spec: dict, i: int, base: Path, c: _Collector) -> Optional[Mesh]:
    where = f"scene.meshes[{i}]"
    if not isinstance(spec, dict):
        c.add(f"{where}: expected a mapping")
        return None
    mesh_id = c.number(spec, "id", where, integer=True, minimum=0)
    material = c.number(spec, "material", where, default=0, integer=True, minimum=0)
    if mesh_id is None or material is None:
        return None
    kinds = [k for k in ("obj", "vertices", "plate", "box") if k in spec]
    if len(kinds) != 1:
        c.add(f"{where}: give exactly one of obj / vertices+triangles / plate / box")
        return None
    try:
        if "obj" in spec:
            return load_obj(base / spec["obj"], mesh_id, material)
        if "vertices" in spec:
            return Mesh(mesh_id, spec["vertices"], spec.get("triangles", []), material)
        if "plate" in spec:
            p = spec["plate"]
            return plate(mesh_id, p["center"], p["normal"], float(p["width"]),
                         None if p.get("height") is None else float(p["height"]), material,
                         p.get("up", (0.0, 0.0, 1.0)))
        b = spec["box"]
        return box(mesh_id, b["lower"], b["upper"], material)
    except FileNotFoundError as exc:
        c.add(f"{where}: file not found: {exc.filename}")
    except (SceneError, KeyError, TypeError, ValueError) as exc:
        c.add(f"{where}: {exc}")
    return None


def _track(spec: dict, i: int, base: Path, duration: float, c: _Collector):
    where = f"scene.tracks[{i}]"
    if not isinstance(spec, dict) or "mesh" not in spec:
        c.add(f"{where}: expected a mapping with a 'mesh' key")
        return None, None
    mesh_id = spec["mesh"]
    try:
        if "velocity" in spec:
            return mesh_id, linear_track(spec["velocity"], max(duration, 1e-12),
                                         spec.get("offset", (0.0, 0.0, 0.0)))
        if "rigid" in spec:
            keys = spec["rigid"]["keyframes"]
            return mesh_id, RigidTrack(
                [float(k["t"]) for k in keys],
                [k.get("translation", (0.0, 0.0, 0.0)) for k in keys],
                [k.get("rotation", (0.0, 0.0, 0.0, 1.0)) for k in keys])
        if "vertex_sequence" in spec:
            snaps = spec["vertex_sequence"]
            verts = [load_obj(base / s["obj"], mesh_id).vertices for s in snaps]
            return mesh_id, VertexSequenceTrack([float(s["t"]) for s in snaps], verts)
        c.add(f"{where}: expected one of velocity / rigid / vertex_sequence")
    except FileNotFoundError as exc:
        c.add(f"{where}: file not found: {exc.filename}")
    except (SceneError, KeyError, TypeError, ValueError) as exc:
        c.add(f"{where}: {exc}")
    return None, None


def _pattern(spec, where: str, c: _Collector) -> AntennaPattern:
    if spec is None or spec == "isotropic":
        return AntennaPattern()
    if not isinstance(spec, dict):
        c.add(f"{where}: expected 'isotropic' or a mapping")
        return AntennaPattern()
    try:
        if spec.get("isotropic", False):
            return AntennaPattern()
        k = float(spec.get("k", 0.0))
        return AntennaPattern.raised_cosine(
            float(spec.get("k_az", k)), spec.get("boresight", (1.0, 0.0, 0.0)),
            spec.get("up", (0.0, 0.0, 1.0)), float(spec.get("k_el", k)))
    except (TypeError, ValueError) as exc:
        c.add(f"{where}: {exc}")
        return AntennaPattern()


def parse_config(raw: dict, base: Path = Path("."), source: Optional[Path] = None) -> RunConfig:
    """Resolve a raw config mapping, raising :class:`ConfigError` with every problem."""
    c = _Collector()
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    raw = json.loads(json.dumps(raw, default=str))

    radar_raw = {**RADAR_DEFAULTS, **_block(raw, "radar", c)}
    radar_vals = {k: c.number(radar_raw, k, "radar", integer=k in ("n_samples", "n_chirps"))
                  for k in RADAR_DEFAULTS}
    radar = None
    if all(v is not None for v in radar_vals.values()):
        try:
            radar = RadarParams(**radar_vals)
        except ValueError as exc:
            for problem in str(exc).split("; "):
                c.add(f"radar: {problem}")
    duration = radar.n_chirps * radar.chirp_interval if radar else 1.0

    scene_raw = _block(raw, "scene", c)
    materials = []
    for i, m in enumerate(scene_raw.get("materials") or [{}]):
        try:
            materials.append(Material(float(m.get("specular_probability", 0.5)),
                                      float(m.get("reflectivity", 1.0))))
        except (AttributeError, TypeError, ValueError) as exc:
            c.add(f"scene.materials[{i}]: {exc}")
            materials.append(Material())
    meshes = []
    mesh_specs = scene_raw.get("meshes") or []
    if not mesh_specs:
        c.add("scene.meshes: at least one mesh is required")
    for i, spec in enumerate(mesh_specs):
        mesh = _mesh(spec, i, base, c)
        if mesh is not None:
            if mesh.material_id >= len(materials):
                c.add(f"scene.meshes[{i}]: material {mesh.material_id} does not exist")
            else:
                meshes.append(mesh)
    ids = [m.id for m in meshes]
    for dup in sorted({x for x in ids if ids.count(x) > 1}):
        c.add(f"scene.meshes: duplicate mesh ID {dup}")
    tracks = {}
    for i, spec in enumerate(scene_raw.get("tracks") or []):
        mesh_id, track = _track(spec, i, base, duration, c)
        if track is None:
            continue
        if mesh_id not in ids:
            c.add(f"scene.tracks[{i}]: unknown mesh ID {mesh_id}")
        elif mesh_id in tracks:
            c.add(f"scene.tracks[{i}]: mesh {mesh_id} already has a track")
        else:
            tracks[mesh_id] = track
    scene = None
    if meshes and len(ids) == len(set(ids)):
        try:
            scene = Scene(meshes, materials, tracks)
        except SceneError as exc:
            c.add(f"scene: {exc}")

    layout_raw = _block(raw, "layout", c)
    tx_pos = c.vectors(layout_raw.get("tx_positions", [[0.0, 0.0, 0.0]]), "layout.tx_positions")
    rx_pos = c.vectors(layout_raw.get("rx_positions", [[0.0, 0.0, 0.0]]), "layout.rx_positions")
    layout = None
    if tx_pos is not None and rx_pos is not None:
        try:
            layout = AntennaLayout(tx_pos, rx_pos, tuple(layout_raw.get("reference", (0, 0))))
        except (TypeError, ValueError) as exc:
            c.add(f"layout: {exc}")

    trace_raw = {**TRACE_DEFAULTS, **_block(raw, "trace", c)}
    enabled = bool(trace_raw.get("enabled", True))
    seed = c.number(trace_raw, "seed", "trace", integer=True, minimum=0)
    if seed is not None and seed >= 2 ** 64:
        c.add("trace.seed: must fit in an unsigned 64-bit integer")
    rays = c.number(trace_raw, "ray_count", "trace", integer=True, minimum=1)
    bounces = c.number(trace_raw, "max_bounces", "trace", integer=True, minimum=1)
    workers = c.number(trace_raw, "workers", "trace", integer=True, minimum=1)
    raypath = trace_raw.get("raypath")
    raypath = (base / raypath) if raypath else None
    if not enabled and raypath is None:
        c.add("trace: disabled but no raypath file given")
    elif not enabled and not raypath.exists():
        c.add(f"trace.raypath: file not found: {raypath}")
    trace_cfg = None
    if None not in (seed, rays, bounces) and layout is not None and seed < 2 ** 64:
        trace_cfg = TraceConfig(rays, bounces, seed, tuple(layout.reference_tx),
                                tuple(layout.reference_rx), *layout.reference)
    trace = TraceBlock(enabled, trace_cfg, _pattern(trace_raw.get("tx_pattern"), "trace.tx_pattern", c),
                       _pattern(trace_raw.get("rx_pattern"), "trace.rx_pattern", c),
                       workers or 1, raypath)

    rules_raw = _block(raw, "rules", c)
    mode = rules_raw.get("mode", "partition")
    if mode not in ("partition", "overlay"):
        c.add(f"rules.mode: expected 'partition' or 'overlay', got {mode!r}")
    rules = []
    for i, spec in enumerate(rules_raw.get("rules") or []):
        if not isinstance(spec, dict) or "name" not in spec or "expr" not in spec:
            c.add(f"rules.rules[{i}]: expected a mapping with 'name' and 'expr'")
            continue
        try:
            rule = FilterRule.parse(str(spec["name"]), spec["expr"])
        except RuleError as exc:
            c.add(f"rules.rules[{i}] ({spec['name']!r}): {exc}")
            continue
        if scene is not None:
            for problem in rule.check_against(scene):
                c.add(f"rules.rules[{i}]: {problem}")
        rules.append(rule)
    names = [r.name for r in rules]
    for dup in sorted({n for n in names if names.count(n) > 1}):
        c.add(f"rules: duplicate rule name {dup!r}")
    if mode == "partition" and "rest" in names:
        c.add("rules: 'rest' is reserved for the remainder span in partition mode")

    out_raw = {**OUTPUT_DEFAULTS, **_block(raw, "output", c)}
    zero_pad = c.number(out_raw, "zero_pad", "output", integer=True, minimum=1)
    threshold = c.number(out_raw, "threshold_db", "output")
    if threshold is not None and threshold <= 0:
        c.add("output.threshold_db: must be > 0")
    noise = c.number(out_raw, "noise_std", "output", minimum=0.0)
    dyn = c.number(out_raw, "dynamic_range_db", "output")
    window = out_raw.get("window")
    windows = window if isinstance(window, list) else [window]
    if len(windows) not in (1, 2) or any(w not in (None, "none", "hann") for w in windows):
        c.add(f"output.window: expected 'hann', 'none' or a [slow, fast] pair, got {window!r}")
    directory = Path(os.environ.get(OUT_ENV) or (base / str(out_raw["directory"])))
    output = OutputBlock(directory, window, zero_pad or 1, threshold or 25.0, noise or 0.0, dyn or 60.0)

    if c.errors:
        raise ConfigError(c.errors)
    raw.setdefault("trace", {})["seed"] = seed
    return RunConfig(scene, radar, trace, layout, rules, mode, output, raw, source)


def load_config_file(path) -> Tuple[dict, Path]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError([f"parse error in {path}: {exc}"]) from None
    return raw if raw is not None else {}, path.resolve().parent


def validate(config_path, seed: Optional[int] = None) -> RunConfig:
    """Load and fully resolve a config file, raising :class:`ConfigError` listing all problems."""
    raw, base = load_config_file(config_path)
    if seed is not None and isinstance(raw, dict):
        raw.setdefault("trace", {})
        if isinstance(raw["trace"], dict):
            raw["trace"]["seed"] = seed
    return parse_config(raw, base, Path(config_path))
