"""Batch pipeline: trace once, replay per chirp and antenna, synthesize, decompose, export."""
from __future__ import annotations

import functools
import json
import re
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import formats
from .annotate import apply_rules, make_masks, span_signal
from .config import RunConfig
from .replay import AntennaLayout, build_cube, replay_lengths
from .scene import Scene, plate
from .signal import ChirpMatrix, RadarParams, range_doppler, synthesize_if
from .tracer import PathTable, TraceConfig, trace_paths

STAGES = ("trace", "replay", "annotate", "all")
RAYPATH_FILE = "paths.rayp"
CUBE_FILE = "cube.rcub"
MANIFEST_FILE = "manifest.json"


class StageError(RuntimeError):
    """A pipeline stage failed; the manifest on disk records what finished."""


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    artifacts: List[Dict[str, object]] = field(default_factory=list)
    timing: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    stages: List[str] = field(default_factory=list)
    status: str = "running"
    error: Optional[str] = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> "RunManifest":
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def artifact(self, name: str) -> Dict[str, object]:
        for a in self.artifacts:
            if a["name"] == name:
                return a
        raise KeyError(name)


@functools.lru_cache(maxsize=1)
def warm_up() -> None:
    """Compile the numba kernels so stage timings measure work, not JIT."""
    scene = Scene([plate(0, (1.0, 0.0, 0.0), (-1.0, 0.0, 0.0), 0.5)])
    paths = trace_paths(scene, TraceConfig(64, 2))
    params = RadarParams(n_samples=4, n_chirps=2)
    lengths = replay_lengths(paths, scene, AntennaLayout.monostatic(), params)
    synthesize_if(lengths[0], paths.amplitude, params)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name) or "span"


class _Run:
    def __init__(self, cfg: RunConfig, out_dir: Path, workers: int):
        self.cfg = cfg
        self.out = out_dir
        self.workers = workers
        self.manifest = RunManifest(cfg.config_hash(), cfg.seed)

    def record(self, name: str, path: Path):
        self.manifest.artifacts = [a for a in self.manifest.artifacts if a["name"] != name]
        self.manifest.artifacts.append({
            "name": name, "path": str(path.relative_to(self.out)) if path.is_relative_to(self.out) else str(path),
            "sha256": formats.sha256_file(path), "bytes": path.stat().st_size})

    def save(self):
        formats.write_json(self.out / MANIFEST_FILE, self.manifest.to_dict())

    def timed(self, stage: str, fn, *args, **kwargs):
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        self.manifest.timing[stage] = self.manifest.timing.get(stage, 0.0) + time.perf_counter() - start
        return result

    def rd_map(self, chirps: ChirpMatrix):
        out = self.cfg.output
        return range_doppler(chirps, window=out.window, zero_pad_factor=out.zero_pad)

    # stages

    def trace(self) -> PathTable:
        cfg = self.cfg
        warm_up()
        paths = self.timed("trace", trace_paths, cfg.scene, cfg.trace.config,
                           cfg.trace.pattern_tx, cfg.trace.pattern_rx, workers=self.workers)
        path = self.out / RAYPATH_FILE
        formats.write_raypath(path, paths)
        self.record("raypath", path)
        self.manifest.counts.update(rays=cfg.trace.config.ray_count, paths=len(paths), trace_runs=1)
        self.manifest.stages.append("trace")
        return paths

    def load_paths(self) -> PathTable:
        source = self.out / RAYPATH_FILE
        if not source.exists() and self.cfg.trace.raypath is not None:
            source = self.cfg.trace.raypath
        if not source.exists():
            raise StageError(f"no raypath file at {source}; run the trace stage first")
        paths = formats.read_raypath(source)
        self.record("raypath", source)
        self.manifest.counts.update(paths=len(paths), trace_runs=0)
        return paths

    def replay(self, paths: PathTable):
        cfg = self.cfg
        warm_up()
        lengths = self.timed("replay", replay_lengths, paths, cfg.scene, cfg.layout, cfg.radar)
        rng = np.random.default_rng(cfg.seed)
        cube = self.timed("synthesize", build_cube, paths, cfg.scene, cfg.layout, cfg.radar,
                          noise_std=cfg.output.noise_std, rng=rng, lengths=lengths,
                          workers=self.workers)
        path = self.out / CUBE_FILE
        formats.write_cube(path, cube.samples)
        self.record("cube", path)
        self.manifest.counts.update(n_chirps=cfg.radar.n_chirps,
                                    replay_evaluations=cfg.radar.n_chirps,
                                    channels=len(cube.pairs))
        ref = cube.channel(*cfg.layout.reference)
        self.export_map("rd_full", self.rd_map(ref))
        self.manifest.stages.append("replay")
        return cube, lengths

    def export_map(self, name: str, rd, reference: Optional[float] = None):
        png = self.out / f"{name}.png"
        formats.write_db_png(png, rd.db(reference), self.cfg.output.dynamic_range_db)
        self.record(name, png)

    def annotate(self, paths: PathTable, lengths: Optional[np.ndarray] = None):
        cfg = self.cfg
        cube_path = self.out / CUBE_FILE
        if not cube_path.exists():
            raise StageError(f"no cube file at {cube_path}; run the replay stage first")
        cube = formats.read_cube(cube_path)
        pairs = cfg.layout.pairs()
        full = self.rd_map(ChirpMatrix(cube[pairs.index(cfg.layout.reference)].astype(np.complex128),
                                       cfg.radar))
        start = time.perf_counter()
        decomposition = apply_rules(paths, cfg.rules, cfg.mode)
        ref_lengths = None if lengths is None else lengths[pairs.index(cfg.layout.reference)]
        spans = span_signal(decomposition, cfg.scene, cfg.layout, cfg.radar,
                            lengths=ref_lengths, workers=self.workers)
        span_maps = {name: self.rd_map(m) for name, m in spans.items()}
        masks = make_masks(span_maps, cfg.output.threshold_db, reference=full)
        self.manifest.timing["decompose"] = time.perf_counter() - start

        peak = float(full.magnitude.max())
        sidecar = {"threshold_db": cfg.output.threshold_db, "mode": cfg.mode,
                   "map_shape": list(full.shape), "reference_peak": peak,
                   "range_m_per_bin": float(full.range_m[1] - full.range_m[0]) if full.shape[1] > 1 else 0.0,
                   "velocity_mps_per_bin": float(full.velocity[1] - full.velocity[0]) if full.shape[0] > 1 else 0.0,
                   "zero_doppler_row": full.zero_doppler_row,
                   "orientation": "rows: Doppler, positive at top; columns: range increasing",
                   "spans": {}}
        for mask in masks:
            slug = _slug(mask.name)
            self.export_map(f"rd_span_{slug}", span_maps[mask.name], reference=peak)
            png = self.out / f"mask_{slug}.png"
            formats.write_mask_png(png, mask.mask)
            self.record(f"mask_{slug}", png)
            sidecar["spans"][mask.name] = {
                "mask": png.name, "map": f"rd_span_{slug}.png",
                "paths": int(len(decomposition.span(mask.name).indices)),
                "mask_bins": int(mask.mask.sum())}
        side_path = self.out / "masks.json"
        formats.write_json(side_path, sidecar)
        self.record("masks", side_path)
        self.manifest.counts["spans"] = len(masks)
        self.manifest.stages.append("annotate")
        return decomposition, masks


def run(cfg: RunConfig, out_dir=None, stage: str = "all", workers: Optional[int] = None) -> RunManifest:
    """Execute the pipeline and write artifacts plus ``manifest.json`` to ``out_dir``.

    ``stage="trace"`` only traces; ``"replay"`` reuses a saved raypath file;
    ``"annotate"`` reuses both the raypath and the cube; ``"all"`` runs
    everything, skipping the trace when it is disabled in the config.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    out = Path(out_dir) if out_dir is not None else cfg.output.directory
    out.mkdir(parents=True, exist_ok=True)
    r = _Run(cfg, out.resolve(), workers or cfg.trace.workers)
    try:
        if stage in ("trace", "all") and cfg.trace.enabled:
            paths = r.trace()
        else:
            paths = r.load_paths()
        lengths = None
        if stage in ("replay", "all"):
            _, lengths = r.replay(paths)
        if stage in ("annotate", "all"):
            r.annotate(paths, lengths)
    except Exception as exc:
        r.manifest.status = "failed"
        r.manifest.error = f"{type(exc).__name__}: {exc}"
        r.save()
        if isinstance(exc, StageError):
            raise
        raise StageError(r.manifest.error) from exc
    r.manifest.status = "complete"
    r.save()
    return r.manifest


def report_timing(manifest: RunManifest) -> str:
    """Per-stage wall-time table, with replay cost per chirp against one full trace."""
    t = manifest.timing
    c = manifest.counts
    lines = [f"{'stage':<12}{'seconds':>12}"]
    for stage in ("trace", "replay", "synthesize", "decompose"):
        if stage in t:
            lines.append(f"{stage:<12}{t[stage]:>12.6f}")
    n_chirps = c.get("replay_evaluations", 0)
    lines.append(f"trace runs: {c.get('trace_runs', 0)}, replay evaluations: {n_chirps}")
    if "replay" in t and n_chirps:
        per_chirp = t["replay"] / n_chirps
        lines.append(f"replay per chirp: {per_chirp:.6g} s")
        if "trace" in t and per_chirp > 0:
            lines.append(f"trace / replay-per-chirp ratio: {t['trace'] / per_chirp:.1f}")
    return "\n".join(lines)


def timing_ratio(manifest: RunManifest) -> float:
    """``trace_time / (replay_time / n_chirps)``."""
    per_chirp = manifest.timing["replay"] / manifest.counts["replay_evaluations"]
    return manifest.timing["trace"] / per_chirp
