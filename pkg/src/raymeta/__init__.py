"""Shooting-and-bouncing-rays radar simulation with per-hit meta data.

One trace stores ``(mesh, triangle, u, v)`` for every hit. Doppler chirps and
extra antenna positions are then derived by replaying those records, and the
IF signal can be split into labelled parts by filter rules over them.
"""
from .accel import AccelIndex, Hit, build_accel, intersect
from .annotate import (Decomposition, FilterRule, LabelMask, apply_rules, make_masks,
                       parse_expr, span_signal)
from .replay import (AntennaLayout, RadarCube, build_cube, displace_path, lengths_at_chirp,
                     replay_hit_position, replay_lengths)
from .scene import (Material, Mesh, RigidTrack, Scene, VertexSequenceTrack, load_obj,
                    save_obj, vertices_at)
from .signal import (ChirpMatrix, RadarParams, RangeDopplerMap, chirp_slope, delay_of,
                     range_doppler, synthesize_if)
from .tracer import (AntennaPattern, HitRecord, PathRecord, PathTable, TraceConfig,
                     antenna_gain, sample_bounce, trace_paths)

__version__ = "0.1.0"
