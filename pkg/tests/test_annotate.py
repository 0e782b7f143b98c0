import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raymeta import (AntennaLayout, FilterRule, HitRecord, Mesh, PathRecord, PathTable,
                     RadarParams, Scene, TraceConfig, VertexSequenceTrack, apply_rules, build_cube,
                     make_masks, parse_expr, range_doppler, span_signal, synthesize_if,
                     trace_paths)
from raymeta.annotate import (REST_SPAN, BounceCount, ContainsMesh, FirstHitMesh, Not,
                              OnlyMeshes, PartitionError, RuleError, TriangleIn)
from raymeta.scene import box, plate

from conftest import C


def table(hit_lists, lengths=None):
    """PathTable from lists of (mesh, tri) hits."""
    records = []
    for i, hits in enumerate(hit_lists):
        length = 20.0 + i if lengths is None else lengths[i]
        records.append(PathRecord(i, tuple(HitRecord(m, t, 0.25, 0.25) for m, t in hits),
                                  length, 1.0 / length ** 2))
    return PathTable.from_records(records)


def test_multi_bounce_rule_picks_two_paths():
    paths = table([[(1, 0)], [(1, 1)], [(1, 0), (2, 0)], [(2, 0), (1, 0), (2, 1)]])
    d = apply_rules(paths, [FilterRule.parse("ghost", ["bounce_count", ">", 1])])
    assert d.names() == ["ghost", REST_SPAN]
    assert d.span("ghost").indices.tolist() == [2, 3]
    assert d.span(REST_SPAN).indices.tolist() == [0, 1]


def test_no_rules_single_rest_span():
    paths = table([[(1, 0)], [(2, 0)]])
    d = apply_rules(paths, [])
    assert d.names() == [REST_SPAN]
    assert d.span(REST_SPAN).indices.tolist() == [0, 1]


def test_untouched_mesh_gives_empty_span():
    paths = table([[(1, 0)], [(2, 0), (1, 0)]])
    d = apply_rules(paths, [FilterRule.parse("seven", ["contains_mesh", 7])])
    assert len(d.span("seven").indices) == 0


PATHS = [[(1, 0)], [(1, 3)], [(2, 0), (1, 0)], [(1, 1), (2, 4)], [(3, 0), (3, 1), (2, 2)]]


@pytest.mark.parametrize("tree, expected", [
    (["bounce_count", "==", 1], [0, 1]),
    (["bounce_count", ">=", 2], [2, 3, 4]),
    (["bounce_count", "<", 3], [0, 1, 2, 3]),
    (["bounce_count", "!=", 2], [0, 1, 4]),
    (["contains_mesh", 2], [2, 3, 4]),
    (["first_hit_mesh", 1], [0, 1, 3]),
    (["only_meshes", [1]], [0, 1]),
    (["only_meshes", [1, 2]], [0, 1, 2, 3]),
    (["triangle_in", 1, [0, 3]], [0, 1, 2]),
    (["and", ["contains_mesh", 1], ["contains_mesh", 2]], [2, 3]),
    (["or", ["first_hit_mesh", 3], ["triangle_in", 1, [3]]], [1, 4]),
    (["not", ["contains_mesh", 1]], [4]),
])
def test_rule_atoms(tree, expected):
    rule = FilterRule.parse("r", tree)
    assert np.flatnonzero(rule.select(table(PATHS))).tolist() == expected
    assert parse_expr(rule.expr.to_prefix()).to_prefix() == rule.expr.to_prefix()


def test_operator_sugar_matches_prefix_form():
    paths = table(PATHS)
    built = (ContainsMesh(1) & ~FirstHitMesh(2)) | BounceCount(">", 2)
    parsed = parse_expr(["or", ["and", ["contains_mesh", 1], ["not", ["first_hit_mesh", 2]]],
                         ["bounce_count", ">", 2]])
    np.testing.assert_array_equal(built.evaluate(paths), parsed.evaluate(paths))
    assert isinstance(~OnlyMeshes((1,)), Not)


@pytest.mark.parametrize("tree", [
    [], "contains_mesh", ["frobnicate", 1], ["contains_mesh"], ["contains_mesh", "x"],
    ["bounce_count", "~", 1], ["triangle_in", 1, 2], ["and"], ["not", ["contains_mesh", 1], 2],
    ["contains_mesh", True],
])
def test_malformed_rules(tree):
    with pytest.raises(RuleError):
        parse_expr(tree)


def test_unknown_mesh_reference_names_rule_and_id():
    scene = Scene([plate(1, (5, 0, 0), (-1, 0, 0), 1.0)])
    rule = FilterRule.parse("pedestrian", ["or", ["contains_mesh", 1], ["contains_mesh", 42]])
    assert rule.check_against(scene) == ["rule 'pedestrian' references unknown mesh ID 42"]
    bad_tri = FilterRule.parse("arm", ["triangle_in", 1, [0, 5]])
    assert "[5]" in bad_tri.check_against(scene)[0]


def test_partition_overlap_raises_overlay_allows():
    paths = table(PATHS)
    rules = [FilterRule.parse("a", ["contains_mesh", 1]), FilterRule.parse("b", ["contains_mesh", 2])]
    with pytest.raises(PartitionError):
        apply_rules(paths, rules, "partition")
    d = apply_rules(paths, rules, "overlay")
    assert d.names() == ["a", "b"]
    assert set(d.span("a").indices) & set(d.span("b").indices) == {2, 3}


def test_bad_mode_and_names():
    paths = table(PATHS)
    with pytest.raises(RuleError):
        apply_rules(paths, [], "union")
    with pytest.raises(RuleError):
        apply_rules(paths, [FilterRule.parse("rest", ["contains_mesh", 1])])


hit = st.tuples(st.integers(0, 3), st.integers(0, 3))
path_lists = st.lists(st.lists(hit, min_size=1, max_size=3), min_size=1, max_size=25)
atoms = st.one_of(
    st.builds(lambda op, k: ["bounce_count", op, k], st.sampled_from(["<", ">", "==", ">="]),
              st.integers(0, 3)),
    st.builds(lambda m: ["contains_mesh", m], st.integers(0, 3)),
    st.builds(lambda m: ["first_hit_mesh", m], st.integers(0, 3)),
    st.builds(lambda ms: ["only_meshes", ms], st.lists(st.integers(0, 3), max_size=3)),
)
exprs = st.recursive(atoms, lambda inner: st.one_of(
    st.builds(lambda a, b: ["and", a, b], inner, inner),
    st.builds(lambda a, b: ["or", a, b], inner, inner),
    st.builds(lambda a: ["not", a], inner)), max_leaves=6)


@settings(max_examples=80, deadline=None)
@given(hits=path_lists, tree=exprs)
def test_rule_and_complement_partition(hits, tree):
    paths = table(hits)
    d = apply_rules(paths, [FilterRule.parse("r", tree), FilterRule.parse("not_r", ["not", tree])])
    a, b = set(d.span("r").indices), set(d.span("not_r").indices)
    assert not (a & b)
    assert a | b == set(range(len(paths)))
    assert len(d.span(REST_SPAN).indices) == 0


def test_ghost_partition_is_exact(ghost):
    scene, paths = ghost
    params = RadarParams(n_chirps=8, n_samples=256)
    layout = AntennaLayout.monostatic()
    rules = [FilterRule.parse("direct", ["bounce_count", "==", 1]),
             FilterRule.parse("multi", ["bounce_count", ">", 1])]
    d = apply_rules(paths, rules)
    spans = span_signal(d, scene, layout, params)
    full = build_cube(paths, scene, layout, params).channel(0, 0).samples
    total = sum(m.samples for m in spans.values())
    assert np.linalg.norm(total - full) <= 1e-12 * np.linalg.norm(full)
    # no direct target echo in the multi-bounce span
    multi = d.span_paths("multi")
    assert np.all(multi.n_hits > 1)


def test_single_span_is_the_full_signal(ghost):
    scene, paths = ghost
    params = RadarParams(n_chirps=4, n_samples=64)
    layout = AntennaLayout.monostatic()
    d = apply_rules(paths, [FilterRule.parse("all", ["bounce_count", ">=", 1])])
    spans = span_signal(d, scene, layout, params)
    full = build_cube(paths, scene, layout, params).channel(0, 0).samples
    assert np.array_equal(spans["all"].samples, full)
    assert not spans[REST_SPAN].samples.any()


def test_articulated_arm_and_body_split():
    body = box(1, (9.8, -0.3, -0.9), (10.2, 0.3, 0.9))
    arm = box(1, (9.5, 0.35, 0.0), (9.7, 0.45, 0.8))
    verts = np.concatenate([body.vertices, arm.vertices])
    tris = np.concatenate([body.triangles, arm.triangles + 8])
    swing = verts.copy()
    swing[8:] += [-0.3, 0.0, 0.0]
    mesh = Mesh(1, verts, tris)
    params = RadarParams(n_chirps=32, n_samples=128)
    duration = params.n_chirps * params.chirp_interval
    scene = Scene([mesh], tracks={1: VertexSequenceTrack([0.0, duration], [verts, swing])})
    paths = trace_paths(scene, TraceConfig(300_000, 2, 8))
    rules = [FilterRule.parse("arm", ["triangle_in", 1, list(range(12, 24))])]
    d = apply_rules(paths, rules)
    spans = span_signal(d, scene, AntennaLayout.monostatic(), params)
    full = build_cube(paths, scene, AntennaLayout.monostatic(), params).channel(0, 0).samples
    assert np.abs(spans["arm"].samples).max() > 0
    assert np.abs(spans[REST_SPAN].samples).max() > 0
    total = spans["arm"].samples + spans[REST_SPAN].samples
    assert np.linalg.norm(total - full) <= 1e-12 * np.linalg.norm(full)


def _rd(lengths, amps, params):
    return range_doppler(synthesize_if(lengths, amps, params), "hann", 2)


def test_all_zero_span_gives_empty_mask():
    params = RadarParams(n_chirps=8, n_samples=64)
    full = _rd(np.full((8, 1), 20.0), [1.0], params)
    empty = _rd(np.zeros((8, 0)), [], params)
    masks = make_masks({"full": full, "none": empty}, 20.0, reference=full)
    assert not masks[1].mask.any()
    assert masks[0].mask.any()


def test_point_target_mask_is_mainlobe():
    params = RadarParams(n_chirps=16, n_samples=128)
    length = 24.0
    rd = _rd(np.full((16, 1), length), [1.0], params)
    (mask,) = make_masks({"target": rd}, 20.0)
    rows, cols = np.nonzero(mask.mask)
    expected_col = rd.range_bin_of(length, params)
    pad = rd.zero_pad
    assert mask.mask[rd.peak()]
    assert np.all(np.abs(cols - expected_col) <= 2 * pad)
    assert np.all(np.abs(rows - rd.zero_doppler_row) <= 2 * pad)


def test_two_path_masks_are_disjoint():
    params = RadarParams(n_chirps=16, n_samples=256)
    direct_len, ghost_len = 20.0, 23.0
    assert (ghost_len - direct_len) * params.bandwidth / C > 4
    maps = {"direct": _rd(np.full((16, 1), direct_len), [1 / direct_len ** 2], params),
            "ghost": _rd(np.full((16, 1), ghost_len), [1 / ghost_len ** 2], params)}
    direct, ghost = make_masks(maps, 20.0)
    assert not (direct.mask & ghost.mask).any()
    assert abs(maps["direct"].peak()[1] - maps["direct"].range_bin_of(direct_len, params)) <= 1
    assert abs(maps["ghost"].peak()[1] - maps["ghost"].range_bin_of(ghost_len, params)) <= 1
    assert ghost.mask.any()


@settings(max_examples=40, deadline=None)
@given(t1=st.floats(1.0, 80.0), t2=st.floats(1.0, 80.0), seed=st.integers(0, 1000))
def test_mask_monotone_in_threshold(t1, t2, seed):
    lo, hi = sorted((t1, t2))
    params = RadarParams(n_chirps=8, n_samples=32)
    rng = np.random.default_rng(seed)
    rd = _rd(rng.uniform(5, 40, (8, 3)), rng.uniform(0.1, 1, 3), params)
    (a,) = make_masks({"x": rd}, lo)
    (b,) = make_masks({"x": rd}, hi)
    assert not (a.mask & ~b.mask).any()


def test_masks_use_full_map_peak():
    params = RadarParams(n_chirps=8, n_samples=64)
    strong = _rd(np.full((8, 1), 20.0), [1.0], params)
    weak = _rd(np.full((8, 1), 30.0), [0.01], params)
    masks = make_masks({"strong": strong, "weak": weak}, 25.0)
    # weak span sits 40 dB below the full peak: no label even though it has its own peak
    assert not masks[1].mask.any()
    assert masks[0].reference_peak == pytest.approx(masks[1].reference_peak)
    with pytest.raises(ValueError):
        make_masks({"strong": strong}, 0.0)
