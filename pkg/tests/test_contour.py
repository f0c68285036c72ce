import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinchcut.contour import (Contour, JointArea, load_contours, rasterize, sample_polyline,
                              segment_contour, symmetric_difference, turning_angles)
from pinchcut.mesh import Mesh


def brute_ideal_cut(mesh, blade, radius):
    out = set()
    for i in range(mesh.n_points):
        x, y = mesh.rest[i, :2]
        if any(math.hypot(x - bx, y - by) <= radius for bx, by in blade):
            out.add(i)
    return out


def test_line_between_rows():
    m = Mesh(4, 4)
    wide = rasterize([(0, 1.5), (3, 1.5)], m, cut_radius=0.51)
    assert wide.ideal_cut == brute_ideal_cut(m, wide.positions, 0.51)
    assert wide.ideal_cut == set(range(4, 12))
    assert rasterize([(0, 1.5), (3, 1.5)], m, cut_radius=0.3).ideal_cut == set()


def test_line_through_points():
    m = Mesh(5, 5)
    # points 5, 6, 7 sit at (0,1), (1,1), (2,1)
    assert rasterize([(0, 1), (2, 1)], m, cut_radius=0.3).ideal_cut == {5, 6, 7}


def test_tiny_polyline_far_from_points():
    m = Mesh(5, 5)
    assert rasterize([(1.45, 1.5), (1.55, 1.5)], m, cut_radius=0.3).ideal_cut == set()


def test_rasterize_rejects_out_of_bounds():
    with pytest.raises(ValueError):
        rasterize([(0, 0), (5, 0)], Mesh(5, 5))
    with pytest.raises(ValueError):
        rasterize([(-0.5, 1), (2, 1)], Mesh(5, 5))


def test_blade_spacing_and_default_radius():
    m = Mesh(10, 10)
    path = rasterize(Contour(((1, 1), (8, 5), (2, 8))), m)
    steps = np.linalg.norm(np.diff(path.positions, axis=0), axis=1)
    assert steps.max() <= 0.5 + 1e-12
    assert steps.max() <= 0.6  # no gaps wider than the cut radius
    assert path.ideal_cut == brute_ideal_cut(m, path.positions, 0.6)


def test_sample_polyline_keeps_vertices():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 2.2]])
    s = sample_polyline(pts, 0.5)
    for v in pts:
        assert np.isclose(s, v).all(axis=1).any()


polylines = st.lists(st.tuples(st.floats(0, 5), st.floats(0, 5)), min_size=2, max_size=5)


@settings(max_examples=60, deadline=None)
@given(polylines, st.floats(0.1, 1.5))
def test_rasterize_matches_brute_force_and_reversal(pts, radius):
    m = Mesh(6, 6)
    path = rasterize(pts, m, cut_radius=radius)
    assert path.ideal_cut == brute_ideal_cut(m, path.positions, radius)
    assert rasterize(pts[::-1], m, cut_radius=radius).ideal_cut == path.ideal_cut


def test_single_segment_identity():
    c = Contour(((1, 1), (4, 2), (6, 6)), id="c")
    segs, joints = segment_contour(c, 1)
    assert len(segs) == 1 and joints == []
    assert segs[0].path == c.vertices


def curvature_argmax(vertices):
    # oracle: the exterior angle at each interior vertex from the law of cosines
    best, where = -1.0, None
    for i in range(1, len(vertices) - 1):
        a, b, c = (np.asarray(vertices[k], float) for k in (i - 1, i, i + 1))
        u, v = b - a, c - b
        ang = math.pi - math.acos(np.clip(-(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v)), -1, 1))
        if ang > best + 1e-12:
            best, where = ang, i
    return where


def test_l_shape_splits_at_corner():
    verts = ((0, 8), (0, 4), (0, 0), (4, 0), (8, 0))
    segs, joints = segment_contour(Contour(verts), 2)
    k = curvature_argmax(verts)
    assert k == 2
    assert segs[0].path == tuple(map(tuple, np.asarray(verts[:k + 1], float)))
    assert segs[1].path[0] == segs[0].path[-1] == (0.0, 0.0)
    assert joints == [JointArea((0.0, 0.0), 2.0)]


def test_closed_square_splits_at_two_lowest_corners():
    sq = Contour(((0, 0), (4, 0), (4, 4), (0, 4)), closed=True)
    assert np.allclose(turning_angles(sq), math.pi / 2)
    segs, joints = segment_contour(sq, 2)
    assert [j.center for j in joints] == [(0.0, 0.0), (4.0, 0.0)]
    assert len(segs) == 2
    assert segs[0].path == ((0, 0), (4, 0))
    assert segs[1].path == ((4, 0), (4, 4), (0, 4), (0, 0))


def test_segmentation_errors():
    c = Contour(((0, 0), (1, 1), (2, 0)))
    with pytest.raises(ValueError):
        segment_contour(c, 4)
    with pytest.raises(ValueError):
        segment_contour(c, 0)
    with pytest.raises(ValueError):
        segment_contour(c, 3)  # only one interior vertex


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=3, max_size=8,
                unique=True), st.integers(1, 6))
def test_segments_concatenate_to_contour(verts, m):
    c = Contour(tuple(verts))
    if m > len(verts) - 1:
        return
    segs, joints = segment_contour(c, m)
    assert len(segs) == m and len(joints) == m - 1
    joined = list(segs[0].path)
    for s in segs[1:]:
        assert s.path[0] == joined[-1]
        joined += list(s.path[1:])
    assert tuple(joined) == c.vertices


def test_contour_validation():
    with pytest.raises(ValueError):
        Contour(((0, 0),))
    with pytest.raises(ValueError):
        Contour(((0, 0), (0, 0), (1, 1)))
    with pytest.raises(ValueError):
        Contour(((0, 0), (1, 1), (0, 0)), closed=True)


def test_symmetric_difference_examples():
    assert symmetric_difference({1, 2}, {1, 2}) == 0
    assert symmetric_difference({1, 2, 3}, {4, 5, 6, 7}) == 7
    assert symmetric_difference({1, 2, 3, 4}, {3, 4, 5}) == 3


sets = st.frozensets(st.integers(0, 35))


@given(sets, sets, sets)
def test_symmetric_difference_properties(a, b, c):
    assert symmetric_difference(a, b) == symmetric_difference(b, a)
    assert symmetric_difference(a, c) <= symmetric_difference(a, b) + symmetric_difference(b, c)
    brute = sum(1 for x in range(36) if (x in a) != (x in b))
    assert symmetric_difference(a, b) == brute


def test_load_contours_reports_entry():
    good = load_contours([{"id": "a", "vertices": [[0, 0], [1, 1]], "max_segments": 1}])
    assert good[0][0].id == "a" and good[0][1] == 1
    with pytest.raises(ValueError, match="entry 1"):
        load_contours([{"id": "a", "vertices": [[0, 0], [1, 1]]}, {"id": "b"}])
