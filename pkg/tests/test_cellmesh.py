import math

import numpy as np
import pytest

from clogsim import Circle, Ellipse, MeshingError, eval_initial_curve, offset_curve
from clogsim.cellmesh import read_mesh, triangulate_perforated_cell, triangulate_polygon, write_mesh
from clogsim.microgeometry import points_in_polygon


def circle_mesh(R=0.2, h=0.05):
    return triangulate_perforated_cell([eval_initial_curve(Circle(R))], h)


def check_conforming(mesh):
    t = mesh.triangles
    e = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert counts.max() == 2
    boundary = {tuple(sorted(b)) for b in mesh.boundary_edges.tolist()}
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    singles = {tuple(x) for x in uniq[counts == 1].tolist()}
    assert singles == boundary


def test_empty_cell_area():
    m = triangulate_perforated_cell([], 0.1)
    assert m.areas().sum() == pytest.approx(1.0, abs=1e-10)
    check_conforming(m)


def test_circle_area_within_one_percent():
    m = circle_mesh()
    assert m.areas().sum() == pytest.approx(1 - math.pi * 0.04, rel=0.01)


@pytest.mark.parametrize("shape", [Circle(0.2), Ellipse(0.3, 0.1, 0.4), Ellipse(0.01, 0.001, 2.3)])
def test_mesh_invariants(shape):
    base = eval_initial_curve(shape)
    curve = offset_curve(base, 0.1)
    m = triangulate_perforated_cell([curve], 0.04)
    assert np.all(m.areas() > 0)
    assert m.min_angles().min() >= 20.0
    assert m.quality_ok
    check_conforming(m)
    v = m.vertices
    for i, j in m.periodic_pairs:
        d = v[j] - v[i]
        assert np.allclose(np.abs(d), (1, 0), atol=1e-12) or np.allclose(np.abs(d), (0, 1), atol=1e-12)
    # no vertex strictly inside the inclusion
    interior = points_in_polygon(v, np.asarray(curve.samples))
    on_curve = np.isin(np.arange(len(v)), m.edges_with_tag("inner"))
    assert not np.any(interior & ~on_curve)
    # one hole: V - E + F = 0 for the planar region
    assert m.n_vertices - len(m.edges()) + m.n_triangles == 0


def test_periodic_matching_is_perfect():
    m = circle_mesh(h=0.03)
    v = m.vertices
    left = np.sum(np.isclose(v[:, 0], 0.0, atol=0))
    right = np.sum(np.isclose(v[:, 0], 1.0, atol=0))
    bottom = np.sum(v[:, 1] == 0.0)
    top = np.sum(v[:, 1] == 1.0)
    assert left == right and bottom == top
    lr = [(i, j) for i, j in m.periodic_pairs if v[i, 0] == 0.0 and v[j, 0] == 1.0]
    assert len(lr) == right


def test_boundary_tags():
    m = circle_mesh()
    tags = set(m.boundary_tags)
    assert tags == {"inner", "outer-left", "outer-right", "outer-bottom", "outer-top"}
    inner = m.edges_with_tag("inner")
    length = np.sum(np.hypot(*(m.vertices[inner[:, 1]] - m.vertices[inner[:, 0]]).T))
    assert length == pytest.approx(2 * math.pi * 0.2, rel=0.01)
    assert np.max(np.hypot(*(m.vertices[inner[:, 1]] - m.vertices[inner[:, 0]]).T)) <= 0.05 + 1e-12


def test_area_converges_quadratically():
    exact = 1 - math.pi * 0.04
    err = [abs(circle_mesh(h=h).areas().sum() - exact) for h in (0.04, 0.02, 0.01)]
    assert err[0] / err[1] > 3.0 and err[1] / err[2] > 3.0


def test_hole_touching_boundary_raises():
    base = eval_initial_curve(Circle(0.2))
    pts = np.asarray(base.samples) + [0.3, 0.0]
    with pytest.raises(MeshingError):
        triangulate_perforated_cell([pts], 0.05)


def test_degenerate_hole_dropped():
    m = triangulate_perforated_cell([eval_initial_curve(Circle(0.01))], 0.05)
    assert m.dropped_holes == 1
    assert m.areas().sum() == pytest.approx(1.0, abs=1e-10)


def test_nonpositive_h():
    with pytest.raises(MeshingError):
        triangulate_perforated_cell([], 0.0)


def test_mesh_file_roundtrip(tmp_path):
    m = circle_mesh()
    path = tmp_path / "mesh.txt"
    write_mesh(m, path)
    v, t, p = read_mesh(path)
    assert np.array_equal(v, m.vertices)
    assert np.array_equal(t, m.triangles)
    assert np.array_equal(p, m.periodic_pairs)
    assert path.read_text().splitlines()[0] == f"vertices {m.n_vertices}"


def test_lshape_polygon_mesh():
    outer = [(-1, -1), (1, -1), (1, 1), (0, 1), (0, 0), (-1, 0)]
    m = triangulate_polygon(outer, 0.1)
    assert m.areas().sum() == pytest.approx(3.0, abs=1e-12)
    assert m.min_angles().min() >= 20.0
    check_conforming(m)
    assert set(m.boundary_tags) == {"outer"}
    assert np.any(np.all(m.vertices == [0.0, 0.0], axis=1))
