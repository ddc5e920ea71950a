import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stokesneck.geometry import NeckGeometry
from stokesneck.mesh import (
    OUTER,
    PARTICLE,
    MeshError,
    MeshParams,
    build_neck_mesh,
    disk_mesh,
    layer_counts,
    neck_element_count,
    predicted_neck_steps,
    quality_report,
    refine,
    refine_uniform,
    unit_square_mesh,
)


@pytest.fixture(scope="module")
def geom():
    return NeckGeometry(1e-2)


@pytest.fixture(scope="module")
def mesh(geom):
    return build_neck_mesh(geom)


def test_no_inverted_triangles(mesh):
    assert np.all(mesh.signed_areas() > 0)
    assert mesh.area() > 0


def test_boundary_vertices_on_exact_curves(mesh, geom):
    q = quality_report(mesh, geom)
    assert max(q.boundary_offsets.values()) < 1e-12
    v = mesh.boundary_vertices(OUTER)
    p = mesh.vertices[v]
    neck = np.abs(p[:, 0]) <= 2 * geom.R
    near = p[neck & (p[:, 1] < geom.yc)]
    np.testing.assert_allclose(near[:, 1], geom.kappa * near[:, 0] ** 2, atol=1e-12)
    vp = mesh.vertices[mesh.boundary_vertices(PARTICLE)]
    vp = vp[(np.abs(vp[:, 0]) <= 2 * geom.R) & (vp[:, 1] < geom.yc)]
    np.testing.assert_allclose(vp[:, 1], geom.eps + geom.kappa1 * vp[:, 0] ** 2, atol=1e-12)


@pytest.mark.parametrize("n_layers", [8, 20])
def test_layers_across_gap(geom, n_layers):
    m = build_neck_mesh(geom, MeshParams(n_layers=n_layers))
    assert layer_counts(m, geom).min() >= n_layers


def test_scaled_aspect_is_bounded_and_eps_uniform():
    aspects = []
    for eps in (1e-1, 1e-2, 1e-3, 1e-4):
        g = NeckGeometry(eps)
        aspects.append(quality_report(build_neck_mesh(g), g).max_scaled_aspect)
    assert max(aspects) <= 10.0
    assert max(aspects) / min(aspects) < 1.2


def test_neck_count_follows_step_law():
    # the step c sqrt(delta/kappa0) places (2/c) asinh(R sqrt(kappa0/eps)) columns in |x1| <= R
    params = MeshParams()
    for eps in (1e-1, 1e-2, 1e-3, 1e-4):
        g = NeckGeometry(eps)
        m = build_neck_mesh(g, params)
        per_column = 2 * m.grading["layers_per_ray"]
        ratio = neck_element_count(m, g) / (per_column * predicted_neck_steps(g, params))
        assert 1.0 <= ratio <= 1.5


def test_precondition_errors(geom):
    with pytest.raises(MeshError):
        MeshParams(n_layers=1)
    with pytest.raises(MeshError):
        MeshParams(h_far=0.0)
    with pytest.raises(MeshError):
        build_neck_mesh(NeckGeometry(1e-7))


def test_uniform_refinement_quadruples(mesh, geom):
    fine = refine(mesh)
    assert fine.n_triangles == 4 * mesh.n_triangles
    assert np.all(fine.signed_areas() > 0)
    assert fine.area() == pytest.approx(mesh.area(), rel=1e-3)
    q0, q1 = quality_report(mesh, geom), quality_report(fine, geom)
    assert q1.min_scaled_angle_deg >= 0.5 * q0.min_scaled_angle_deg
    assert max(q1.boundary_offsets.values()) < 1e-12


def test_empty_marker_is_identity(mesh):
    same = refine(mesh, np.zeros(mesh.n_triangles, dtype=bool))
    np.testing.assert_array_equal(same.vertices, mesh.vertices)
    np.testing.assert_array_equal(same.triangles, mesh.triangles)


def test_bad_markers(mesh):
    with pytest.raises(MeshError):
        refine(mesh, np.ones(3, dtype=bool))
    with pytest.raises(MeshError):
        refine(mesh, [mesh.n_triangles])


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(0, 199), min_size=1, max_size=12))
def test_local_refinement_is_conforming(idx):
    m = unit_square_mesh(10)
    fine = refine(m, np.array(idx))
    assert np.all(fine.signed_areas() > 0)
    assert fine.area() == pytest.approx(1.0, rel=1e-13)
    # conforming: every interior edge belongs to exactly two triangles
    edges, t2e = fine.edges()
    counts = np.bincount(t2e.ravel(), minlength=len(edges))
    assert set(np.unique(counts)) <= {1, 2}
    assert np.count_nonzero(counts == 1) == len(fine.boundary_edges)


def test_boundary_length_converges_second_order(mesh, geom):
    outer, particle = geom.boundary_curves()
    errs = []
    m = mesh
    for _ in range(3):
        errs.append(abs(m.boundary_length(OUTER) - outer.length) + abs(m.boundary_length(PARTICLE) - particle.length))
        m = refine(m)
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_refine_uniform_counts():
    m = unit_square_mesh(4)
    assert refine_uniform(m, 2).n_triangles == 16 * m.n_triangles


def test_disk_mesh_boundary_on_circle():
    m = disk_mesh(radius=2.0, n_rings=6)
    v = m.vertices[m.boundary_vertices(OUTER)]
    np.testing.assert_allclose(np.hypot(v[:, 0], v[:, 1]), 2.0, rtol=1e-14)
    assert np.all(m.signed_areas() > 0)


def test_dump_csv(tmp_path):
    m = unit_square_mesh(3)
    m.dump_csv(tmp_path)
    with open(tmp_path / "vertices.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["x1", "x2", "theta"] and len(rows) == m.n_vertices + 1
    assert float(rows[-1][0]) == m.vertices[-1, 0]
    with open(tmp_path / "edges.csv") as f:
        tags = {r["tag"] for r in csv.DictReader(f)}
    assert tags == {OUTER}
    with open(tmp_path / "triangles.csv") as f:
        assert sum(1 for _ in f) == m.n_triangles + 1


def test_params_roundtrip():
    p = MeshParams(n_layers=12, h_far=0.1)
    assert MeshParams.from_dict(p.to_dict()) == p
