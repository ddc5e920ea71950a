import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import neck_case
from stokesneck.boundary_data import BoundaryData
from stokesneck.functionals import (
    InteractionError,
    InteractionSystem,
    assemble_interaction,
    blowup_factor,
    boundary_q,
    oracle_compare,
    reconstruct,
    shifted_Q,
    solve_constants,
)
from stokesneck.geometry import NeckGeometry, rigid_mode
from stokesneck.mesh import PARTICLE, unit_square_mesh
from stokesneck.stokes_fem import StokesSolution, TaylorHoodSpace

GEOM = NeckGeometry(1e-2)


def test_identity_matrix_gives_q():
    s = solve_constants(np.eye(3), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(s.C, [1.0, 2.0, 3.0], rtol=1e-15)
    assert s.cramer_discrepancy < 1e-15


@settings(max_examples=40, deadline=None)
@given(arrays(float, (3, 3), elements=st.floats(-1, 1)), arrays(float, 3, elements=st.floats(-10, 10)))
def test_pivoted_solve_matches_cramer(M, Q):
    A = M @ M.T + np.diag([1.0, 1e-2, 1e2])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        s = solve_constants(A, Q)
    assert s.residual <= 1e-12
    assert s.cramer_discrepancy <= 1e-8


def test_singular_matrix_raises():
    with pytest.raises(InteractionError):
        solve_constants(np.ones((3, 3)), [1.0, 0.0, 0.0])


def test_shifted_q_definition():
    A = np.array([[4.0, 1.0, 2.0], [1.0, 5.0, 0.5], [2.0, 0.5, 3.0]])
    s = solve_constants(A, A @ np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(shifted_Q(s, 1), 0.0, atol=1e-14)
    np.testing.assert_allclose(s.shifted[2], s.Q - A[:, 1])
    with pytest.raises(ValueError):
        shifted_Q(s, 3)


def test_blowup_mode_restrictions():
    s = solve_constants(np.eye(3), [1.0, 2.0, 3.0], bc={"class": "Phi3", "l": 1})
    with pytest.raises(ValueError):
        blowup_factor(s, GEOM, "H3")
    assert blowup_factor(s, GEOM, "raw") == pytest.approx(1.0 - 3.0 * 3.0)
    ok = solve_constants(np.eye(3), [1.0, 2.0, 3.0], bc={"class": "Phi4", "l": 3})
    assert blowup_factor(ok, GEOM, "H3") == pytest.approx(-8.0)
    with pytest.raises(ValueError):
        blowup_factor(ok, GEOM, "H4")
    assert blowup_factor(ok, GEOM, "H1") == pytest.approx((1.0 - 1.0) - 3.0 * (3.0 - 0.0))


def test_interaction_json_roundtrip():
    s = solve_constants(np.diag([2.0, 3.0, 4.0]), [1.0, 1.0, 1.0], eps=1e-2, bc={"class": "Phi1"})
    back = InteractionSystem.from_json(s.to_json())
    np.testing.assert_array_equal(back.A, s.A)
    np.testing.assert_array_equal(back.shifted[1], s.shifted[1])
    assert back.bc == {"class": "Phi1"} and back.eps == 1e-2
    assert back.det == pytest.approx(24.0)


def test_zero_reconstruction():
    space = TaylorHoodSpace(unit_square_mesh(2))
    z = StokesSolution(space, np.zeros(space.n_velocity), np.zeros(space.n_vertices))
    full = reconstruct(z, z, z, z, np.zeros(3))
    assert np.all(full.velocity.velocity == 0.0) and np.all(full.velocity.pressure == 0.0)


def test_mismatched_meshes_rejected(case_1e2):
    dec = case_1e2[3]
    space = TaylorHoodSpace(unit_square_mesh(2))
    z = StokesSolution(space, np.zeros(space.n_velocity), np.zeros(space.n_vertices))
    with pytest.raises(InteractionError):
        assemble_interaction(*dec.modes, z)


# ------------------------------------------------------------------ neck system
def test_system_invariants(case_1e2):
    s = case_1e2[3].system
    assert s.residual <= 1e-12
    assert np.max(np.abs(s.A - s.A.T)) <= 1e-12 * np.max(np.abs(s.A))


def test_reconstructed_particle_trace(case_1e2):
    geom, _, _, dec = case_1e2
    space = dec.u0.space
    nodes = space.boundary_nodes[PARTICLE]
    C = dec.system.C
    want = space.interpolate(lambda p: sum(C[a - 1] * rigid_mode(a, p) for a in (1, 2, 3)), nodes)
    dofs = space.node_dofs(nodes)
    np.testing.assert_allclose(dec.full.velocity.velocity[dofs], want[dofs], atol=1e-13)


def test_reconstruction_matches_direct_solve(case_1e2):
    geom, mesh, bc, dec = case_1e2
    res = oracle_compare(mesh, geom, bc, dec)
    assert res["velocity_rel_l2"] < 1e-8
    assert res["C_abs"] < 1e-8


def test_boundary_and_volume_q_agree(case_1e2):
    dec = case_1e2[3]
    qb = boundary_q(dec.u0)
    np.testing.assert_allclose(qb, dec.system.Q, rtol=2e-3)


def test_phi1_shifted_functionals_stay_bounded():
    # |Q_{1,beta}| stays O(1) while Q_1 itself grows like eps^-1/2
    a, b = neck_case(1e-2)[3].system, neck_case(1e-3)[3].system
    ratio = np.abs(b.shifted[1]) / np.abs(a.shifted[1])
    assert np.all(ratio < 1.5)
    assert np.max(np.abs(b.shifted[1])) < 0.2 * abs(b.Q[0])


def test_phi1_unshifted_blowup_combination_at_1e3():
    geom, _, _, dec = neck_case(1e-3)
    val = blowup_factor(dec.system, geom, "raw") * math.sqrt(geom.eps)
    assert abs(val - math.pi) / math.pi < 0.15


def test_phi1_unshifted_blowup_remainder_is_order_one():
    # Q_1 - 3 Q_3 - pi/sqrt(eps) is the O(1) remainder of the expansion
    rem = []
    for eps in (1e-2, 1e-3):
        geom, _, _, dec = neck_case(eps)
        rem.append(blowup_factor(dec.system, geom, "raw") - math.pi / math.sqrt(eps))
    assert max(abs(r) for r in rem) / min(abs(r) for r in rem) < 1.1


def test_phi3_l2_q_combination_bounded():
    vals = [blowup_factor(neck_case(e, "Phi3", 2)[3].system, NeckGeometry(e), "H3") for e in (1e-2, 1e-3)]
    assert max(abs(v) for v in vals) / min(abs(v) for v in vals) < 3.0


def test_phi2_shifted_functionals_bounded():
    a, b = neck_case(1e-2, "Phi2")[3].system, neck_case(1e-3, "Phi2")[3].system
    ratio = np.abs(b.shifted[2]) / np.abs(a.shifted[2])
    assert np.all(ratio < 2.0)
    assert abs(b.C[1] - 1) / 1e-3 < 3 * abs(a.C[1] - 1) / 1e-2


def test_boundary_data_flux_invariant():
    for bc in (BoundaryData("Phi1"), BoundaryData("Phi3", 2), BoundaryData("Phi4", 1)):
        assert abs(bc.net_flux(GEOM)) < 1e-10
