"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line that is printed in the terminal
summary, then asserts the criterion.
"""
import math
import time

import numpy as np
import pytest

from conftest import neck_case, record_acceptance, sweep_report
from stokesneck import asymptotics as asy
from stokesneck.aux_fields import aux_pair, aux_pair_bc, neck_samples, verify_bounds
from stokesneck.boundary_data import BoundaryData
from stokesneck.experiments import extrapolate_Qstar, fit_rate, max_min_ratio
from stokesneck.geometry import NeckGeometry, rigid_mode
from stokesneck.mesh import unit_square_mesh
from stokesneck.stokes_fem import solve_dirichlet

AUX_EPS = (1e-2, 1e-3, 1e-4)
BC_VARIANTS = (("Phi1", None), ("Phi2", None), ("Phi3", 1), ("Phi3", 2), ("Phi4", 1), ("Phi4", 2), ("Phi4", 3))


def _all_pairs(geom):
    pairs = [aux_pair(geom, a) for a in (1, 2, 3)]
    pairs += [aux_pair_bc(geom, BoundaryData(v, l)) for v, l in BC_VARIANTS]
    return pairs


def _expected_traces(pair, pts):
    if pair.kind == "mode":
        return np.zeros_like(pts), rigid_mode(pair.alpha, pts)
    return pair.bc.local_value(pts), np.zeros_like(pts)


def test_c01_auxiliary_identities():
    t0 = time.perf_counter()
    worst_div, worst_trace = 0.0, 0.0
    for eps in AUX_EPS:
        geom = NeckGeometry(eps)
        pts = neck_samples(geom, 200, 20)
        x1 = np.linspace(-geom.R, geom.R, 200)
        wall = np.stack([x1, geom.h(x1)], axis=-1)
        top = np.stack([x1, eps + geom.h1(x1)], axis=-1)
        for pair in _all_pairs(geom):
            div = np.abs(pair.divergence(pts))
            scale = np.linalg.norm(pair.gradient(pts), axis=(1, 2))
            worst_div = max(worst_div, float(np.max(div / scale)))
            w_exp, t_exp = _expected_traces(pair, wall)[0], _expected_traces(pair, top)[1]
            worst_trace = max(worst_trace, float(np.max(np.abs(pair.velocity(wall) - w_exp))),
                              float(np.max(np.abs(pair.velocity(top) - t_exp))))
    elapsed = time.perf_counter() - t0
    ok = worst_div < 1e-10 and worst_trace < 1e-12 and elapsed < 10.0
    record_acceptance(1, "auxiliary identities", ok,
                      f"max |div|/|grad| = {worst_div:.2e} (< 1e-10), max trace error = {worst_trace:.2e} "
                      f"(< 1e-12), runtime {elapsed:.1f} s (< 10 s)")
    assert ok


def test_c02_residual_envelopes():
    t0 = time.perf_counter()
    geom = NeckGeometry(AUX_EPS[0])
    out = {}
    for alpha, env in ((1, "1/delta"), (2, "|x1|/delta^2"), (3, "1/delta")):
        rep = verify_bounds(geom, aux_pair(geom, alpha), env, (200, 20), "residual", AUX_EPS)
        out[alpha] = rep.ratio - 1.0
    elapsed = time.perf_counter() - t0
    ok = all(v < 0.20 for v in out.values()) and elapsed < 10.0
    detail = ", ".join(f"f{a} variation {100 * v:.1f}%" for a, v in out.items())
    record_acceptance(2, "residual envelopes", ok, f"{detail} (< 20%), runtime {elapsed:.1f} s (< 10 s)")
    assert ok


def _matrix_at_1e3():
    t0 = time.perf_counter()
    geom, mesh, bc, dec = neck_case(1e-3)
    return geom, dec.system.A, time.perf_counter() - t0


def test_c03_interaction_coefficients():
    geom, A, elapsed = _matrix_at_1e3()
    eps = geom.eps
    scale = {(1, 1): eps**0.5, (2, 2): eps**1.5, (3, 3): eps**0.5, (1, 3): eps**0.5}
    errs, corrected = {}, {}
    for (a, b), s in scale.items():
        target = float(asy.a_leading(geom, a, b).coefficient)
        errs[(a, b)] = abs(A[a - 1, b - 1] * s - target) / target
        lub = float(asy.lubrication_leading(geom, a, b).coefficient)
        corrected[(a, b)] = abs(A[a - 1, b - 1] * s - lub) / lub
    bound = 20 * abs(math.log(eps))
    offdiag = {"a12": abs(A[0, 1]), "a23": abs(A[1, 2])}
    ok = all(v < 0.10 for v in errs.values()) and all(v < bound for v in offdiag.values()) and elapsed < 300
    detail = ", ".join(f"a{a}{b} rel.err {v:.3f}" for (a, b), v in errs.items())
    detail += f" (< 0.10); |a12| = {offdiag['a12']:.1f}, |a23| = {offdiag['a23']:.1f} (< {bound:.1f})"
    detail += "; vs lubrication coefficients: " + ", ".join(f"a{a}{b} {v:.3f}" for (a, b), v in corrected.items())
    record_acceptance(3, "interaction coefficients at eps=1e-3", ok, detail + f"; runtime {elapsed:.1f} s")
    assert ok


def test_c04_determinant():
    geom, A, _ = _matrix_at_1e3()
    val = float(np.linalg.det(A)) * geom.eps**2.5
    target = float(asy.detA_leading(geom).coefficient)
    rel = abs(val - target) / target
    lub = float(asy.detA_leading(geom, corrected=True).coefficient)
    ok = rel < 0.15
    record_acceptance(4, "determinant at eps=1e-3", ok,
                      f"det(A) eps^(5/2) = {val:.4g}, target 2 pi^3 = {target:.4g}, rel.err {rel:.3f} (< 0.15); "
                      f"lubrication value 3 pi^3/2 = {lub:.4g}")
    assert ok


def _sequences(report, variant):
    out = {}
    for r in report.records:
        e, C = r["eps"], r["C"]
        if variant == "Phi1":
            seq = {"|C1-1|/sqrt(eps)": abs(C[0] - 1) / e**0.5, "|C2|/eps^1.5": abs(C[1]) / e**1.5,
                   "|C3|/sqrt(eps)": abs(C[2]) / e**0.5}
        else:
            seq = {"|C1|/sqrt(eps)": abs(C[0]) / e**0.5, "|C2-1|/eps": abs(C[1] - 1) / e,
                   "|C3|/sqrt(eps)": abs(C[2]) / e**0.5}
        for k, v in seq.items():
            out.setdefault(k, []).append(v)
    return {k: max_min_ratio(v) for k, v in out.items()}


def test_c05_free_constants(phi1_sweep):
    ratios = {"Phi1": _sequences(phi1_sweep, "Phi1"), "Phi2": _sequences(sweep_report("Phi2"), "Phi2")}
    ok = all(v <= 3.0 for r in ratios.values() for v in r.values())
    detail = "; ".join(f"{bc}: " + ", ".join(f"{k} {v:.2f}" for k, v in r.items()) for bc, r in ratios.items())
    record_acceptance(5, "free-constant envelopes", ok, f"max/min {detail} (<= 3)")
    assert ok


def test_c06_blowup_rates(phi1_sweep):
    t0 = time.perf_counter()
    reports = {"Phi1": phi1_sweep, "Phi2": sweep_report("Phi2"), "Phi3(l=2)": sweep_report("Phi3", 2),
               "Phi4(l=1)": sweep_report("Phi4", 1)}
    elapsed = sum(sum(r["timing"].values()) for rep in reports.values() for r in rep.records)
    slopes = {k: fit_rate(reports[k].pairs("grad_mid")).slope for k in ("Phi1", "Phi2", "Phi3(l=2)")}
    h3 = extrapolate_Qstar([(r["eps"], r["blowup"]["H3"]) for r in reports["Phi3(l=2)"].records])
    h3_active = abs(h3.limit) > 2 * h3.uncertainty
    env_ratio = max_min_ratio([r["envelope"]["delta_grad"] for r in reports["Phi4(l=1)"].records])
    checks = [-0.6 <= slopes["Phi1"] <= -0.4, -0.6 <= slopes["Phi2"] <= -0.4, env_ratio <= 3.0]
    if h3_active:
        checks.append(-0.6 <= slopes["Phi3(l=2)"] <= -0.4)
    ok = all(checks) and elapsed + (time.perf_counter() - t0) < 1800
    detail = ", ".join(f"{k} slope {v:.3f}" for k, v in slopes.items())
    detail += (f" (in [-0.6, -0.4]); H3 limit {h3.limit:.1f} +/- {h3.uncertainty:.1f} "
               f"({'nonzero, Phi3 slope enforced' if h3_active else 'indistinguishable from 0, Phi3 slope skipped'}); "
               f"Phi4(l=1) sup delta|grad u| max/min {env_ratio:.2f} (<= 3); sweep time {elapsed:.0f} s")
    record_acceptance(6, "blow-up rates", ok, detail)
    assert ok


def test_c07_pressure_rate(phi1_sweep):
    ratio = max_min_ratio([r["p_osc"] * r["eps"] for r in phi1_sweep.records])
    ok = ratio <= 3.0
    record_acceptance(7, "pressure oscillation rate", ok, f"Phi1 p_osc*eps max/min {ratio:.2f} (<= 3)")
    assert ok


def test_c08_oracle_equivalence(phi1_sweep):
    reports = [phi1_sweep, sweep_report("Phi2"), sweep_report("Phi3", 2), sweep_report("Phi4", 1)]
    recs = [r for rep in reports for r in rep.records]
    v = max(r["oracle"]["velocity_rel_l2"] for r in recs)
    c = max(r["oracle"]["C_abs"] for r in recs)
    ok = v < 1e-8 and c < 1e-8
    record_acceptance(8, "oracle equivalence", ok,
                      f"{len(recs)} records: max velocity rel. L2 {v:.2e}, max |dC| {c:.2e} (< 1e-8)")
    assert ok


def test_c09_extrapolation_stability(phi1_sweep):
    changes = {}
    for b in range(3):
        pairs = [(r["eps"], r["shifted"]["1"][b]) for r in phi1_sweep.records]
        full = extrapolate_Qstar(pairs, family="shifted1", bc=BoundaryData("Phi1"))
        drop = extrapolate_Qstar(pairs[:-1])
        changes[b + 1] = abs(full.limit - drop.limit) / abs(full.limit)
    ok = all(v < 0.05 for v in changes.values())
    record_acceptance(9, "shifted-functional extrapolation", ok,
                      ", ".join(f"Q*_(1,{b}) change {100 * v:.2f}%" for b, v in changes.items()) + " (< 5%)")
    assert ok


MU = 1.0


def _u_exact(p):
    x, y = p[..., 0], p[..., 1]
    return np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], axis=-1)


def _p_exact(p):
    return np.sin(p[..., 0] + p[..., 1])


def _force(p):
    c = np.cos(p[..., 0] + p[..., 1])
    return 2 * MU * _u_exact(p) + np.stack([c, c], axis=-1)


def test_c10_solver_order():
    errs = []
    for n in (8, 16, 32):
        sol = solve_dirichlet(unit_square_mesh(n), None, None, _u_exact, force=_force)
        errs.append(sol.l2_errors(_u_exact, _p_exact))
    e = np.array(errs)
    orders = np.log2(e[:-1] / e[1:])
    ok = bool(np.all(orders[:, 0] >= 2.8) and np.all(orders[:, 1] >= 1.8))
    record_acceptance(10, "manufactured-solution orders", ok,
                      f"velocity orders {orders[0, 0]:.2f}, {orders[1, 0]:.2f} (>= 2.8); "
                      f"pressure orders {orders[0, 1]:.2f}, {orders[1, 1]:.2f} (>= 1.8)")
    assert ok


@pytest.mark.parametrize("variant", ["Phi1", "Phi2"])
def test_sweep_records_strictly_decreasing(variant):
    rep = sweep_report(variant)
    eps = [r["eps"] for r in rep.records]
    assert all(b < a for a, b in zip(eps, eps[1:]))
