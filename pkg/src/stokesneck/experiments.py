"""Epsilon sweeps, rate fits, midpoint probes and limit extrapolation.

A sweep runs, for each gap width, mesh -> four Dirichlet solves ->
interaction system -> reconstruction -> probes, and cross-checks every
record against the direct rigid solve on the same mesh.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .aux_fields import neck_samples
from .boundary_data import BoundaryData
from .functionals import blowup_factor, boundary_q, oracle_compare, solve_decomposition
from .geometry import NeckGeometry
from .mesh import EPS_FLOOR, MeshParams, build_neck_mesh, quality_report, refine_uniform
from .provenance import canonical_json, content_hash, stamped
from .stokes_fem import get_solver, solver_backend

log = logging.getLogger(__name__)

DEFAULT_EPS = tuple(10.0 ** -e for e in (1.5, 2.0, 2.5, 3.0))
EPS_CEIL = 1e-1


class SweepError(RuntimeError):
    """Failure inside one sweep record; carries the offending gap width."""

    def __init__(self, eps, cause):
        super().__init__(f"sweep failed at eps = {eps:.6g}: {cause}")
        self.eps = eps
        self.cause = cause


class DivergentFamilyError(ValueError):
    pass


# ----------------------------------------------------------------- probes
def midpoint_probe(full, geom: NeckGeometry) -> float:
    """Frobenius norm of the velocity gradient at the gap midpoint ``(0, eps/2)``."""
    G = full.eval_gradient(np.array([[0.0, 0.5 * geom.eps]]))
    return float(np.linalg.norm(G[0]))


def omega_r_samples(geom: NeckGeometry, n1=200, n2=20):
    """Dense sample of the closed neck region ``|x1| <= R`` including both walls."""
    return neck_samples(geom, n1, n2, r=geom.R, include_boundary=True)


def pressure_oscillation(full, geom: NeckGeometry, n1=200, n2=20) -> float:
    """``inf_c max |p + c|`` over the closed neck, i.e. half the peak-to-peak."""
    p = full.eval_pressure(omega_r_samples(geom, n1, n2))
    return 0.5 * float(p.max() - p.min())


def neck_gradient_envelope(full, geom: NeckGeometry, n1=200, n2=20):
    """``sup delta |grad u|`` and ``sup sqrt(delta) |grad u|`` over the neck samples."""
    pts = omega_r_samples(geom, n1, n2)
    g = np.linalg.norm(full.eval_gradient(pts), axis=(1, 2))
    d = geom.eps + geom.kappa0 * pts[:, 0] ** 2
    return {"delta_grad": float(np.max(d * g)), "sqrt_delta_grad": float(np.max(np.sqrt(d) * g))}


# ------------------------------------------------------------------ fits
@dataclass
class RateFit:
    slope: float
    intercept: float
    ci: float
    n: int

    def __iter__(self):
        return iter((self.slope, self.intercept, self.ci))

    def to_dict(self):
        return asdict(self)


def fit_rate(pairs: Sequence, confidence=0.95) -> RateFit:
    """Least squares of ``ln value`` against ``ln eps``.

    Returns slope, intercept and the half-width of the ``confidence``
    interval for the slope from the residual variance (zero for exact data
    or when only two points remain after the fit).
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 3:
        raise ValueError("fit_rate needs at least 3 (eps, value) pairs")
    if np.any(arr[:, 0] <= 0) or np.any(arr[:, 1] <= 0):
        raise ValueError("fit_rate needs positive eps and positive values")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    X = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    dof = len(x) - 2
    s2 = float(r @ r) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    half = float(stats.t.ppf(0.5 + confidence / 2, dof) * math.sqrt(max(cov[0, 0], 0.0)))
    return RateFit(float(coef[0]), float(coef[1]), half, len(x))


@dataclass
class Extrapolation:
    limit: float
    uncertainty: float
    theta: float
    coefficient: float
    rms_residual: float

    def __iter__(self):
        return iter((self.limit, self.uncertainty))

    def to_dict(self):
        return asdict(self)


_BOUNDED_FAMILIES = {
    # family -> predicate on BoundaryData under which the family has a finite limit
    "shifted1": lambda bc: bc.variant == "Phi1",
    "shifted2": lambda bc: bc.variant == "Phi2",
    "Q": lambda bc: (bc.variant == "Phi3" and bc.l >= 2) or (bc.variant == "Phi4" and bc.l >= 3),
}


def check_family(family: str, bc: BoundaryData):
    """Raise ``DivergentFamilyError`` if ``family`` has no finite limit for ``bc``."""
    if family not in _BOUNDED_FAMILIES:
        raise ValueError(f"unknown functional family {family!r}; use one of {sorted(_BOUNDED_FAMILIES)}")
    if not _BOUNDED_FAMILIES[family](bc):
        raise DivergentFamilyError(
            f"family {family!r} diverges as eps -> 0 for {bc.label}: bounded families are "
            "shifted1 for Phi1, shifted2 for Phi2 and Q for Phi3 (l >= 2) or Phi4 (l >= 3)"
        )


def extrapolate_Qstar(pairs: Sequence, theta=0.125, free_theta=False, family=None, bc=None) -> Extrapolation:
    """Fit ``value(eps) = c0 + c1 eps^theta`` and return ``c0`` with its standard error.

    ``theta`` is fixed by default; ``free_theta=True`` fits it too (needs at
    least 4 points). When ``family`` and ``bc`` are given the family is
    validated first.
    """
    if family is not None:
        if bc is None:
            raise ValueError("family validation needs the boundary data")
        check_family(family, bc)
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 3:
        raise ValueError("extrapolation needs at least 3 (eps, value) pairs")
    if np.any(arr[:, 0] <= 0):
        raise ValueError("eps values must be positive")
    e, v = arr[:, 0], arr[:, 1]
    if free_theta:
        if len(arr) < 4:
            raise ValueError("free-theta extrapolation needs at least 4 pairs")
        p0 = _fixed_theta_fit(e, v, theta)[:2]
        popt, pcov = optimize.curve_fit(
            lambda x, c0, c1, th: c0 + c1 * x**th, e, v, p0=[p0[0], p0[1], theta],
            bounds=([-np.inf, -np.inf, 1e-3], [np.inf, np.inf, 3.0]), maxfev=20000,
        )
        c0, c1, th = popt
        r = v - (c0 + c1 * e**th)
        err = float(math.sqrt(max(pcov[0, 0], 0.0))) if np.all(np.isfinite(pcov)) else float("inf")
        return Extrapolation(float(c0), err, float(th), float(c1), float(np.sqrt(np.mean(r**2))))
    c0, c1, err, rms = _fixed_theta_fit(e, v, theta)
    return Extrapolation(c0, err, float(theta), c1, rms)


def _fixed_theta_fit(e, v, theta):
    X = np.stack([np.ones_like(e), e**theta], axis=1)
    coef, *_ = np.linalg.lstsq(X, v, rcond=None)
    r = v - X @ coef
    dof = len(e) - 2
    s2 = float(r @ r) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    return float(coef[0]), float(coef[1]), float(math.sqrt(max(cov[0, 0], 0.0))), float(np.sqrt(np.mean(r**2)))


# ---------------------------------------------------------------- sweeps
@dataclass
class SweepConfig:
    eps: tuple = DEFAULT_EPS
    bc: dict = field(default_factory=lambda: {"class": "Phi1"})
    geometry: dict = field(default_factory=dict)
    mesh: dict = field(default_factory=dict)
    samples: tuple = (200, 20)
    refinement_check: bool = True
    oracle: bool = True
    workers: int = 1

    def __post_init__(self):
        self.eps = tuple(float(e) for e in self.eps)
        self.samples = tuple(int(s) for s in self.samples)
        validate_eps(self.eps)
        BoundaryData.from_dict(self.bc)
        MeshParams.from_dict(self.mesh)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def boundary_data(self):
        return BoundaryData.from_dict(self.bc)

    def geometry_at(self, eps):
        d = dict(self.geometry)
        d["eps"] = eps
        return NeckGeometry.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        d["eps"] = list(self.eps)
        d["samples"] = list(self.samples)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in dict(d).items() if k in cls.__dataclass_fields__})


def validate_eps(eps):
    if len(eps) == 0:
        raise ValueError("eps list is empty")
    for e in eps:
        if not (EPS_FLOOR <= e <= EPS_CEIL):
            raise ValueError(f"eps = {e:g} outside [{EPS_FLOOR:g}, {EPS_CEIL:g}]")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps values must be strictly decreasing")


@dataclass
class SweepReport:
    config: dict
    records: list
    fits: dict
    extrapolations: dict
    refinement: dict
    backend: str

    def to_dict(self):
        return asdict(self)

    def pairs(self, key):
        """``(eps, value)`` pairs of a scalar record column (dotted keys allowed)."""
        out = []
        for r in self.records:
            v = r
            for part in key.split("."):
                v = v[part] if not isinstance(v, list) else v[int(part)]
            out.append((r["eps"], float(v)))
        return out


def _record(config: SweepConfig, eps: float, mesh=None):
    geom = config.geometry_at(eps)
    bc = config.boundary_data
    t0 = time.perf_counter()
    mesh = mesh if mesh is not None else build_neck_mesh(geom, MeshParams.from_dict(config.mesh))
    dec = solve_decomposition(mesh, geom, bc)
    t_dec = time.perf_counter() - t0
    sysm = dec.system
    full = dec.full
    n1, n2 = config.samples
    rec = {
        "eps": eps,
        "A": sysm.A.tolist(),
        "Q": sysm.Q.tolist(),
        "C": sysm.C.tolist(),
        "det": sysm.det,
        "shifted": {str(k): v.tolist() for k, v in sysm.shifted.items()},
        "cond": sysm.cond,
        "cramer_discrepancy": sysm.cramer_discrepancy,
        "interaction_residual": sysm.residual,
        "grad_mid": midpoint_probe(full, geom),
        "p_osc": pressure_oscillation(full, geom, n1, n2),
        "envelope": neck_gradient_envelope(full, geom, n1, n2),
        "blowup": {"raw": blowup_factor(sysm, geom, "raw"), "H1": blowup_factor(sysm, geom, "H1"),
                   "H2": blowup_factor(sysm, geom, "H2")},
        "boundary_Q": boundary_q(dec.u0).tolist(),
        "solver": {k: dec.u0.diagnostics.get(k) for k in
                   ("relative_residual", "divergence_residual", "flux_defect") if k in dec.u0.diagnostics},
        "mode_residuals": [m.diagnostics.get("relative_residual") for m in dec.modes],
        "mesh": asdict(quality_report(mesh, geom)),
        "timing": {"decomposition": t_dec},
    }
    if bc.variant in ("Phi3", "Phi4"):
        try:
            rec["blowup"]["H3"] = blowup_factor(sysm, geom, "H3", bc)
        except ValueError:
            pass
    if config.oracle:
        t1 = time.perf_counter()
        oc = oracle_compare(mesh, geom, bc, dec)
        direct = oc.pop("direct")
        gd = midpoint_probe(direct, geom)
        rec["oracle"] = {
            "velocity_rel_l2": oc["velocity_rel_l2"],
            "C_abs": oc["C_abs"],
            "C_direct": oc["C_direct"],
            "grad_mid_direct": gd,
            "grad_mid_rel": abs(gd - rec["grad_mid"]) / max(abs(rec["grad_mid"]), 1e-300),
            "residual": direct.diagnostics.get("relative_residual"),
        }
        rec["timing"]["oracle"] = time.perf_counter() - t1
    rec["mesh"]["boundary_offsets"] = {k: float(v) for k, v in rec["mesh"]["boundary_offsets"].items()}
    return rec, mesh


def _record_safe(config, eps):
    try:
        rec, _ = _record(config, eps)
    except Exception as exc:
        raise SweepError(eps, exc) from exc
    return rec


def _refinement_check(config: SweepConfig, eps: float, rec: dict):
    geom = config.geometry_at(eps)
    mesh = refine_uniform(build_neck_mesh(geom, MeshParams.from_dict(config.mesh)))
    cfg = SweepConfig.from_dict({**config.to_dict(), "oracle": False})
    fine, _ = _record(cfg, eps, mesh)
    A0, A1 = np.array(rec["A"]), np.array(fine["A"])
    return {
        "eps": eps,
        "n_triangles": fine["mesh"]["n_triangles"],
        "A_diag_rel_change": (np.abs(np.diag(A1) - np.diag(A0)) / np.abs(np.diag(A1))).tolist(),
        "C_abs_change": np.abs(np.array(fine["C"]) - np.array(rec["C"])).tolist(),
        "grad_mid_rel_change": abs(fine["grad_mid"] - rec["grad_mid"]) / abs(fine["grad_mid"]),
        "p_osc_rel_change": abs(fine["p_osc"] - rec["p_osc"]) / max(abs(fine["p_osc"]), 1e-300),
        "fine": {k: fine[k] for k in ("A", "Q", "C", "grad_mid", "p_osc", "shifted")},
    }


def _constant_sequences(bc: BoundaryData, records):
    """Scaled free-constant sequences whose boundedness is the rate claim."""
    out = {}
    for r in records:
        e = r["eps"]
        C = r["C"]
        if bc.variant == "Phi1":
            seq = {"C1-1/sqrt": abs(C[0] - 1) / e**0.5, "C2/eps^1.5": abs(C[1]) / e**1.5, "C3/sqrt": abs(C[2]) / e**0.5}
        elif bc.variant == "Phi2":
            seq = {"C1/sqrt": abs(C[0]) / e**0.5, "C2-1/eps": abs(C[1] - 1) / e, "C3/sqrt": abs(C[2]) / e**0.5}
        else:
            seq = {}
        for k, v in seq.items():
            out.setdefault(k, []).append(v)
    return out


def max_min_ratio(values):
    v = np.abs(np.asarray(values, dtype=float))
    if v.min() == 0:
        return float("inf")
    return float(v.max() / v.min())


def run_sweep(config: SweepConfig, out_dir: Optional[str] = None) -> SweepReport:
    """Run every gap width of ``config`` and assemble the report in eps order."""
    if isinstance(config, dict):
        config = SweepConfig.from_dict(config)
    bc = config.boundary_data
    if config.workers > 1 and len(config.eps) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            records = list(ex.map(_record_safe, [config] * len(config.eps), config.eps))
    else:
        records = [_record_safe(config, e) for e in config.eps]
    for r in records:
        log.info("eps=%.3e grad_mid=%.6g C=%s", r["eps"], r["grad_mid"], r["C"])

    fits = {}
    if len(records) >= 3:
        for key in ("grad_mid", "p_osc", "envelope.delta_grad"):
            pairs = SweepReport(None, records, {}, {}, {}, "").pairs(key)
            if all(v > 0 for _, v in pairs):
                fits[key] = fit_rate(pairs).to_dict()
    ratios = {k: max_min_ratio(v) for k, v in _constant_sequences(bc, records).items()}
    ratios["p_osc*eps"] = max_min_ratio([r["p_osc"] * r["eps"] for r in records])
    ratios["delta_grad"] = max_min_ratio([r["envelope"]["delta_grad"] for r in records])
    fits["max_min_ratio"] = ratios

    extrap = {}
    if len(records) >= 3:
        fam = {"Phi1": ("shifted1", lambda r: r["shifted"]["1"]), "Phi2": ("shifted2", lambda r: r["shifted"]["2"]),
               }.get(bc.variant)
        if fam is None and bc.variant in ("Phi3", "Phi4"):
            try:
                check_family("Q", bc)
                fam = ("Q", lambda r: r["Q"])
            except DivergentFamilyError:
                fam = None
        if fam is not None:
            name, get = fam
            for b in range(3):
                pairs = [(r["eps"], get(r)[b]) for r in records]
                full = extrapolate_Qstar(pairs, family=name, bc=bc)
                entry = {"all": full.to_dict()}
                if len(pairs) >= 4:
                    entry["drop_smallest"] = extrapolate_Qstar(pairs[:-1]).to_dict()
                extrap[f"{name}[{b + 1}]"] = entry

    refinement = {}
    if config.refinement_check:
        picks = sorted({0, len(records) - 1})
        for i in picks:
            refinement[f"{records[i]['eps']:.6g}"] = _refinement_check(config, records[i]["eps"], records[i])

    report = SweepReport(config.to_dict(), records, fits, extrap, refinement, solver_backend())
    if out_dir is not None:
        write_report(report, out_dir)
    return report


CSV_COLUMNS = (
    "eps", "grad_mid", "p_osc", "delta_grad", "sqrt_delta_grad", "det",
    "a11", "a12", "a13", "a22", "a23", "a33", "Q1", "Q2", "Q3", "C1", "C2", "C3",
    "Q1_shift1", "Q2_shift1", "Q3_shift1", "Q1_shift2", "Q2_shift2", "Q3_shift2",
    "blowup_raw", "H1", "H2", "oracle_velocity_rel_l2", "oracle_C_abs", "n_triangles", "max_scaled_aspect",
)


def record_row(r):
    A = r["A"]
    row = {
        "eps": r["eps"], "grad_mid": r["grad_mid"], "p_osc": r["p_osc"],
        "delta_grad": r["envelope"]["delta_grad"], "sqrt_delta_grad": r["envelope"]["sqrt_delta_grad"],
        "det": r["det"], "a11": A[0][0], "a12": A[0][1], "a13": A[0][2], "a22": A[1][1], "a23": A[1][2],
        "a33": A[2][2], "blowup_raw": r["blowup"]["raw"], "H1": r["blowup"]["H1"], "H2": r["blowup"]["H2"],
        "oracle_velocity_rel_l2": r.get("oracle", {}).get("velocity_rel_l2", float("nan")),
        "oracle_C_abs": r.get("oracle", {}).get("C_abs", float("nan")),
        "n_triangles": r["mesh"]["n_triangles"], "max_scaled_aspect": r["mesh"]["max_scaled_aspect"],
    }
    for b in range(3):
        row[f"Q{b + 1}"] = r["Q"][b]
        row[f"C{b + 1}"] = r["C"][b]
        row[f"Q{b + 1}_shift1"] = r["shifted"]["1"][b]
        row[f"Q{b + 1}_shift2"] = r["shifted"]["2"][b]
    return row


def fmt17(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.16e}"


def write_records_csv(records, path, header=None):
    with open(path, "w", newline="") as f:
        if header:
            for line in header:
                f.write(f"# {line}\n")
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in records:
            row = record_row(r)
            w.writerow([fmt17(row[c]) for c in CSV_COLUMNS])


def read_records_csv(path):
    with open(path, newline="") as f:
        rows = [line for line in f if not line.startswith("#")]
    reader = csv.DictReader(rows)
    return [{k: float(v) for k, v in row.items()} for row in reader]


def write_report(report: SweepReport, out_dir: str, config: Optional[dict] = None):
    """Persist the report JSON, one raw JSON file per record and the flat CSV.

    Every file carries ``config`` (defaults to the sweep configuration) and
    a content hash.
    """
    config = report.config if config is None else config
    os.makedirs(out_dir, exist_ok=True)
    rec_dir = os.path.join(out_dir, "records")
    os.makedirs(rec_dir, exist_ok=True)
    for r in report.records:
        with open(os.path.join(rec_dir, f"eps_{r['eps']:.6e}.json"), "w") as f:
            json.dump(stamped(r, config), f, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "sweep.json"), "w") as f:
        json.dump(stamped(report.to_dict(), config), f, indent=1, sort_keys=True)
    rows = [[fmt17(record_row(r)[c]) for c in CSV_COLUMNS] for r in report.records]
    digest = content_hash({"config": config, "rows": rows})
    header = [f"config={canonical_json(config)}", f"content_hash={digest}"]
    write_records_csv(report.records, os.path.join(out_dir, "sweep.csv"), header)


def solver_stamp(mesh, geom):
    """Small dictionary identifying a factorised solver and its size."""
    s = get_solver(mesh, geom.mu)
    return {"backend": solver_backend(), "n_unknowns": int(s.K.shape[0]), "nnz": int(s.K.nnz)}
