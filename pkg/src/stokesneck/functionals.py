"""Interaction matrix, boundary-data functionals and the free rigid constants.

With ``u_alpha`` solving the Dirichlet problem with ``psi_alpha`` on the
particle and zero on the wall, and ``u_0`` the problem with zero on the
particle and the wall data ``phi``, the free-particle velocity is
``u = sum_alpha C^alpha u_alpha + u_0`` where ``A C = Q`` with

    a_{alpha beta} = int 2 mu e(u_alpha) : e(u_beta),
    Q_beta        = -int 2 mu e(u_0) : e(u_beta).
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boundary_data import BoundaryData, BoundaryDataError, wall_flux  # noqa: F401  (re-export)
from .geometry import NeckGeometry, rigid_mode
from .stokes_fem import (
    StokesSolution,
    boundary_traction_functional,
    direct_rigid_solve,
    energy_inner,
    get_solver,
)
from .mesh import OUTER, PARTICLE

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


class InteractionError(RuntimeError):
    pass


@dataclass
class InteractionSystem:
    A: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    cond: float
    cramer_discrepancy: float
    residual: float
    eps: Optional[float] = None
    bc: Optional[dict] = None
    shifted: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "A": np.asarray(self.A).tolist(),
            "Q": np.asarray(self.Q).tolist(),
            "C": np.asarray(self.C).tolist(),
            "cond": self.cond,
            "cramer_discrepancy": self.cramer_discrepancy,
            "residual": self.residual,
            "shifted": {str(k): np.asarray(v).tolist() for k, v in self.shifted.items()},
            "eps": self.eps,
            "bc": self.bc,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(
            A=np.array(d["A"], dtype=float),
            Q=np.array(d["Q"], dtype=float),
            C=np.array(d["C"], dtype=float),
            cond=float(d["cond"]),
            cramer_discrepancy=float(d.get("cramer_discrepancy", 0.0)),
            residual=float(d.get("residual", 0.0)),
            eps=d.get("eps"),
            bc=d.get("bc"),
            shifted={int(k): np.array(v, dtype=float) for k, v in d.get("shifted", {}).items()},
        )

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    @property
    def det(self):
        return float(np.linalg.det(self.A))


def _cramer(A, Q):
    det = np.linalg.det(A)
    out = np.empty(3)
    for a in range(3):
        Aa = A.copy()
        Aa[:, a] = Q
        out[a] = np.linalg.det(Aa) / det
    return out


def solve_constants(A, Q, eps=None, bc=None):
    """Pivoted solve of ``A C = Q`` with a Cramer-rule redundancy check."""
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    # condition of the diagonally rescaled matrix: the raw entries differ by eps^{-1}
    d = 1.0 / np.sqrt(np.abs(np.diag(A)))
    cond_raw = float(np.linalg.cond(A))
    cond = float(np.linalg.cond(A * d[:, None] * d[None, :]))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise InteractionError(f"interaction matrix numerically singular (cond = {cond:.3e})")
    C = np.linalg.solve(A, Q)
    Ck = _cramer(A, Q)
    disc = float(np.max(np.abs(C - Ck)) / max(np.max(np.abs(C)), 1e-300))
    if disc > 1e-8:
        warnings.warn(f"Cramer and pivoted solutions differ by {disc:.2e} (conditioning)", RuntimeWarning)
    res = float(np.linalg.norm(A @ C - Q) / max(np.linalg.norm(Q), 1e-300))
    sysm = InteractionSystem(A, Q, C, cond_raw, disc, res, eps, bc)
    sysm.shifted = {1: shifted_Q(sysm, 1), 2: shifted_Q(sysm, 2)}
    return sysm


def assemble_interaction(u1, u2, u3, u0, eps=None, bc=None) -> InteractionSystem:
    """Interaction system from the four Dirichlet solutions on one mesh."""
    us = (u1, u2, u3)
    for u in us + (u0,):
        if u.space is not u1.space:
            raise InteractionError("solutions must share a mesh")
    Amat = get_solver(u1.mesh, u1.mu).A
    A = np.empty((3, 3))
    for a in range(3):
        for b in range(a, 3):
            A[a, b] = A[b, a] = energy_inner(us[a], us[b], Amat)
    Q = np.array([-energy_inner(u0, ub, Amat) for ub in us])
    return solve_constants(A, Q, eps, bc)


def shifted_Q(system: InteractionSystem, j: int):
    """``Q_{j, beta} = Q_beta - a_{beta j}``."""
    if j not in (1, 2):
        raise ValueError("shift index must be 1 or 2")
    return np.asarray(system.Q, dtype=float) - np.asarray(system.A, dtype=float)[:, j - 1]


def blowup_factor(system: InteractionSystem, geom: NeckGeometry, mode: str, bc: BoundaryData = None):
    """Current-eps value of a blow-up combination.

    ``H1``: ``Q_{1,1} - (kappa1+kappa) Q_{1,3}``; ``H2``: ``Q_{2,1} -
    (kappa1+kappa) Q_{2,3}``; ``H3``: ``Q_1 - (kappa1+kappa) Q_3``, which has a
    finite limit only for ``Phi3`` with ``l >= 2`` and ``Phi4`` with ``l >= 3``.
    ``mode="raw"`` returns the unshifted combination without restriction.
    """
    s = geom.kappa1 + geom.kappa
    if mode == "H1":
        q = shifted_Q(system, 1)
    elif mode == "H2":
        q = shifted_Q(system, 2)
    elif mode in ("H3", "raw"):
        if mode == "H3":
            if bc is None and system.bc is not None:
                bc = BoundaryData.from_dict(system.bc)
            ok = bc is not None and ((bc.variant == "Phi3" and bc.l >= 2) or (bc.variant == "Phi4" and bc.l >= 3))
            if not ok:
                raise ValueError(
                    "H3 factor needs Phi3 with l >= 2 or Phi4 with l >= 3; otherwise Q_beta diverges as eps -> 0"
                )
        q = np.asarray(system.Q, dtype=float)
    else:
        raise ValueError(f"unknown blow-up mode {mode!r}")
    return float(q[0] - s * q[2])


# ------------------------------------------------------------ solutions
@dataclass
class FullSolution:
    velocity: StokesSolution
    C: np.ndarray

    def __getattr__(self, name):
        return getattr(self.velocity, name)


def reconstruct(u1, u2, u3, u0, C) -> FullSolution:
    """``u = sum C^alpha u_alpha + u_0`` and the matching pressure."""
    C = np.asarray(C, dtype=float)
    u = u0.velocity + C[0] * u1.velocity + C[1] * u2.velocity + C[2] * u3.velocity
    p = u0.pressure + C[0] * u1.pressure + C[1] * u2.pressure + C[2] * u3.pressure
    sol = StokesSolution(u0.space, u, p, u0.mu, "zero-mean", {"source": "decomposition"})
    return FullSolution(sol, C)


@dataclass
class Decomposition:
    """The four Dirichlet solutions, the interaction system and the reconstruction."""

    geom: NeckGeometry
    bc: BoundaryData
    modes: tuple
    u0: StokesSolution
    system: InteractionSystem
    full: FullSolution


def solve_decomposition(mesh, geom: NeckGeometry, bc: BoundaryData) -> Decomposition:
    """Four Dirichlet solves sharing one factorisation, then ``A C = Q``."""
    solver = get_solver(mesh, geom.mu)
    modes = []
    for a in (1, 2, 3):
        modes.append(solver.solve({PARTICLE: lambda p, a=a: rigid_mode(a, p), OUTER: _zero}))
    trace = lambda p: bc.trace(geom, p)  # noqa: E731
    u0 = solver.solve({PARTICLE: _zero, OUTER: trace}, flux_patch=geom.flux_patch)
    system = assemble_interaction(*modes, u0, eps=geom.eps, bc=bc.to_dict())
    full = reconstruct(*modes, u0, system.C)
    return Decomposition(geom, bc, tuple(modes), u0, system, full)


def _zero(p):
    return np.zeros(np.shape(p))


def boundary_q(u0: StokesSolution, order=4):
    """``Q_beta`` from the particle-boundary stress ``int psi_beta . sigma[u0] nu``."""
    return np.array([
        boundary_traction_functional(u0, lambda p, b=b: rigid_mode(b, p), PARTICLE, order)
        for b in (1, 2, 3)
    ])


def oracle_compare(mesh, geom, bc, decomposition: Decomposition = None):
    """Same-mesh comparison of the decomposition and the direct rigid solve."""
    dec = decomposition or solve_decomposition(mesh, geom, bc)
    direct, C = direct_rigid_solve(mesh, geom, bc)
    rec = dec.full.velocity
    diff = rec.l2_velocity(direct)
    norm = direct.l2_velocity()
    return {
        "velocity_rel_l2": diff / max(norm, 1e-300),
        "C_abs": float(np.max(np.abs(C - dec.system.C))),
        "C_direct": C.tolist(),
        "C_decomposition": dec.system.C.tolist(),
        "direct": direct,
    }
