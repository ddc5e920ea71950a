"""Closed-form auxiliary velocity/pressure pairs in the neck.

Every field is built from the normalised gap coordinate

    k(x) = (x2 - h(x1)) / delta(x1) - 1/2,

which runs from -1/2 on the wall to 1/2 on the particle. The fields are
written symbolically once (sympy), differentiated exactly and compiled to
numpy callables, so first and second derivatives carry no truncation error.

The vertical velocity of the horizontal-translation field is rebuilt from
the continuity equation: the printed polynomial ``G1`` misses the
x1-only term ``4 kappa^2 x1 / (kappa0 (kappa1 + kappa))`` and then fails to
be divergence free whenever ``kappa != 0``. ``printed_G1=True`` restores the
uncorrected expression for comparison.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp

try:
    import symengine as _se
except ImportError:  # pragma: no cover
    _se = None

from .boundary_data import BoundaryData
from .geometry import NeckGeometry, OutOfNeckError

X1, X2 = sp.symbols("x1 x2", real=True)
EPS, KAP, KAP1, MU = sp.symbols("eps kappa kappa1 mu", positive=True)
_ARGS = (X1, X2, EPS, KAP, KAP1, MU)

# output order of the compiled field functions
_NAMES = (
    "v1", "v2",
    "v1_1", "v1_2", "v2_1", "v2_2",
    "v1_11", "v1_12", "v1_22", "v2_11", "v2_12", "v2_22",
    "p", "p_1", "p_2",
)


def _symbols():
    k0 = KAP1 - KAP
    d = EPS + k0 * X1**2
    k = (X2 - KAP * X1**2) / d - sp.Rational(1, 2)
    q = k**2 - sp.Rational(1, 4)
    return k0, d, k, q


def _g1(printed=False):
    k0, d, k, q = _symbols()
    g = 2 * X1 * ((KAP + k0 * (k + sp.Rational(1, 2))) * (-4 * X1**2 / d) + 2 * (k + sp.Rational(1, 2)))
    if not printed:
        g = g + 4 * KAP**2 * X1 / (k0 * (KAP1 + KAP))
    return g


def _g2():
    k0, d, k, q = _symbols()
    return -2 * k + (6 * X1 / d) * ((KAP1 + KAP) * X1 + 2 * k0 * X1 * k)


def _g3():
    k0, d, k, q = _symbols()
    return 2 * X1 * k + X1 * ((KAP1 + KAP) + 2 * k0 * k) * (
        -4 * X1**2 / d - 3 * X2**2 / d + 1 / k0
    )


def _mode_expr(alpha, printed_G1=False):
    """Velocity components and pressure for rigid mode ``alpha``."""
    k0, d, k, q = _symbols()
    half = sp.Rational(1, 2)
    if alpha == 1:
        g1 = _g1(printed_G1)
        v = ((k + half) + (KAP1 + KAP) * (-4 * X1**2 / d + 1 / k0) * q, (KAP1 + KAP) * g1 * q)
        p = (KAP1 + KAP) / k0 * 2 * MU * X1 / d**2 + MU * sp.diff(v[1], X2)
    elif alpha == 2:
        g2 = _g2()
        v = (6 * X1 / d * q, (k + half) + g2 * q)
        p = -3 * MU / (k0 * d**2) + 2 * MU / d * ((6 * k0 * X1**2 / d - 1) * k**2 + k * g2)
    elif alpha == 3:
        g3 = _g3()
        a3 = -4 * X1**2 / d - 2 * k * X2 - 3 * X2**2 / d + 1 / k0
        v = (X2 * (k + half) + a3 * q, -X1 * (k + half) + g3 * q)
        p = 2 * MU / k0 * X1 / d**2 + MU * (-X1 / d + sp.diff(g3, X2) * q + 2 * k / d * g3)
    else:
        raise ValueError(f"rigid mode must be 1, 2 or 3, got {alpha}")
    return v, p


def _bc_expr(variant, l=None, printed_G1=False):
    """Velocity components and pressure for the wall-data auxiliary pair."""
    k0, d, k, q = _symbols()
    half = sp.Rational(1, 2)
    dk1 = sp.diff(k, X1)
    if variant == "Phi1":
        g1 = _g1(printed_G1)
        v = ((half - k) + (KAP1 + KAP) * (4 * X1**2 / d - 1 / k0) * q, -(KAP1 + KAP) * g1 * q)
        _, p1 = _mode_expr(1, printed_G1)
        p = -p1
    elif variant == "Phi2":
        g2 = _g2()
        v = (-6 * X1 / d * q, (half - k) - g2 * q)
        p = 3 * MU / (k0 * d**2) + MU * sp.diff(v[1], X2)
    elif variant == "Phi3":
        c = (32 * k0 * k + 12 * KAP) / (l + 2)
        g = (
            (2 * k - 1) * k * d * l * X1 ** (l - 1)
            - 2 * X1 ** (l + 1) * k * ((KAP1 + KAP) + 2 * k0 * k)
            - dk1 * (c * X1 ** (l + 2) - (8 * k - 3) * X1**l * d)
        )
        v = (X1**l * (half - k) + (c * X1 ** (l + 2) / d - (8 * k - 3) * X1**l) * q, g * q)
        p = sp.Integer(0)
    elif variant == "Phi4" and l == 1:
        a = -4 * X1**2 / d + 1 / k0
        g = 2 * X1 * k - d * dk1 * a
        v = (a * q, X1 * (half - k) + g * q)
        p = 2 * MU / k0 * X1 / d**2 + MU * sp.diff(v[1], X2)
    elif variant == "Phi4":
        g = 2 * X1**l * k + 6 * dk1 * X1 ** (l + 1) / (l + 1)
        v = (-6 * X1 ** (l + 1) / ((l + 1) * d) * q, X1**l * (half - k) + g * q)
        p = sp.Integer(0)
    else:
        raise ValueError(f"no closed-form auxiliary pair for {variant}")
    return v, p


def _compile(v, p):
    """Exact first/second derivatives compiled to one vectorised callable.

    Differentiation and code generation go through symengine when it is
    installed (much faster on these expression trees) and through sympy
    otherwise; both produce the same closed forms.
    """
    if _se is not None:
        return _compile_symengine(v, p)
    v1, v2 = v
    exprs = [v1, v2]
    exprs += [sp.diff(v1, X1), sp.diff(v1, X2), sp.diff(v2, X1), sp.diff(v2, X2)]
    for c in (v1, v2):
        exprs += [sp.diff(c, X1, 2), sp.diff(c, X1, X2), sp.diff(c, X2, 2)]
    exprs += [p, sp.diff(p, X1), sp.diff(p, X2)]
    return sp.lambdify(_ARGS, exprs, modules="numpy", cse=True)


def _compile_symengine(v, p):
    x1, x2 = _se.sympify(X1), _se.sympify(X2)
    v1, v2, pe = (_se.sympify(e) for e in (v[0], v[1], p))
    exprs = [v1, v2]
    for c in (v1, v2):
        exprs += [c.diff(x1), c.diff(x2)]
    for c in (v1, v2):
        c1 = c.diff(x1)
        exprs += [c1.diff(x1), c1.diff(x2), c.diff(x2).diff(x2)]
    exprs += [pe, pe.diff(x1), pe.diff(x2)]
    fn = _se.Lambdify([_se.sympify(a) for a in _ARGS], exprs, backend="lambda", cse=True)

    def call(*args):
        b = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
        flat = np.stack([a.reshape(-1) for a in b], axis=-1)
        out = np.asarray(fn(flat)).reshape(flat.shape[0], len(exprs))
        return [out[:, i].reshape(b[0].shape) for i in range(len(exprs))]

    return call


@lru_cache(maxsize=None)
def _mode_function(alpha, printed_G1=False):
    return _compile(*_mode_expr(alpha, printed_G1))


@lru_cache(maxsize=None)
def _bc_function(variant, l=None, printed_G1=False):
    return _compile(*_bc_expr(variant, l, printed_G1))


def _as_points(p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 2:
        raise ValueError("points must have a trailing dimension of size 2")
    return p


def _check_in_neck(geom, p, r=None):
    r = 2.0 * geom.R if r is None else r
    x1, x2 = p[..., 0], p[..., 1]
    if np.any(np.abs(x1) > r * (1 + 1e-14)):
        raise OutOfNeckError("point outside the neck region |x1| <= 2R")
    d = geom.eps + geom.kappa0 * x1**2
    k = (x2 - geom.kappa * x1**2) / d - 0.5
    if np.any(np.abs(k) > 0.5 + 1e-9):
        raise OutOfNeckError("point outside the gap between wall and particle")


def k_eval(geom: NeckGeometry, p):
    """Normalised gap coordinate ``k`` at neck points."""
    p = _as_points(p)
    _check_in_neck(geom, p)
    x1, x2 = p[..., 0], p[..., 1]
    d = geom.eps + geom.kappa0 * x1**2
    return (x2 - geom.kappa * x1**2) / d - 0.5


def k_grad(geom: NeckGeometry, p):
    """Gradient of ``k``: ``(-(kappa1+kappa) x1/delta - 2 kappa0 x1 k/delta, 1/delta)``."""
    k = k_eval(geom, p)
    x1 = np.asarray(p, dtype=float)[..., 0]
    d = geom.eps + geom.kappa0 * x1**2
    g1 = -(geom.kappa1 + geom.kappa) * x1 / d - 2 * geom.kappa0 * x1 * k / d
    return np.stack([g1, 1.0 / d], axis=-1)


def neck_samples(geom: NeckGeometry, n1=200, n2=20, r=None, include_boundary=True):
    """Tensor grid of neck points: ``n1`` abscissae in ``[-r, r]`` and ``n2``
    levels of ``k`` (the two gap boundaries included by default)."""
    r = geom.R if r is None else r
    x1 = np.linspace(-r, r, n1)
    if include_boundary:
        kk = np.linspace(-0.5, 0.5, n2)
    else:
        kk = np.linspace(-0.5, 0.5, n2 + 2)[1:-1]
    X1g, K = np.meshgrid(x1, kk, indexing="ij")
    d = geom.eps + geom.kappa0 * X1g**2
    X2g = geom.kappa * X1g**2 + d * (K + 0.5)
    return np.stack([X1g, X2g], axis=-1).reshape(-1, 2)


@dataclass(frozen=True)
class AuxPair:
    """Closed-form velocity/pressure pair valid on the neck ``|x1| <= 2R``."""

    geom: NeckGeometry
    kind: str  # "mode" or "bc"
    alpha: int = 0
    bc: BoundaryData = None
    printed_G1: bool = False

    @property
    def name(self):
        return f"v{self.alpha}" if self.kind == "mode" else f"v0[{self.bc.label}]"

    def _fn(self):
        if self.kind == "mode":
            return _mode_function(self.alpha, self.printed_G1)
        return _bc_function(self.bc.variant, self.bc.l, self.printed_G1)

    def _eval(self, p):
        p = _as_points(p)
        _check_in_neck(self.geom, p)
        g = self.geom
        out = self._fn()(p[..., 0], p[..., 1], g.eps, g.kappa, g.kappa1, g.mu)
        shape = p.shape[:-1]
        return {n: np.broadcast_to(np.asarray(o, dtype=float), shape) for n, o in zip(_NAMES, out)}

    def with_geometry(self, geom):
        return AuxPair(geom, self.kind, self.alpha, self.bc, self.printed_G1)

    def velocity(self, p):
        e = self._eval(p)
        return np.stack([e["v1"], e["v2"]], axis=-1)

    def gradient(self, p):
        """``G[..., i, j] = d v_i / d x_j``."""
        e = self._eval(p)
        return np.stack(
            [np.stack([e["v1_1"], e["v1_2"]], -1), np.stack([e["v2_1"], e["v2_2"]], -1)], -2
        )

    def hessian(self, p):
        """``H[..., i, j, l] = d^2 v_i / d x_j d x_l``."""
        e = self._eval(p)
        rows = []
        for c in ("v1", "v2"):
            a, b, d = e[c + "_11"], e[c + "_12"], e[c + "_22"]
            rows.append(np.stack([np.stack([a, b], -1), np.stack([b, d], -1)], -2))
        return np.stack(rows, -3)

    def pressure(self, p):
        return self._eval(p)["p"].copy()

    def pressure_gradient(self, p):
        e = self._eval(p)
        return np.stack([e["p_1"], e["p_2"]], axis=-1)

    def divergence(self, p):
        e = self._eval(p)
        return e["v1_1"] + e["v2_2"]

    def residual(self, p):
        """Stokes residual ``mu * Laplacian(v) - grad(p)``."""
        e = self._eval(p)
        mu = self.geom.mu
        f1 = mu * (e["v1_11"] + e["v1_22"]) - e["p_1"]
        f2 = mu * (e["v2_11"] + e["v2_22"]) - e["p_2"]
        return np.stack([f1, f2], axis=-1)

    def velocity_extended(self, p):
        """Velocity tapered to zero between ``|x1| = R`` and ``2R`` by a quintic
        C^2 cutoff; zero for fluid points outside the neck."""
        p = _as_points(p)
        g = self.geom
        x1 = p[..., 0]
        ok = g.in_neck(p)
        out = np.zeros(p.shape)
        if np.any(ok):
            t = np.clip((np.abs(x1[ok]) - g.R) / g.R, 0.0, 1.0)
            chi = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)
            out[ok] = chi[:, None] * self.velocity(p[ok])
        return out


def aux_pair(geom: NeckGeometry, mode: int, printed_G1=False) -> AuxPair:
    """Auxiliary pair carrying the singular part of the rigid-mode problem ``mode``."""
    if mode not in (1, 2, 3):
        raise ValueError(f"rigid mode must be 1, 2 or 3, got {mode}")
    return AuxPair(geom, "mode", alpha=mode, printed_G1=printed_G1)


def aux_pair_bc(geom: NeckGeometry, bc: BoundaryData, printed_G1=False) -> AuxPair:
    """Auxiliary pair for the wall-data problem of class ``bc``."""
    if bc.variant == "Custom":
        raise NotImplementedError("no closed-form auxiliary pair exists for custom boundary data")
    return AuxPair(geom, "bc", bc=bc, printed_G1=printed_G1)


def residual(pair: AuxPair, p):
    return pair.residual(p)


# --------------------------------------------------------------------- envelopes
_ENVELOPES = {
    "1/delta": lambda x1, d: 1.0 / d,
    "|x1|/delta^2": lambda x1, d: np.abs(x1) / d**2,
    "1/sqrt(delta)": lambda x1, d: 1.0 / np.sqrt(d),
    "const": lambda x1, d: np.ones_like(d),
    "1/delta+|x1|/delta^2": lambda x1, d: 1.0 / d + np.abs(x1) / d**2,
}

_QUANTITIES = {
    "gradient": lambda pair, p: np.linalg.norm(pair.gradient(p), axis=(-2, -1)),
    "residual": lambda pair, p: np.linalg.norm(pair.residual(p), axis=-1),
    "divergence": lambda pair, p: np.abs(pair.divergence(p)),
    # divergence measured against the local gradient magnitude
    "relative_divergence": lambda pair, p: np.abs(pair.divergence(p))
    / np.maximum(np.linalg.norm(pair.gradient(p), axis=(-2, -1)), 1e-300),
}


@dataclass
class BoundReport:
    pair: str
    quantity: str
    envelope: str
    eps: list
    constants: list
    n_samples: int

    @property
    def ratio(self):
        c = np.asarray(self.constants, dtype=float)
        return float(c.max() / c.min()) if np.all(c > 0) else float("inf")

    def to_dict(self):
        return {
            "pair": self.pair,
            "quantity": self.quantity,
            "envelope": self.envelope,
            "eps": list(map(float, self.eps)),
            "constants": list(map(float, self.constants)),
            "max_over_min": self.ratio,
            "n_samples": self.n_samples,
        }


def empirical_constant(pair: AuxPair, quantity, envelope, samples=(200, 20), min_abs_x1=0.0):
    """``sup |quantity| / envelope`` over a neck sample grid."""
    g = pair.geom
    pts = neck_samples(g, *samples) if isinstance(samples, tuple) else np.asarray(samples)
    x1 = pts[:, 0]
    keep = np.abs(x1) > min_abs_x1
    pts = pts[keep]
    d = g.eps + g.kappa0 * pts[:, 0] ** 2
    val = _QUANTITIES[quantity](pair, pts)
    return float(np.max(val / _ENVELOPES[envelope](pts[:, 0], d))), len(pts)


def verify_bounds(geom, pair: AuxPair, envelope, samples=(200, 20), quantity="gradient", eps_values=None):
    """Empirical envelope constant of ``quantity`` for ``pair`` and its trend in eps.

    ``envelope`` is one of ``1/delta``, ``|x1|/delta^2``, ``1/sqrt(delta)``,
    ``const`` or ``1/delta+|x1|/delta^2``. With ``eps_values`` the pair is
    re-instantiated at each gap and the per-eps constants are reported.
    """
    if envelope not in _ENVELOPES:
        raise ValueError(f"unknown envelope {envelope!r}")
    if quantity not in _QUANTITIES:
        raise ValueError(f"unknown quantity {quantity!r}")
    eps_values = [geom.eps] if eps_values is None else list(eps_values)
    consts = []
    n = 0
    min_x1 = 1e-12 if "|x1|" in envelope and not envelope.startswith("1/delta+") else 0.0
    for e in eps_values:
        pr = pair.with_geometry(geom.with_eps(e))
        c, n = empirical_constant(pr, quantity, envelope, samples, min_x1)
        consts.append(c)
    return BoundReport(pair.name, quantity, envelope, eps_values, consts, n)
