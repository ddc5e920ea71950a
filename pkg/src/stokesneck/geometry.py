"""Fluid domain between a convex rigid particle and an outer wall.

Both boundary curves are star-shaped about a common centre ``c = (0, yc)``
located inside the particle and are represented in polar form
``X(theta) = c + r(theta) * (sin(theta), -cos(theta))``, so ``theta = 0``
points straight down into the neck. Inside the neck ``|x1| <= 2R`` the
radius functions reproduce the parabolas ``x2 = kappa x1**2`` (wall) and
``x2 = eps + kappa1 x1**2`` (particle) exactly; outside, a septic
smoothstep blends each parabola into a circle.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from math import comb

import numpy as np
import sympy as sp
from scipy.optimize import brentq


class GeometryError(ValueError):
    """Invalid geometry parameters or a closure that breaks its guarantees."""


class OutOfNeckError(GeometryError):
    """Point or abscissa outside the quadratic-profile region ``|x1| <= 2R``."""


class RegionTag(enum.Enum):
    FLUID = "Fluid"
    PARTICLE = "Particle"
    OUTSIDE = "Outside"
    ON_PARTICLE_BOUNDARY = "OnParticleBoundary"
    ON_OUTER_BOUNDARY = "OnOuterBoundary"


def smoothstep7(t):
    """Septic smoothstep; first three derivatives vanish at t = 0 and t = 1."""
    return t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)


def sym(M):
    """Symmetric part ``(M + M^T)/2`` of a (..., 2, 2) array."""
    M = np.asarray(M)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


_S = np.polynomial.Polynomial([0, 0, 0, 0, 35.0, -84.0, 70.0, -20.0])


def _smoothstep_derivs(t, order):
    """Values of the septic smoothstep and its derivatives up to ``order``."""
    out = [_S(t)]
    p = _S
    for _ in range(order):
        p = p.deriv()
        out.append(p(t))
    return out


def _direction(theta):
    return np.sin(theta), -np.cos(theta)


@lru_cache(maxsize=None)
def _polar_derivative_functions():
    """Closed-form derivatives (orders 0..3) of the polar radius of a parabola
    and of an off-centre circle, generated once with sympy."""
    th, H, a, ox, oy, rb = sp.symbols("theta H a ox oy rb", real=True)
    ct, st = sp.cos(th), sp.sin(th)
    r_par = 2 * H / (ct + sp.sqrt(ct**2 + 4 * a * H * st**2))
    du = ox * st - oy * ct
    r_circ = du + sp.sqrt(du**2 - (ox**2 + oy**2) + rb**2)
    par = [sp.lambdify((th, H, a), sp.diff(r_par, th, k), "numpy") for k in range(4)]
    circ = [sp.lambdify((th, ox, oy, rb), sp.diff(r_circ, th, k), "numpy") for k in range(4)]
    return par, circ


def _parabola_radius(theta, depth, curv, order=0):
    """Radius (and derivatives) along direction theta from ``c`` to the parabola
    ``y = yc - depth + curv * x**2``; rationalised so theta = 0 is regular."""
    par, _ = _polar_derivative_functions()
    return [np.broadcast_to(par[k](theta, depth, curv), np.shape(theta)).astype(float) for k in range(order + 1)]


def _circle_radius(theta, offset, radius, order=0):
    _, circ = _polar_derivative_functions()
    return [
        np.broadcast_to(circ[k](theta, offset[0], offset[1], radius), np.shape(theta)).astype(float)
        for k in range(order + 1)
    ]


def _polar_curvature(r, r1, r2):
    return (r * r + 2 * r1 * r1 - r * r2) / (r * r + r1 * r1) ** 1.5


class ClosedCurve:
    """Closed curve star-shaped about ``center``, parametrised by the polar angle.

    ``theta`` in [-pi, pi) measured from the downward vertical; increasing
    theta runs counter-clockwise. Subclasses implement :meth:`_evaluate`
    returning points, ``dX/dtheta`` and curvature.
    """

    name = "curve"

    def __init__(self, center):
        self.center = np.asarray(center, dtype=float)

    def _evaluate(self, theta):
        raise NotImplementedError

    def point(self, theta):
        return self._evaluate(np.asarray(theta, dtype=float))[0]

    def tangent(self, theta):
        """dX/dtheta (not normalised)."""
        return self._evaluate(np.asarray(theta, dtype=float))[1]

    def curvature(self, theta):
        return self._evaluate(np.asarray(theta, dtype=float))[2]

    def radius(self, theta):
        p = self.point(theta)
        return np.hypot(p[..., 0] - self.center[0], p[..., 1] - self.center[1])

    def normal(self, theta):
        """Unit normal pointing away from the enclosed set."""
        t = self.tangent(theta)
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def speed(self, theta):
        return np.linalg.norm(self.tangent(theta), axis=-1)

    def theta_of(self, p):
        """Polar angle of points about the centre."""
        p = np.asarray(p, dtype=float)
        return np.arctan2(p[..., 0] - self.center[0], self.center[1] - p[..., 1])

    @cached_property
    def _table(self):
        n = 40000
        theta = -np.pi + 2.0 * np.pi * np.arange(n + 1) / n
        sp_ = self.speed(theta)
        s = np.concatenate([[0.0], np.cumsum(0.5 * (sp_[1:] + sp_[:-1]) * np.diff(theta))])
        return theta, s

    @cached_property
    def length(self):
        """Perimeter by Gauss-Legendre panels in theta."""
        x, w = np.polynomial.legendre.leggauss(16)
        edges = np.linspace(-np.pi, np.pi, 513)
        a, b = edges[:-1, None], edges[1:, None]
        th = 0.5 * (a + b) + 0.5 * (b - a) * x
        return float(np.sum(0.5 * (b - a) * w * self.speed(th)))

    def arclength(self, theta):
        """Arclength measured from theta = -pi (table interpolation)."""
        th, s = self._table
        return np.interp(theta, th, s) * self.length / s[-1]

    def x1_to_theta(self, x1, maxit=50):
        """Parameter of the lower-branch point with abscissa ``x1`` (Newton)."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        y0 = self.point(np.zeros(1))[0, 1]
        theta = np.arctan2(x1 - self.center[0], self.center[1] - y0)
        for _ in range(maxit):
            p, t, _ = self._evaluate(theta)
            step = (p[..., 0] - x1) / t[..., 0]
            theta = theta - step
            if np.all(np.abs(step) < 1e-16):
                break
        return theta

    def theta_at_arclength(self, s):
        th, tab = self._table
        return np.interp(np.asarray(s, dtype=float) * tab[-1] / self.length, tab, th)


class WallCurve(ClosedCurve):
    """Outer wall: parabola ``kappa x1^2`` on the neck arc, septic blend into a circle."""

    name = "outer"

    def __init__(self, geom: "NeckGeometry"):
        super().__init__(geom.center)
        c = geom.closure
        self.depth = geom.yc
        self.curv = geom.kappa
        self.theta0 = float(np.arctan2(2.0 * geom.R, geom.yc - 4.0 * geom.kappa * geom.R**2))
        self.width = c.outer_blend
        self.offset = tuple(float(v) for v in c.outer_offset)
        self.circle_radius = c.outer_radius

    def radius_derivatives(self, theta, order=2):
        theta = np.asarray(theta, dtype=float)
        sgn = np.where(theta < 0, -1.0, 1.0)
        t = np.clip((np.abs(theta) - self.theta0) / self.width, 0.0, 1.0)
        S = _smoothstep_derivs(t, order)
        rc = _circle_radius(theta, self.offset, self.circle_radius, order)
        out = []
        m = t < 1.0
        th_m = np.where(m, theta, 0.0)
        rp = _parabola_radius(th_m, self.depth, self.curv, order)
        for n in range(order + 1):
            val = rp[n].copy()
            for k in range(n + 1):
                dS = S[k] * (sgn / self.width) ** k
                val = val + comb(n, k) * dS * (rc[n - k] - rp[n - k])
            out.append(np.where(m, val, rc[n]))
        return out

    def _evaluate(self, theta):
        r, r1, r2 = self.radius_derivatives(theta, 2)
        ux, uy = _direction(theta)
        p = np.stack([self.center[0] + r * ux, self.center[1] + r * uy], axis=-1)
        t = np.stack([r1 * ux + r * np.cos(theta), r1 * uy + r * np.sin(theta)], axis=-1)
        return p, t, _polar_curvature(r, r1, r2)


class ParticleCurve(ClosedCurve):
    """Convex particle: parabola ``eps + kappa1 x1^2`` on the neck, then a
    curvature ramp (C^1 curvature, hence C^3 curve) into a circular cap
    centred at ``center``. Mirror symmetric about ``x1 = 0``.
    """

    name = "particle"
    _GL = np.polynomial.legendre.leggauss(40)

    def __init__(self, eps, kappa1, R, ramp_length):
        a = kappa1
        self.eps, self.a, self.R = eps, a, R
        x0 = 2.0 * R
        s = 2.0 * a * x0
        self.junction = np.array([x0, eps + a * x0 * x0])
        self.phi0 = float(np.arctan(s))
        self.kap_p = 2.0 * a / (1.0 + s * s) ** 1.5
        self.dkap_p = -24.0 * a**3 * x0 / (1.0 + s * s) ** 3
        # the linear part of the ramp must keep the curvature positive
        self.L = float(min(ramp_length, 0.5 * self.kap_p / abs(self.dkap_p)))
        if self.L <= 0.0:
            raise GeometryError("curvature ramp length must be positive")
        S_L = _S(np.polynomial.Polynomial([0.0, 1.0 / self.L]))
        p1 = np.polynomial.Polynomial([self.kap_p, self.dkap_p])
        self._A = p1 * (1 - S_L)
        self._B = S_L
        self._IA = self._A.integ()
        self._IB = self._B.integ()
        self.kap_c = self._solve_cap_curvature()
        q, phiL = self._ramp_point(np.array([self.L]))
        q, phiL = q[0], float(phiL[0])
        self.rho = 1.0 / self.kap_c
        self.cap_center = np.array([0.0, q[1] + np.cos(phiL) * self.rho])
        super().__init__(self.cap_center)
        self.depth = self.cap_center[1] - eps
        self.theta_p = float(np.arctan2(x0, self.cap_center[1] - self.junction[1]))
        self.theta_L = float(np.arctan2(q[0], self.cap_center[1] - q[1]))
        self.phi_L = phiL
        sig = np.linspace(0.0, self.L, 401)
        pts, _ = self._ramp_point(sig)
        self._ramp_table = (self.theta_of(pts), sig)

    # ramp in arclength sigma in [0, L] measured from the junction
    def _phi(self, sig, kap_c=None):
        kap_c = self.kap_c if kap_c is None else kap_c
        return self.phi0 + self._IA(sig) + kap_c * self._IB(sig)

    def _kappa(self, sig):
        return self._A(sig) + self.kap_c * self._B(sig)

    def _ramp_point(self, sig, kap_c=None):
        x, w = self._GL
        sig = np.asarray(sig, dtype=float)
        nodes = 0.5 * sig[:, None] * (1.0 + x[None, :])
        ph = self._phi(nodes, kap_c)
        dx = 0.5 * sig * np.sum(w * np.cos(ph), axis=1)
        dy = 0.5 * sig * np.sum(w * np.sin(ph), axis=1)
        return np.stack([self.junction[0] + dx, self.junction[1] + dy], axis=-1), self._phi(sig, kap_c)

    def _solve_cap_curvature(self):
        def centre_offset(kc):
            q, ph = self._ramp_point(np.array([self.L]), kc)
            return q[0, 0] - np.sin(ph[0]) / kc

        grid = np.geomspace(1e-2, 1e3, 600)
        vals = []
        for kc in grid:
            ph = self._phi(self.L, kc)
            vals.append(centre_offset(kc) if ph < np.pi else np.nan)
        vals = np.array(vals)
        for i in range(len(grid) - 1):
            if np.isfinite(vals[i]) and np.isfinite(vals[i + 1]) and vals[i] * vals[i + 1] < 0:
                return float(brentq(centre_offset, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15))
        raise GeometryError("no circular cap closes the particle for this ramp length")

    def _ramp_sigma(self, theta):
        th_tab, sig_tab = self._ramp_table
        sig = np.interp(theta, th_tab, sig_tab)
        for _ in range(6):
            p, ph = self._ramp_point(sig)
            d = p - self.center
            T = np.stack([np.cos(ph), np.sin(ph)], axis=-1)
            dth = (d[:, 0] * T[:, 1] - d[:, 1] * T[:, 0]) / np.sum(d * d, axis=1)
            sig = np.clip(sig - (self.theta_of(p) - theta) / dth, 0.0, self.L)
        return sig

    def _evaluate_right(self, theta):
        """Evaluate for theta in [0, pi]."""
        n = theta.shape[0]
        P = np.empty((n, 2))
        T = np.empty((n, 2))
        K = np.empty(n)
        neck = theta <= self.theta_p
        cap = theta >= self.theta_L
        ramp = ~neck & ~cap
        if np.any(neck):
            th = theta[neck]
            r, r1, r2 = _parabola_radius(th, self.depth, self.a, 2)
            ux, uy = _direction(th)
            P[neck] = np.stack([self.center[0] + r * ux, self.center[1] + r * uy], -1)
            T[neck] = np.stack([r1 * ux + r * np.cos(th), r1 * uy + r * np.sin(th)], -1)
            K[neck] = _polar_curvature(r, r1, r2)
        if np.any(cap):
            th = theta[cap]
            ux, uy = _direction(th)
            P[cap] = np.stack([self.center[0] + self.rho * ux, self.center[1] + self.rho * uy], -1)
            T[cap] = np.stack([self.rho * np.cos(th), self.rho * np.sin(th)], -1)
            K[cap] = self.kap_c
        if np.any(ramp):
            th = theta[ramp]
            sig = self._ramp_sigma(th)
            p, ph = self._ramp_point(sig)
            d = p - self.center
            Tu = np.stack([np.cos(ph), np.sin(ph)], axis=-1)
            dth = (d[:, 0] * Tu[:, 1] - d[:, 1] * Tu[:, 0]) / np.sum(d * d, axis=1)
            P[ramp] = p
            T[ramp] = Tu / dth[:, None]
            K[ramp] = self._kappa(sig)
        return P, T, K

    def _evaluate(self, theta):
        shape = np.shape(theta)
        th = np.atleast_1d(theta).ravel()
        neg = th < 0
        P, T, K = self._evaluate_right(np.abs(th))
        P[neg, 0] = 2 * self.center[0] - P[neg, 0]
        # X(-theta) mirrored: d/dtheta flips the x-derivative sign pattern
        T[neg, 1] = -T[neg, 1]
        return P.reshape(shape + (2,)), T.reshape(shape + (2,)), K.reshape(shape)

    def junction_jumps(self):
        """Jumps of tangent angle, curvature and d(curvature)/ds at the
        parabola/ramp and ramp/cap junctions, from one-sided closed forms."""
        x0 = 2.0 * self.R
        s = 2 * self.a * x0
        par = (np.arctan(s), 2 * self.a / (1 + s * s) ** 1.5, -24 * self.a**3 * x0 / (1 + s * s) ** 3)
        dk = (self._A.deriv() + self.kap_c * self._B.deriv())
        ramp0 = (self._phi(0.0), self._kappa(0.0), dk(0.0))
        rampL = (self._phi(self.L), self._kappa(self.L), dk(self.L))
        cap = (self.phi_L, self.kap_c, 0.0)
        return np.abs(np.subtract(par, ramp0)), np.abs(np.subtract(rampL, cap))


@dataclass(frozen=True)
class ClosureSpec:
    """How the neck parabolas are completed into closed curves.

    Parameters (all for ``type == "polar_blend"``)
    ----------------------------------------------
    particle_blend : arclength of the curvature ramp joining the particle parabola to its
        circular cap (capped so that the curvature stays positive).
    outer_blend : angular width of the parabola-to-circle blend on the wall.
    outer_radius : radius of the outer circle.
    outer_offset : centre of the outer circle relative to the particle cap centre.
        A nonzero horizontal offset breaks mirror symmetry so that the
        couplings between horizontal and vertical modes are generic.
    patch_center, patch_width : location/half-width (polar angle) of the flux-patch bump on the wall.
    cutoff_width : angular width over which boundary-data classes are tapered to zero past ``|x1| = 2R``.
    """

    type: str = "polar_blend"
    particle_blend: float = 0.5
    outer_blend: float = 1.2
    outer_radius: float = 2.6
    outer_offset: tuple = (0.6, 0.3)
    patch_center: float = np.pi
    patch_width: float = 0.8
    cutoff_width: float = 0.35

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        d = dict(d)
        kind = d.pop("type", "polar_blend")
        params = dict(d.pop("params", {}))
        params.update(d)
        if kind != "polar_blend":
            raise GeometryError(f"unknown closure type {kind!r}")
        if "outer_offset" in params:
            params["outer_offset"] = tuple(float(v) for v in params["outer_offset"])
        unknown = set(params) - {f for f in cls.__dataclass_fields__ if f != "type"}
        if unknown:
            raise GeometryError(f"unknown closure parameters: {sorted(unknown)}")
        return cls(type=kind, **params)

    def to_dict(self):
        return {
            "type": self.type,
            "params": {
                "particle_blend": self.particle_blend,
                "outer_blend": self.outer_blend,
                "outer_radius": self.outer_radius,
                "outer_offset": list(self.outer_offset),
                "patch_center": self.patch_center,
                "patch_width": self.patch_width,
                "cutoff_width": self.cutoff_width,
            },
        }


@dataclass(frozen=True)
class NeckGeometry:
    """Particle at distance ``eps`` above a curved wall.

    Inside ``|x1| <= 2R``: wall ``h = kappa x1^2``, particle ``eps + kappa1 x1^2``,
    gap ``delta = eps + (kappa1 - kappa) x1^2``.
    """

    eps: float
    kappa: float = 1.0
    kappa1: float = 2.0
    R: float = 0.5
    mu: float = 1.0
    closure: ClosureSpec = field(default_factory=ClosureSpec)

    def __post_init__(self):
        if not np.isfinite(self.eps) or self.eps <= 0:
            raise GeometryError(f"eps must be positive, got {self.eps}")
        if self.kappa < 0:
            raise GeometryError("kappa must be nonnegative")
        if self.kappa1 <= self.kappa:
            raise GeometryError("kappa1 must exceed kappa (strict convexity gap)")
        if not 0 < self.R < 1:
            raise GeometryError("R must lie in (0, 1)")
        if self.mu <= 0:
            raise GeometryError("mu must be positive")
        if self.kappa == 0:
            warnings.warn("flat wall (kappa = 0) lies outside the analysed setting", stacklevel=3)
        self._validate_curves()

    # ------------------------------------------------------------------ basic profiles
    @property
    def kappa0(self):
        return self.kappa1 - self.kappa

    @cached_property
    def particle_curve(self) -> "ParticleCurve":
        return ParticleCurve(self.eps, self.kappa1, self.R, self.closure.particle_blend)

    @property
    def yc(self):
        """Height of the particle cap centre (on the symmetry axis)."""
        return float(self.particle_curve.center[1])

    @property
    def center(self):
        return self.particle_curve.center.copy()

    def _check_neck(self, x1):
        x1 = np.asarray(x1, dtype=float)
        if np.any(np.abs(x1) > 2.0 * self.R * (1.0 + 1e-14)):
            raise OutOfNeckError(f"|x1| exceeds 2R = {2 * self.R}")
        return x1

    def h(self, x1):
        x1 = self._check_neck(x1)
        return self.kappa * x1**2

    def h1(self, x1):
        x1 = self._check_neck(x1)
        return self.kappa1 * x1**2

    def delta(self, x1):
        x1 = self._check_neck(x1)
        return self.eps + self.kappa0 * x1**2

    def in_neck(self, p, r=None):
        """Mask of points with ``|x1| < r`` (default 2R) strictly inside the gap."""
        p = np.asarray(p, dtype=float)
        r = 2.0 * self.R if r is None else r
        x1, x2 = p[..., 0], p[..., 1]
        inside = np.abs(x1) <= r
        x1c = np.where(inside, x1, 0.0)
        return inside & (x2 >= self.kappa * x1c**2) & (x2 <= self.eps + self.kappa1 * x1c**2)

    # ------------------------------------------------------------------ closed curves
    @property
    def theta_neck_particle(self):
        return self.particle_curve.theta_p

    @property
    def theta_neck_wall(self):
        return self.outer_curve.theta0

    @cached_property
    def outer_curve(self) -> "WallCurve":
        return WallCurve(self)

    def boundary_curves(self):
        """Return ``(outer wall curve, particle curve)``."""
        return self.outer_curve, self.particle_curve

    def _validate_curves(self):
        c = self.closure
        if c.particle_blend <= 0 or c.outer_blend <= 0:
            raise GeometryError("blend widths must be positive")
        pc = self.particle_curve
        if self.kappa == 0 and self.theta_neck_wall + c.outer_blend >= 0.5 * np.pi - 0.05:
            raise GeometryError("outer blend window too wide for a flat wall")
        off = np.asarray(c.outer_offset, dtype=float)
        if np.hypot(*off) >= c.outer_radius:
            raise GeometryError("outer circle must enclose the particle centre")
        theta = np.linspace(-np.pi, np.pi, 4001)
        ri = pc.radius(theta)
        wc = self.outer_curve
        ro = wc.radius(theta)
        if not (np.all(np.isfinite(ri)) and np.all(np.isfinite(ro))):
            raise GeometryError("closure produced non-finite radii")
        gap = ro - ri
        if np.min(gap) <= 0.0:
            raise GeometryError("particle is not contained in the outer domain")
        far = np.abs(theta) > max(self.theta_neck_wall, self.theta_neck_particle)
        if np.min(gap[far]) <= max(self.eps, 0.5 * self.kappa0 * (2 * self.R) ** 2):
            raise GeometryError("closure creates a second near-contact region")
        if np.min(pc.curvature(theta)) <= 0.0:
            raise GeometryError("particle closure is not convex")
        # star-shapedness of the wall about the centre: radial speed bounded
        r, r1, _ = wc.radius_derivatives(theta, 2)
        if np.min(r) <= 0.0:
            raise GeometryError("outer wall is not star-shaped about the particle centre")

    # ------------------------------------------------------------------ classification
    def classify(self, p):
        """Region tag(s) for point(s) ``p``."""
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        pts = np.atleast_2d(p)
        tags = np.empty(len(pts), dtype=object)
        for i, (x1, x2) in enumerate(pts):
            tags[i] = self._classify_one(x1, x2)
        return tags[0] if single else tags

    def _classify_one(self, x1, x2):
        if abs(x1) <= 2.0 * self.R and x2 <= self.yc:
            lo = self.kappa * x1 * x1
            hi = self.eps + self.kappa1 * x1 * x1
            if x2 < lo - 2 * np.spacing(lo):
                return RegionTag.OUTSIDE
            if x2 <= lo + 2 * np.spacing(lo):
                return RegionTag.ON_OUTER_BOUNDARY
            if x2 < hi - 2 * np.spacing(hi):
                return RegionTag.FLUID
            if x2 <= hi + 2 * np.spacing(hi):
                return RegionTag.ON_PARTICLE_BOUNDARY
            return RegionTag.PARTICLE
        q = np.array([x1, x2])
        th = self.outer_curve.theta_of(q)
        rho = float(np.hypot(*(q - self.center)))
        ri = float(self.particle_curve.radius(np.atleast_1d(th))[0])
        ro = float(self.outer_curve.radius(np.atleast_1d(th))[0])
        tol = 4 * np.spacing(max(ri, ro))
        if rho < ri - tol:
            return RegionTag.PARTICLE
        if rho <= ri + tol:
            return RegionTag.ON_PARTICLE_BOUNDARY
        if rho < ro - tol:
            return RegionTag.FLUID
        if rho <= ro + tol:
            return RegionTag.ON_OUTER_BOUNDARY
        return RegionTag.OUTSIDE

    # ------------------------------------------------------------------ helpers for data
    def vertical_gap(self, x1):
        """Gap measured by vertical ray casting between the constructed curves."""
        x1 = self._check_neck(x1)
        pw = self.outer_curve.point(self.outer_curve.x1_to_theta(x1))
        pp = self.particle_curve.point(self.particle_curve.x1_to_theta(x1))
        return pp[..., 1] - pw[..., 1]

    def flux_patch(self, p):
        """Smooth normal bump on the far side of the wall used to cancel net flux.

        Returns vectors ``b(theta) n(theta)`` at points near the outer curve.
        """
        c = self.closure
        th = self.outer_curve.theta_of(p)
        d = np.angle(np.exp(1j * (th - c.patch_center))) / c.patch_width
        b = np.where(np.abs(d) < 1.0, (1.0 - d * d) ** 4, 0.0)
        return b[..., None] * self.outer_curve.normal(th)

    def wall_cutoff(self, p):
        """C^3 cutoff along the wall: 1 on the neck arc, 0 beyond ``cutoff_width``."""
        th = np.abs(self.outer_curve.theta_of(p))
        t = np.clip((th - self.theta_neck_wall) / self.closure.cutoff_width, 0.0, 1.0)
        return 1.0 - smoothstep7(t)

    def to_dict(self):
        return {
            "eps": self.eps,
            "kappa": self.kappa,
            "kappa1": self.kappa1,
            "R": self.R,
            "mu": self.mu,
            "closure": self.closure.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        closure = ClosureSpec.from_dict(d.pop("closure", None))
        allowed = {"eps", "kappa", "kappa1", "R", "mu"}
        unknown = set(d) - allowed
        if unknown:
            raise GeometryError(f"unknown geometry keys: {sorted(unknown)}")
        if "eps" not in d:
            raise GeometryError("geometry block requires eps")
        return cls(closure=closure, **{k: float(v) for k, v in d.items()})

    def with_eps(self, eps):
        return NeckGeometry(eps, self.kappa, self.kappa1, self.R, self.mu, self.closure)


def delta(geom: NeckGeometry, x1):
    """Gap width ``eps + (kappa1 - kappa) x1^2`` for ``|x1| <= 2R``."""
    return geom.delta(x1)


def classify(geom: NeckGeometry, p):
    return geom.classify(p)


def boundary_curves(geom: NeckGeometry):
    return geom.boundary_curves()


def rigid_mode(alpha, p):
    """Rigid displacement ``psi_alpha`` evaluated at points ``p`` (shape (..., 2))."""
    p = np.asarray(p, dtype=float)
    x1, x2 = p[..., 0], p[..., 1]
    one, zero = np.ones_like(x1), np.zeros_like(x1)
    if alpha == 1:
        return np.stack([one, zero], axis=-1)
    if alpha == 2:
        return np.stack([zero, one], axis=-1)
    if alpha == 3:
        return np.stack([x2, -x1], axis=-1)
    raise ValueError(f"rigid mode must be 1, 2 or 3, got {alpha}")
