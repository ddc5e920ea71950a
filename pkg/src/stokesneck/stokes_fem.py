"""Taylor-Hood (P2 velocity / P1 pressure) solver for Dirichlet Stokes
problems and for the free rigid particle.

Unknown layout: velocity dofs ``[u_x at all P2 nodes, u_y at all P2 nodes]``,
pressure dofs at mesh vertices. The pressure is gauged to zero mean by a
scalar multiplier. Boundary data are imposed by interpolation at the P2
nodes of tagged boundary edges; the discrete net flux of the interpolated
data is removed before solving (see :meth:`StokesSolver.lift`).
"""
from __future__ import annotations

import glob
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .geometry import rigid_mode
from .mesh import OUTER, PARTICLE, TriMesh
from .quadrature import segment_rule, triangle_rule

log = logging.getLogger(__name__)

_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


class FEMError(RuntimeError):
    pass


class IncompatibleFluxError(ValueError):
    pass


class PointLocationError(ValueError):
    pass


# ------------------------------------------------------------------ basis
def p2_values(lam):
    """P2 shape functions at barycentric points ``lam (..., 3)`` -> ``(..., 6)``."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ], axis=-1)


def p2_gradients(lam, dlam):
    """Gradients ``(..., 6, 2)`` given barycentrics ``(..., 3)`` and the
    constant barycentric gradients ``dlam (..., 3, 2)`` of the element."""
    l = lam[..., :, None]
    g = [(4 * l[..., i, :] - 1) * dlam[..., i, :] for i in range(3)]
    for i, j in _LOCAL_EDGES:
        g.append(4 * (l[..., i, :] * dlam[..., j, :] + l[..., j, :] * dlam[..., i, :]))
    return np.stack(g, axis=-2)


def _element_geometry(verts):
    """Signed areas and barycentric gradients for vertex arrays ``(m, 3, 2)``."""
    x, y = verts[..., 0], verts[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    dl = np.empty(verts.shape[:1] + (3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        dl[:, i, 0] = (y[:, j] - y[:, k]) / det
        dl[:, i, 1] = (x[:, k] - x[:, j]) / det
    return 0.5 * det, dl


# ------------------------------------------------------------------ space
class TaylorHoodSpace:
    """P2/P1 dof numbering, node coordinates and boundary node sets."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        edges, t2e = mesh.edges()
        nv = mesh.n_vertices
        self.n_vertices = nv
        self.edges = edges
        self.n_nodes = nv + len(edges)
        self.elem_nodes = np.concatenate([mesh.triangles, nv + t2e], axis=1)
        self.nodes = np.concatenate([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
        self.area, self.dlam = _element_geometry(mesh.vertices[mesh.triangles])
        if np.any(self.area <= 0):
            raise FEMError("mesh has inverted or degenerate triangles")
        key = {tuple(e): k for k, e in enumerate(edges.tolist())}
        self.boundary_nodes = {}
        self.boundary_edge_nodes = {}
        for tag in mesh.tags:
            be = mesh.boundary_edges[mesh.edge_tags == tag]
            mid = nv + np.array([key[tuple(sorted(e))] for e in be.tolist()], dtype=np.int64)
            self.boundary_edge_nodes[tag] = np.column_stack([be, mid])
            self.boundary_nodes[tag] = np.unique(np.concatenate([be.ravel(), mid]))
        bn = np.unique(np.concatenate(list(self.boundary_nodes.values()))) if self.boundary_nodes else np.array([], int)
        self.dirichlet_nodes = bn
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[bn] = False
        self.interior_nodes = np.flatnonzero(mask)

    @property
    def n_velocity(self):
        return 2 * self.n_nodes

    def node_dofs(self, nodes):
        nodes = np.asarray(nodes, dtype=np.int64)
        return np.concatenate([nodes, nodes + self.n_nodes])

    def interpolate(self, fn, nodes=None):
        """Velocity vector interpolating ``fn(points) -> (n, 2)`` at ``nodes`` (default all)."""
        nodes = np.arange(self.n_nodes) if nodes is None else np.asarray(nodes)
        u = np.zeros(self.n_velocity)
        val = np.asarray(fn(self.nodes[nodes]), dtype=float).reshape(len(nodes), 2)
        u[nodes] = val[:, 0]
        u[nodes + self.n_nodes] = val[:, 1]
        return u

    # ---- quadrature data
    def quadrature(self, degree=6):
        bary, w = triangle_rule(degree)
        pts = np.einsum("qk,mkd->mqd", bary, self.mesh.vertices[self.mesh.triangles])
        wa = w[None, :] * self.area[:, None]
        return bary, pts, wa

    def basis_at_quadrature(self, degree=6):
        bary, pts, wa = self.quadrature(degree)
        phi = p2_values(bary)  # (q, 6)
        lam = np.broadcast_to(bary[None], (len(self.area),) + bary.shape)
        grad = p2_gradients(lam, self.dlam[:, None, :, :])  # (m, q, 6, 2)
        return phi, grad, pts, wa

    # ---- location and evaluation
    def locate(self, points, tol=1e-10, extrapolate=0.05, chunk=256):
        """Containing-element candidates and barycentrics for each point.

        Returns a list of ``(element indices, barycentrics)`` per point. Points
        on shared edges return every containing element. A point outside all
        elements is assigned to the element with the smallest barycentric
        violation if that violation is below ``extrapolate`` (curved boundary
        slivers), else ``PointLocationError``.
        """
        P = np.asarray(points, dtype=float).reshape(-1, 2)
        tri = self.mesh.vertices[self.mesh.triangles]
        v0 = tri[:, 0]
        dl = self.dlam
        out = []
        for s in range(0, len(P), chunk):
            pc = P[s:s + chunk]
            d = pc[:, None, :] - v0[None, :, :]
            l1 = np.einsum("pmd,md->pm", d, dl[:, 1])
            l2 = np.einsum("pmd,md->pm", d, dl[:, 2])
            l0 = 1.0 - l1 - l2
            lmin = np.minimum(np.minimum(l0, l1), l2)
            for i in range(len(pc)):
                el = np.flatnonzero(lmin[i] >= -tol)
                if len(el) == 0:
                    j = int(np.argmax(lmin[i]))
                    if lmin[i, j] < -extrapolate:
                        raise PointLocationError(f"point {pc[i]} lies outside the mesh")
                    el = np.array([j])
                lam = np.stack([l0[i, el], l1[i, el], l2[i, el]], axis=-1)
                out.append((el, lam))
        return out


# ---------------------------------------------------------------- assembly
def assemble_viscous(space: TaylorHoodSpace, mu=1.0):
    """Sparse matrix of ``int 2 mu e(u):e(v)`` on the velocity dofs."""
    _, G, _, wa = space.basis_at_quadrature(6)
    gx, gy = G[..., 0], G[..., 1]
    kxx = np.einsum("mq,mqi,mqj->mij", wa, gx, gx)
    kyy = np.einsum("mq,mqi,mqj->mij", wa, gy, gy)
    kyx = np.einsum("mq,mqi,mqj->mij", wa, gy, gx)
    blocks = {
        (0, 0): mu * (2 * kxx + kyy),
        (1, 1): mu * (kxx + 2 * kyy),
        (0, 1): mu * kyx,
        (1, 0): mu * np.transpose(kyx, (0, 2, 1)),
    }
    en = space.elem_nodes
    n = space.n_nodes
    rows, cols, vals = [], [], []
    for (a, b), K in blocks.items():
        rows.append(np.broadcast_to(en[:, :, None] + a * n, K.shape).ravel())
        cols.append(np.broadcast_to(en[:, None, :] + b * n, K.shape).ravel())
        vals.append(K.ravel())
    A = sps.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * n, 2 * n))
    return A.tocsr()


def assemble_divergence(space: TaylorHoodSpace):
    """``B[q, j] = -int psi_q div(phi_j)`` (P1 rows, velocity columns)."""
    _, G, _, wa = space.basis_at_quadrature(6)
    psi = triangle_rule(6)[0]  # P1 shape functions are the barycentrics
    bx = -np.einsum("mq,qi,mqj->mij", wa, psi, G[..., 0])
    by = -np.einsum("mq,qi,mqj->mij", wa, psi, G[..., 1])
    tri = space.mesh.triangles
    en = space.elem_nodes
    n = space.n_nodes
    r = np.broadcast_to(tri[:, :, None], bx.shape)
    rows = np.concatenate([r.ravel(), r.ravel()])
    cols = np.concatenate([np.broadcast_to(en[:, None, :], bx.shape).ravel(),
                           np.broadcast_to(en[:, None, :] + n, by.shape).ravel()])
    B = sps.coo_matrix((np.concatenate([bx.ravel(), by.ravel()]), (rows, cols)), shape=(space.n_vertices, 2 * n))
    return B.tocsr()


def assemble_pressure_mean(space: TaylorHoodSpace):
    """``m[q] = int psi_q``."""
    m = np.zeros(space.n_vertices)
    np.add.at(m, space.mesh.triangles, np.repeat(space.area[:, None] / 3.0, 3, axis=1))
    return m


def assemble_load(space: TaylorHoodSpace, force):
    """``int f . phi`` for a body force ``force(points) -> (..., 2)``."""
    _, pts, wa = space.quadrature(6)
    phi = p2_values(triangle_rule(6)[0])
    f = np.asarray(force(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape)
    loc = np.einsum("mq,qi,mqd->dmi", wa, phi, f)
    b = np.zeros(space.n_velocity)
    np.add.at(b, space.elem_nodes, loc[0])
    np.add.at(b, space.elem_nodes + space.n_nodes, loc[1])
    return b


def _load_pardiso():
    """Return the ``pypardiso`` module if MKL is usable, else ``None``."""
    if not os.environ.get("PYPARDISO_MKL_RT"):
        roots = {sys.prefix, sys.base_prefix, "/usr/local", "/usr"}
        for root in sorted(roots):
            hits = sorted(glob.glob(os.path.join(root, "lib", "libmkl_rt.so*")))
            if hits:
                os.environ["PYPARDISO_MKL_RT"] = hits[0]
                break
    try:
        import pypardiso
    except Exception:  # missing package or MKL runtime
        return None
    return pypardiso


_PARDISO = None
_BACKEND = "auto"
BACKENDS = ("auto", "pardiso", "superlu")


def set_solver_backend(name: str):
    """Choose the sparse direct solver for subsequent factorisations.

    ``auto`` uses MKL PARDISO through ``pypardiso`` when importable and
    SuperLU otherwise.
    """
    global _BACKEND
    if name not in BACKENDS:
        raise ValueError(f"unknown solver backend {name!r}; choose from {BACKENDS}")
    _BACKEND = name
    _SOLVERS.clear()
    _RIGID.clear()


class _PardisoFactor:
    """Adapter giving a PARDISO factorisation the ``splu`` ``solve`` interface."""

    def __init__(self, module, K):
        self.K = K.tocsr()
        self.K.sort_indices()
        self.solver = module.PyPardisoSolver()
        self.solver.factorize(self.K)

    def solve(self, b):
        return np.asarray(self.solver.solve(self.K, np.ascontiguousarray(b, dtype=float))).reshape(np.shape(b))

    def __del__(self):
        # MKL keeps the factor outside Python's heap; release it explicitly
        try:
            self.solver.free_memory(everything=True)
        except Exception:  # noqa: BLE001  (interpreter shutdown or never factorised)
            pass


def solver_backend():
    """Name of the sparse direct solver used for new factorisations."""
    global _PARDISO
    if _BACKEND == "superlu":
        return "superlu"
    if _PARDISO is None:
        _PARDISO = _load_pardiso() or False
    if _PARDISO:
        return "pardiso"
    if _BACKEND == "pardiso":
        raise FEMError("PARDISO backend requested but pypardiso / MKL is unavailable")
    return "superlu"


def _factorize(K):
    if solver_backend() == "pardiso":
        return _PardisoFactor(_PARDISO, K)
    K = K.tocsc()
    try:
        lu = spla.splu(K, permc_spec="COLAMD")
    except RuntimeError as exc:  # singular factor
        raise FEMError(f"saddle system is singular ({exc}); gauge row present: yes") from exc
    return lu


def _solve_refined(lu, K, b, steps=2):
    x = lu.solve(b)
    for _ in range(steps):
        r = b - K @ x
        x = x + lu.solve(r)
    return x, float(np.linalg.norm(b - K @ x) / max(np.linalg.norm(b), 1e-300))


# --------------------------------------------------------------- solutions
@dataclass
class StokesSolution:
    """Discrete velocity (P2) and pressure (P1) with the zero-mean gauge."""

    space: TaylorHoodSpace
    velocity: np.ndarray
    pressure: np.ndarray
    mu: float = 1.0
    gauge: str = "zero-mean"
    diagnostics: dict = field(default_factory=dict)

    @property
    def mesh(self):
        return self.space.mesh

    def shifted(self, c):
        return StokesSolution(self.space, self.velocity, self.pressure + c, self.mu, "shifted", dict(self.diagnostics))

    def _components(self):
        n = self.space.n_nodes
        return self.velocity[:n], self.velocity[n:]

    def eval_velocity(self, points, **kw):
        ux, uy = self._components()
        out = []
        for el, lam in self.space.locate(points, **kw):
            phi = p2_values(lam)
            en = self.space.elem_nodes[el]
            out.append([np.mean(np.sum(phi * ux[en], -1)), np.mean(np.sum(phi * uy[en], -1))])
        return np.array(out)

    def eval_gradient(self, points, **kw):
        """``G[n, i, j] = d u_i / d x_j``, averaged over all containing elements."""
        ux, uy = self._components()
        out = np.empty((len(np.atleast_2d(points)), 2, 2))
        for k, (el, lam) in enumerate(self.space.locate(points, **kw)):
            g = p2_gradients(lam, self.space.dlam[el])  # (e, 6, 2)
            en = self.space.elem_nodes[el]
            gx = np.einsum("ei,eid->ed", ux[en], g).mean(0)
            gy = np.einsum("ei,eid->ed", uy[en], g).mean(0)
            out[k] = np.stack([gx, gy])
        return out

    def eval_pressure(self, points, **kw):
        tri = self.mesh.triangles
        out = []
        for el, lam in self.space.locate(points, **kw):
            out.append(np.mean(np.sum(lam * self.pressure[tri[el]], -1)))
        return np.array(out)

    def eval_stress(self, points, geom=None, **kw):
        """Cauchy stress ``2 mu e(u) - p I``."""
        G = self.eval_gradient(points, **kw)
        p = self.eval_pressure(points, **kw)
        e = 0.5 * (G + np.swapaxes(G, -1, -2))
        mu = self.mu if geom is None else geom.mu
        return 2 * mu * e - p[:, None, None] * np.eye(2)

    def l2_velocity(self, other=None):
        """L2 norm of the velocity (or of the difference with ``other``)."""
        u = self.velocity if other is None else self.velocity - other.velocity
        return float(np.sqrt(u @ (self.space_mass() @ u)))

    def space_mass(self):
        return velocity_mass(self.space)

    def l2_errors(self, u_exact, p_exact=None, degree=6):
        """L2 errors against closed-form fields; the pressure error is taken modulo constants."""
        sp_ = self.space
        phi, _, pts, wa = sp_.basis_at_quadrature(degree)
        ux, uy = self._components()
        en = sp_.elem_nodes
        uh = np.stack([ux[en] @ phi.T, uy[en] @ phi.T], axis=-1)
        eu = float(np.sqrt(np.sum(wa * np.sum((uh - u_exact(pts)) ** 2, axis=-1))))
        if p_exact is None:
            return eu, None
        bary = triangle_rule(degree)[0]
        ph = self.pressure[self.mesh.triangles] @ bary.T
        d = ph - p_exact(pts)
        d = d - np.sum(wa * d) / np.sum(wa)
        return eu, float(np.sqrt(np.sum(wa * d * d)))


_MASS_CACHE = {}


def velocity_mass(space):
    """Consistent P2 mass matrix on the velocity dofs (cached per space)."""
    key = id(space)
    if key in _MASS_CACHE and _MASS_CACHE[key][0] is space:
        return _MASS_CACHE[key][1]
    phi, _, _, wa = space.basis_at_quadrature(6)
    M = np.einsum("mq,qi,qj->mij", wa, phi, phi)
    en = space.elem_nodes
    rows = np.broadcast_to(en[:, :, None], M.shape).ravel()
    cols = np.broadcast_to(en[:, None, :], M.shape).ravel()
    m1 = sps.coo_matrix((M.ravel(), (rows, cols)), shape=(space.n_nodes,) * 2).tocsr()
    mass = sps.block_diag([m1, m1]).tocsr()
    _MASS_CACHE.clear()
    _MASS_CACHE[key] = (space, mass)
    return mass


# ----------------------------------------------------------------- solver
def polygon_flux(space, u, tags=None):
    """``int u . n`` over the polygonal boundary (all tags, or the listed ones)."""
    if tags is None:
        return float(-(np.ones(space.n_vertices) @ space_B(space)) @ u)
    return _tag_flux(space, u, tags)


def space_B(space):
    if not hasattr(space, "_B"):
        space._B = assemble_divergence(space)
    return space._B


def _tag_flux(space, u, tags):
    """Flux through the listed boundary tags with outward normals of the mesh."""
    xs, ws = segment_rule(4)
    n = space.n_nodes
    total = 0.0
    V = space.mesh.vertices
    for tag in tags:
        en = space.boundary_edge_nodes[tag]
        a, b, m = en[:, 0], en[:, 1], en[:, 2]
        d = V[b] - V[a]
        # orient with the domain on the left
        nrm = np.stack([d[:, 1], -d[:, 0]], -1)
        nrm *= _outward_sign(space, tag)[:, None]
        for x, w in zip(xs, ws):
            la, lb, lm = (1 - x) * (1 - 2 * x), x * (2 * x - 1), 4 * x * (1 - x)
            ux = la * u[a] + lb * u[b] + lm * u[m]
            uy = la * u[a + n] + lb * u[b + n] + lm * u[m + n]
            total += float(np.sum(w * (ux * nrm[:, 0] + uy * nrm[:, 1])))
    return total


def _outward_sign(space, tag):
    """+1 where ``(dy, -dx)`` of the stored edge points out of the domain."""
    cache = space.__dict__.setdefault("_outward", {})
    if tag in cache:
        return cache[tag]
    mesh = space.mesh
    be = mesh.boundary_edges[mesh.edge_tags == tag]
    # find the triangle owning each boundary edge and compare with its third vertex
    tri = mesh.triangles
    lookup = {}
    for t_i, t in enumerate(tri.tolist()):
        for i, j in _LOCAL_EDGES:
            lookup[(min(t[i], t[j]), max(t[i], t[j]))] = t_i
    V = mesh.vertices
    sign = np.empty(len(be))
    for k, (a, b) in enumerate(be.tolist()):
        t = tri[lookup[(min(a, b), max(a, b))]]
        c = [v for v in t if v != a and v != b][0]
        d = V[b] - V[a]
        nrm = np.array([d[1], -d[0]])
        sign[k] = 1.0 if nrm @ (V[c] - V[a]) < 0 else -1.0
    cache[tag] = sign
    return sign


class StokesSolver:
    """Assembled and factorised Dirichlet Stokes saddle system on one mesh.

    The matrix only depends on the mesh and viscosity, so it is factorised
    once and reused for every set of boundary data.
    """

    def __init__(self, mesh: TriMesh, mu=1.0):
        self.space = TaylorHoodSpace(mesh)
        self.mu = float(mu)
        sp_ = self.space
        self.A = assemble_viscous(sp_, self.mu)
        self.B = space_B(sp_)
        self.m = assemble_pressure_mean(sp_)
        self.free = sp_.node_dofs(sp_.interior_nodes)
        self.fixed = sp_.node_dofs(sp_.dirichlet_nodes)
        nf, npr = len(self.free), sp_.n_vertices
        A_ff = self.A[self.free][:, self.free]
        B_f = self.B[:, self.free]
        mcol = sps.csr_matrix(self.m[:, None])
        self.K = sps.bmat([
            [A_ff, B_f.T, None],
            [B_f, None, mcol],
            [None, mcol.T, None],
        ], format="csc")
        self.lu = _factorize(self.K)
        self.n_free, self.n_pressure = nf, npr
        self._flux_weights = -(np.ones(npr) @ self.B)

    @property
    def mesh(self):
        return self.space.mesh

    def lift(self, traces, flux_patch=None, correct_flux=True):
        """Dirichlet vector from ``traces = {tag: fn}`` with the discrete net
        flux removed.

        The correction adds ``alpha * g`` on the nodes of the outer tag, with
        ``g`` the interpolated ``flux_patch`` if given, else the discrete
        normal-flux weights (minimum-norm correction).
        """
        sp_ = self.space
        u = np.zeros(sp_.n_velocity)
        for tag, fn in traces.items():
            if tag not in sp_.boundary_nodes:
                raise FEMError(f"mesh has no boundary tagged {tag!r}")
            if fn is None:
                continue
            dofs = sp_.node_dofs(sp_.boundary_nodes[tag])
            u[dofs] = sp_.interpolate(fn, sp_.boundary_nodes[tag])[dofs]
        defect = float(self._flux_weights @ u)
        info = {"flux_defect": defect, "flux_correction": 0.0}
        if correct_flux and defect != 0.0:
            outer_nodes = sp_.boundary_nodes.get(OUTER)
            if outer_nodes is None:
                outer_nodes = sp_.dirichlet_nodes
            if flux_patch is not None:
                g = sp_.interpolate(flux_patch, outer_nodes)
            else:
                g = np.zeros(sp_.n_velocity)
                d = sp_.node_dofs(outer_nodes)
                g[d] = self._flux_weights[d]
            gf = float(self._flux_weights @ g)
            if abs(gf) < 1e-300:
                raise FEMError("flux correction patch carries no flux")
            alpha = -defect / gf
            u += alpha * g
            info["flux_correction"] = alpha
        log.debug("discrete flux defect %.3e corrected by %.3e", defect, info["flux_correction"])
        return u, info

    def solve(self, traces, force=None, flux_patch=None, lifted=None):
        """Solve with Dirichlet ``traces = {tag: fn(points) -> (n, 2)}``."""
        if lifted is None:
            uD, info = self.lift(traces, flux_patch)
        else:
            uD, info = lifted, {"flux_defect": float(self._flux_weights @ lifted), "flux_correction": 0.0}
        rhs_u = -(self.A @ uD)
        if force is not None:
            rhs_u = rhs_u + assemble_load(self.space, force)
        rhs_p = -(self.B @ uD)
        b = np.concatenate([rhs_u[self.free], rhs_p, [0.0]])
        x, res = _solve_refined(self.lu, self.K, b)
        u = uD.copy()
        u[self.free] = x[: self.n_free]
        p = x[self.n_free: self.n_free + self.n_pressure]
        lam = float(x[-1])
        div = float(np.linalg.norm(self.B @ u))
        info.update({
            "relative_residual": res,
            "divergence_residual": div,
            "gauge_multiplier": lam,
            "pressure_mean": float(self.m @ p / self.m.sum()),
        })
        return StokesSolution(self.space, u, p, self.mu, "zero-mean", info)

    def energy_inner(self, a, b):
        return energy_inner(a, b, self.A)


# ------------------------------------------------------------ compatibility
def curve_flux(curve, fn, n_panels=1024, order=8):
    """``int fn . n`` over a closed parametrised curve, ``n`` pointing away from its interior."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-np.pi, np.pi, n_panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    th = (0.5 * (a + b) + 0.5 * (b - a) * x).ravel()
    wt = (0.5 * (b - a) * w).ravel()
    t = curve.tangent(th)
    nn = np.stack([t[:, 1], -t[:, 0]], axis=-1)
    f = np.asarray(fn(curve.point(th)), dtype=float)
    flux = float(np.sum(wt * np.sum(f * nn, -1)))
    scale = float(np.sum(wt * np.abs(np.sum(f * nn, -1))))
    return flux, scale


def check_compatibility(geom, trace_particle, trace_outer, tol=1e-8):
    """Raise ``IncompatibleFluxError`` unless the outer-wall outflux equals
    the particle outflux (``int_{wall} t . n - int_{particle} t . nu = 0``)."""
    outer, particle = geom.boundary_curves()
    fo, so = curve_flux(outer, trace_outer) if trace_outer is not None else (0.0, 0.0)
    fp, spr = curve_flux(particle, trace_particle) if trace_particle is not None else (0.0, 0.0)
    net = fo - fp
    scale = max(so + spr, 1e-300)
    if abs(net) > tol * scale:
        raise IncompatibleFluxError(
            f"boundary data violate the zero net-flux compatibility condition: "
            f"int_wall t.n - int_particle t.nu = {net:.3e} (relative {abs(net) / scale:.2e} > {tol:g})"
        )
    return net / scale


# ---------------------------------------------------------------- top level
_SOLVERS = {}


def get_solver(mesh, mu=1.0):
    """Factorised solver for ``mesh`` (memoised on object identity)."""
    key = (id(mesh), float(mu))
    hit = _SOLVERS.get(key)
    if hit is not None and hit.mesh is mesh:
        return hit
    if len(_SOLVERS) > 4:
        _SOLVERS.clear()
    s = StokesSolver(mesh, mu)
    _SOLVERS[key] = s
    return s


def solve_dirichlet(mesh, geom, trace_particle, trace_outer, force=None, flux_patch=None, check=True):
    """Dirichlet Stokes solve with traces on the particle and outer boundaries.

    ``geom`` may be ``None`` for meshes without a particle (then only the
    discrete compatibility is enforced); otherwise the continuous condition is
    checked on the exact curves first.
    """
    mu = 1.0 if geom is None else geom.mu
    if geom is not None and check:
        check_compatibility(geom, trace_particle, trace_outer)
    solver = get_solver(mesh, mu)
    traces = {}
    if PARTICLE in solver.space.boundary_nodes:
        traces[PARTICLE] = trace_particle if trace_particle is not None else _zero
    elif trace_particle is not None:
        raise FEMError("mesh has no particle boundary")
    if OUTER in solver.space.boundary_nodes:
        traces[OUTER] = trace_outer if trace_outer is not None else _zero
    if flux_patch is None and geom is not None:
        flux_patch = geom.flux_patch
    return solver.solve(traces, force=force, flux_patch=flux_patch)


def _zero(p):
    return np.zeros(np.shape(p))


def energy_inner(sol_a, sol_b, A=None):
    """``int 2 mu e(u_a):e(u_b)`` through the assembled viscous matrix."""
    if sol_a.space is not sol_b.space:
        raise FEMError("solutions live on different meshes")
    if A is None:
        A = get_solver(sol_a.mesh, sol_a.mu).A
    return float(sol_a.velocity @ (A @ sol_b.velocity))


def rigid_lifting(space, tag=PARTICLE):
    """Velocity vectors equal to the rigid modes on ``tag`` nodes, zero elsewhere."""
    nodes = space.boundary_nodes[tag]
    return np.stack([space.interpolate(lambda p, a=a: rigid_mode(a, p), nodes) for a in (1, 2, 3)], axis=1)


class RigidSolver:
    """Saddle system with the three rigid constants as unknowns.

    Unknowns ``[u_interior, C(3), p, lambda]``; the rigid rows test the
    momentum equation against the discrete rigid liftings, enforcing zero
    net force and torque on the particle.
    """

    def __init__(self, mesh, mu=1.0):
        base = get_solver(mesh, mu)
        self.base = base
        sp_ = base.space
        self.L = rigid_lifting(sp_)
        A, B = base.A, base.B
        f = base.free
        Lf = sps.csr_matrix(self.L)
        A_ff = A[f][:, f]
        A_fL = (A @ Lf)[f]
        A_LL = Lf.T @ A @ Lf
        B_f = B[:, f]
        B_L = B @ Lf
        mcol = sps.csr_matrix(base.m[:, None])
        self.K = sps.bmat([
            [A_ff, A_fL, B_f.T, None],
            [A_fL.T, A_LL, B_L.T, None],
            [B_f, B_L, None, mcol],
            [None, None, mcol.T, None],
        ], format="csc")
        self.lu = _factorize(self.K)

    def solve(self, lifted_outer):
        base = self.base
        A, B, f = base.A, base.B, base.free
        uO = lifted_outer
        Au = A @ uO
        b = np.concatenate([-Au[f], -(self.L.T @ Au), -(B @ uO), [0.0]])
        x, res = _solve_refined(self.lu, self.K, b)
        nf = base.n_free
        C = x[nf: nf + 3]
        p = x[nf + 3: nf + 3 + base.n_pressure]
        u = uO.copy()
        u[f] = x[:nf]
        u = u + self.L @ C
        return u, p, C, res, float(x[-1])


def direct_rigid_solve(mesh, geom, bc, lifted=None):
    """Free-particle problem solved in one saddle system.

    Returns ``(StokesSolution, C)`` with ``C`` the rigid constants.
    """
    from .boundary_data import BoundaryData  # noqa: F401  (type of bc)

    trace = (lambda p: bc.trace(geom, p))
    check_compatibility(geom, None, trace)
    base = get_solver(mesh, geom.mu)
    if lifted is None:
        lifted, info = base.lift({OUTER: trace, PARTICLE: _zero}, geom.flux_patch)
    else:
        info = {}
    rs = _rigid_solver(mesh, geom.mu)
    u, p, C, res, lam = rs.solve(lifted)
    info.update({"relative_residual": res, "gauge_multiplier": lam,
                 "divergence_residual": float(np.linalg.norm(base.B @ u))})
    return StokesSolution(base.space, u, p, geom.mu, "zero-mean", info), C


_RIGID = {}


def _rigid_solver(mesh, mu):
    key = (id(mesh), float(mu))
    hit = _RIGID.get(key)
    if hit is not None and hit.base.mesh is mesh:
        return hit
    if len(_RIGID) > 2:
        _RIGID.clear()
    rs = RigidSolver(mesh, mu)
    _RIGID[key] = rs
    return rs


# ------------------------------------------------------ boundary traction
def boundary_traction_functional(sol: StokesSolution, weight, tag=PARTICLE, order=4):
    """``int_{tag} weight . sigma nu`` with ``nu`` pointing out of the
    enclosed body (into the fluid for the particle), integrated on the
    polygonal boundary with element-wise stresses."""
    sp_ = sol.space
    mesh = sol.mesh
    xs, ws = segment_rule(order)
    en = sp_.boundary_edge_nodes[tag]
    a, b = en[:, 0], en[:, 1]
    V = mesh.vertices
    d = V[b] - V[a]
    nrm = np.stack([d[:, 1], -d[:, 0]], -1) * _outward_sign(sp_, tag)[:, None]
    # outward from the fluid; the body normal is the opposite
    nu = -nrm
    tri = mesh.triangles
    lookup = {}
    for t_i, t in enumerate(tri.tolist()):
        for i, j in _LOCAL_EDGES:
            lookup[(min(t[i], t[j]), max(t[i], t[j]))] = t_i
    owner = np.array([lookup[(min(i, j), max(i, j))] for i, j in zip(a, b)])
    n = sp_.n_nodes
    ux, uy = sol.velocity[:n], sol.velocity[n:]
    total = 0.0
    for x, w in zip(xs, ws):
        pts = (1 - x) * V[a] + x * V[b]
        dl = sp_.dlam[owner]
        v0 = V[tri[owner, 0]]
        l1 = np.einsum("ed,ed->e", pts - v0, dl[:, 1])
        l2 = np.einsum("ed,ed->e", pts - v0, dl[:, 2])
        lam = np.stack([1 - l1 - l2, l1, l2], -1)
        g = p2_gradients(lam, dl)
        enod = sp_.elem_nodes[owner]
        gx = np.einsum("ei,eid->ed", ux[enod], g)
        gy = np.einsum("ei,eid->ed", uy[enod], g)
        G = np.stack([gx, gy], 1)
        e = 0.5 * (G + np.swapaxes(G, 1, 2))
        p = np.sum(lam * sol.pressure[tri[owner]], -1)
        sig = 2 * sol.mu * e - p[:, None, None] * np.eye(2)
        t = np.einsum("eij,ej->ei", sig, nu)
        wv = np.asarray(weight(pts), dtype=float)
        total += float(np.sum(w * np.sum(wv * t, -1)))
    return total


def pressure_oscillation(sol: StokesSolution, points):
    """Half the peak-to-peak pressure over ``points`` (gauge free)."""
    p = sol.eval_pressure(points)
    return 0.5 * float(p.max() - p.min())
