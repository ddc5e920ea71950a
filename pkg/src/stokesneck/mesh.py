"""Neck-graded conforming triangulations.

The fluid domain between the wall curve and the particle curve is meshed
as a structured O-grid: both curves are star-shaped about the particle
centre, so every polar ray crosses the gap exactly once, and vertices sit
at ``X(theta, s) = (1 - s) P_wall(theta) + s P_particle(theta)``. The
angular nodes follow the step law

    step(theta) = min(h_far, c * sqrt(gap(theta) / kappa0)),

which is ``c sqrt(delta/kappa0)`` in the neck and ``h_far`` far from it.
Each ray carries ``max(n_layers, ceil(max gap / h_far))`` layers.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import GeometryError, NeckGeometry

log = logging.getLogger(__name__)

PARTICLE = "particle"
OUTER = "outer"
EPS_FLOOR = 1e-6


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class MeshParams:
    n_layers: int = 8
    h_far: float = 0.15
    neck_step: float = 0.1
    max_layers: int = 64

    def __post_init__(self):
        if int(self.n_layers) != self.n_layers or self.n_layers < 4:
            raise MeshError(f"n_layers must be an integer >= 4, got {self.n_layers}")
        if not self.h_far > 0:
            raise MeshError("h_far must be positive")
        if not self.neck_step > 0:
            raise MeshError("neck_step must be positive")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in dict(d).items() if k in cls.__dataclass_fields__})

    def to_dict(self):
        return asdict(self)


class Circle:
    """Circle parametrised by the polar angle from the downward vertical."""

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.r = float(radius)

    def point(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.center + self.r * np.stack([np.sin(theta), -np.cos(theta)], axis=-1)

    def theta_of(self, p):
        p = np.asarray(p, dtype=float)
        return np.arctan2(p[..., 0] - self.center[0], self.center[1] - p[..., 1])

    @property
    def length(self):
        return 2 * np.pi * self.r


@dataclass
class TriMesh:
    """Triangle mesh with tagged boundary edges.

    ``triangles`` are counter-clockwise. ``vertex_theta`` stores, for
    vertices on a curved boundary, the curve parameter; refinement uses it
    to place new boundary vertices exactly on the curve.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    vertex_theta: np.ndarray
    curves: dict = field(default_factory=dict)
    grading: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.edge_tags = np.asarray(self.edge_tags, dtype=object)
        self.vertex_theta = np.asarray(self.vertex_theta, dtype=float)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def boundary_vertices(self, tag):
        return np.unique(self.boundary_edges[self.edge_tags == tag])

    @property
    def tags(self):
        return sorted(set(self.edge_tags.tolist()))

    def edges(self):
        """Unique edges and the triangle-to-edge map (local edge ``j`` joins
        local vertices ``j`` and ``(j+1) % 3``)."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        es = np.sort(e, axis=1)
        uniq, inv = np.unique(es, axis=0, return_inverse=True)
        return uniq, inv.reshape(3, -1).T

    def boundary_length(self, tag):
        e = self.boundary_edges[self.edge_tags == tag]
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return float(np.sum(np.hypot(d[:, 0], d[:, 1])))

    def area(self):
        return float(np.sum(self.signed_areas()))

    def copy_with(self, **kw):
        d = dict(
            vertices=self.vertices, triangles=self.triangles, boundary_edges=self.boundary_edges,
            edge_tags=self.edge_tags, vertex_theta=self.vertex_theta, curves=self.curves,
            grading=dict(self.grading),
        )
        d.update(kw)
        return TriMesh(**d)

    def dump_csv(self, directory):
        """Write ``vertices.csv``, ``triangles.csv`` and ``edges.csv``."""
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "vertices.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x1", "x2", "theta"])
            for (x, y), th in zip(self.vertices, self.vertex_theta):
                w.writerow([repr(float(x)), repr(float(y)), "" if np.isnan(th) else repr(float(th))])
        with open(os.path.join(directory, "triangles.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["v0", "v1", "v2"])
            w.writerows(self.triangles.tolist())
        with open(os.path.join(directory, "edges.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["v0", "v1", "tag"])
            for (a, b), t in zip(self.boundary_edges.tolist(), self.edge_tags):
                w.writerow([a, b, t])


# ----------------------------------------------------------------- neck mesh
def _angular_nodes(geom, params):
    """Mirror-symmetric angular nodes in [-pi, pi) following the step law."""
    outer, particle = geom.boundary_curves()
    # dense sampling, geometric towards theta = 0 to resolve sqrt(eps) scales
    th = np.unique(np.concatenate([
        np.linspace(0.0, np.pi, 8001),
        np.geomspace(1e-9, np.pi, 4001),
    ]))

    def density(t):
        po, pi_ = outer.point(t), particle.point(t)
        gap = np.hypot(*(po - pi_).T)
        step = np.minimum(params.h_far, params.neck_step * np.sqrt(gap / geom.kappa0))
        speed = np.maximum(outer.speed(t), particle.speed(t))
        return speed / step

    rho = np.maximum(density(th), density(-th))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(th))])
    n_half = max(int(math.ceil(cum[-1])), 8)
    levels = np.linspace(0.0, cum[-1], n_half + 1)
    half = np.interp(levels, cum, th)
    half[0], half[-1] = 0.0, np.pi
    # -pi is represented by +pi's mirror; drop the duplicate
    return np.concatenate([-half[::-1][:-1], half[:-1]])


def build_neck_mesh(geom: NeckGeometry, params: MeshParams = None) -> TriMesh:
    """Structured O-grid of the fluid domain with neck grading.

    Boundary vertices lie exactly on the two curves. Raises ``MeshError`` for
    ``eps`` below the desk-scale floor or when vertices collapse.
    """
    params = MeshParams() if params is None else params
    if geom.eps < EPS_FLOOR:
        raise MeshError(
            f"eps = {geom.eps:.3g} is below the supported floor {EPS_FLOOR:g}; "
            "vertex separations would approach roundoff"
        )
    outer, particle = geom.boundary_curves()
    theta = _angular_nodes(geom, params)
    p_out, p_in = outer.point(theta), particle.point(theta)
    gap = np.hypot(*(p_out - p_in).T)
    if np.any(gap <= 0):
        raise GeometryError("wall and particle curves touch")
    n_s = int(max(params.n_layers, math.ceil(gap.max() / params.h_far)))
    n_s = min(n_s, max(params.max_layers, params.n_layers))
    s = np.linspace(0.0, 1.0, n_s + 1)
    n_t = len(theta)

    X = (1 - s[None, :, None]) * p_out[:, None, :] + s[None, :, None] * p_in[:, None, :]
    X[:, 0] = p_out
    X[:, -1] = p_in
    verts = X.reshape(-1, 2)
    vid = np.arange(n_t * (n_s + 1)).reshape(n_t, n_s + 1)
    vtheta = np.full(len(verts), np.nan)
    vtheta[vid[:, 0]] = theta
    vtheta[vid[:, -1]] = theta

    i = np.arange(n_t)[:, None]
    ip = (i + 1) % n_t
    j = np.arange(n_s)[None, :]
    a, b = vid[i, j], vid[ip, j]
    c, d = vid[ip, j + 1], vid[i, j + 1]
    # diagonal mirrored about theta = 0 so the connectivity is symmetric
    right = np.broadcast_to((theta >= 0)[:, None], a.shape)
    t1 = np.where(right[..., None], np.stack([a, b, c], -1), np.stack([a, b, d], -1))
    t2 = np.where(right[..., None], np.stack([a, c, d], -1), np.stack([b, c, d], -1))
    tris = np.concatenate([t1.reshape(-1, 3), t2.reshape(-1, 3)])

    mesh_edges_out = np.stack([vid[:, 0], vid[(np.arange(n_t) + 1) % n_t, 0]], -1)
    mesh_edges_in = np.stack([vid[:, -1], vid[(np.arange(n_t) + 1) % n_t, -1]], -1)
    bedges = np.concatenate([mesh_edges_out, mesh_edges_in])
    tags = np.array([OUTER] * n_t + [PARTICLE] * n_t, dtype=object)

    mesh = TriMesh(
        verts, tris, bedges, tags, vtheta,
        curves={OUTER: outer, PARTICLE: particle},
        grading={
            "kind": "o-grid",
            "n_theta": n_t,
            "layers_per_ray": n_s,
            "params": params.to_dict(),
            "eps": geom.eps,
        },
    )
    mesh = _orient(mesh)
    _check_separation(mesh)
    return mesh


def _orient(mesh):
    area = mesh.signed_areas()
    t = mesh.triangles.copy()
    flip = area < 0
    t[flip] = t[flip][:, [0, 2, 1]]
    return mesh.copy_with(triangles=t)


def _check_separation(mesh, tol=1e-13):
    e, _ = mesh.edges()
    d = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    dmin = float(np.min(np.hypot(d[:, 0], d[:, 1])))
    if dmin < tol:
        raise MeshError(f"vertex separation {dmin:.3g} below {tol:g}")
    a = np.abs(mesh.signed_areas())
    if np.any(a <= 0):
        raise MeshError("zero-area triangle")


def neck_element_count(mesh, geom, r=None):
    """Triangles with centroid in ``|x1| <= r`` under the particle."""
    r = geom.R if r is None else r
    cen = mesh.vertices[mesh.triangles].mean(axis=1)
    return int(np.count_nonzero(geom.in_neck(cen, r)))


def predicted_neck_steps(geom, params, r=None):
    """Number of angular steps the law ``c sqrt(delta/kappa0)`` places in
    ``|x1| <= r``: ``(2/c) asinh(r sqrt(kappa0/eps))``."""
    r = geom.R if r is None else r
    return 2.0 / params.neck_step * math.asinh(r * math.sqrt(geom.kappa0 / geom.eps))


# ----------------------------------------------------------- simple meshes
def unit_square_mesh(n: int) -> TriMesh:
    """``n x n`` uniform criss-free triangulation of the unit square, boundary tag ``outer``."""
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], -1)
    vid = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    a, b, c, d = vid[i, j], vid[i + 1, j], vid[i + 1, j + 1], vid[i, j + 1]
    tris = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    k = np.arange(n)
    edges = np.concatenate([
        np.stack([vid[k, 0], vid[k + 1, 0]], -1),
        np.stack([vid[n, k], vid[n, k + 1]], -1),
        np.stack([vid[k + 1, n], vid[k, n]], -1),
        np.stack([vid[0, k + 1], vid[0, k]], -1),
    ])
    return TriMesh(verts, tris, edges, np.array([OUTER] * len(edges), dtype=object),
                   np.full(len(verts), np.nan), grading={"kind": "square", "n": n})


def disk_mesh(radius=1.0, n_rings=8, center=(0.0, 0.0)) -> TriMesh:
    """Particle-free disk: Delaunay triangulation of concentric rings of
    ``6 i`` points, boundary tag ``outer`` on the exact circle."""
    from scipy.spatial import Delaunay

    center = np.asarray(center, dtype=float)
    circle = Circle(center, radius)
    pts, ths = [center[None, :]], [np.array([np.nan])]
    for i in range(1, n_rings + 1):
        m = 6 * i
        th = -np.pi + 2 * np.pi * (np.arange(m) + 0.5 * (i % 2)) / m
        pts.append(center + radius * i / n_rings * np.stack([np.sin(th), -np.cos(th)], -1))
        ths.append(th if i == n_rings else np.full(m, np.nan))
    verts = np.concatenate(pts)
    vtheta = np.concatenate(ths)
    m = 6 * n_rings
    last = np.arange(len(verts) - m, len(verts))
    verts[last] = circle.point(vtheta[last])
    tri = Delaunay(verts).simplices
    edges = np.stack([last, np.roll(last, -1)], -1)
    mesh = TriMesh(verts, tri, edges, np.array([OUTER] * m, dtype=object), vtheta,
                   curves={OUTER: circle}, grading={"kind": "disk", "n_rings": n_rings})
    return _orient(mesh)


# ---------------------------------------------------------------- refinement
def _midpoint_theta(ta, tb):
    d = (tb - ta + np.pi) % (2 * np.pi) - np.pi
    m = ta + 0.5 * d
    return (m + np.pi) % (2 * np.pi) - np.pi


def refine(mesh: TriMesh, marker=None) -> TriMesh:
    """Conforming red-green refinement.

    ``marker`` is a boolean mask or index array of triangles (``None`` means
    all). Marked triangles are split in four; neighbours with one split edge
    are bisected, those with two or more are split in four as well. New
    vertices on curved boundaries are placed on the exact curve.
    """
    nt = mesh.n_triangles
    if marker is None:
        marked = np.ones(nt, dtype=bool)
    else:
        m = np.asarray(marker)
        if m.dtype == bool:
            if m.shape != (nt,):
                raise MeshError(f"boolean marker must have length {nt}")
            marked = m.copy()
        else:
            if m.size and (m.min() < 0 or m.max() >= nt or np.any(m != np.round(m))):
                raise MeshError("marker indices out of range")
            marked = np.zeros(nt, dtype=bool)
            marked[m.astype(np.int64)] = True
    if not marked.any():
        return mesh.copy_with()

    edges, t2e = mesh.edges()
    split = np.zeros(len(edges), dtype=bool)
    split[t2e[marked].ravel()] = True
    while True:
        nsplit = split[t2e].sum(axis=1)
        grow = (nsplit >= 2) & ~split[t2e].all(axis=1)
        if not grow.any():
            break
        split[t2e[grow].ravel()] = True

    verts = mesh.vertices
    vth = mesh.vertex_theta
    se = np.flatnonzero(split)
    new_id = np.full(len(edges), -1, dtype=np.int64)
    new_id[se] = len(verts) + np.arange(len(se))
    mids = 0.5 * (verts[edges[se, 0]] + verts[edges[se, 1]])
    mid_theta = np.full(len(se), np.nan)

    # boundary edges: project onto the exact curve
    new_bedges, new_tags = [], []
    edge_index = {tuple(e): k for k, e in enumerate(edges.tolist())}
    for (a, b), tag in zip(mesh.boundary_edges.tolist(), mesh.edge_tags):
        k = edge_index[tuple(sorted((a, b)))]
        if not split[k]:
            new_bedges.append([a, b])
            new_tags.append(tag)
            continue
        m = new_id[k]
        pos = m - len(verts)
        curve = mesh.curves.get(tag)
        if curve is not None and np.isfinite(vth[a]) and np.isfinite(vth[b]):
            th = _midpoint_theta(vth[a], vth[b])
            mids[pos] = curve.point(np.array([th]))[0]
            mid_theta[pos] = th
        new_bedges += [[a, m], [m, b]]
        new_tags += [tag, tag]

    tri = mesh.triangles
    s = split[t2e]
    ns = s.sum(axis=1)
    out = [tri[ns == 0]]
    # red
    r = ns == 3
    if r.any():
        v0, v1, v2 = tri[r].T
        m01, m12, m20 = (new_id[t2e[r, j]] for j in range(3))
        out += [np.stack(x, -1) for x in ([v0, m01, m20], [v1, m12, m01], [v2, m20, m12], [m01, m12, m20])]
    # green
    g = ns == 1
    if g.any():
        tg, eg = tri[g], t2e[g]
        j = np.argmax(s[g], axis=1)
        rows = np.arange(len(tg))
        va = tg[rows, j]
        vb = tg[rows, (j + 1) % 3]
        vc = tg[rows, (j + 2) % 3]
        mm = new_id[eg[rows, j]]
        out += [np.stack([va, mm, vc], -1), np.stack([mm, vb, vc], -1)]
    new_tris = np.concatenate(out)
    new_mesh = mesh.copy_with(
        vertices=np.concatenate([verts, mids]),
        triangles=new_tris,
        boundary_edges=np.array(new_bedges),
        edge_tags=np.array(new_tags, dtype=object),
        vertex_theta=np.concatenate([vth, mid_theta]),
    )
    new_mesh.grading["refinements"] = mesh.grading.get("refinements", 0) + 1
    new_mesh = _orient(new_mesh)
    return new_mesh


def refine_uniform(mesh, times=1):
    for _ in range(times):
        mesh = refine(mesh)
    return mesh


# ------------------------------------------------------------------- quality
@dataclass
class QualityReport:
    n_vertices: int
    n_triangles: int
    min_area: float
    min_angle_deg: float
    min_scaled_angle_deg: float
    max_scaled_aspect: float
    min_layers: int
    boundary_offsets: dict

    def to_dict(self):
        return asdict(self)


def _angles_and_aspect(p):
    """Minimum angle (deg) and circumradius/(2 inradius) per triangle."""
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    s = 0.5 * (a + b + c)
    inr = area / s
    circ = a * b * c / (4 * area)
    cosang = np.stack([
        (b**2 + c**2 - a**2) / (2 * b * c),
        (a**2 + c**2 - b**2) / (2 * a * c),
        (a**2 + b**2 - c**2) / (2 * a * b),
    ], -1)
    ang = np.degrees(np.arccos(np.clip(cosang, -1, 1))).min(axis=1)
    return ang, circ / (2 * inr)


def gap_scaled_coordinates(mesh, geom):
    """Per-triangle vertex coordinates in gap-scaled variables.

    Triangles with centroid in the inner neck (``|x1| <= R`` under the
    particle) are mapped pointwise by ``y1 = asinh(x1 sqrt(kappa0/eps))``, whose
    derivative is ``1/sqrt(delta/kappa0)``, and ``y2 = (x2 - h(x1)) / delta(x1)``;
    elsewhere coordinates are kept.
    """
    p = mesh.vertices[mesh.triangles].copy()
    cen = p.mean(axis=1)
    neck = geom.in_neck(cen, geom.R)
    if neck.any():
        x1 = p[neck, :, 0]
        x2 = p[neck, :, 1]
        d = geom.eps + geom.kappa0 * x1**2
        p[neck, :, 0] = np.arcsinh(x1 * np.sqrt(geom.kappa0 / geom.eps))
        p[neck, :, 1] = (x2 - geom.kappa * x1**2) / d
    return p


def layer_counts(mesh, geom, n_samples=41, r=None):
    """Element pieces crossed by vertical segments across the gap at ``|x1| <= r``."""
    r = geom.R if r is None else r
    edges, _ = mesh.edges()
    P, Q = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
    counts = []
    for x in np.linspace(-r, r, n_samples):
        lo, hi = geom.kappa * x * x, geom.eps + geom.kappa1 * x * x
        cross = (np.minimum(P[:, 0], Q[:, 0]) <= x) & (np.maximum(P[:, 0], Q[:, 0]) >= x)
        cross &= np.maximum(P[:, 1], Q[:, 1]) >= lo - 0.1 * (hi - lo)
        cross &= np.minimum(P[:, 1], Q[:, 1]) <= hi + 0.1 * (hi - lo)
        dx = Q[cross, 0] - P[cross, 0]
        ok = np.abs(dx) > 0
        t = (x - P[cross, 0][ok]) / dx[ok]
        y = P[cross, 1][ok] + t * (Q[cross, 1][ok] - P[cross, 1][ok])
        y = y[(y >= lo - 1e-3 * (hi - lo)) & (y <= hi + 1e-3 * (hi - lo))]
        y = np.unique(np.round((y - lo) / (hi - lo), 10))
        counts.append(max(len(y) - 1, 0))
    return np.array(counts)


def boundary_offsets(mesh):
    """Max distance of tagged boundary vertices from their exact curve."""
    out = {}
    for tag, curve in mesh.curves.items():
        v = mesh.boundary_vertices(tag)
        th = mesh.vertex_theta[v]
        out[tag] = float(np.max(np.linalg.norm(curve.point(th) - mesh.vertices[v], axis=1)))
    return out


def quality_report(mesh: TriMesh, geom: NeckGeometry = None) -> QualityReport:
    p = mesh.vertices[mesh.triangles]
    ang, _ = _angles_and_aspect(p)
    if geom is not None:
        sang, sasp = _angles_and_aspect(gap_scaled_coordinates(mesh, geom))
        layers = int(layer_counts(mesh, geom).min())
    else:
        sang, sasp = _angles_and_aspect(p)
        layers = -1
    return QualityReport(
        n_vertices=mesh.n_vertices,
        n_triangles=mesh.n_triangles,
        min_area=float(np.abs(mesh.signed_areas()).min()),
        min_angle_deg=float(ang.min()),
        min_scaled_angle_deg=float(sang.min()),
        max_scaled_aspect=float(sasp.max()),
        min_layers=layers,
        boundary_offsets=boundary_offsets(mesh),
    )
