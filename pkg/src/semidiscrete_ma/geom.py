"""Planar convex geometry kernel.

Polygons are stored as ``(M, 2)`` float arrays of counterclockwise vertices.
Densities are callables mapping an ``(M, 2)`` array of points to ``(M,)``
values; :class:`ConstantDensity` marks the constant case.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError

EPS_REL = 1e-12

DensityLike = Union[float, int, Callable[[np.ndarray], np.ndarray], None]


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class HalfPlane:
    """The closed half-plane ``{p : normal . p <= offset}``."""

    normal: tuple[float, float]
    offset: float

    def __post_init__(self):
        nx, ny = self.normal
        if not (np.isfinite(nx) and np.isfinite(ny) and np.isfinite(self.offset)):
            raise GeometryError("non-finite half-plane")
        if nx == 0.0 and ny == 0.0:
            raise GeometryError("half-plane normal must be nonzero")

    def flipped(self) -> "HalfPlane":
        return HalfPlane((-self.normal[0], -self.normal[1]), -self.offset)


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    degenerate: bool = False

    @classmethod
    def empty(cls, degenerate: bool = False) -> "ConvexPolygon":
        return cls(np.zeros((0, 2)), degenerate)

    @classmethod
    def box(cls, x0: float, y0: float, x1: float, y1: float) -> "ConvexPolygon":
        return cls(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float))

    @classmethod
    def from_vertices(cls, vertices, eps: float | None = None) -> "ConvexPolygon":
        return _normalized(np.asarray(vertices, dtype=float).reshape(-1, 2), eps)

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    def __len__(self):
        return len(self.vertices)

    @property
    def diameter(self) -> float:
        return polygon_diameter(self.vertices)

    def contains(self, p, tol: float = 0.0) -> bool:
        if self.is_empty:
            return False
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        w = np.asarray(p, dtype=float) - v
        cross = e[:, 0] * w[:, 1] - e[:, 1] * w[:, 0]
        return bool(np.all(cross >= -tol * np.hypot(e[:, 0], e[:, 1])))

    def contains_points(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if self.is_empty:
            return np.zeros(len(pts), dtype=bool)
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        w = pts[:, None, :] - v[None, :, :]
        cross = e[None, :, 0] * w[..., 1] - e[None, :, 1] * w[..., 0]
        return np.all(cross >= -tol * np.hypot(e[:, 0], e[:, 1])[None, :], axis=1)

    def halfplanes(self) -> list[HalfPlane]:
        """Edge half-planes whose intersection is the polygon."""
        v = self.vertices
        out = []
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            n = (b[1] - a[1], a[0] - b[0])
            out.append(HalfPlane(n, n[0] * a[0] + n[1] * a[1]))
        return out


class ConstantDensity:
    """Density with a single value on its domain."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.full(np.shape(pts)[0], self.value)

    def __repr__(self):
        return f"ConstantDensity({self.value!r})"


def as_density(g: DensityLike):
    if g is None:
        return ConstantDensity(1.0)
    if isinstance(g, (int, float)):
        return ConstantDensity(float(g))
    return g


def polygon_diameter(v: np.ndarray) -> float:
    if len(v) < 2:
        return 0.0
    d = v[:, None, :] - v[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1).max()))


def _scale_eps(v: np.ndarray) -> float:
    if len(v) == 0:
        return EPS_REL
    span = float(np.max(v.max(axis=0) - v.min(axis=0)))
    return EPS_REL * max(span, 1.0)


def _shoelace(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _normalized(v: np.ndarray, eps: float | None = None) -> ConvexPolygon:
    if eps is None:
        eps = _scale_eps(v)
    if len(v) < 3:
        return ConvexPolygon.empty()
    if not np.all(np.isfinite(v)):
        raise GeometryError("non-finite polygon vertex")
    keep = [v[0]]
    for p in v[1:]:
        if abs(p[0] - keep[-1][0]) > eps or abs(p[1] - keep[-1][1]) > eps:
            keep.append(p)
    while len(keep) > 1 and abs(keep[0][0] - keep[-1][0]) <= eps and abs(keep[0][1] - keep[-1][1]) <= eps:
        keep.pop()
    if len(keep) < 3:
        return ConvexPolygon.empty()
    out = np.array(keep)
    a = _shoelace(out)
    if a < 0:
        out = out[::-1].copy()
        a = -a
    if a < eps * eps:
        return ConvexPolygon.empty()
    return ConvexPolygon(out)


def convex_hull(points) -> ConvexPolygon:
    """Counterclockwise hull with collinear boundary points dropped.

    Collinear (or single-point) input gives an empty polygon with
    ``degenerate=True``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise GeometryError("no points")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("non-finite point")
    # lexicographic sort (also makes the output permutation-invariant), then drop repeats
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    if len(pts) > 1:
        pts = pts[np.concatenate([[True], np.any(pts[1:] != pts[:-1], axis=1)])]
    if len(pts) < 3:
        return ConvexPolygon.empty(degenerate=True)

    def half(seq):
        out: list = []
        for p in seq:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    tup = [tuple(q) for q in pts.tolist()]
    lower = half(tup)
    upper = half(tup[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        return ConvexPolygon.empty(degenerate=True)
    poly = _normalized(hull)
    if poly.is_empty:
        return ConvexPolygon.empty(degenerate=True)
    return poly


def clip_lists(xs, ys, labs, a, b, c, lab, tol):
    """Clip a labeled CCW vertex list by ``a*x + b*y <= c``.

    ``labs[k]`` tags the edge from vertex k to vertex k+1; the new edge
    created along the clipping line gets ``lab``. Returns new lists, or the
    inputs untouched when nothing is cut.
    """
    d = [a * x + b * y - c for x, y in zip(xs, ys)]
    if max(d) <= tol:
        return xs, ys, labs
    if min(d) >= -tol:
        return [], [], []
    n = len(d)
    ox, oy, ol = [], [], []
    for k in range(n):
        k1 = k + 1 if k + 1 < n else 0
        ds, de = d[k], d[k1]
        if ds <= tol:
            if de <= tol:
                ox.append(xs[k]); oy.append(ys[k]); ol.append(labs[k])
            elif ds >= -tol:
                ox.append(xs[k]); oy.append(ys[k]); ol.append(lab)
            else:
                t = ds / (ds - de)
                ox.append(xs[k]); oy.append(ys[k]); ol.append(labs[k])
                ox.append(xs[k] + t * (xs[k1] - xs[k]))
                oy.append(ys[k] + t * (ys[k1] - ys[k]))
                ol.append(lab)
        elif de < -tol:
            t = ds / (ds - de)
            ox.append(xs[k] + t * (xs[k1] - xs[k]))
            oy.append(ys[k] + t * (ys[k1] - ys[k]))
            ol.append(labs[k])
    return ox, oy, ol


def dedup_lists(xs, ys, labs, eps):
    """Drop vertices closer than ``eps`` to their predecessor (keeps the later edge label)."""
    n = len(xs)
    if n < 3:
        return [], [], []
    ox, oy, ol = [xs[0]], [ys[0]], [labs[0]]
    for k in range(1, n):
        if abs(xs[k] - ox[-1]) <= eps and abs(ys[k] - oy[-1]) <= eps:
            ol[-1] = labs[k]
        else:
            ox.append(xs[k]); oy.append(ys[k]); ol.append(labs[k])
    while len(ox) > 1 and abs(ox[0] - ox[-1]) <= eps and abs(oy[0] - oy[-1]) <= eps:
        ox.pop(); oy.pop(); ol.pop()
    if len(ox) < 3:
        return [], [], []
    area2 = 0.0
    for k in range(len(ox)):
        k1 = k + 1 if k + 1 < len(ox) else 0
        area2 += ox[k] * oy[k1] - ox[k1] * oy[k]
    if 0.5 * area2 < eps * eps:
        return [], [], []
    return ox, oy, ol


def clip(poly: ConvexPolygon, hp: HalfPlane, eps: float | None = None) -> ConvexPolygon:
    if poly.is_empty:
        return ConvexPolygon.empty()
    v = poly.vertices
    if eps is None:
        eps = _scale_eps(v)
    a, b = hp.normal
    tol = eps * float(np.hypot(a, b))
    xs, ys = v[:, 0].tolist(), v[:, 1].tolist()
    labs = [0] * len(xs)
    xs, ys, _ = clip_lists(xs, ys, labs, a, b, hp.offset, 0, tol)
    xs, ys, _ = dedup_lists(xs, ys, [0] * len(xs), eps)
    if not xs:
        return ConvexPolygon.empty()
    return ConvexPolygon(np.column_stack([xs, ys]))


def area(poly: ConvexPolygon) -> float:
    if poly.is_empty:
        return 0.0
    return abs(_shoelace(poly.vertices))


# ---------------------------------------------------------------- quadrature

def _dunavant4():
    a1, b1 = 0.445948490915965, 0.108103018168070
    a2, b2 = 0.091576213509771, 0.816847572980459
    w1, w2 = 0.223381589678011, 0.109951743655322
    bary = np.array([
        [b1, a1, a1], [a1, b1, a1], [a1, a1, b1],
        [b2, a2, a2], [a2, b2, a2], [a2, a2, b2],
    ])
    bary /= bary.sum(axis=1, keepdims=True)
    w = np.array([w1, w1, w1, w2, w2, w2])
    return bary, w / w.sum()


def collapsed_gauss(n: int):
    """Conical-product Gauss rule on the triangle (exact to degree 2n-2)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    xi, eta = np.meshgrid(x, x, indexing="ij")
    wi, we = np.meshgrid(w, w, indexing="ij")
    xi, eta, wt = xi.ravel(), eta.ravel(), (2.0 * wi * we * xi).ravel()
    bary = np.column_stack([1.0 - xi, xi * (1.0 - eta), xi * eta])
    return bary, wt / wt.sum()


DUNAVANT4 = _dunavant4()


def fan_triangles(polys: Sequence[ConvexPolygon], apexes: np.ndarray | None = None):
    """Fan-triangulate polygons.

    Returns ``(tri, owner)`` with ``tri`` of shape ``(T, 3, 2)``. The fan is
    rooted at vertex 0, or at ``apexes[i]`` (a point inside polygon i) when
    given, in which case every edge yields one triangle.
    """
    tris, owner = [], []
    for i, p in enumerate(polys):
        v = p.vertices
        m = len(v)
        if m < 3:
            continue
        if apexes is None:
            t = np.empty((m - 2, 3, 2))
            t[:, 0] = v[0]
            t[:, 1] = v[1:-1]
            t[:, 2] = v[2:]
        else:
            t = np.empty((m, 3, 2))
            t[:, 0] = apexes[i]
            t[:, 1] = v
            t[:, 2] = np.roll(v, -1, axis=0)
        tris.append(t)
        owner.append(np.full(len(t), i))
    if not tris:
        return np.zeros((0, 3, 2)), np.zeros(0, dtype=int)
    return np.concatenate(tris), np.concatenate(owner)


def triangle_areas(tri: np.ndarray) -> np.ndarray:
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def quadrature_points(tri: np.ndarray, rule=DUNAVANT4):
    """Points ``(T, Q, 2)`` and weights ``(T, Q)`` (area included)."""
    bary, w = rule
    pts = np.einsum("qk,tkd->tqd", bary, tri)
    return pts, triangle_areas(tri)[:, None] * w[None, :]


def integrate_polygons(polys: Sequence[ConvexPolygon], integrand, rule=DUNAVANT4,
                       apexes: np.ndarray | None = None) -> np.ndarray:
    """Per-polygon integrals of ``integrand(pts (K,2), owner (K,)) -> (K,) or (K, c)``."""
    n = len(polys)
    tri, owner = fan_triangles(polys, apexes)
    pts, w = quadrature_points(tri, rule)
    q = pts.shape[1]
    flat = pts.reshape(-1, 2)
    own = np.repeat(owner, q)
    vals = np.asarray(integrand(flat, own), dtype=float)
    if vals.ndim == 1:
        out = np.zeros(n)
        np.add.at(out, own, vals * w.ravel())
    else:
        out = np.zeros((n, vals.shape[1]))
        np.add.at(out, own, vals * w.ravel()[:, None])
    return out


def polygon_moments(polys: Sequence[ConvexPolygon], g: DensityLike = None, second: bool = False):
    """g-weighted mass, first moment and optionally ``integral |y|^2 g`` per polygon."""
    g = as_density(g)
    n = len(polys)
    tri, owner = fan_triangles(polys)
    pts, w = quadrature_points(tri, DUNAVANT4)
    flat = pts.reshape(-1, 2)
    gv = np.asarray(g(flat), dtype=float)
    if not np.all(np.isfinite(gv)):
        raise GeometryError("bad density")
    gw = gv * w.ravel()
    own = np.repeat(owner, pts.shape[1])
    mass = np.bincount(own, weights=gw, minlength=n)
    m1 = np.column_stack([
        np.bincount(own, weights=gw * flat[:, 0], minlength=n),
        np.bincount(own, weights=gw * flat[:, 1], minlength=n),
    ])
    if not second:
        return mass, m1
    m2 = np.bincount(own, weights=gw * (flat ** 2).sum(1), minlength=n)
    return mass, m1, m2


def mass_and_centroid(poly: ConvexPolygon, g: DensityLike = None):
    """``(integral of g over poly, g-weighted centroid)``; centroid is NaN for empty input."""
    if poly.is_empty:
        return 0.0, np.array([np.nan, np.nan])
    mass, m1 = polygon_moments([poly], g)
    if mass[0] == 0.0:
        return 0.0, np.array([np.nan, np.nan])
    return float(mass[0]), m1[0] / mass[0]


def segment_integrals(p: np.ndarray, q: np.ndarray, g: DensityLike = None) -> np.ndarray:
    """``integral of g ds`` along each segment p[k] -> q[k] (3-point Gauss)."""
    g = as_density(g)
    length = np.hypot(*(q - p).T)
    if isinstance(g, ConstantDensity):
        return g.value * length
    x, w = np.polynomial.legendre.leggauss(3)
    t = 0.5 * (x + 1.0)
    pts = p[:, None, :] + t[None, :, None] * (q - p)[:, None, :]
    gv = np.asarray(g(pts.reshape(-1, 2)), dtype=float).reshape(len(p), 3)
    return length * (gv @ (0.5 * w))


# ---------------------------------------------------------- lifted hull

@dataclass
class LowerHull:
    """Lower convex hull of lifted points ``(p_i, z_i)``.

    Facet k is the set ``members[k]`` of point indices lying on a common
    supporting plane ``z = gradients[k] . x - intercepts[k]``; ``polygons[k]``
    is its projection.
    """

    members: list[np.ndarray]
    polygons: list[ConvexPolygon]
    gradients: np.ndarray
    intercepts: np.ndarray


def _fit_plane(p: np.ndarray, z: np.ndarray):
    A = np.column_stack([p, -np.ones(len(p))])
    sol, *_ = np.linalg.lstsq(A, z, rcond=None)
    return sol[:2], sol[2]


def lifted_lower_hull(points, heights, tie_tol: float | None = None) -> LowerHull:
    """Lower hull facets of ``{(p_i, z_i)}``; adjacent facets whose gradients
    agree within ``tie_tol`` are merged into one polygonal facet."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    z = np.asarray(heights, dtype=float).ravel()
    if len(p) < 3:
        raise GeometryError("degenerate domain")
    dom = convex_hull(p)
    if dom.is_empty:
        raise GeometryError("degenerate domain")
    diam = dom.diameter
    if tie_tol is None:
        tie_tol = 1e-9 * max(diam, 1.0)

    def single():
        grad, c = _fit_plane(p, z)
        resid = np.abs(p @ grad - c - z)
        if resid.max() > 1e-9 * max(1.0, np.abs(z).max()):
            raise GeometryError("lifted hull failed on non-planar input")
        return LowerHull([np.arange(len(p))], [dom], grad[None, :], np.array([c]))

    if len(p) == 3:
        return single()
    zs = z - z.mean()
    try:
        hull = ConvexHull(np.column_stack([p, zs]))
    except QhullError:
        return single()

    eq = hull.equations
    lower = np.flatnonzero(eq[:, 2] < -1e-12)
    simp = hull.simplices[lower]
    tri_p = p[simp]
    tri_z = z[simp]
    e1 = tri_p[:, 1] - tri_p[:, 0]
    e2 = tri_p[:, 2] - tri_p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    dz1 = tri_z[:, 1] - tri_z[:, 0]
    dz2 = tri_z[:, 2] - tri_z[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        gx = (dz1 * e2[:, 1] - dz2 * e1[:, 1]) / det
        gy = (e1[:, 0] * dz2 - e2[:, 0] * dz1) / det
    grads = np.column_stack([gx, gy])
    # Qhull's plane is the fallback for slivers
    bad = ~np.isfinite(grads).all(axis=1) | (np.abs(det) < 1e-14 * max(diam, 1.0) ** 2)
    grads[bad] = -eq[lower][bad, :2] / eq[lower][bad, 2:3]

    # merge adjacent lower simplices whose gradients agree (ties)
    m = len(lower)
    pos = -np.ones(len(eq), dtype=int)
    pos[lower] = np.arange(m)
    nb = pos[hull.neighbors[lower]]
    a = np.repeat(np.arange(m), 3)
    b = nb.ravel()
    ok = b > a
    a, b = a[ok], b[ok]
    close = np.abs(grads[a] - grads[b]).max(axis=1) <= tie_tol
    graph = sp.coo_matrix((np.ones(int(close.sum())), (a[close], b[close])), shape=(m, m))
    _, roots = connected_components(graph, directed=False)
    order = np.argsort(roots, kind="stable")
    bounds = np.searchsorted(roots[order], np.arange(roots.max() + 2 if m else 1))
    members, polys, gout, cout = [], [], [], []
    for r in range(len(bounds) - 1):
        idx = order[bounds[r]:bounds[r + 1]]
        if len(idx) == 1:
            t = idx[0]
            mem = np.sort(simp[t])
            g = grads[t]
            c = float(np.mean(p[mem] @ g - z[mem]))
            v = p[simp[t]] if det[t] > 0 else p[simp[t][::-1]]
            poly = ConvexPolygon(v) if abs(det[t]) > 1e3 * _scale_eps(v) ** 2 else convex_hull(v)
        else:
            mem = np.unique(simp[idx])
            # member triangles agree to tie_tol; average them
            g = grads[idx].mean(axis=0)
            c = float(np.mean(p[mem] @ g - z[mem]))
            poly = convex_hull(p[mem])
        if poly.is_empty:
            continue
        members.append(mem)
        polys.append(poly)
        gout.append(g)
        cout.append(c)
    return LowerHull(members, polys, np.array(gout).reshape(-1, 2), np.array(cout))
