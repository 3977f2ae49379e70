"""Laguerre (power) diagrams restricted to a convex target domain.

Cell i of a potential vector ``phi`` is the region of ``Y`` where
``x_i . y - phi_i`` is the largest of the affine functions
``x_k . y - phi_k``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .geom import (
    EPS_REL,
    ConstantDensity,
    ConvexPolygon,
    GeometryError,
    as_density,
    clip_lists,
    dedup_lists,
    polygon_moments,
    segment_integrals,
)

NAIVE_MAX_N = 8


@dataclass
class DualVertex:
    position: np.ndarray
    sites: tuple
    on_boundary: bool


@dataclass
class LaguerreDiagram:
    """Cells ``F_i`` clipped to the target, with masses and adjacency.

    ``labels[i][k]`` tags the edge from vertex k to vertex k+1 of cell i:
    a value ``>= 0`` indexes the neighbouring (possibly replicated) site,
    negative values ``-(b+1)`` mark edge b of the bounding polygon.
    """

    sites: np.ndarray
    phi: np.ndarray
    cells: list
    labels: list
    masses: np.ndarray
    moments: np.ndarray
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_p: np.ndarray
    edge_q: np.ndarray
    density: object
    eps: float
    tie_tol: float
    label_site: np.ndarray
    dual_integral: float = 0.0
    periodic: bool = False
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.cells)

    @property
    def centroids(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.moments / self.masses[:, None]

    @property
    def adjacency(self) -> list:
        """Undirected ``(i, j, p, q, length)`` records, one per shared edge."""
        out = []
        for i, j, p, q in zip(self.edge_i, self.edge_j, self.edge_p, self.edge_q):
            if i < j:
                out.append((int(i), int(j), p, q, float(np.hypot(*(q - p)))))
        return out

    @cached_property
    def vertices(self) -> list:
        """All diagram vertices, clustered across cells within ``tie_tol``."""
        return _collect_vertices(self)

    @property
    def dual_vertices(self) -> list:
        return dual_vertices(self)


def _bisector(sx, sy, ph, i, j):
    return sx[j] - sx[i], sy[j] - sy[i], ph[j] - ph[i]


def clip_cells(sites, phi, cell_ids, neighbors, start, eps):
    """Clip ``start`` (a CCW polygon labelled by its edges) by every bisector
    between each requested cell and its candidate neighbours."""
    sx = sites[:, 0].tolist()
    sy = sites[:, 1].tolist()
    ph = np.asarray(phi, dtype=float).tolist()
    v0 = start.vertices
    bx, by = v0[:, 0].tolist(), v0[:, 1].tolist()
    bl = [-(b + 1) for b in range(len(v0))]
    polys, labels = [], []
    for i in cell_ids:
        if neighbors[i] is None:
            polys.append(ConvexPolygon.empty())
            labels.append([])
            continue
        xs, ys, labs = bx, by, bl
        for j in neighbors[i]:
            a = sx[j] - sx[i]
            b = sy[j] - sy[i]
            tol = eps * (a * a + b * b) ** 0.5
            xs, ys, labs = clip_lists(xs, ys, labs, a, b, ph[j] - ph[i], j, tol)
            if not xs:
                break
        xs, ys, labs = dedup_lists(xs, ys, labs, eps)
        if xs:
            polys.append(ConvexPolygon(np.column_stack([xs, ys])))
            labels.append(labs)
        else:
            polys.append(ConvexPolygon.empty())
            labels.append([])
    return polys, labels


def hull_neighbors(sites, phi):
    """Power-diagram neighbours from the lower hull of ``(x_i, phi_i)``.

    Entry i is None when site i is not a lower-hull vertex (empty cell).
    Returns None when the lift is degenerate (flat or too few points).
    """
    n = len(sites)
    if n <= 3:
        return None
    try:
        hull = ConvexHull(np.column_stack([sites, phi - np.mean(phi)]))
    except QhullError:
        return None
    lower = hull.equations[:, 2] < -1e-12
    simp = hull.simplices[lower]
    e = np.concatenate([simp[:, [0, 1]], simp[:, [1, 2]], simp[:, [2, 0]]])
    e = np.concatenate([e, e[:, ::-1]]).astype(np.int64)
    key = np.unique(e[:, 0] * n + e[:, 1])
    src, dst = key // n, key % n
    starts = np.searchsorted(src, np.arange(n + 1))
    # a site off the lower hull is dominated everywhere: its cell is empty (None)
    return [dst[starts[i]:starts[i + 1]] if starts[i + 1] > starts[i] else None for i in range(n)]


def naive_neighbors(sites):
    n = len(sites)
    d = ((sites[:, None, :] - sites[None, :, :]) ** 2).sum(-1)
    out = []
    for i in range(n):
        order = np.argsort(d[i], kind="stable")
        out.append(order[order != i])
    return out


def _check_sites(points):
    if len(points) > 1:
        d, _ = cKDTree(points).query(points, k=2)
        if d[:, 1].min() == 0.0:
            raise GeometryError("coincident sites")


def laguerre_cells(points, phi, Y: ConvexPolygon, method: str = "auto"):
    """Just the clipped cells (no masses); used for Voronoi tessellations."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    polys, _ = _cells_and_labels(points, np.asarray(phi, dtype=float), Y, method)
    return polys


def _cells_and_labels(points, phi, Y, method):
    _check_sites(points)
    eps = EPS_REL * max(Y.diameter, 1.0)
    nbrs = None
    if method == "auto" and len(points) > NAIVE_MAX_N:
        nbrs = hull_neighbors(points, phi)
    elif method not in ("auto", "naive"):
        raise ValueError(f"unknown method {method!r}")
    if nbrs is None:
        nbrs = naive_neighbors(points)
    return clip_cells(points, phi, range(len(points)), nbrs, Y, eps)


def directed_edges(sites, cells, labels, label_site):
    ei, ej, ep, eq = [], [], [], []
    for i, (poly, labs) in enumerate(zip(cells, labels)):
        if not labs:
            continue
        v = poly.vertices
        for k, lab in enumerate(labs):
            if lab >= 0:
                j = int(label_site[lab])
                if j == i:
                    continue
                ei.append(i)
                ej.append(j)
                ep.append(v[k])
                eq.append(v[k + 1 if k + 1 < len(v) else 0])
    ep = np.array(ep).reshape(-1, 2)
    eq = np.array(eq).reshape(-1, 2)
    return np.array(ei, dtype=int), np.array(ej, dtype=int), ep, eq


def build_diagram(cloud, phi, target, method: str = "auto") -> LaguerreDiagram:
    """Laguerre diagram of the sites of ``cloud`` for ``phi`` inside ``target``.

    ``cloud`` may be a SourceCloud, DiscreteMeasure or an (N, 2) array.
    """
    points = np.asarray(getattr(cloud, "points", cloud), dtype=float).reshape(-1, 2)
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.shape != (len(points),):
        raise ValueError("phi must have one value per site")
    if not np.all(np.isfinite(phi)):
        raise ValueError("non-finite potential")
    Y = target.boundary
    g = target.density
    cells, labels = _cells_and_labels(points, phi, Y, method)
    masses, m1 = polygon_moments(cells, g)
    label_site = np.arange(len(points))
    ei, ej, ep, eq = directed_edges(points, cells, labels, label_site)
    dual = float(np.sum((points * m1).sum(1) - phi * masses))
    eps = EPS_REL * max(Y.diameter, 1.0)
    return LaguerreDiagram(
        sites=points, phi=phi, cells=cells, labels=labels, masses=masses, moments=m1,
        edge_i=ei, edge_j=ej, edge_p=ep, edge_q=eq, density=g, eps=eps,
        tie_tol=1e-9 * max(Y.diameter, 1.0), label_site=label_site, dual_integral=dual,
        extra={"boundary": Y},
    )


def mass_jacobian(diagram: LaguerreDiagram, cloud=None, target=None) -> sp.csr_matrix:
    """Sparse ``H[i, j] = d m_i / d phi_j``.

    Off-diagonal entries are ``(integral of g over the shared edge) / |x_i - x_j|``;
    rows sum to zero. ``cloud``/``target`` are accepted for symmetry with
    :func:`build_diagram` but the diagram already carries both.
    """
    n = len(diagram.cells)
    if len(diagram.edge_i) == 0:
        return sp.csr_matrix((n, n))
    sites = diagram.sites
    g = diagram.density
    if diagram.periodic:
        g = _wrapped(g)
    w = segment_integrals(diagram.edge_p, diagram.edge_q, g)
    ext = diagram.extra.get("ext_sites")
    # directed edge i -> label; distance measured to the actual (replicated) neighbour
    if ext is not None:
        dist = np.hypot(*(ext[diagram.extra["edge_label"]] - sites[diagram.edge_i]).T)
    else:
        dist = np.hypot(*(sites[diagram.edge_j] - sites[diagram.edge_i]).T)
    vals = w / dist
    off = sp.coo_matrix((vals, (diagram.edge_i, diagram.edge_j)), shape=(n, n)).tocsr()
    off = 0.5 * (off + off.T)
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def _wrapped(g):
    g = as_density(g)
    if isinstance(g, ConstantDensity):
        return g
    return lambda pts: g(np.mod(pts, 1.0))


def _collect_vertices(diagram: LaguerreDiagram) -> list:
    pos, site_sets, bnd = [], [], []
    ls = diagram.label_site
    for i, (poly, labs) in enumerate(zip(diagram.cells, diagram.labels)):
        if not labs:
            continue
        v = poly.vertices
        m = len(labs)
        for k in range(m):
            lin, lout = labs[k - 1], labs[k]
            s = {i}
            b = False
            for lab in (lin, lout):
                if lab >= 0:
                    s.add(int(ls[lab]))
                else:
                    b = True
            pos.append(v[k])
            site_sets.append(s)
            bnd.append(b)
    if not pos:
        return []
    pos = np.array(pos)
    pairs = cKDTree(pos).query_pairs(diagram.tie_tol, output_type="ndarray")
    n = len(pos)
    graph = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) \
        if len(pairs) else sp.coo_matrix((n, n))
    ncomp, comp = connected_components(graph, directed=False)
    out = []
    order = np.argsort(comp, kind="stable")
    bounds = np.searchsorted(comp[order], np.arange(ncomp + 1))
    for c in range(ncomp):
        idx = order[bounds[c]:bounds[c + 1]]
        s = set()
        for t in idx:
            s |= site_sets[t]
        out.append(DualVertex(pos[idx].mean(axis=0), tuple(sorted(s)), any(bnd[t] for t in idx)))
    # attach the per-cell-vertex cluster id for the Euler audit
    diagram.extra["vertex_cluster"] = comp
    return out


def dual_vertices(diagram: LaguerreDiagram) -> list:
    """Vertices interior to the target domain where three or more cells meet."""
    return [v for v in diagram.vertices if not v.on_boundary and len(v.sites) >= 3]


def boundary_vertices(diagram: LaguerreDiagram) -> list:
    return [v for v in diagram.vertices if v.on_boundary]


def euler_characteristic(diagram: LaguerreDiagram) -> int:
    """``V - E + F`` of the cell complex inside the target (1 for a disk)."""
    verts = diagram.vertices
    comp = diagram.extra["vertex_cluster"]
    edges = set()
    t = 0
    faces = 0
    for poly, labs in zip(diagram.cells, diagram.labels):
        if not labs:
            continue
        faces += 1
        m = len(labs)
        ids = comp[t:t + m]
        for k in range(m):
            a, b = int(ids[k]), int(ids[(k + 1) % m])
            if a != b:
                edges.add((min(a, b), max(a, b)))
        t += m
    return len(verts) - len(edges) + faces


def write_diagram_csv(diagram: LaguerreDiagram, cells_path, masses_path, period=None):
    with open(cells_path, "w", newline="") as fh:
        if period is not None:
            fh.write(f"# period={period}\n")
        w = csv.writer(fh)
        w.writerow(["cell_id", "vertex_index", "x", "y"])
        for i, poly in enumerate(diagram.cells):
            for k, p in enumerate(poly.vertices):
                w.writerow([i, k, repr(float(p[0])), repr(float(p[1]))])
    with open(masses_path, "w", newline="") as fh:
        if period is not None:
            fh.write(f"# period={period}\n")
        w = csv.writer(fh)
        w.writerow(["cell_id", "mass"])
        for i, m in enumerate(diagram.masses):
            w.writerow([i, repr(float(m))])


def read_diagram_csv(cells_path):
    """Inverse of :func:`write_diagram_csv` for the cell file: ``{cell_id: (M, 2) array}``."""
    cells: dict[int, list] = {}
    with open(cells_path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    for r in rows[1:]:
        cells.setdefault(int(r[0]), []).append((int(r[1]), float(r[2]), float(r[3])))
    return {i: np.array([(x, y) for _, x, y in sorted(v)]) for i, v in cells.items()}
