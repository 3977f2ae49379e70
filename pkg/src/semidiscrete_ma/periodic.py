"""Semi-discrete transport on the flat torus ``R^2 / Z^2``.

Unknowns are the periodic parts ``u_i = phi_i - |x_i|^2 / 2``. The site
``x_j + n`` (``n`` an integer offset) carries ``phi = u_j + |x_j + n|^2 / 2``, so
the cells of all translates tile the plane and the cells of the base sites
form a fundamental domain. We replicate the sites over the offsets
``{-1, 0, 1}^2`` and keep the base cells unwrapped in the plane.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geom import (
    EPS_REL,
    ConvexPolygon,
    GeometryError,
    as_density,
    clip,
    collapsed_gauss,
    integrate_polygons,
    lifted_lower_hull,
    polygon_moments,
)
from .laguerre import LaguerreDiagram, NAIVE_MAX_N, clip_cells, hull_neighbors, _wrapped
from .solver import SolveSettings, newton_loop

# base copy first so that ext index j < N is site j itself
OFFSETS = np.array([(0, 0)] + [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)],
                   dtype=float)
REPLICATION_BOX = ConvexPolygon.box(-1.0, -1.0, 2.0, 2.0)
UNIT = ConvexPolygon.box(0.0, 0.0, 1.0, 1.0)


@dataclass
class TorusCloud:
    points: np.ndarray
    cells: list
    mesh_norm: float
    masses: np.ndarray | None = None

    def __len__(self):
        return len(self.points)


def _check_torus_points(points):
    if np.any(points < 0) or np.any(points >= 1):
        raise GeometryError("torus sites must lie in [0, 1)^2")
    if len(points) > 1:
        d, _ = cKDTree(points, boxsize=1.0).query(points, k=2)
        if d[:, 1].min() == 0.0:
            raise GeometryError("coincident sites")


def torus_cloud(points, masses=None) -> TorusCloud:
    """Sites in ``[0, 1)^2``; mesh norm from the periodic Voronoi cells."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    _check_torus_points(pts)
    d = periodic_diagram(pts, np.zeros(len(pts)))
    h = max(c.diameter for c in d.cells)
    if masses is not None:
        masses = np.asarray(masses, dtype=float)
        if masses.shape != (len(pts),) or abs(masses.sum() - 1.0) > 1e-9:
            raise ValueError("torus masses must be one per site and sum to one")
    return TorusCloud(pts, d.cells, h, masses)


def torus_grid_cloud(k: int) -> TorusCloud:
    if k < 1:
        raise ValueError("grid size k must be >= 1")
    t = (np.arange(k) + 0.5) / k
    X, Y = np.meshgrid(t, t, indexing="xy")
    return torus_cloud(np.column_stack([X.ravel(), Y.ravel()]))


def replicate(points, u):
    """The ``9N`` translated sites and their potentials ``u_j + |x_j + n|^2 / 2``."""
    n = len(points)
    ext = (points[None, :, :] + OFFSETS[:, None, :]).reshape(-1, 2)
    ext_phi = np.tile(u, len(OFFSETS)) + 0.5 * (ext ** 2).sum(axis=1)
    return ext, ext_phi, np.tile(np.arange(n), len(OFFSETS))


def periodic_diagram(cloud, u, g=None) -> LaguerreDiagram:
    """Laguerre diagram on the torus; ``phi`` of the result holds ``u``.

    ``dual_integral`` is ``-sum_i int_{F_i} (|y - x_i|^2 / 2 + u_i) g dy``, so
    that ``dual_integral + f . u`` is the convex energy whose gradient is ``f - m``.
    """
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=float).reshape(-1, 2)
    u = np.asarray(u, dtype=float).ravel()
    n = len(pts)
    if u.shape != (n,):
        raise ValueError("u must have one value per site")
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite potential")
    g = as_density(g)
    ext, ext_phi, label_site = replicate(pts, u)
    eps = EPS_REL * REPLICATION_BOX.diameter
    nbrs = None
    if n > NAIVE_MAX_N:
        nbrs = hull_neighbors(ext, ext_phi)
    if nbrs is None:
        everyone = np.arange(len(ext))
        nbrs = [everyone[everyone != i] for i in range(n)]
    cells, labels = clip_cells(ext, ext_phi, range(n), nbrs, REPLICATION_BOX, eps)
    for i, labs in enumerate(labels):
        # empty cells (dominated sites) are legal and simply get zero mass
        if labs and min(labs) < 0:
            raise GeometryError(f"insufficient replication: cell {i} reaches the replication box")
    total_area = sum(float(polygon_moments([c])[0][0]) for c in cells)
    if abs(total_area - 1.0) > 1e-9:
        raise GeometryError(f"insufficient replication: cells cover area {total_area}")
    gw = _wrapped(g)
    masses, m1, m2 = polygon_moments(cells, gw, second=True)

    ei, ej, el, ep, eq = [], [], [], [], []
    for i, (poly, labs) in enumerate(zip(cells, labels)):
        v = poly.vertices
        for k, lab in enumerate(labs):
            j = int(label_site[lab])
            if j == i:
                # a face shared with its own translate moves rigidly with u_i
                continue
            ei.append(i)
            ej.append(j)
            el.append(lab)
            ep.append(v[k])
            eq.append(v[(k + 1) % len(v)])
    sq = (pts ** 2).sum(axis=1)
    local = 0.5 * (m2 - 2.0 * (pts * m1).sum(axis=1) + sq * masses)
    dual = -float(np.sum(local + u * masses))
    return LaguerreDiagram(
        sites=pts, phi=u, cells=cells, labels=labels, masses=masses, moments=m1,
        edge_i=np.array(ei, dtype=int), edge_j=np.array(ej, dtype=int),
        edge_p=np.array(ep).reshape(-1, 2), edge_q=np.array(eq).reshape(-1, 2),
        density=g, eps=eps, tie_tol=1e-9 * REPLICATION_BOX.diameter, label_site=label_site,
        dual_integral=dual, periodic=True,
        extra={"boundary": REPLICATION_BOX, "ext_sites": ext, "ext_phi": ext_phi,
               "edge_label": np.array(el, dtype=int)},
    )


def periodic_solve(cloud, f, g=None, settings: SolveSettings | None = None, u0=None,
                   trace_path=None, return_diagram: bool = False):
    """Mean-zero ``u`` with ``|m(u) - f|_inf <= tol`` by the shared damped Newton loop."""
    settings = settings or SolveSettings()
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=float).reshape(-1, 2)
    if f is None:
        f = getattr(cloud, "masses", None)
    if u0 is None:
        u0 = np.zeros(len(pts))
    u, report, diag = newton_loop(lambda v: periodic_diagram(pts, v, g), f, u0, settings, trace_path)
    if return_diagram:
        return u, report, diag
    return u, report


# ------------------------------------------------------------------ reference


class TorusProblem:
    """Per-axis map ``t + b sin(2 pi t) / (2 pi)`` pushing ``prod(1 + b cos 2 pi x_k)`` to uniform."""

    def __init__(self, beta: float):
        beta = float(beta)
        if not abs(beta) < 1:
            raise ValueError(f"beta must satisfy |beta| < 1, got {beta}")
        self.beta = beta

    def __repr__(self):
        return f"TorusProblem(beta={self.beta})"

    def density(self, pts):
        p = np.mod(np.asarray(pts, dtype=float).reshape(-1, 2), 1.0)
        return np.prod(1.0 + self.beta * np.cos(2 * np.pi * p), axis=1)

    def map(self, pts):
        p = np.asarray(pts, dtype=float).reshape(-1, 2)
        return p + self.beta * np.sin(2 * np.pi * p) / (2 * np.pi)

    def u(self, pts):
        p = np.asarray(pts, dtype=float).reshape(-1, 2)
        return -self.beta * np.cos(2 * np.pi * p).sum(axis=1) / (4 * np.pi ** 2)

    def marginal_cdf(self, t):
        return t + self.beta * np.sin(2 * np.pi * t) / (2 * np.pi)

    def grid_masses(self, k: int) -> np.ndarray:
        """Exact cell masses of the ``k x k`` grid (x index fastest)."""
        e = np.linspace(0.0, 1.0, k + 1)
        w = np.diff(self.marginal_cdf(e))
        return np.outer(w, w).ravel()

    def cell_masses(self, cloud: TorusCloud, n_gauss: int = 8) -> np.ndarray:
        dens = self.density
        m = integrate_polygons(cloud.cells, lambda p, _: dens(p), collapsed_gauss(n_gauss))
        return m / m.sum()


def torus_h1_error(cloud, u, problem: TorusProblem, n_gauss: int = 5) -> float:
    """``(int_{[0,1]^2} |grad phi_h - T|^2 dx)^{1/2}`` with ``phi_h`` the convex envelope of the
    replicated graph; differences are taken to the nearest integer translate."""
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=float).reshape(-1, 2)
    ext, ext_phi, _ = replicate(pts, np.asarray(u, dtype=float))
    # only translates near the unit square can carry facets that meet it
    h = getattr(cloud, "mesh_norm", None)
    margin = 1.0 if h is None else min(1.0, 0.25 + 2.0 * h)
    near = np.all((ext >= -margin) & (ext <= 1 + margin), axis=1)
    hull = lifted_lower_hull(ext[near], ext_phi[near])
    box = UNIT.halfplanes()
    lo, hi = np.zeros(2), np.ones(2)
    facets, grads = [], []
    for poly, grad in zip(hull.polygons, hull.gradients):
        v = poly.vertices
        if np.any(v.max(axis=0) <= lo) or np.any(v.min(axis=0) >= hi):
            continue
        for hp in box:
            poly = clip(poly, hp)
            if poly.is_empty:
                break
        if not poly.is_empty:
            facets.append(poly)
            grads.append(grad)
    grads = np.array(grads)

    def integrand(x, own):
        d = grads[own] - problem.map(x)
        d -= np.round(d)
        return (d ** 2).sum(axis=1)

    vals = integrate_polygons(facets, integrand, collapsed_gauss(n_gauss))
    covered = sum(float(polygon_moments([f])[0][0]) for f in facets)
    if abs(covered - 1.0) > 1e-8:
        raise GeometryError(f"envelope facets cover area {covered} of the fundamental domain")
    return float(np.sqrt(vals.sum()))


def solve_torus_grid(problem: TorusProblem, k: int, settings: SolveSettings | None = None,
                     trace_path=None):
    cloud = torus_grid_cloud(k)
    f = problem.grid_masses(k)
    u, rep, diag = periodic_solve(cloud, f, None, settings, trace_path=trace_path, return_diagram=True)
    return cloud, f, u, rep, diag


def torus_rate_series(problem: TorusProblem, ks, settings: SolveSettings | None = None,
                      threads: int = 1):
    """Rows of ``(h, N, h1_error, newton_iters, residual_inf)`` for k x k torus grids."""
    from .reference import RateReport

    ks = list(ks)
    if not ks or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k-list must be nonempty and increasing")

    def one(k):
        cloud, f, u, sr, _ = solve_torus_grid(problem, k, settings)
        du = u - problem.u(cloud.points)
        row = {"h": cloud.mesh_norm, "N": len(cloud), "h1_error": torus_h1_error(cloud, u, problem),
               "newton_iters": sr.iterations, "residual_inf": sr.final_residual_inf}
        return row, {"k": k, "u_error_inf": float(np.abs(du - du.mean()).max())}

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, ks))
    else:
        results = [one(k) for k in ks]
    rep = RateReport([r for r, _ in results], {}, [e for _, e in results])
    rep.fit(["h1_error"])
    return rep
