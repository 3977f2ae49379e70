"""Source/target measures, point clouds and their discretizations."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geom import (
    ConstantDensity,
    ConvexPolygon,
    DensityLike,
    GeometryError,
    area,
    as_density,
    collapsed_gauss,
    integrate_polygons,
    polygon_moments,
)


class _ScaledDensity:
    def __init__(self, base, scale):
        self.base, self.scale = base, scale

    def __call__(self, pts):
        return self.scale * np.asarray(self.base(pts), dtype=float)


def _normalize_density(poly: ConvexPolygon, g):
    g = as_density(g)
    total = float(polygon_moments([poly], g)[0][0])
    if not np.isfinite(total) or total <= 0:
        raise GeometryError("bad density")
    if abs(total - 1.0) <= 1e-15:
        return g, total
    if isinstance(g, ConstantDensity):
        return ConstantDensity(g.value / total), total
    return _ScaledDensity(g, 1.0 / total), total


@dataclass
class TargetDomain:
    """Convex target ``Y`` carrying the probability density ``g``."""

    boundary: ConvexPolygon
    density: object
    delta: float
    total_mass: float = 1.0

    @classmethod
    def create(cls, boundary: ConvexPolygon, density: DensityLike = None, delta: float | None = None):
        if boundary.is_empty:
            raise GeometryError("empty target domain")
        g, _ = _normalize_density(boundary, density)
        if delta is None:
            if isinstance(g, ConstantDensity):
                delta = g.value
            else:
                # lower bound estimated on a quadrature sample of Y
                from .geom import fan_triangles, quadrature_points

                tri, _ = fan_triangles([boundary])
                pts, _ = quadrature_points(tri, collapsed_gauss(8))
                delta = float(np.min(g(pts.reshape(-1, 2))))
        if not delta > 0:
            raise GeometryError("target density must be bounded below by a positive constant")
        total = float(polygon_moments([boundary], g)[0][0])
        return cls(boundary, g, float(delta), total)

    @classmethod
    def unit_square(cls):
        return cls.create(ConvexPolygon.box(0.0, 0.0, 1.0, 1.0))


@dataclass
class SourceMeasure:
    support: ConvexPolygon
    density: object

    @classmethod
    def create(cls, support: ConvexPolygon, density: DensityLike = None):
        g, _ = _normalize_density(support, density)
        return cls(support, g)


@dataclass
class SourceCloud:
    points: np.ndarray
    cells: list
    mesh_norm: float
    separation: float
    domain: ConvexPolygon | None = None

    def __len__(self):
        return len(self.points)

    @property
    def boundary_distance(self) -> float:
        """Largest distance from the boundary of X to the nearest site."""
        if self.domain is None or self.domain.is_empty:
            return float("nan")
        v = self.domain.vertices
        e = np.roll(v, -1, axis=0) - v
        t = np.linspace(0.0, 1.0, 65)
        samples = (v[:, None, :] + t[None, :, None] * e[:, None, :]).reshape(-1, 2)
        d, _ = cKDTree(self.points).query(samples)
        return float(d.max())


@dataclass
class DiscreteMeasure:
    points: np.ndarray
    masses: np.ndarray

    def __len__(self):
        return len(self.masses)


def _separation(points: np.ndarray) -> float:
    if len(points) < 2:
        return float("inf")
    d, _ = cKDTree(points).query(points, k=2)
    return float(d[:, 1].min())


def make_cloud(points, cells, domain=None) -> SourceCloud:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    h = max((c.diameter for c in cells), default=0.0)
    return SourceCloud(points, list(cells), h, _separation(points), domain)


def _box_extent(X: ConvexPolygon):
    v = X.vertices
    x0, y0 = v.min(axis=0)
    x1, y1 = v.max(axis=0)
    if len(v) != 4 or not np.allclose(np.sort(np.unique(v[:, 0])), [x0, x1]) \
            or not np.allclose(np.sort(np.unique(v[:, 1])), [y0, y1]):
        raise GeometryError("grid clouds need an axis-aligned rectangle")
    return x0, y0, x1, y1


def grid_cloud(X: ConvexPolygon, k: int) -> SourceCloud:
    """k x k cell-centred grid on a rectangle; sites ordered with x fastest."""
    if k < 1:
        raise ValueError("grid size k must be >= 1")
    x0, y0, x1, y1 = _box_extent(X)
    xs = np.linspace(x0, x1, k + 1)
    ys = np.linspace(y0, y1, k + 1)
    pts, cells = [], []
    for j in range(k):
        for i in range(k):
            cells.append(ConvexPolygon.box(xs[i], ys[j], xs[i + 1], ys[j + 1]))
            pts.append(((xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2))
    return make_cloud(pts, cells, X)


def sample_uniform(X: ConvexPolygon, n: int, seed: int) -> np.ndarray:
    """Rejection sampling from the bounding box (PCG64 stream, reproducible)."""
    rng = np.random.default_rng(seed)
    lo = X.vertices.min(axis=0)
    hi = X.vertices.max(axis=0)
    out = np.zeros((0, 2))
    while len(out) < n:
        cand = lo + (hi - lo) * rng.random((max(2 * (n - len(out)), 16), 2))
        inside = X.contains_points(cand)
        out = np.vstack([out, cand[inside]])
    return out[:n]


def voronoi_cells(points: np.ndarray, X: ConvexPolygon) -> list:
    from .laguerre import laguerre_cells

    phi = 0.5 * (points ** 2).sum(axis=1)
    return laguerre_cells(points, phi, X)


def random_cloud(X: ConvexPolygon, N: int, seed: int) -> SourceCloud:
    if N < 1:
        raise ValueError("N must be >= 1")
    pts = sample_uniform(X, N, seed)
    return make_cloud(pts, voronoi_cells(pts, X), X)


def cloud_from_points(points, X: ConvexPolygon) -> SourceCloud:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return make_cloud(pts, voronoi_cells(pts, X), X)


def _renormalize(masses: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    if np.any(masses < -tol):
        raise GeometryError("bad density")
    masses = np.clip(masses, 0.0, None)
    s = masses.sum()
    if not s > 0:
        raise GeometryError("bad density")
    out = masses / s
    # push the last rounding residue into the largest atom
    out[np.argmax(out)] += 1.0 - out.sum()
    return out


def discretize(mu: SourceMeasure, cloud: SourceCloud) -> DiscreteMeasure:
    """Cell masses ``f_i = integral of mu over C_i``, summing to one."""
    masses, _ = polygon_moments(cloud.cells, mu.density)
    return DiscreteMeasure(cloud.points.copy(), _renormalize(masses))


def discretize_weighted(mu: SourceMeasure, cloud: SourceCloud) -> DiscreteMeasure:
    """Point-evaluation scheme ``f(x_i) |C_i|`` normalized to one."""
    fx = np.asarray(mu.density(cloud.points), dtype=float)
    w = np.array([area(c) for c in cloud.cells])
    raw = fx * w
    if not np.all(np.isfinite(raw)) or np.all(fx == 0) or raw.sum() <= 0:
        raise GeometryError("degenerate discretization")
    return DiscreteMeasure(cloud.points.copy(), _renormalize(raw))


def w1_upper_bound(mu: SourceMeasure, cloud: SourceCloud) -> float:
    """Cost of sending each cell's mass to its site, ``sum_i int_{C_i} |x - x_i| dmu``.

    This couples mu with mu_h, hence bounds W1(mu, mu_h); fans are rooted at
    the site so the kink of ``|x - x_i|`` sits on a triangle apex.
    """
    f = mu.density
    pts = cloud.points

    def integrand(x, own):
        return np.hypot(*(x - pts[own]).T) * f(x)

    vals = integrate_polygons(cloud.cells, integrand, collapsed_gauss(12), apexes=pts)
    return float(vals.sum())


# ------------------------------------------------------------------ CSV

def write_points_csv(path, points, masses=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"] + (["mass"] if masses is not None else []))
        for i, p in enumerate(points):
            row = [repr(float(p[0])), repr(float(p[1]))]
            if masses is not None:
                row.append(repr(float(masses[i])))
            w.writerow(row)


def read_points_csv(path):
    """Returns ``(points, masses or None)``."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["x", "y"]:
        raise ValueError(f"{path}: expected header 'x,y[,mass]'")
    has_mass = len(rows[0]) > 2 and rows[0][2] == "mass"
    pts, ms = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        try:
            pts.append((float(r[0]), float(r[1])))
            if has_mass:
                ms.append(float(r[2]))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed row {r!r}") from exc
    return np.array(pts).reshape(-1, 2), (np.array(ms) if has_mass else None)
