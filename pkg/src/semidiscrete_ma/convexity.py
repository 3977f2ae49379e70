"""Legendre duality between site potentials and piecewise-affine convex functions."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .geom import (
    ConvexPolygon,
    GeometryError,
    LowerHull,
    convex_hull,
    lifted_lower_hull,
    polygon_moments,
)
from .measures import DiscreteMeasure


class DualityError(GeometryError):
    pass


def _points(cloud):
    return np.asarray(getattr(cloud, "points", cloud), dtype=float).reshape(-1, 2)


def legendre_discrete(cloud, phi, y):
    """``max_i (x_i . y - phi_i)``; accepts one point or an ``(M, 2)`` array."""
    x = _points(cloud)
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    vals = np.atleast_2d(y) @ x.T - phi[None, :]
    out = vals.max(axis=1)
    return float(out[0]) if y.ndim == 1 else out


def support_function(Y: ConvexPolygon, x) -> float:
    if Y.is_empty:
        raise GeometryError("empty polygon has no support function")
    return float(np.max(Y.vertices @ np.asarray(x, dtype=float)))


@dataclass
class PiecewiseAffineConvex:
    """``max_k (gradients[k] . x - intercepts[k])`` with its facet complex."""

    gradients: np.ndarray
    intercepts: np.ndarray
    domain: ConvexPolygon | None = None
    facets: list = field(default_factory=list)
    members: list = field(default_factory=list)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        vals = np.atleast_2d(x) @ self.gradients.T - self.intercepts[None, :]
        out = vals.max(axis=1)
        return float(out[0]) if x.ndim == 1 else out

    @property
    def facet_pieces(self) -> list:
        """``(facet polygon, active piece index)`` pairs."""
        return list(zip(self.facets, range(len(self.facets))))


def _from_hull(hull: LowerHull, domain) -> PiecewiseAffineConvex:
    return PiecewiseAffineConvex(hull.gradients, hull.intercepts, domain,
                                 list(hull.polygons), list(hull.members))


def extend_pwa(cloud, phi, tie_tol: float | None = None) -> PiecewiseAffineConvex:
    """Convex envelope of the discrete graph ``(x_i, phi_i)`` over ``conv{x_i}``."""
    x = _points(cloud)
    hull = lifted_lower_hull(x, np.asarray(phi, dtype=float), tie_tol)
    return _from_hull(hull, convex_hull(x))


@dataclass
class TransportMapPWC:
    facets: list
    targets: np.ndarray
    members: list
    domain: ConvexPolygon

    def __call__(self, x):
        """Target of the facet containing ``x``; raises outside ``X_h``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tol = 1e-12 * max(self.domain.diameter, 1.0)
        if not np.all(self.domain.contains_points(x, tol)):
            raise GeometryError("transport map is undefined outside the hull of the sites")
        out = np.full((len(x), 2), np.nan)
        for poly, y in zip(self.facets, self.targets):
            inside = poly.contains_points(x, tol) & np.isnan(out[:, 0])
            out[inside] = y
        return out


@dataclass
class BijectionReport:
    pairs: list
    tie_pairs: list
    unmatched_facets: list
    unmatched_vertices: list
    n_facets: int
    n_vertices: int
    max_position_error: float

    @property
    def mismatches(self) -> int:
        return len(self.unmatched_facets) + len(self.unmatched_vertices)

    @property
    def ok(self) -> bool:
        return self.mismatches == 0 and self.n_facets == self.n_vertices


def verify_facet_vertex_bijection(pwa: PiecewiseAffineConvex, diagram, pos_tol: float | None = None
                                  ) -> BijectionReport:
    """Pair facets of the envelope with diagram vertices where >= 3 cells meet.

    Facets and vertices are matched by their incident site sets; a matched
    pair must also agree in position (facet gradient vs vertex location).
    """
    if pos_tol is None:
        pos_tol = 1e-7 * max(diagram.extra["boundary"].diameter if "boundary" in diagram.extra else 1.0, 1.0)
    verts = [v for v in diagram.vertices if len(v.sites) >= 3]
    by_key = {}
    for k, v in enumerate(verts):
        by_key.setdefault(v.sites, []).append(k)
    used = set()
    pairs, ties, bad_f = [], [], []
    max_err = 0.0
    for j, mem in enumerate(pwa.members):
        key = tuple(int(m) for m in np.sort(mem))
        cands = [k for k in by_key.get(key, []) if k not in used]
        if not cands:
            bad_f.append(j)
            continue
        errs = [float(np.hypot(*(verts[k].position - pwa.gradients[j]))) for k in cands]
        best = int(np.argmin(errs))
        if errs[best] > pos_tol:
            bad_f.append(j)
            continue
        k = cands[best]
        used.add(k)
        max_err = max(max_err, errs[best])
        pairs.append((j, k))
        if len(key) > 3:
            ties.append((j, k))
    bad_v = [k for k in range(len(verts)) if k not in used]
    return BijectionReport(pairs, ties, bad_f, bad_v, len(pwa.members), len(verts), max_err)


def _target_polygon(diagram, target):
    if target is not None:
        return target.boundary
    return diagram.extra["boundary"]


def transport_map(cloud, phi, diagram=None, target=None, tol: float = 1e-9) -> TransportMapPWC:
    """Piecewise-constant map sending facet ``F_j*`` of the envelope to its gradient.

    Raises :class:`DualityError` if a gradient leaves the closed target, or if
    ``diagram`` is given and the facet/vertex pairing fails.
    """
    pwa = extend_pwa(cloud, phi)
    if diagram is not None or target is not None:
        Y = _target_polygon(diagram, target)
        inside = Y.contains_points(pwa.gradients, tol)
        if not np.all(inside):
            bad = np.flatnonzero(~inside).tolist()
            raise DualityError(f"duality violation: facet gradients {bad[:10]} outside the target")
    if diagram is not None:
        rep = verify_facet_vertex_bijection(pwa, diagram)
        if not rep.ok:
            raise DualityError(
                f"duality violation: {len(rep.unmatched_facets)} facets and "
                f"{len(rep.unmatched_vertices)} vertices unpaired")
    return TransportMapPWC(pwa.facets, pwa.gradients.copy(), pwa.members, pwa.domain)


def ma_measure_pwa(pieces, density=None) -> DiscreteMeasure:
    """Monge-Ampere measure of a global max-of-affine function.

    ``pieces`` is a PiecewiseAffineConvex or a ``(gradients, intercepts)``
    pair. Atoms sit at the vertices of the induced complex; each carries the
    (g-weighted) area of the convex hull of the incident gradients. These are
    exactly the facets of the lower hull of ``(gradient_k, intercept_k)``.
    """
    if isinstance(pieces, PiecewiseAffineConvex):
        grads, cs = pieces.gradients, pieces.intercepts
    else:
        grads, cs = pieces
    grads = np.asarray(grads, dtype=float).reshape(-1, 2)
    cs = np.asarray(cs, dtype=float).ravel()
    if len(grads) < 3 or convex_hull(grads).is_empty:
        return DiscreteMeasure(np.zeros((0, 2)), np.zeros(0))
    hull = lifted_lower_hull(grads, cs)
    masses, _ = polygon_moments(hull.polygons, density)
    return DiscreteMeasure(hull.gradients.copy(), masses)


def global_pwa_from_diagram(diagram) -> PiecewiseAffineConvex:
    """The conjugate of ``psi_h`` restricted to the target: a max over diagram vertices."""
    v = np.array([d.position for d in diagram.vertices])
    psi = legendre_discrete(diagram.sites, diagram.phi, v)
    return PiecewiseAffineConvex(v, psi)


def write_map_csv(tmap: TransportMapPWC, facets_path, targets_path):
    with open(facets_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["facet_id", "vertex_index", "x", "y"])
        for j, poly in enumerate(tmap.facets):
            for k, p in enumerate(poly.vertices):
                w.writerow([j, k, repr(float(p[0])), repr(float(p[1]))])
    with open(targets_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["facet_id", "target_x", "target_y"])
        for j, y in enumerate(tmap.targets):
            w.writerow([j, repr(float(y[0])), repr(float(y[1]))])
