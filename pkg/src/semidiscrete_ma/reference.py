"""Closed-form regular test problem, error norms and rate fitting.

The reference family is separable on the unit square: each axis carries the
1-D map ``T(t) = t + a t (1 - t)``, whose derivative is the marginal density
``1 + a (1 - 2t)``. Its gradient potential, inverse and density are all
explicit, so every error norm below has an exact target to compare with.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .convexity import PiecewiseAffineConvex, TransportMapPWC, extend_pwa, transport_map
from .geom import ConvexPolygon, DUNAVANT4, area, collapsed_gauss, integrate_polygons
from .measures import SourceMeasure, TargetDomain, discretize, grid_cloud, w1_upper_bound
from .solver import SolveSettings, damped_newton

log = logging.getLogger(__name__)

UNIT_SQUARE = ConvexPolygon.box(0.0, 0.0, 1.0, 1.0)


def _xy(pts):
    pts = np.asarray(pts, dtype=float)
    return pts.reshape(-1, 2), pts.ndim == 1


class SeparableProblem:
    """Product density ``f(x) = prod_k (1 + a(1 - 2 x_k))`` pushed onto the uniform square."""

    def __init__(self, alpha: float, check: bool = True):
        alpha = float(alpha)
        if not abs(alpha) <= 0.9:
            raise ValueError(f"alpha must satisfy |alpha| <= 0.9, got {alpha}")
        self.alpha = alpha
        self.X = UNIT_SQUARE
        self.Y = UNIT_SQUARE
        if check:
            self.check()

    def __repr__(self):
        return f"SeparableProblem(alpha={self.alpha})"

    # 1-D pieces
    def t_map(self, t):
        return t + self.alpha * t * (1.0 - t)

    def t_inverse(self, s):
        a = self.alpha
        # root of a t^2 - (1 + a) t + s = 0 in [0, 1], written without cancellation
        return 2.0 * s / ((1.0 + a) + np.sqrt((1.0 + a) ** 2 - 4.0 * a * s))

    def t_density(self, t):
        return 1.0 + self.alpha * (1.0 - 2.0 * t)

    def t_potential(self, t):
        return 0.5 * t ** 2 + self.alpha * (0.5 * t ** 2 - t ** 3 / 3.0)

    # 2-D
    def density(self, pts):
        p, one = _xy(pts)
        v = self.t_density(p[:, 0]) * self.t_density(p[:, 1])
        return float(v[0]) if one else v

    def potential(self, pts):
        p, one = _xy(pts)
        v = self.t_potential(p[:, 0]) + self.t_potential(p[:, 1])
        return float(v[0]) if one else v

    def map(self, pts):
        p, one = _xy(pts)
        v = self.t_map(p)
        return v[0] if one else v

    def inverse_map(self, pts):
        p, one = _xy(pts)
        v = self.t_inverse(p)
        return v[0] if one else v

    def hessian_det(self, pts):
        p, _ = _xy(pts)
        # the Hessian of the potential is diagonal with entries T'(x_k)
        return self.t_density(p[:, 0]) * self.t_density(p[:, 1])

    def source(self) -> SourceMeasure:
        return SourceMeasure(self.X, self.density)

    def target(self) -> TargetDomain:
        return TargetDomain.create(self.Y)

    def check(self, n_grid: int = 100, seed: int = 0):
        """Self-consistency: unit mass, det D^2 phi = f, and T_# mu uniform."""
        mass = float(integrate_polygons([self.X], lambda p, _: self.density(p), DUNAVANT4)[0])
        if abs(mass - 1.0) > 1e-12:
            raise AssertionError(f"density integrates to {mass}")
        g = (np.arange(n_grid) + 0.5) / n_grid
        grid = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        if np.max(np.abs(self.hessian_det(grid) - self.density(grid))) > 1e-12:
            raise AssertionError("det D^2 phi differs from f")
        h = 1e-4
        fd = (self.potential(grid + [h, 0]) - self.potential(grid - [h, 0])) / (2 * h)
        if np.max(np.abs(fd - self.map(grid)[:, 0])) > 1e-7:
            raise AssertionError("grad phi differs from T")
        # stratified samples of mu via the marginal CDF, which is T itself
        rng = np.random.default_rng(seed)
        u = (grid * n_grid - 0.5 + rng.random(grid.shape)) / n_grid
        x = self.inverse_map(u)
        y = self.map(x)
        if np.any(y < 0) or np.any(y > 1):
            raise AssertionError("T leaves the unit square")
        n = len(y)
        for k in range(2):
            s = np.sort(y[:, k])
            ecdf = np.arange(1, n + 1) / n
            ks = max(np.max(ecdf - s), np.max(s - (ecdf - 1.0 / n)))
            if ks > 2.0 / np.sqrt(n):
                raise AssertionError(f"pushforward not uniform along axis {k} (KS={ks:.3g})")
        return True


# ------------------------------------------------------------------ errors

def _map_sq(tmap: TransportMapPWC, problem, weight=None, rule=DUNAVANT4):
    targets = np.asarray(tmap.targets)

    def integrand(x, own):
        d = ((targets[own] - problem.map(x)) ** 2).sum(axis=1)
        return d if weight is None else d * weight(x)

    return integrate_polygons(tmap.facets, integrand, rule)


def h1_error(tmap: TransportMapPWC, problem) -> float:
    """``(sum_j int_{F_j} |y_j - T(x)|^2 dx)^{1/2}`` over the facets of ``X_h``."""
    return float(np.sqrt(_map_sq(tmap, problem).sum()))


def map_l2(tmap: TransportMapPWC, problem) -> float:
    """Map distance in ``L^2(mu)``: as :func:`h1_error`, weighted by the source density."""
    return float(np.sqrt(_map_sq(tmap, problem, problem.density, collapsed_gauss(4)).sum()))


def l2_error(pwa: PiecewiseAffineConvex, problem) -> float:
    """``L^2(X_h)`` distance between the envelope and the exact potential, both mean-zero on ``X_h``."""
    grads, cs = pwa.gradients, pwa.intercepts
    rule = collapsed_gauss(4)

    def diff(x, own):
        return np.einsum("ij,ij->i", grads[own], x) - cs[own] - problem.potential(x)

    vol = sum(area(f) for f in pwa.facets)
    d1 = integrate_polygons(pwa.facets, diff, rule).sum()
    c = d1 / vol
    d2 = integrate_polygons(pwa.facets, lambda x, o: (diff(x, o) - c) ** 2, rule).sum()
    return float(np.sqrt(d2))


def vertex_l2_error(cloud, phi, problem) -> float:
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=float)
    d = np.asarray(phi, dtype=float) - problem.potential(pts)
    d -= d.mean()
    return float(np.sqrt(np.mean(d ** 2)))


def inverse_map_error(cloud, diagram, problem, n_gauss: int = 6) -> float:
    """``(sum_i int_{F_i} |x_i - T^{-1}(y)|^2 g dy)^{1/2}`` on the Laguerre cells."""
    sites = diagram.sites
    g = diagram.density

    def integrand(y, own):
        return ((sites[own] - problem.inverse_map(y)) ** 2).sum(axis=1) * g(y)

    return float(np.sqrt(integrate_polygons(diagram.cells, integrand, collapsed_gauss(n_gauss)).sum()))


def collar_area(cloud, X: ConvexPolygon | None = None) -> float:
    """Area of ``X`` outside the hull of the sites, where the errors are not measured."""
    from .geom import convex_hull

    X = X if X is not None else cloud.domain
    return float(area(X) - area(convex_hull(cloud.points)))


def fit_rate(hs, errors):
    """Least squares ``log e = slope log h + intercept``; returns ``(slope, intercept, r2)``."""
    h = np.asarray(hs, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.shape != e.shape or len(h) < 3:
        raise ValueError("fit_rate needs at least 3 (h, error) pairs")
    if np.any(~(h > 0)) or np.any(~(e > 0)):
        raise ValueError("fit_rate needs positive h and errors")
    lx, ly = np.log(h), np.log(e)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(intercept), float(r2)


# ------------------------------------------------------------------ rate series

REPORT_COLUMNS = ["h", "N", "h1_error", "l2_error", "map_l2", "vertex_l2", "inverse_map_l2",
                  "w1_bound", "newton_iters", "residual_inf"]
ERROR_COLUMNS = ["h1_error", "l2_error", "map_l2", "vertex_l2", "inverse_map_l2"]


@dataclass
class RateReport:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    extras: list = field(default_factory=list)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def fit(self, columns=None):
        hs = self.column("h")
        if np.any(np.diff(hs) >= 0):
            raise ValueError("h must be strictly decreasing across rows")
        self.slopes = {}
        if len(self.rows) < 3:
            return self.slopes
        for c in columns or ERROR_COLUMNS:
            if c in self.rows[0]:
                self.slopes[c] = fit_rate(hs, self.column(c))
        return self.slopes

    def monotone(self, name) -> bool:
        return bool(np.all(np.diff(self.column(name)) < 0))

    def write_csv(self, path):
        cols = [c for c in REPORT_COLUMNS if any(c in r for r in self.rows)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_fmt(r.get(c, "")) for c in cols])
            if self.slopes:
                w.writerow(["slope"] + [_fmt(self.slopes[c][0]) if c in self.slopes else ""
                                        for c in cols[1:]])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


@dataclass
class SolvedInstance:
    cloud: object
    f: object
    phi: np.ndarray
    report: object
    diagram: object
    target: TargetDomain


def solve_on_cloud(problem: SeparableProblem, cloud, settings: SolveSettings | None = None,
                   trace_path=None) -> SolvedInstance:
    f = discretize(problem.source(), cloud)
    target = problem.target()
    phi, rep, diag = damped_newton(cloud, f, target, settings, trace_path=trace_path,
                                   return_diagram=True)
    return SolvedInstance(cloud, f, phi, rep, diag, target)


def solve_grid(problem: SeparableProblem, k: int, settings: SolveSettings | None = None,
               trace_path=None) -> SolvedInstance:
    return solve_on_cloud(problem, grid_cloud(problem.X, k), settings, trace_path)


def measure_errors(problem: SeparableProblem, inst: SolvedInstance) -> dict:
    cloud = inst.cloud
    pwa = extend_pwa(cloud, inst.phi)
    tmap = transport_map(cloud, inst.phi)
    return {
        "h": cloud.mesh_norm,
        "N": len(cloud),
        "h1_error": h1_error(tmap, problem),
        "l2_error": l2_error(pwa, problem),
        "map_l2": map_l2(tmap, problem),
        "vertex_l2": vertex_l2_error(cloud, inst.phi, problem),
        "inverse_map_l2": inverse_map_error(cloud, inst.diagram, problem),
        "w1_bound": w1_upper_bound(problem.source(), cloud),
        "newton_iters": inst.report.iterations,
        "residual_inf": inst.report.final_residual_inf,
    }


def rate_series(problem: SeparableProblem, clouds, settings: SolveSettings | None = None,
                keep=None, threads: int = 1) -> RateReport:
    """Solve on each cloud (coarse to fine) and tabulate the error norms.

    Experiments are independent, so ``threads > 1`` runs them concurrently;
    rows are always assembled in input order. ``keep`` collects solved instances.
    """
    clouds = list(clouds)

    def one(cloud):
        inst = solve_on_cloud(problem, cloud, settings)
        return inst, measure_errors(problem, inst)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, clouds))
    else:
        results = [one(c) for c in clouds]
    # random clouds need not come out in mesh-norm order
    results.sort(key=lambda r: -r[1]["h"])
    rep = RateReport()
    for inst, row in results:
        rep.rows.append(row)
        rep.extras.append({"collar_area": collar_area(inst.cloud)})
        if keep is not None:
            keep.append(inst)
        log.info("N=%d h=%.4g h1=%.3e", row["N"], row["h"], row["h1_error"])
    rep.fit()
    return rep


def run_rate_series(problem: SeparableProblem, ks, settings: SolveSettings | None = None,
                    keep=None, threads: int = 1) -> RateReport:
    """:func:`rate_series` on ``k x k`` grids."""
    ks = list(ks)
    if not ks or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k-list must be nonempty and increasing")
    rep = rate_series(problem, [grid_cloud(problem.X, k) for k in ks], settings, keep, threads)
    for e, k in zip(rep.extras, ks):
        e["k"] = k
    return rep


# ------------------------------------------------------------------ stability

@dataclass
class StabilityRow:
    alpha: float
    alpha_prime: float
    d_l2_exact: float
    d_l2_quadrature: float
    w1_bound: float
    ratio: float


@dataclass
class StabilityReport:
    rows: list
    constant: float
    ratio_spread: float

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "alpha_prime", "d_l2_exact", "d_l2_quadrature", "w1_bound", "ratio"])
            for r in self.rows:
                w.writerow([repr(float(v)) for v in
                            (r.alpha, r.alpha_prime, r.d_l2_exact, r.d_l2_quadrature, r.w1_bound, r.ratio)])


def _tensor_gauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1), 0.5 * w
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    return np.column_stack([X1.ravel(), X2.ravel()]), W.ravel()


def map_distance(alpha, alpha_prime, n: int = 8) -> float:
    """``||T_a - T_a'||_{L^2(dx)}`` on the unit square by tensor Gauss quadrature."""
    p, w = _tensor_gauss(n)
    d = SeparableProblem(alpha, check=False).map(p) - SeparableProblem(alpha_prime, check=False).map(p)
    return float(np.sqrt(np.dot(w, (d ** 2).sum(axis=1))))


def w1_coupling_bound(alpha, alpha_prime, n: int = 40) -> float:
    """Cost of the coupling ``x -> S(x)`` with ``S`` the componentwise monotone 1-D transport.

    ``S_k = T_a'^{-1} o T_a`` per axis; its Euclidean cost bounds ``W1``.
    """
    a = SeparableProblem(alpha, check=False)
    b = SeparableProblem(alpha_prime, check=False)
    if a.alpha == b.alpha:
        return 0.0  # S is the identity; skip the inverse roundoff
    p, w = _tensor_gauss(n)
    s = b.inverse_map(a.map(p))
    return float(np.dot(w, np.hypot(*(p - s).T) * a.density(p)))


def stability_experiment(alpha_pairs, k: int | None = None) -> StabilityReport:
    """Compare ``d_L2(T_a, T_a')`` with ``W1(mu_a, mu_a')^{1/2}``.

    ``k`` is accepted for config symmetry; the comparison uses exact maps.
    """
    rows = []
    for a, b in alpha_pairs:
        for v in (a, b):
            if not abs(v) <= 0.9:
                raise ValueError(f"alpha must satisfy |alpha| <= 0.9, got {v}")
        exact = abs(a - b) / np.sqrt(15.0)
        quad = map_distance(a, b)
        w1 = w1_coupling_bound(a, b)
        ratio = exact / np.sqrt(w1) if w1 > 0 else 0.0
        rows.append(StabilityRow(a, b, exact, quad, w1, ratio))
    ratios = np.array([r.ratio for r in rows if r.w1_bound > 0])
    const = float(ratios.max()) if len(ratios) else 0.0
    spread = float(ratios.max() / ratios.min()) if len(ratios) else 1.0
    return StabilityReport(rows, const, spread)
