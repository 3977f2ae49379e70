"""Semi-discrete optimal transport and the discrete Monge-Ampere equation in the plane."""
from .convexity import (
    DualityError,
    PiecewiseAffineConvex,
    TransportMapPWC,
    extend_pwa,
    legendre_discrete,
    ma_measure_pwa,
    transport_map,
    verify_facet_vertex_bijection,
)
from .geom import ConvexPolygon, GeometryError, HalfPlane, area, clip, convex_hull
from .laguerre import LaguerreDiagram, build_diagram, laguerre_cells, mass_jacobian
from .measures import (
    SourceCloud,
    SourceMeasure,
    TargetDomain,
    discretize,
    grid_cloud,
    random_cloud,
    w1_upper_bound,
)
from .periodic import TorusProblem, periodic_diagram, periodic_solve, torus_grid_cloud
from .reference import SeparableProblem, fit_rate, run_rate_series, stability_experiment
from .solver import SolveReport, SolverError, SolveSettings, brute_force_solve, damped_newton

__version__ = "0.1.0"
