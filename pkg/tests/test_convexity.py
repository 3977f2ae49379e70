import numpy as np
import pytest

from semidiscrete_ma.convexity import (
    DualityError,
    PiecewiseAffineConvex,
    extend_pwa,
    global_pwa_from_diagram,
    legendre_discrete,
    ma_measure_pwa,
    support_function,
    transport_map,
    verify_facet_vertex_bijection,
    write_map_csv,
)
from semidiscrete_ma.geom import ConvexPolygon, GeometryError, area, integrate_polygons
from semidiscrete_ma.laguerre import build_diagram
from semidiscrete_ma.measures import discretize, grid_cloud, random_cloud, SourceMeasure
from semidiscrete_ma.solver import damped_newton

FOUR = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])


def vor(p):
    return 0.5 * (p ** 2).sum(1)


def solved(cloud, target, f=None):
    f = np.full(len(cloud), 1.0 / len(cloud)) if f is None else f
    phi, rep, d = damped_newton(cloud, f, target, return_diagram=True)
    return phi, d


def test_legendre_examples():
    assert legendre_discrete([[0, 0], [1, 0]], [0, 0], [2, 5]) == 2.0
    y = np.random.default_rng(0).random((7, 2))
    assert np.allclose(legendre_discrete([[0.3, -1.0]], [0.4], y), y @ [0.3, -1.0] - 0.4)


def test_legendre_affine_on_cells(uniform_target):
    p = np.array([[0.25, 0.5], [0.75, 0.5]])
    phi, d = solved(p, uniform_target, [0.7, 0.3])
    y = np.column_stack([np.linspace(0.01, 0.69, 20), np.linspace(0, 1, 20)])
    assert np.allclose(legendre_discrete(p, phi, y), y @ p[0] - phi[0], atol=1e-14)


def test_support_function(unit_square):
    assert support_function(unit_square, (1, 1)) == 2
    assert support_function(unit_square, (-1, 0)) == 0
    assert support_function(unit_square, (0, 0)) == 0
    with pytest.raises(GeometryError):
        support_function(ConvexPolygon.empty(), (1, 0))


def test_extend_pwa_tie_configuration():
    pwa = extend_pwa(FOUR, vor(FOUR))
    # one quadrilateral facet (tie kept as a polygon), reproducing phi at the sites
    assert len(pwa.facets) == 1 and len(pwa.facets[0]) == 4
    assert np.allclose(pwa(FOUR), vor(FOUR), atol=1e-15)


def test_extend_pwa_three_points():
    p = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 0.9]])
    phi = np.array([0.5, -1.0, 2.0])
    pwa = extend_pwa(p, phi)
    assert len(pwa.gradients) == 1
    assert np.allclose(pwa(p), phi)


def test_extend_pwa_degenerate():
    with pytest.raises(GeometryError, match="degenerate"):
        extend_pwa(np.array([[0.25, 0.5], [0.75, 0.5]]), [0.0, 0.0])


def test_envelope_matches_double_legendre_on_grid(uniform_target, unit_square):
    c = grid_cloud(unit_square, 4)
    phi, d = solved(c, uniform_target)
    pwa = extend_pwa(c, phi)
    phistar = global_pwa_from_diagram(d)  # max over diagram vertices of x . y - psi(y)
    x = 0.125 + 0.75 * np.random.default_rng(3).random((100, 2))
    assert np.abs(pwa(x) - phistar(x)).max() <= 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_double_legendre_reproduces_sites(uniform_target, unit_square, seed):
    c = random_cloud(unit_square, 40, seed)
    phi, d = solved(c, uniform_target)
    phistar = global_pwa_from_diagram(d)
    assert np.abs(phistar(c.points) - phi).max() <= 1e-10


def test_transport_map_symmetric(uniform_target):
    phi, d = solved(FOUR, uniform_target)
    tm = transport_map(FOUR, phi, d)
    assert np.allclose(tm.targets, [[0.5, 0.5]])
    rep = verify_facet_vertex_bijection(extend_pwa(FOUR, phi), d)
    assert rep.ok and rep.n_facets == 1 and len(rep.tie_pairs) == 1


def test_transport_map_three_points(uniform_target):
    p = np.array([[0.2, 0.2], [0.8, 0.3], [0.4, 0.8]])
    phi, d = solved(p, uniform_target)
    rep = verify_facet_vertex_bijection(extend_pwa(p, phi), d)
    assert rep.ok and rep.n_facets == 1 and rep.n_vertices == 1


def test_transport_map_identity_problem(uniform_target, unit_square):
    c = grid_cloud(unit_square, 8)
    phi, d = solved(c, uniform_target)
    tm = transport_map(c, phi, d)
    sq = integrate_polygons(tm.facets, lambda x, o: ((tm.targets[o] - x) ** 2).sum(1))
    assert np.sqrt(sq.sum()) <= c.mesh_norm
    assert sum(area(f) for f in tm.facets) == pytest.approx(area(tm.domain))


def test_transport_map_outside_hull(uniform_target, unit_square):
    c = grid_cloud(unit_square, 4)
    phi, d = solved(c, uniform_target)
    tm = transport_map(c, phi, d)
    assert np.allclose(tm([0.5, 0.5]), [[0.5, 0.5]])
    with pytest.raises(GeometryError):
        tm([0.01, 0.5])


def test_transport_map_degenerate_domain(uniform_target):
    p = np.array([[0.25, 0.5], [0.75, 0.5]])
    phi, d = solved(p, uniform_target, [0.7, 0.3])
    with pytest.raises(GeometryError):
        transport_map(p, phi, d)


def test_envelope_gradient_outside_target_is_flagged(uniform_target):
    # A thin boundary triangle: the envelope over X_h is one plane whose gradient is
    # the circumcentre (0.5, -1.075), outside Y. The Voronoi potential solves the
    # problem for its own cell masses, so this is a genuine solver output.
    p = np.array([[0.1, 0.5], [0.9, 0.5], [0.5, 0.55]])
    d = build_diagram(p, vor(p), uniform_target)
    pwa = extend_pwa(p, vor(p))
    assert np.allclose(pwa.gradients, [[0.5, -1.075]])
    with pytest.raises(DualityError, match="duality violation"):
        transport_map(p, vor(p), d)
    # the max-over-vertices function has gradients in Y and lies below the envelope
    phistar = global_pwa_from_diagram(d)
    x = np.array([[0.5, 0.52]])
    assert phistar(x)[0] < pwa(x)[0] - 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_bijection_on_random_solutions(uniform_target, unit_square, seed):
    """Every interior vertex pairs with a facet; the only unpaired facets are the
    boundary facets whose gradient leaves Y."""
    c = random_cloud(unit_square, 50, seed)
    phi, d = solved(c, uniform_target)
    pwa = extend_pwa(c, phi)
    rep = verify_facet_vertex_bijection(pwa, d)
    assert rep.unmatched_vertices == []
    outside = np.flatnonzero(~unit_square.contains_points(pwa.gradients, 1e-9))
    assert sorted(rep.unmatched_facets) == outside.tolist()
    assert rep.max_position_error <= 1e-9


def test_ma_measure_support_function(unit_square):
    m = ma_measure_pwa((unit_square.vertices, np.zeros(4)))
    assert len(m) == 1
    assert np.allclose(m.points, [[0, 0]], atol=1e-14)
    assert m.masses[0] == pytest.approx(1.0)


def test_ma_measure_single_affine():
    m = ma_measure_pwa((np.array([[0.3, 0.4]]), np.array([1.0])))
    assert len(m) == 0 and m.masses.sum() == 0


def test_ma_measure_total_is_gradient_image_area(rng):
    g = rng.random((30, 2)) * [2, 1]
    c = rng.random(30)
    m = ma_measure_pwa(PiecewiseAffineConvex(g, c))
    from semidiscrete_ma.geom import convex_hull
    assert m.masses.sum() == pytest.approx(area(convex_hull(g)), rel=1e-12)


def test_ma_measure_recovers_laguerre_masses(uniform_target, unit_square):
    c = random_cloud(unit_square, 60, 5)
    mu = SourceMeasure.create(unit_square, lambda x: 1 + x[:, 0])
    f = discretize(mu, c)
    phi, d = solved(c, uniform_target, f.masses)
    m = ma_measure_pwa(global_pwa_from_diagram(d), uniform_target.density)
    from scipy.spatial import cKDTree
    dist, idx = cKDTree(m.points).query(c.points)
    assert dist.max() <= 1e-9 and len(m) == len(c)
    assert np.abs(m.masses[idx] - d.masses).max() <= 1e-9


def test_map_csv(tmp_path, uniform_target):
    phi, d = solved(FOUR, uniform_target)
    tm = transport_map(FOUR, phi, d)
    write_map_csv(tm, tmp_path / "f.csv", tmp_path / "t.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "facet_id,vertex_index,x,y"
    t = (tmp_path / "t.csv").read_text().splitlines()
    assert t[0] == "facet_id,target_x,target_y"
    assert np.allclose([float(v) for v in t[1].split(",")], [0, 0.5, 0.5], atol=1e-14)
