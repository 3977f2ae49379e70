import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semidiscrete_ma.geom import ConvexPolygon, GeometryError, area
from semidiscrete_ma.laguerre import (
    boundary_vertices,
    build_diagram,
    dual_vertices,
    euler_characteristic,
    mass_jacobian,
    read_diagram_csv,
    write_diagram_csv,
)
from semidiscrete_ma.measures import TargetDomain, random_cloud

from oracles import central_jacobian, mc_assignment, same_vertex_set, voronoi_cells_unit_square

TWO = np.array([[0.25, 0.5], [0.75, 0.5]])


def vor(p):
    return 0.5 * (p ** 2).sum(1)


def test_single_site(uniform_target):
    d = build_diagram(np.array([[0.3, 0.6]]), [4.2], uniform_target)
    assert d.masses.tolist() == pytest.approx([1.0])
    assert area(d.cells[0]) == pytest.approx(1.0)


def test_two_point_voronoi(uniform_target):
    d = build_diagram(TWO, vor(TWO), uniform_target)
    assert d.masses == pytest.approx([0.5, 0.5], abs=1e-15)
    assert np.allclose(d.cells[0].vertices[:, 0].max(), 0.5)
    H = mass_jacobian(d).toarray()
    assert np.allclose(H, [[-2, 2], [2, -2]])


def test_two_point_shifted(uniform_target):
    phi = vor(TWO) + [0.0, 0.1]
    d = build_diagram(TWO, phi, uniform_target)
    assert d.masses == pytest.approx([0.7, 0.3], abs=1e-14)
    mc = mc_assignment(TWO, phi, 10 ** 6)
    assert np.abs(mc - d.masses).max() < 3e-3


def test_coincident_sites(uniform_target):
    with pytest.raises(GeometryError, match="coincident sites"):
        build_diagram(np.array([[0.2, 0.2], [0.2, 0.2], [0.5, 0.5]]), np.zeros(3), uniform_target)


def test_bad_phi(uniform_target):
    with pytest.raises(ValueError):
        build_diagram(TWO, [0.0], uniform_target)
    with pytest.raises(ValueError):
        build_diagram(TWO, [0.0, np.nan], uniform_target)


def test_empty_cells_are_legal(uniform_target):
    d = build_diagram(TWO, [0.0, 10.0], uniform_target)
    assert d.masses.tolist() == pytest.approx([1.0, 0.0])
    assert d.cells[1].is_empty


def test_dominated_sites_get_empty_cells_on_fast_path(uniform_target, rng):
    p = rng.random((40, 2))
    phi = vor(p)
    phi[::3] += 0.5  # lift every third site far above the envelope
    fast = build_diagram(p, phi, uniform_target)
    naive = build_diagram(p, phi, uniform_target, method="naive")
    assert np.allclose(fast.masses, naive.masses, atol=1e-14)
    assert all(fast.cells[i].is_empty for i in range(0, 40, 3))
    assert fast.masses.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_voronoi_equivalence_against_qhull(uniform_target, seed):
    p = np.random.default_rng(seed).random((60, 2))
    d = build_diagram(p, vor(p) + 1.3, uniform_target)
    ref = voronoi_cells_unit_square(p)
    tol = 1e-12 * np.sqrt(2) * 10
    for cell, r in zip(d.cells, ref):
        assert same_vertex_set(cell.vertices, r, tol)
    assert d.masses.sum() == pytest.approx(1.0, abs=1e-12)


def test_fast_and_naive_paths_agree(uniform_target, rng):
    p = rng.random((40, 2))
    phi = vor(p) + 0.01 * rng.standard_normal(40)
    a = build_diagram(p, phi, uniform_target)
    b = build_diagram(p, phi, uniform_target, method="naive")
    assert np.allclose(a.masses, b.masses, atol=1e-14)
    for ca, cb in zip(a.cells, b.cells):
        assert same_vertex_set(ca.vertices, cb.vertices, 1e-12)


def test_shift_invariance(uniform_target, rng):
    p = rng.random((30, 2))
    phi = vor(p) + 0.01 * rng.standard_normal(30)
    a = build_diagram(p, phi, uniform_target)
    b = build_diagram(p, phi + 3.7, uniform_target)
    assert np.allclose(a.masses, b.masses, atol=1e-13)
    for ca, cb in zip(a.cells, b.cells):
        assert same_vertex_set(ca.vertices, cb.vertices, 1e-12)


@given(st.integers(0, 10 ** 6), st.integers(0, 24))
@settings(max_examples=40, deadline=None)
def test_monotonicity(seed, i):
    T = TargetDomain.unit_square()
    r = np.random.default_rng(seed)
    p = r.random((25, 2))
    phi = vor(p) + 0.02 * r.standard_normal(25)
    m0 = build_diagram(p, phi, T).masses
    bump = phi.copy()
    bump[i] += 1e-4
    m1 = build_diagram(p, bump, T).masses
    assert m1[i] <= m0[i] + 1e-12
    others = np.delete(np.arange(25), i)
    assert np.all(m1[others] >= m0[others] - 1e-12)


def test_adjacency_edges_on_bisectors(uniform_target, rng):
    p = rng.random((50, 2))
    phi = vor(p) + 0.01 * rng.standard_normal(50)
    d = build_diagram(p, phi, uniform_target)
    assert len(d.adjacency) > 0
    for i, j, a, b, length in d.adjacency:
        n = p[j] - p[i]
        for y in (a, b):
            assert abs(n @ y - (phi[j] - phi[i])) <= 1e-12
        assert length > 0


def test_cells_interior_disjoint(uniform_target, rng):
    p = rng.random((50, 2))
    d = build_diagram(p, vor(p) + 0.01 * rng.standard_normal(50), uniform_target)
    # partition: areas add up and random probes land in exactly one cell (up to boundary ties)
    assert sum(area(c) for c in d.cells) == pytest.approx(1.0, abs=1e-12)
    y = rng.random((2000, 2))
    hits = np.array([c.contains_points(y, -1e-9) for c in d.cells]).sum(axis=0)
    assert np.all(hits <= 1)


def test_jacobian_properties(uniform_target, rng):
    p = rng.random((80, 2))
    d = build_diagram(p, vor(p) + 1e-5 * rng.standard_normal(80), uniform_target)
    assert d.masses.min() > 0
    H = mass_jacobian(d).toarray()
    assert np.abs(H.sum(axis=1)).max() <= 1e-10
    assert np.abs(H - H.T).max() <= 1e-10
    off = H - np.diag(np.diag(H))
    assert off.min() >= 0
    # connected adjacency with positive masses: kernel is exactly the constants
    w = np.linalg.eigvalsh(-H)
    assert abs(w[0]) < 1e-10 and w[1] > 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_jacobian_finite_differences(uniform_target, seed):
    r = np.random.default_rng(100 + seed)
    p = r.random((20, 2))
    phi = vor(p) + 0.01 * r.standard_normal(20)
    H = mass_jacobian(build_diagram(p, phi, uniform_target)).toarray()
    fd = central_jacobian(lambda x: build_diagram(p, x, uniform_target).masses, phi, 1e-6)
    assert np.abs(H - fd).max() / np.abs(H).max() <= 1e-5


def test_jacobian_nonuniform_density(rng):
    T = TargetDomain.create(ConvexPolygon.box(0, 0, 1, 1), lambda y: 1 + y[:, 0] * y[:, 1])
    p = rng.random((15, 2))
    phi = vor(p)
    H = mass_jacobian(build_diagram(p, phi, T)).toarray()
    fd = central_jacobian(lambda x: build_diagram(p, x, T).masses, phi, 1e-6)
    assert np.abs(H - fd).max() / np.abs(H).max() <= 1e-5


def test_symmetric_four_point_vertex(uniform_target):
    p = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    d = build_diagram(p, vor(p), uniform_target)
    dv = dual_vertices(d)
    assert len(dv) == 1
    assert np.allclose(dv[0].position, [0.5, 0.5])
    assert dv[0].sites == (0, 1, 2, 3)


def test_two_point_has_no_interior_vertex(uniform_target):
    d = build_diagram(TWO, vor(TWO), uniform_target)
    assert dual_vertices(d) == []
    assert len(boundary_vertices(d)) == 6


@pytest.mark.parametrize("seed", range(4))
def test_euler_relation(uniform_target, seed):
    p = np.random.default_rng(seed).random((50, 2))
    d = build_diagram(p, vor(p), uniform_target)
    assert euler_characteristic(d) == 1
    assert all(len(v.sites) >= 3 for v in dual_vertices(d))


def test_diagram_csv_roundtrip(tmp_path, uniform_target):
    c = random_cloud(uniform_target.boundary, 12, 1)
    d = build_diagram(c, vor(c.points), uniform_target)
    write_diagram_csv(d, tmp_path / "cells.csv", tmp_path / "masses.csv")
    lines = (tmp_path / "cells.csv").read_text().splitlines()
    assert lines[0] == "cell_id,vertex_index,x,y"
    assert (tmp_path / "masses.csv").read_text().splitlines()[0] == "cell_id,mass"
    cells = read_diagram_csv(tmp_path / "cells.csv")
    assert sorted(cells) == list(range(12))
    for i, poly in enumerate(d.cells):
        assert np.array_equal(cells[i], poly.vertices)
