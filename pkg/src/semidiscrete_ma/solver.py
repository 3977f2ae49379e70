"""Damped Newton solver for the discrete Monge-Ampere equation ``m(phi) = f``.

We minimise the convex dual energy

    E(phi) = integral_Y max_i (x_i . y - phi_i) g(y) dy + sum_i f_i phi_i,

whose gradient is ``f - m(phi)`` and whose Hessian is ``-H`` with ``H`` the
mass Jacobian from :mod:`laguerre`.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .laguerre import build_diagram, mass_jacobian

log = logging.getLogger(__name__)


@dataclass
class SolveSettings:
    tol_residual: float = 1e-10
    max_iters: int = 100
    epsilon0_factor: float = 0.5
    backtrack_factor: float = 0.5
    min_step: float = 1e-7

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        for name in ("epsilon0_factor", "backtrack_factor"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.max_iters < 0 or not self.min_step > 0:
            raise ValueError("bad iteration limits")


@dataclass
class SolveReport:
    iterations: int = 0
    final_residual_inf: float = float("inf")
    step_sizes: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    min_masses: list = field(default_factory=list)
    converged: bool = False

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "residual_inf", "step", "energy", "min_mass"])
            for k, r in enumerate(self.residuals):
                step = self.step_sizes[k - 1] if k > 0 else 0.0
                w.writerow([k, repr(r), repr(step), repr(self.energies[k]), repr(self.min_masses[k])])


class SolverError(RuntimeError):
    def __init__(self, message, report: SolveReport | None = None):
        super().__init__(message)
        self.report = report


def _target_masses(f):
    return np.asarray(getattr(f, "masses", f), dtype=float).ravel()


def _points(cloud):
    return np.asarray(getattr(cloud, "points", cloud), dtype=float).reshape(-1, 2)


def energy_of(diagram, f) -> float:
    return float(diagram.dual_integral + np.dot(_target_masses(f), diagram.phi))


def energy(cloud, phi, target, f) -> float:
    return energy_of(build_diagram(cloud, phi, target), f)


def gradient(cloud, phi, target, f) -> np.ndarray:
    d = build_diagram(cloud, phi, target)
    return _target_masses(f) - d.masses


def energy_hessian(cloud, phi, target) -> np.ndarray:
    """Dense Hessian of the energy, ``-dm/dphi`` (positive semidefinite)."""
    return -mass_jacobian(build_diagram(cloud, phi, target)).toarray()


def voronoi_potential(points) -> np.ndarray:
    p = _points(points)
    phi = 0.5 * (p ** 2).sum(axis=1)
    return phi - phi.mean()


def newton_direction(H, rhs) -> np.ndarray:
    """Solve ``H d = rhs`` on the mean-zero subspace (first unknown pinned)."""
    n = H.shape[0]
    if n == 1:
        return np.zeros(1)
    Hr = H[1:, 1:].tocsc()
    d = np.zeros(n)
    d[1:] = spla.spsolve(Hr, rhs[1:])
    if not np.all(np.isfinite(d)):
        raise np.linalg.LinAlgError("singular mass Jacobian")
    return d - d.mean()


def newton_loop(build: Callable, f, phi0, settings: SolveSettings, trace_path=None):
    """Shared damped Newton iteration.

    ``build(phi)`` returns a diagram exposing ``masses`` and
    ``dual_integral``; the Jacobian comes from :func:`mass_jacobian`.
    """
    f = _target_masses(f)
    if np.any(f <= 0):
        raise ValueError("all target masses must be positive")
    if abs(f.sum() - 1.0) > 1e-9:
        raise ValueError("target masses must sum to one")
    phi = np.asarray(phi0, dtype=float).copy()
    phi -= phi.mean()
    report = SolveReport()
    diag = build(phi)
    m = diag.masses
    if m.min() <= 0:
        raise SolverError("infeasible initialization", report)
    eps0 = settings.epsilon0_factor * min(f.min(), m.min())
    E = energy_of(diag, f)

    def record(E, r, m):
        report.energies.append(E)
        report.residuals.append(float(np.abs(r).max()))
        report.min_masses.append(float(m.min()))

    r = m - f
    record(E, r, m)
    try:
        for it in range(settings.max_iters + 1):
            rinf = float(np.abs(r).max())
            report.final_residual_inf = rinf
            if rinf <= settings.tol_residual:
                report.converged = True
                break
            if it == settings.max_iters:
                raise SolverError(f"no convergence in {settings.max_iters} iterations", report)
            H = mass_jacobian(diag)
            d = newton_direction(H, f - m)
            r2 = float(np.linalg.norm(r))
            e_tol = 1e-12 * (1.0 + abs(E))
            t = 1.0
            while True:
                cand = phi + t * d
                cand -= cand.mean()
                dc = build(cand)
                mc = dc.masses
                Ec = energy_of(dc, f)
                if (mc.min() >= eps0
                        and np.linalg.norm(mc - f) <= (1.0 - 0.5 * t) * r2
                        and Ec <= E + e_tol):
                    break
                t *= settings.backtrack_factor
                if t < settings.min_step:
                    raise SolverError("stalled", report)
            phi, diag, m, E = cand, dc, mc, Ec
            r = m - f
            report.iterations = it + 1
            report.step_sizes.append(t)
            record(E, r, m)
            log.debug("newton it=%d step=%.3g residual=%.3e", it + 1, t, np.abs(r).max())
    finally:
        if trace_path is not None:
            report.write_trace(trace_path)
    return phi, report, diag


def damped_newton(cloud, f, target, settings: SolveSettings | None = None, phi0=None,
                  trace_path=None, return_diagram: bool = False):
    """Mean-zero ``phi`` with ``|m(phi) - f|_inf <= tol``.

    Starts from the Voronoi potential ``|x_i|^2 / 2`` unless ``phi0`` is given.
    """
    settings = settings or SolveSettings()
    pts = _points(cloud)
    if phi0 is None:
        phi0 = voronoi_potential(pts)
    phi, report, diag = newton_loop(lambda p: build_diagram(pts, p, target), f, phi0, settings, trace_path)
    if return_diagram:
        return phi, report, diag
    return phi, report


def brute_force_solve(cloud, f, target, tol: float = 1e-11, max_sweeps: int = 20000) -> np.ndarray:
    """Independent oracle for N <= 4: nonlinear Gauss-Seidel with exact 1-D minimisation.

    Each sweep minimises the energy along one coordinate at a time by
    root-finding on its (monotone) partial derivative ``f_i - m_i``; diagrams are
    built with all-pairs clipping.
    """
    pts = _points(cloud)
    f = _target_masses(f)
    n = len(pts)
    if n > 4:
        raise ValueError("brute force oracle is limited to N <= 4")
    if n == 1:
        return np.zeros(1)

    def masses(phi):
        return build_diagram(pts, phi, target, method="naive").masses

    phi = voronoi_potential(pts)
    step = np.full(n, 0.1 * target.boundary.diameter ** 2)
    for _ in range(max_sweeps):
        for i in range(1, n):
            def excess(t):
                p = phi.copy()
                p[i] = t
                return masses(p)[i] - f[i]

            # excess is nonincreasing in t: bracket the root, then Brent
            lo, hi = phi[i] - step[i], phi[i] + step[i]
            while excess(lo) < 0:
                lo -= 2 * (hi - lo)
            while excess(hi) > 0:
                hi += 2 * (hi - lo)
            root = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
            step[i] = max(4.0 * abs(root - phi[i]), 1e-13)
            phi[i] = root
        if np.abs(masses(phi) - f).max() <= tol:
            break
    else:
        raise SolverError("brute force oracle did not converge")
    return phi - phi.mean()
