"""End-to-end space-time projection: solve for the DOFs, report error diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import (assemble_source_matrix, assemble_spatial_mass,
                       assemble_temporal_gram, energy_error)
from .basis import TemporalGrid, bracket, simplex_quadrature, whitney_local
from .fields import SourceField
from .mesh import EdgeTable, Mesh, PointLocator
from .solver import SolveReport, SolverConfig, SolverNonConvergence, cg_solve


@dataclass(frozen=True)
class ProjectionProblem:
    mesh: Mesh
    edge_table: EdgeTable
    grid: TemporalGrid
    source: SourceField
    space_quad_order: int = 4
    time_quad_points: int = 2
    outside_policy: str = "zero"
    solver: SolverConfig = field(default_factory=SolverConfig)
    threads: int = 1
    allow_nonconverged: bool = False


@dataclass(frozen=True)
class ProjectionResult:
    dofs: np.ndarray          # (M, N)
    report: SolveReport
    error: float              # energy-weighted squared error of the projection
    source_energy: float
    relative_error: float     # sqrt(error / source_energy), 0 for a zero source
    outside_points: int
    mass_nnz: int             # stored entries of the spatial mass matrix


def project(problem: ProjectionProblem) -> ProjectionResult:
    """Minimize the energy-weighted space-time error over the edge-element x hat space."""
    mesh, edge_table, grid = problem.mesh, problem.edge_table, problem.grid
    quad = simplex_quadrature(mesh.dim, problem.space_quad_order)
    a = assemble_spatial_mass(mesh, edge_table, quad=quad, threads=problem.threads)
    b = assemble_temporal_gram(grid)
    c, outside = assemble_source_matrix(
        mesh, edge_table, grid, problem.source, space_quad=quad,
        time_quad_points=problem.time_quad_points, policy=problem.outside_policy,
        threads=problem.threads)
    dofs, report = cg_solve(a, b, c, problem.solver)
    if not report.converged and not problem.allow_nonconverged:
        raise SolverNonConvergence(report)
    err, source_energy, _ = energy_error(
        mesh, edge_table, grid, problem.source, dofs, space_quad=quad,
        time_quad_points=problem.time_quad_points, policy=problem.outside_policy,
        threads=problem.threads)
    err, source_energy = float(err), float(source_energy)
    relative = math.sqrt(err / source_energy) if source_energy > 0.0 else 0.0
    return ProjectionResult(dofs=dofs, report=report, error=err,
                            source_energy=source_energy, relative_error=relative,
                            outside_points=outside, mass_nnz=int(a.nnz))


def error_norm(mesh: Mesh, edge_table: EdgeTable, grid: TemporalGrid, source: SourceField,
               dofs: np.ndarray, space_quad_order: int = 4, time_quad_points: int = 2,
               policy: str = "zero", threads: int = 1) -> tuple[float, float]:
    """Energy-weighted squared distance between a trial DOF field and the source.

    Returns (error, source_energy); source_energy normalizes the error so the
    zero trial field scores exactly source_energy.
    """
    quad = simplex_quadrature(mesh.dim, space_quad_order)
    err, source_energy, _ = energy_error(mesh, edge_table, grid, source, dofs,
                                         space_quad=quad, time_quad_points=time_quad_points,
                                         policy=policy, threads=threads)
    return err, source_energy


def _locate_whitney(dofs, mesh, edge_table, locator, x, what: str):
    loc = locator.locate(x)
    if loc.status == "outside":
        point = tuple(float(c) for c in np.atleast_1d(x))
        raise ValueError(f"{what} {point} is outside the target mesh")
    e = loc.element
    grads = locator.element_gradients(e)
    w = whitney_local(mesh.dim, grads, edge_table.element_signs[e],
                      loc.barycentric[None, :])[0]
    return w, dofs[edge_table.element_edges[e]]


def eval_projected(dofs: np.ndarray, mesh: Mesh, edge_table: EdgeTable,
                   locator: PointLocator, grid: TemporalGrid, x, t: float) -> np.ndarray:
    """Evaluate the projected field at one space-time point."""
    t0, t1 = grid.span
    if t < t0 or t > t1:
        raise ValueError(f"t={t} outside the grid span [{t0}, {t1}]")
    w, rows = _locate_whitney(dofs, mesh, edge_table, locator, x, "point")
    k, theta = bracket(grid, t)
    coeff = rows[:, k] * (1.0 - theta) + rows[:, k + 1] * theta
    return coeff @ w


def probe_timeseries(dofs: np.ndarray, mesh: Mesh, edge_table: EdgeTable,
                     locator: PointLocator, grid: TemporalGrid, x,
                     samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniformly sample the projected field at a probe point over the grid span.

    Returns (times (S,), values (S, dim)), CSV-ready.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    t0, t1 = grid.span
    w, rows = _locate_whitney(dofs, mesh, edge_table, locator, x, "probe point")
    times = np.linspace(t0, t1, samples)
    k, theta = bracket(grid, times)
    coeff = rows[:, k] * (1.0 - theta)[None, :] + rows[:, k + 1] * theta[None, :]
    return times, coeff.T @ w
