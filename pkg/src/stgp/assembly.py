"""Assembly of the projection matrices: spatial mass A, temporal Gram B, source matrix C.

C (and the error integrals that reuse the same sweep) is stored dense, column =
time step; vectorization is column-major throughout. Parallel assembly
partitions elements into fixed-size chunks merged in chunk order, so results
are bitwise identical for any worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import (QuadratureRule, TemporalGrid, gauss_unit_interval, simplex_quadrature,
                    whitney_local)
from .fields import SourceField
from .mesh import EdgeTable, Mesh, barycentric_transforms, signed_volumes

CHUNK_ELEMENTS = 64


@dataclass(frozen=True)
class TriDiagMatrix:
    """Symmetric tridiagonal matrix stored as diagonal and off-diagonal arrays."""

    diag: np.ndarray
    off: np.ndarray

    def __post_init__(self):
        diag = np.ascontiguousarray(np.asarray(self.diag, dtype=np.float64))
        off = np.ascontiguousarray(np.asarray(self.off, dtype=np.float64))
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "off", off)
        if off.shape != (max(len(diag) - 1, 0),):
            raise ValueError("off-diagonal must have one entry fewer than the diagonal")
        diag.flags.writeable = False
        off.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.diag)

    def to_dense(self) -> np.ndarray:
        out = np.diag(self.diag)
        idx = np.arange(self.n - 1)
        out[idx, idx + 1] = self.off
        out[idx + 1, idx] = self.off
        return out

    def right_multiply(self, x: np.ndarray) -> np.ndarray:
        """x @ B for an (M, N) matrix x."""
        out = x * self.diag[None, :]
        out[:, :-1] += x[:, 1:] * self.off[None, :]
        out[:, 1:] += x[:, :-1] * self.off[None, :]
        return out


def assemble_temporal_gram(grid: TemporalGrid) -> TriDiagMatrix:
    """Gram matrix of the hat functions: tridiagonal with the classic h/3, h/6 pattern."""
    h = grid.intervals()
    diag = np.zeros(grid.n_steps)
    diag[:-1] += h / 3.0
    diag[1:] += h / 3.0
    return TriDiagMatrix(diag=diag, off=h / 6.0)


def _chunks(n_elements: int):
    return [range(start, min(start + CHUNK_ELEMENTS, n_elements))
            for start in range(0, n_elements, CHUNK_ELEMENTS)]


def _run_chunks(worker, n_elements: int, threads: int):
    """Map worker over element chunks; results always merge in chunk order."""
    chunks = _chunks(n_elements)
    if threads <= 1 or len(chunks) <= 1:
        return [worker(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, chunks))


def assemble_spatial_mass(mesh: Mesh, edge_table: EdgeTable,
                          quad: QuadratureRule | None = None,
                          threads: int = 1) -> sp.csr_matrix:
    """Permeability-weighted mass matrix of the Whitney edge basis (M x M, SPD).

    The integrand is quadratic in the barycentric coordinates, so the default
    order-4 rule makes every entry quadrature-exact.
    """
    if quad is None:
        quad = simplex_quadrature(mesh.dim, 4)
    if quad.dim != mesh.dim or quad.order < 2:
        raise ValueError("spatial mass assembly needs a simplex rule of order >= 2")

    _, _, grads = barycentric_transforms(mesh)
    jac = np.abs(signed_volumes(mesh)) / (quad.weights.sum())
    lam = quad.points
    n_local = edge_table.element_edges.shape[1]

    def worker(chunk):
        rows, cols, vals = [], [], []
        for e in chunk:
            w = whitney_local(mesh.dim, grads[e], edge_table.element_signs[e], lam)  # (Q, nl, d)
            local = np.einsum("q,qid,qjd->ij", quad.weights, w, w) * (mesh.mu[e] * jac[e])
            local = np.triu(local) + np.triu(local, 1).T  # exact numeric symmetry
            ge = edge_table.element_edges[e]
            rows.append(np.repeat(ge, n_local))
            cols.append(np.tile(ge, n_local))
            vals.append(local.ravel())
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    parts = _run_chunks(worker, mesh.n_elements, threads)
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    m = edge_table.edge_count
    a = sp.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()
    a.sum_duplicates()
    return a


@dataclass(frozen=True)
class _TimeTable:
    """Temporal quadrature for all target intervals, split at interior source nodes."""

    points: np.ndarray        # (T,) quadrature times
    weights: np.ndarray       # (T,)
    hat_weighted: np.ndarray  # (T, N) hat values * weights, for source moments
    hat_values: np.ndarray    # (T, N) plain hat values, for evaluating trial fields


def build_time_table(grid: TemporalGrid, source: SourceField, n_points: int) -> _TimeTable:
    if not 1 <= n_points <= 6:
        raise ValueError("temporal quadrature uses 1..6 Gauss points per subinterval")
    gauss_points, gauss_weights = gauss_unit_interval(n_points)
    breakers = np.asarray(source.interior_time_nodes(), dtype=float)
    times = grid.times
    pts, wts, cols, hl, hr = [], [], [], [], []
    for j in range(grid.n_steps - 1):
        a, b = times[j], times[j + 1]
        inner = breakers[(breakers > a) & (breakers < b)]
        knots = np.concatenate([[a], np.sort(inner), [b]])
        for k in range(len(knots) - 1):
            lo, hi = knots[k], knots[k + 1]
            t = lo + gauss_points * (hi - lo)
            w = gauss_weights * (hi - lo)
            pts.append(t)
            wts.append(w)
            cols.append(np.full(len(t), j, dtype=int))
            hl.append((b - t) / (b - a))
            hr.append((t - a) / (b - a))
    points = np.concatenate(pts)
    weights = np.concatenate(wts)
    cols = np.concatenate(cols)
    hl = np.concatenate(hl)
    hr = np.concatenate(hr)

    hat_values = np.zeros((len(points), grid.n_steps))
    rows = np.arange(len(points))
    hat_values[rows, cols] = hl
    hat_values[rows, cols + 1] = hr
    return _TimeTable(points=points, weights=weights,
                      hat_weighted=hat_values * weights[:, None], hat_values=hat_values)


def _check_span(grid: TemporalGrid, source: SourceField) -> None:
    span = source.time_span()
    if span is None:
        return
    t0, t1 = grid.span
    slack = 1e-12 * max(abs(span[0]), abs(span[1]), span[1] - span[0])
    if t0 < span[0] - slack or t1 > span[1] + slack:
        raise ValueError(
            f"target grid span [{t0}, {t1}] is not inside the source span [{span[0]}, {span[1]}]"
        )


def _spacetime_sweep(mesh: Mesh, edge_table: EdgeTable, grid: TemporalGrid, source: SourceField,
                     space_quad: QuadratureRule, table: _TimeTable, policy: str,
                     threads: int, dofs: np.ndarray | None):
    """Shared traversal for the source matrix and the error/energy integrals.

    With dofs None, returns (C, outside_count). Otherwise returns
    (error_integral, source_energy, outside_count) for the trial field the
    dofs describe, using the identical quadrature.
    """
    _, _, grads = barycentric_transforms(mesh)
    jac = np.abs(signed_volumes(mesh)) / space_quad.weights.sum()
    lam = space_quad.points
    verts = mesh.nodes[mesh.elements]
    n_local = edge_table.element_edges.shape[1]
    m, n = edge_table.edge_count, grid.n_steps

    def worker(chunk):
        outside = 0
        if dofs is None:
            contrib = np.zeros((len(chunk) * n_local, n))
            rows_idx = np.zeros(len(chunk) * n_local, dtype=np.int64)
        else:
            err_acc = 0.0
            src_acc = 0.0
        for pos, e in enumerate(chunk):
            w = whitney_local(mesh.dim, grads[e], edge_table.element_signs[e], lam)  # (Q, nl, d)
            xq = lam @ verts[e]                                                      # (Q, d)
            scale = mesh.mu[e] * jac[e] * space_quad.weights                         # (Q,)
            if dofs is None:
                local = np.zeros((n_local, n))
            else:
                series = dofs[edge_table.element_edges[e]] @ table.hat_values.T      # (nl, T)
            for q in range(len(lam)):
                hs, inside = source.eval_time_batch(xq[q], table.points, policy=policy)
                if not inside:
                    outside += 1
                if dofs is None:
                    local += scale[q] * ((w[q] @ hs.T) @ table.hat_weighted)
                else:
                    ht = series.T @ w[q]                                             # (T, d)
                    diff = ht - hs
                    err_acc += 0.5 * scale[q] * float(table.weights @ np.einsum("td,td->t", diff, diff))
                    src_acc += 0.5 * scale[q] * float(table.weights @ np.einsum("td,td->t", hs, hs))
            if dofs is None:
                sl = slice(pos * n_local, (pos + 1) * n_local)
                contrib[sl] = local
                rows_idx[sl] = edge_table.element_edges[e]
        if dofs is None:
            return rows_idx, contrib, outside
        return err_acc, src_acc, outside

    parts = _run_chunks(worker, mesh.n_elements, threads)
    if dofs is None:
        c = np.zeros((m, n))
        outside = 0
        for rows_idx, contrib, out_count in parts:
            np.add.at(c, rows_idx, contrib)
            outside += out_count
        return c, outside
    err = sum(p[0] for p in parts)
    src = sum(p[1] for p in parts)
    outside = sum(p[2] for p in parts)
    return err, src, outside


def assemble_source_matrix(mesh: Mesh, edge_table: EdgeTable, grid: TemporalGrid,
                           source: SourceField, space_quad: QuadratureRule | None = None,
                           time_quad_points: int = 2, policy: str = "zero",
                           threads: int = 1) -> tuple[np.ndarray, int]:
    """Moments of the source field against every space-time basis function (M x N, dense).

    Each target interval is additionally split at interior source time nodes,
    so piecewise-linear-in-time sources integrate exactly and spatial
    quadrature is the only residual integration error.

    Returns (C, outside_point_count).
    """
    if space_quad is None:
        space_quad = simplex_quadrature(mesh.dim, 4)
    _check_span(grid, source)
    table = build_time_table(grid, source, time_quad_points)
    return _spacetime_sweep(mesh, edge_table, grid, source, space_quad, table, policy, threads, None)


def energy_error(mesh: Mesh, edge_table: EdgeTable, grid: TemporalGrid, source: SourceField,
                 dofs: np.ndarray, space_quad: QuadratureRule | None = None,
                 time_quad_points: int = 2, policy: str = "zero",
                 threads: int = 1) -> tuple[float, float, int]:
    """Energy-weighted error of a trial DOF matrix against the source, plus source energy.

    Uses the same space-time quadrature as assemble_source_matrix, so the
    consistency identities hold to machine precision.
    """
    if space_quad is None:
        space_quad = simplex_quadrature(mesh.dim, 4)
    _check_span(grid, source)
    dofs = np.asarray(dofs, dtype=float)
    if dofs.shape != (edge_table.edge_count, grid.n_steps):
        raise ValueError("dofs shape must be (edge count, time steps)")
    table = build_time_table(grid, source, time_quad_points)
    return _spacetime_sweep(mesh, edge_table, grid, source, space_quad, table, policy, threads, dofs)


# ---------------------------------------------------------------------------
# stgp-matrix dump format (debugging aid)


def write_matrix(matrix) -> str:
    """Dump a matrix in the stgp-matrix text format (sparse-sym, tridiag or dense)."""
    if isinstance(matrix, TriDiagMatrix):
        out = ["stgp-matrix 1", f"tridiag {matrix.n}"]
        out.append("diag " + " ".join(repr(float(v)) for v in matrix.diag))
        out.append("off " + " ".join(repr(float(v)) for v in matrix.off))
        return "\n".join(out) + "\n"
    if sp.issparse(matrix):
        coo = matrix.tocoo()
        keep = coo.row <= coo.col  # upper triangle carries the symmetric matrix
        out = ["stgp-matrix 1", f"sparse-sym {coo.shape[0]} {int(np.sum(keep))}"]
        order = np.lexsort((coo.col[keep], coo.row[keep]))
        rows, cols, vals = coo.row[keep][order], coo.col[keep][order], coo.data[keep][order]
        for r, c, v in zip(rows, cols, vals):
            out.append(f"{int(r)} {int(c)} {repr(float(v))}")
        return "\n".join(out) + "\n"
    dense = np.asarray(matrix, dtype=float)
    if dense.ndim != 2:
        raise ValueError("dense dump expects a 2-D array")
    out = ["stgp-matrix 1", f"dense {dense.shape[0]} {dense.shape[1]}"]
    for row in dense:
        out.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


def read_matrix(text: str):
    """Parse the stgp-matrix dump format back into a matrix object."""
    from .mesh import MeshFormatError, _LineReader, _parse_float, _parse_int

    rd = _LineReader(text)
    lineno, tokens = rd.next("header 'stgp-matrix 1'")
    if tokens != ["stgp-matrix", "1"]:
        raise MeshFormatError(lineno, "expected header 'stgp-matrix 1'")
    lineno, tokens = rd.next("matrix kind line")
    kind = tokens[0]
    if kind == "tridiag":
        n = _parse_int(tokens[1], lineno, "dimension")
        lineno, tokens = rd.next("'diag ...'")
        diag = np.array([_parse_float(t, lineno, "diag") for t in tokens[1:]])
        lineno, tokens = rd.next("'off ...'")
        off = np.array([_parse_float(t, lineno, "off") for t in tokens[1:]])
        rd.expect_done()
        if len(diag) != n:
            raise MeshFormatError(lineno, f"expected {n} diagonal entries")
        return TriDiagMatrix(diag=diag, off=off)
    if kind == "sparse-sym":
        n = _parse_int(tokens[1], lineno, "dimension")
        nnz = _parse_int(tokens[2], lineno, "entry count")
        rows, cols, vals = [], [], []
        for _ in range(nnz):
            lineno, tokens = rd.next("coordinate triplet")
            r = _parse_int(tokens[0], lineno, "row")
            c = _parse_int(tokens[1], lineno, "col")
            v = _parse_float(tokens[2], lineno, "value")
            rows.append(r)
            cols.append(c)
            vals.append(v)
            if r != c:  # mirror the stored upper triangle
                rows.append(c)
                cols.append(r)
                vals.append(v)
        rd.expect_done()
        return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    if kind == "dense":
        r = _parse_int(tokens[1], lineno, "rows")
        c = _parse_int(tokens[2], lineno, "cols")
        dense = np.zeros((r, c))
        for i in range(r):
            lineno, tokens = rd.next(f"dense row {i}")
            if len(tokens) != c:
                raise MeshFormatError(lineno, f"dense row {i} must hold {c} values")
            dense[i] = [_parse_float(t, lineno, "value") for t in tokens]
        rd.expect_done()
        return dense
    raise MeshFormatError(lineno, f"unknown matrix kind {kind!r}")
