"""Matrix-free conjugate-gradient solve of the Kronecker-structured projection system.

The normal equations A X B = C are solved through the identity
vec(A X B) = (B^T kron A) vec(X) with column-major vectorization; the Kronecker
matrix itself is only materialized by the small dense reference solver.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import TriDiagMatrix

DENSE_ORACLE_LIMIT = 2000


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10                 # relative Frobenius residual
    max_iterations: int | None = None  # default 10 * M * N
    preconditioner: str = "jacobi"     # 'jacobi' | 'none'
    initial_guess: np.ndarray | None = None  # warm start; zero when None

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must lie in (0, 1)")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.preconditioner not in ("jacobi", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    wall_time: float
    preconditioner: str


class SolverNonConvergence(RuntimeError):
    def __init__(self, report: SolveReport):
        super().__init__(
            f"conjugate gradient did not converge in {report.iterations} iterations"
            f" (relative residual {report.relative_residual:.3e})"
        )
        self.report = report


def _as_operator(a):
    if sp.issparse(a):
        return a
    return np.asarray(a, dtype=float)


class KroneckerOperator:
    """Applies the SPD operator X -> A X B without forming the Kronecker product."""

    def __init__(self, a, b: TriDiagMatrix):
        self.a = _as_operator(a)
        self.b = b
        self.shape = (self.a.shape[0], b.n)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.b.right_multiply(self.a @ x)

    def diagonal(self) -> np.ndarray:
        """Diagonal of B^T kron A reshaped to (M, N): outer product of the diagonals."""
        diag_a = self.a.diagonal() if sp.issparse(self.a) else np.diag(self.a)
        return np.outer(diag_a, self.b.diag)


def apply_operator(a, b: TriDiagMatrix, x: np.ndarray) -> np.ndarray:
    """Y = A X B, identical to the Kronecker matrix acting on the column-major vec(X)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (a.shape[0], b.n):
        raise ValueError(f"X must have shape {(a.shape[0], b.n)}, got {x.shape}")
    return KroneckerOperator(a, b).apply(x)


def _frob_inner(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.einsum("ij,ij->", x, y))


def cg_solve(a, b: TriDiagMatrix, c: np.ndarray,
             config: SolverConfig | None = None) -> tuple[np.ndarray, SolveReport]:
    """Conjugate gradients on the Kronecker system, Frobenius inner products throughout.

    Deterministic: fixed zero initial guess (unless a warm start is supplied),
    sequential recurrence, and a recomputed true residual backing the converged
    flag. Non-convergence returns the best iterate with converged=False.
    """
    if config is None:
        config = SolverConfig()
    op = KroneckerOperator(a, b)
    c = np.asarray(c, dtype=float)
    if c.shape != op.shape:
        raise ValueError(f"C must have shape {op.shape}, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("C must be finite")

    start = time.perf_counter()
    norm_c = float(np.linalg.norm(c))
    if norm_c == 0.0:
        return np.zeros_like(c), SolveReport(0, 0.0, True, time.perf_counter() - start,
                                             config.preconditioner)

    max_iters = config.max_iterations
    if max_iters is None:
        max_iters = 10 * op.shape[0] * op.shape[1]
    if config.preconditioner == "jacobi":
        inv_diag = 1.0 / op.diagonal()
        precondition = lambda r: r * inv_diag
    else:
        precondition = lambda r: r

    if config.initial_guess is not None:
        x = np.array(config.initial_guess, dtype=float)
        if x.shape != op.shape:
            raise ValueError("initial guess shape mismatch")
        r = c - op.apply(x)
    else:
        x = np.zeros_like(c)
        r = c.copy()

    iterations = 0
    threshold = config.tol * norm_c
    while iterations < max_iters:
        # Inner CG loop on the recurrence residual.
        z = precondition(r)
        d = z.copy()
        rho = _frob_inner(r, z)
        while iterations < max_iters and np.sqrt(_frob_inner(r, r)) > threshold:
            q = op.apply(d)
            alpha = rho / _frob_inner(d, q)
            x += alpha * d
            r -= alpha * q
            z = precondition(r)
            rho_new = _frob_inner(r, z)
            d = z + (rho_new / rho) * d
            rho = rho_new
            iterations += 1
        # Confirm with the true residual; restart if drift left it above tolerance.
        r = c - op.apply(x)
        true_norm = float(np.linalg.norm(r))
        if true_norm <= threshold or iterations >= max_iters:
            break

    rel = true_norm / norm_c
    report = SolveReport(iterations=iterations, relative_residual=rel,
                         converged=rel <= config.tol,
                         wall_time=time.perf_counter() - start,
                         preconditioner=config.preconditioner)
    return x, report


def dense_oracle_solve(a, b: TriDiagMatrix, c: np.ndarray) -> np.ndarray:
    """Reference direct solve: materialize B^T kron A, factor, reshape column-major.

    Guarded to small systems; meant for verification, not production paths.
    """
    c = np.asarray(c, dtype=float)
    m, n = c.shape
    if m * n > DENSE_ORACLE_LIMIT:
        raise ValueError(f"dense oracle limited to M*N <= {DENSE_ORACLE_LIMIT}, got {m * n}")
    a_dense = a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)
    kron = np.kron(b.to_dense().T, a_dense)
    vec_x = np.linalg.solve(kron, c.reshape(-1, order="F"))
    return vec_x.reshape((m, n), order="F")
