"""Kronecker operator, conjugate-gradient solve, dense reference solve."""
import numpy as np
import pytest

from stgp import (SolverConfig, TemporalGrid, apply_operator, assemble_spatial_mass,
                  assemble_temporal_gram, build_edge_table, cg_solve, dense_oracle_solve)
from stgp.assembly import TriDiagMatrix
from stgp.solver import KroneckerOperator, SolverNonConvergence

from conftest import jittered_mesh, random_grid


def tridiag_from_dense(dense: np.ndarray) -> TriDiagMatrix:
    return TriDiagMatrix(diag=np.diag(dense).copy(),
                         off=np.diag(dense, 1).copy())


def random_spd_tridiag(rng, n: int) -> TriDiagMatrix:
    grid = random_grid(rng, n)
    return assemble_temporal_gram(grid)


def assembled_pair(rng, n_time=4):
    mesh = jittered_mesh("unit-square-tri", 2, rng)
    table = build_edge_table(mesh)
    a = assemble_spatial_mass(mesh, table)
    b = random_spd_tridiag(rng, n_time)
    return a, b


class TestApplyOperator:
    def test_identity_factors(self):
        a = np.eye(3)
        b = tridiag_from_dense(np.eye(2))
        x = np.arange(6.0).reshape(3, 2)
        assert np.array_equal(apply_operator(a, b, x), x)

    def test_matches_dense_kronecker(self):
        rng = np.random.default_rng(12)
        a = rng.standard_normal((3, 3))
        a = a @ a.T + 3 * np.eye(3)
        b_dense = np.array([[2.0, 0.5], [0.5, 1.0]])
        b = tridiag_from_dense(b_dense)
        x = rng.standard_normal((3, 2))
        y = apply_operator(a, b, x)
        kron = np.kron(b_dense.T, a)
        expected = (kron @ x.reshape(-1, order="F")).reshape(3, 2, order="F")
        assert np.max(np.abs(y - expected)) < 1e-13

    def test_zero_maps_to_zero(self):
        rng = np.random.default_rng(1)
        a, b = assembled_pair(rng)
        x = np.zeros((a.shape[0], b.n))
        assert np.all(apply_operator(a, b, x) == 0.0)

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(1)
        a, b = assembled_pair(rng)
        with pytest.raises(ValueError, match="shape"):
            apply_operator(a, b, np.zeros((3, 3)))

    def test_symmetry_and_positivity_in_frobenius_inner_product(self):
        rng = np.random.default_rng(5)
        a, b = assembled_pair(rng)
        for _ in range(10):
            x = rng.standard_normal((a.shape[0], b.n))
            y = rng.standard_normal((a.shape[0], b.n))
            lhs = float(np.sum(apply_operator(a, b, x) * y))
            rhs = float(np.sum(x * apply_operator(a, b, y)))
            assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)
            assert float(np.sum(apply_operator(a, b, x) * x)) > 0.0

    def test_kronecker_diagonal_is_outer_product(self):
        rng = np.random.default_rng(2)
        a, b = assembled_pair(rng)
        op = KroneckerOperator(a, b)
        kron = np.kron(b.to_dense().T, a.toarray())
        assert np.allclose(op.diagonal().reshape(-1, order="F"), np.diag(kron), atol=1e-15)


class TestDenseOracle:
    def test_scalar_case(self):
        a = np.array([[2.0]])
        b = tridiag_from_dense(np.array([[3.0]]))
        c = np.array([[12.0]])
        assert np.allclose(dense_oracle_solve(a, b, c), [[2.0]])

    def test_identity_factors_return_c(self):
        rng = np.random.default_rng(3)
        c = rng.standard_normal((4, 3))
        a = np.eye(4)
        b = tridiag_from_dense(np.eye(3))
        assert np.max(np.abs(dense_oracle_solve(a, b, c) - c)) < 1e-14

    def test_residual_of_random_spd_instance(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((4, 4))
        a = a @ a.T + 4 * np.eye(4)
        b_dense = np.diag([2.0, 1.5, 1.0]) + np.diag([0.3, 0.2], 1) + np.diag([0.3, 0.2], -1)
        b = tridiag_from_dense(b_dense)
        c = rng.standard_normal((4, 3))
        x = dense_oracle_solve(a, b, c)
        residual = a @ x @ b_dense - c
        assert np.max(np.abs(residual)) < 1e-12

    def test_size_guard(self):
        a = np.eye(60)
        b = tridiag_from_dense(np.eye(40))
        with pytest.raises(ValueError, match="2000"):
            dense_oracle_solve(a, b, np.zeros((60, 40)))

    def test_singular_kronecker_raises(self):
        a = np.zeros((2, 2))
        b = tridiag_from_dense(np.eye(2))
        with pytest.raises(np.linalg.LinAlgError):
            dense_oracle_solve(a, b, np.ones((2, 2)))


class TestConjugateGradient:
    def test_manufactured_right_hand_side(self):
        rng = np.random.default_rng(6)
        a, b = assembled_pair(rng)
        x_true = rng.standard_normal((a.shape[0], b.n))
        c = apply_operator(a, b, x_true)
        x, report = cg_solve(a, b, c)
        assert report.converged
        assert np.linalg.norm(x - x_true) / np.linalg.norm(x_true) < 1e-8

    def test_zero_rhs_returns_zero_in_zero_iterations(self):
        rng = np.random.default_rng(7)
        a, b = assembled_pair(rng)
        x, report = cg_solve(a, b, np.zeros((a.shape[0], b.n)))
        assert np.all(x == 0.0)
        assert report.iterations == 0
        assert report.converged

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(8)
        for trial in range(5):
            a, b = assembled_pair(rng, n_time=3 + trial % 3)
            c = rng.standard_normal((a.shape[0], b.n))
            x, report = cg_solve(a, b, c)
            x_ref = dense_oracle_solve(a, b, c)
            assert report.converged
            assert np.linalg.norm(x - x_ref) / np.linalg.norm(x_ref) <= 1e-8

    def test_converged_flag_backed_by_true_residual(self):
        rng = np.random.default_rng(9)
        a, b = assembled_pair(rng)
        c = rng.standard_normal((a.shape[0], b.n))
        config = SolverConfig(tol=1e-12)
        x, report = cg_solve(a, b, c, config)
        residual = np.linalg.norm(apply_operator(a, b, x) - c) / np.linalg.norm(c)
        assert report.converged
        assert residual <= config.tol
        assert abs(report.relative_residual - residual) < 1e-15

    def test_nonconvergence_reported_not_raised(self):
        rng = np.random.default_rng(10)
        a, b = assembled_pair(rng)
        c = rng.standard_normal((a.shape[0], b.n))
        x, report = cg_solve(a, b, c, SolverConfig(tol=1e-14, max_iterations=2))
        assert not report.converged
        assert report.iterations == 2
        assert np.all(np.isfinite(x))

    def test_deterministic_given_inputs(self):
        rng = np.random.default_rng(11)
        a, b = assembled_pair(rng)
        c = rng.standard_normal((a.shape[0], b.n))
        x1, _ = cg_solve(a, b, c)
        x2, _ = cg_solve(a, b, c)
        assert np.array_equal(x1, x2)

    def test_jacobi_never_slower_on_fixture_set(self):
        rng = np.random.default_rng(13)
        for contrast in (1.0, 100.0, 10000.0):
            mesh = jittered_mesh("unit-square-tri", 2, rng, mu_range=(1.0, contrast))
            table = build_edge_table(mesh)
            a = assemble_spatial_mass(mesh, table)
            b = random_spd_tridiag(rng, 4)
            c = rng.standard_normal((a.shape[0], b.n))
            _, rep_jacobi = cg_solve(a, b, c, SolverConfig(preconditioner="jacobi"))
            _, rep_none = cg_solve(a, b, c, SolverConfig(preconditioner="none"))
            assert rep_jacobi.converged and rep_none.converged
            assert rep_jacobi.iterations <= rep_none.iterations

    def test_warm_start_accepted(self):
        rng = np.random.default_rng(14)
        a, b = assembled_pair(rng)
        x_true = rng.standard_normal((a.shape[0], b.n))
        c = apply_operator(a, b, x_true)
        x, report = cg_solve(a, b, c, SolverConfig(initial_guess=x_true))
        assert report.iterations == 0
        assert report.converged

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(tol=0.0)
        with pytest.raises(ValueError):
            SolverConfig(max_iterations=0)
        with pytest.raises(ValueError):
            SolverConfig(preconditioner="ilu")

    def test_nonconvergence_exception_carries_report(self):
        rng = np.random.default_rng(15)
        a, b = assembled_pair(rng)
        c = rng.standard_normal((a.shape[0], b.n))
        _, report = cg_solve(a, b, c, SolverConfig(tol=1e-14, max_iterations=1))
        exc = SolverNonConvergence(report)
        assert exc.report is report
        assert "did not converge" in str(exc)
