#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
一维有限元测试
"""

import sys
from fractions import Fraction as F
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

# 添加项目根目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from src.experiments.benchmarks import exact_poisson_solve_pwpoly, u_bar_polynomial
from src.multibang.errors import ArgumentError, SolverError
from src.multibang.penalty import H_gamma_array, MultibangConfig
from src.numerics.fem1d import (
    BandedSystem,
    Mesh1D,
    NodalField,
    assemble_full_mass,
    assemble_mass,
    assemble_stiffness,
    l1_error,
    l2_error_sq,
    l2_error_sq_controls,
    load_vector,
    solve_dirichlet,
)
from src.numerics.piecewise_poly import PiecewisePolynomial


class TestMesh:
    """网格"""

    def test_from_h(self):
        mesh = Mesh1D.from_h(0.25)
        assert mesh.n_elements == 4
        assert mesh.n_interior == 3
        assert mesh.h_exact == F(1, 4)
        np.testing.assert_allclose(mesh.nodes, [0, 0.25, 0.5, 0.75, 1.0])

    @pytest.mark.parametrize("h", [0.3, 0.0, -0.5, 1.0])
    def test_invalid_h(self, h):
        with pytest.raises(ArgumentError):
            Mesh1D.from_h(h)

    def test_too_coarse(self):
        with pytest.raises(ArgumentError):
            Mesh1D(1)


class TestNodalField:
    """节点场"""

    def test_shape_checked(self):
        with pytest.raises(ArgumentError):
            NodalField(Mesh1D(4), np.zeros(4))

    def test_mesh_mismatch(self):
        with pytest.raises(ArgumentError):
            NodalField.zeros(Mesh1D(4)) + NodalField.zeros(Mesh1D(5))

    def test_from_interior(self):
        field = NodalField.from_interior(Mesh1D(4), np.array([1.0, 2.0, 3.0]), boundary=(5.0, 6.0))
        np.testing.assert_array_equal(field.values, [5.0, 1.0, 2.0, 3.0, 6.0])
        np.testing.assert_array_equal(field.interior, [1.0, 2.0, 3.0])

    def test_inner_is_exact(self):
        mesh = Mesh1D(8)
        one = NodalField.constant(mesh, 1.0)
        x = NodalField.interpolate(mesh, lambda t: t)
        assert one.norm_sq() == pytest.approx(1.0, abs=1e-14)
        assert x.norm_sq() == pytest.approx(1.0 / 3.0, abs=1e-14)
        assert one.inner(x) == pytest.approx(0.5, abs=1e-14)

    def test_eval_array(self):
        field = NodalField.interpolate(Mesh1D(4), lambda t: t * t)
        assert field.eval_array(np.array([0.125]))[0] == pytest.approx(0.5 * 0.0625)


class TestAssembly:
    """矩阵组装"""

    @pytest.mark.parametrize("n", [2, 3, 17])
    def test_symmetric(self, n):
        mesh = Mesh1D(n)
        for system in (assemble_stiffness(mesh), assemble_mass(mesh)):
            a = system.to_sparse()
            assert abs(a - a.T).max() == 0.0

    def test_stiffness_entries(self):
        a = assemble_stiffness(Mesh1D(4)).to_sparse().toarray()
        np.testing.assert_allclose(a, 4.0 * np.array([[2, -1, 0], [-1, 2, -1], [0, -1, 2]]))

    def test_full_mass_row_sums(self):
        mesh = Mesh1D(10)
        row_sums = np.asarray(assemble_full_mass(mesh).sum(axis=1)).ravel()
        assert row_sums.sum() == pytest.approx(1.0)
        assert row_sums[0] == pytest.approx(0.5 * mesh.h)

    def test_load_vector_of_one(self):
        mesh = Mesh1D(10)
        np.testing.assert_allclose(load_vector(mesh, PiecewisePolynomial.constant(1)), mesh.h, rtol=1e-14)


class TestBandedSystem:
    """带状系统"""

    def test_matches_sparse_solve(self):
        rng = np.random.default_rng(3)
        n = 40
        diagonals = [rng.uniform(-1, 1, n - 2), rng.uniform(-1, 1, n - 1), rng.uniform(5, 6, n),
                     rng.uniform(-1, 1, n - 1)]
        matrix = sp.diags(diagonals, [-2, -1, 0, 1], format="csr")
        b = rng.normal(size=n)
        system = BandedSystem.from_sparse(matrix, b)
        assert system.bandwidth == (2, 1)
        x = system.solve()
        np.testing.assert_allclose(x, spsolve(matrix.tocsc(), b), rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(system.matvec(x), b, atol=1e-12)

    def test_singular(self):
        matrix = sp.csr_matrix(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]))
        with pytest.raises(SolverError):
            BandedSystem.from_sparse(matrix).solve(np.ones(3))

    def test_missing_rhs(self):
        system = assemble_stiffness(Mesh1D(4))
        with pytest.raises(ArgumentError):
            system.solve()
        with pytest.raises(ArgumentError):
            system.solve(np.ones(5))


class TestPoisson:
    """Poisson求解"""

    @pytest.mark.parametrize("n", [2, 10, 100])
    def test_nodal_exactness_constant_load(self, n):
        mesh = Mesh1D(n)
        y = solve_dirichlet(mesh, load_vector(mesh, PiecewisePolynomial.constant(1)))
        x = mesh.nodes
        np.testing.assert_allclose(y.values, 0.5 * x * (1 - x), atol=1e-12)

    @pytest.mark.parametrize("n", [2, 10, 100])
    def test_nodal_exactness_linear_load(self, n):
        mesh = Mesh1D(n)
        y = solve_dirichlet(mesh, load_vector(mesh, PiecewisePolynomial.polynomial([0, 1])))
        x = mesh.nodes
        np.testing.assert_allclose(y.values, (x - x ** 3) / 6.0, atol=1e-12)

    def test_solution_operator_self_adjoint(self):
        mesh = Mesh1D(64)
        rng = np.random.default_rng(5)
        stiffness = assemble_stiffness(mesh)
        mass = assemble_mass(mesh).to_sparse()
        for _ in range(10):
            a = rng.normal(size=mesh.n_interior)
            b = rng.normal(size=mesh.n_interior)
            ka = stiffness.solve(mass @ a)
            kb = stiffness.solve(mass @ b)
            assert ka @ (mass @ b) == pytest.approx(a @ (mass @ kb), abs=1e-12)

    @pytest.mark.parametrize("n", [2, 10, 100])
    def test_nodal_exactness_piecewise_load(self, n):
        mesh = Mesh1D(n)
        u_bar = u_bar_polynomial()
        w = exact_poisson_solve_pwpoly(u_bar)
        y = solve_dirichlet(mesh, load_vector(mesh, u_bar))
        np.testing.assert_allclose(y.values, w.eval_array(mesh.nodes), atol=1e-11)

    def test_rhs_length(self):
        with pytest.raises(ArgumentError):
            solve_dirichlet(Mesh1D(4), np.ones(4))

    def test_second_order_in_l2(self):
        u_bar = u_bar_polynomial()
        w = exact_poisson_solve_pwpoly(u_bar)
        errors = []
        for n in (40, 80):
            mesh = Mesh1D(n)
            errors.append(np.sqrt(l2_error_sq(solve_dirichlet(mesh, load_vector(mesh, u_bar)), w)))
        assert np.log2(errors[0] / errors[1]) >= 1.9


class TestErrorNorms:
    """误差范数"""

    def test_l2_of_u_bar(self):
        err = l2_error_sq(NodalField.zeros(Mesh1D(10)), u_bar_polynomial())
        assert err == pytest.approx(38 / 27, abs=1e-13)

    def test_l2_exact_for_interpolated_linear(self):
        mesh = Mesh1D(6)
        field = NodalField.interpolate(mesh, lambda x: 3 * x - 1)
        assert l2_error_sq(field, PiecewisePolynomial.polynomial([-1, 3])) == pytest.approx(0.0, abs=1e-24)

    def test_l1_with_interior_root(self):
        mesh = Mesh1D(7)
        shifted = PiecewisePolynomial.polynomial([F(-1, 2), 1])
        assert l1_error(NodalField.zeros(mesh), shifted) == pytest.approx(0.25, abs=1e-12)
        half = PiecewisePolynomial.constant(F(1, 2))
        assert l1_error(NodalField.interpolate(mesh, lambda x: x), half) == pytest.approx(0.25, abs=1e-12)

    def test_l1_two_roots_in_one_cell(self):
        # q = (x − a)(x − b)，∫|q| = ∫q + 2·(b − a)³/6
        a, b = F(47, 100), F(48, 100)
        q = PiecewisePolynomial.polynomial([a * b, -(a + b), 1])
        expected = F(1, 3) - (a + b) / 2 + a * b + (b - a) ** 3 / 3
        assert l1_error(NodalField.zeros(Mesh1D(2)), q) == pytest.approx(float(expected), abs=1e-10)

    def test_l1_linear_field_against_cubic(self):
        # x − x³ 与 0 的差在 (0,1) 内无根；与 x/4 的差在 √3/2 处变号
        cubic = PiecewisePolynomial.polynomial([0, 1, 0, -1])
        mesh = Mesh1D(2)
        assert l1_error(NodalField.zeros(mesh), cubic) == pytest.approx(0.25, abs=1e-12)
        field = NodalField.interpolate(mesh, lambda x: x / 4)
        # ∫|x³ − 3x/4| = 9/64 + 1/64
        assert l1_error(field, cubic) == pytest.approx(5 / 32, abs=1e-12)

    def test_l1_of_u_bar(self):
        # ∫|ū| = 2·(4/27 + 6/27 + 3/27)
        err = l1_error(NodalField.zeros(Mesh1D(9)), u_bar_polynomial())
        assert err == pytest.approx(26 / 27, abs=1e-12)

    def test_control_error_against_midpoint_sum(self):
        cfg = MultibangConfig(gamma=0.5)
        mesh = Mesh1D(13)
        p_h = NodalField.interpolate(mesh, lambda x: 4.5 * np.sin(2 * np.pi * x))
        u_bar = u_bar_polynomial()
        exact = l2_error_sq_controls(p_h, cfg, u_bar)

        n = 2_000_000
        x = (np.arange(n) + 0.5) / n
        diff = H_gamma_array(cfg, p_h.eval_array(x)) - u_bar.eval_array(x)
        assert exact == pytest.approx(np.mean(diff * diff), abs=1e-4)
