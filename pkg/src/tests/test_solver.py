#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
主动集求解器测试
"""

import itertools
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

# 添加项目根目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from src.experiments.benchmarks import build_example
from src.multibang import solver as solver_module
from src.multibang.errors import ArgumentError
from src.multibang.penalty import H_gamma_array, MultibangConfig, RegionLabel, subgradient_interval
from src.multibang.solver import (
    ActiveSetPartition,
    ProblemInstance,
    SolverState,
    active_set_solve,
    active_set_step,
    adjoint_from_state,
    assemble_kkt,
    classify_field,
    discrete_objective,
    gamma_continuation,
    initial_state,
    newton_step,
    optimality_residual,
    solve_partition,
    state_from_control,
    vi_residual,
)
from src.numerics.fem1d import Mesh1D, NodalField
from src.numerics.piecewise_poly import PiecewisePolynomial


@pytest.fixture(scope="module")
def example1():
    return build_example(1)


@pytest.fixture(scope="module")
def converged(example1):
    """算例1，h = 1e-3，γ 从 2^-3 延拓到 2^-6"""
    mesh = Mesh1D.from_h(1e-3)
    template = ProblemInstance(mesh, example1.cfg.with_gamma(2.0 ** -3), example1.z)
    results = gamma_continuation(template, [2.0 ** -k for k in range(3, 7)])
    return template.with_gamma(2.0 ** -6), results[-1]


def _random_target(rng) -> PiecewisePolynomial:
    """随机分段三次目标，有理断点"""
    interior = sorted({Fraction(int(k), 97) for k in rng.integers(1, 97, size=3)})
    breakpoints = [Fraction(0)] + interior + [Fraction(1)]
    pieces = [[Fraction(int(c), 4) for c in rng.integers(-40, 41, size=4)] for _ in breakpoints[:-1]]
    return PiecewisePolynomial.from_pieces(breakpoints, pieces)


def _state_with_adjoint(problem: ProblemInstance, p_interior: np.ndarray) -> SolverState:
    mesh = problem.mesh
    zeros = NodalField.zeros(mesh)
    p = NodalField.from_interior(mesh, p_interior)
    return SolverState(zeros, zeros, p, zeros, classify_field(problem.cfg, p), 0)


class TestPartition:
    """主动集划分"""

    def test_equality_and_digest(self):
        a = ActiveSetPartition(np.array([0, 1, 4, 8]))
        b = ActiveSetPartition([0, 1, 4, 8])
        c = ActiveSetPartition([0, 1, 5, 8])
        assert a == b and hash(a) == hash(b)
        assert a.digest() == b.digest()
        assert a != c
        assert a.n_changed(c) == 1

    def test_masks_and_summary(self):
        partition = ActiveSetPartition([4, 5, 5, 8])
        np.testing.assert_array_equal(partition.singular, [False, True, True, False])
        assert partition.summary() == {"Regular(3)": 1, "Singular(3,4)": 2, "Regular(5)": 1}
        assert partition.labels[1] == RegionLabel.singular(3)

    def test_validate(self):
        cfg = MultibangConfig(gamma=0.1)
        with pytest.raises(ArgumentError):
            ActiveSetPartition([0, 9]).validate(cfg, 2)
        with pytest.raises(ArgumentError):
            ActiveSetPartition([0, 1]).validate(cfg, 3)

    def test_classification_symmetry(self):
        cfg = MultibangConfig(gamma=0.25)
        mesh = Mesh1D(64)
        rng = np.random.default_rng(11)
        p = NodalField.from_interior(mesh, rng.uniform(-6, 6, mesh.n_interior))
        np.testing.assert_array_equal(classify_field(cfg, -p).codes, 8 - classify_field(cfg, p).codes)


class TestStateEquations:
    """状态与伴随方程"""

    def test_constant_control(self):
        mesh = Mesh1D(16)
        problem = ProblemInstance(mesh, MultibangConfig(gamma=0.5), PiecewisePolynomial.zero())
        y = state_from_control(problem, NodalField.constant(mesh, 1.0))
        x = mesh.nodes
        np.testing.assert_allclose(y.values, 0.5 * x * (1 - x), atol=1e-13)

    def test_adjoint_of_zero_state(self):
        mesh = Mesh1D(16)
        problem = ProblemInstance(mesh, MultibangConfig(gamma=0.5), PiecewisePolynomial.constant(1))
        p = adjoint_from_state(problem, NodalField.zeros(mesh))
        x = mesh.nodes
        np.testing.assert_allclose(p.values, 0.5 * x * (1 - x), atol=1e-13)

    def test_boundary_control(self, example1):
        problem = ProblemInstance(Mesh1D(8), example1.cfg.with_gamma(0.1), example1.z)
        assert problem.boundary_control == 0.0
        assert initial_state(problem).u.values[0] == 0.0

    def test_with_gamma_reuses_load(self, example1):
        problem = ProblemInstance(Mesh1D(8), example1.cfg.with_gamma(0.1), example1.z)
        other = problem.with_gamma(0.05)
        assert other.target_load is problem.target_load
        assert other.cfg.gamma == 0.05


class TestKKT:
    """KKT系统"""

    def test_dimension_and_bandwidth(self, example1):
        mesh = Mesh1D(8)
        problem = ProblemInstance(mesh, example1.cfg.with_gamma(0.1), example1.z)
        system = assemble_kkt(problem, ActiveSetPartition(np.full(mesh.n_interior, 4)))
        assert system.dimension == 4 * mesh.n_interior
        assert system.bandwidth == (4, 5)

    def test_requires_gamma(self, example1):
        problem = ProblemInstance(Mesh1D(8), example1.cfg, example1.z)
        with pytest.raises(ArgumentError):
            assemble_kkt(problem, ActiveSetPartition(np.full(7, 4)))

    def test_all_singular(self, example1):
        gamma = 0.1
        mesh = Mesh1D(20)
        problem = ProblemInstance(mesh, example1.cfg.with_gamma(gamma), example1.z)
        state = solve_partition(problem, ActiveSetPartition(np.full(mesh.n_interior, 5)))
        np.testing.assert_array_equal(state.lam.interior, 0.5)
        np.testing.assert_allclose(state.u.interior, (state.p.interior - 1.0) / gamma, atol=1e-9)

    def test_regular_nodes_pinned(self, example1):
        mesh = Mesh1D(20)
        problem = ProblemInstance(mesh, example1.cfg.with_gamma(0.1), example1.z)
        codes = np.where(np.arange(mesh.n_interior) % 2 == 0, 8, 2)
        state = solve_partition(problem, ActiveSetPartition(codes))
        np.testing.assert_array_equal(state.u.interior, np.where(codes == 8, 2.0, -1.0))


class TestActiveSetSolve:
    """主动集迭代"""

    def test_zero_data(self):
        mesh = Mesh1D(32)
        problem = ProblemInstance(mesh, MultibangConfig(gamma=0.1), PiecewisePolynomial.zero())
        result = active_set_solve(problem)
        assert result.converged
        assert result.iterations == 1
        np.testing.assert_array_equal(result.state.u.values, 0.0)

    def test_example1_converges(self, converged):
        problem, result = converged
        assert result.converged, result.message
        assert result.gamma == 2.0 ** -6
        assert result.optimality_residual < 1e-10
        assert optimality_residual(problem.cfg, result.state.u, result.state.p) < 1e-10

    def test_control_feasible(self, converged):
        problem, result = converged
        u = result.state.u.values
        assert u.min() >= problem.cfg.u_min and u.max() <= problem.cfg.u_max

    def test_multiplier_consistency(self, converged):
        problem, result = converged
        cfg = problem.cfg
        s = result.state
        residual = -s.p.interior + cfg.gamma * s.u.interior + cfg.alpha * s.lam.interior
        np.testing.assert_allclose(residual, 0.0, atol=1e-8)

    def test_multiplier_in_subdifferential(self, converged):
        problem, result = converged
        s = result.state
        for u, lam in zip(s.u.interior, s.lam.interior):
            lo, hi = subgradient_interval(problem.cfg, float(u), level_tol=1e-9)
            assert lo - 1e-8 <= lam <= hi + 1e-8

    def test_newton_fixed_point(self, converged):
        problem, result = converged
        step = newton_step(problem, result.state)
        np.testing.assert_allclose(step.u.values, result.state.u.values, atol=1e-9)
        np.testing.assert_allclose(step.y.values, result.state.y.values, atol=1e-9)
        np.testing.assert_allclose(step.p.values, result.state.p.values, atol=1e-9)

    def test_objective_below_initial(self, converged):
        problem, result = converged
        start = initial_state(problem)
        assert discrete_objective(problem, result.state.u) < discrete_objective(problem, start.u)

    def test_invalid_arguments(self, example1):
        problem = ProblemInstance(Mesh1D(8), example1.cfg.with_gamma(0.1), example1.z)
        with pytest.raises(ArgumentError):
            active_set_solve(problem, max_iter=0)
        with pytest.raises(ArgumentError):
            active_set_solve(ProblemInstance(Mesh1D(8), example1.cfg, example1.z))

    @staticmethod
    def _scripted_classifier(codes_for_call):
        """按调用次数返回固定编码的划分"""
        counter = itertools.count()

        def fake(cfg, p):
            return ActiveSetPartition(np.full(len(p.interior), codes_for_call(next(counter))))

        return fake

    def test_stops_at_max_iter(self, monkeypatch):
        # 每次调用给出新的正则区域编码，划分始终在变
        monkeypatch.setattr(solver_module, "classify_field", self._scripted_classifier(lambda k: (2 * k) % 10))
        problem = ProblemInstance(Mesh1D(8), MultibangConfig(gamma=0.1), PiecewisePolynomial.zero())
        result = active_set_solve(problem, max_iter=3)
        assert not result.converged
        assert result.iterations == 3
        assert "最大迭代次数 3" in result.message

    def test_detects_cycle(self, monkeypatch):
        # 划分在 u_1 与 u_d 之间来回切换
        monkeypatch.setattr(solver_module, "classify_field", self._scripted_classifier(lambda k: 8 * (k % 2)))
        problem = ProblemInstance(Mesh1D(8), MultibangConfig(gamma=0.1), PiecewisePolynomial.zero())
        result = active_set_solve(problem, max_iter=50)
        assert not result.converged
        assert result.iterations == 2
        assert result.partition_history_length == 2
        assert "循环" in result.message


class TestNewtonEquivalence:
    """主动集步与半光滑Newton步等价"""

    @pytest.mark.parametrize("seed", range(50))
    def test_random_problem(self, seed):
        rng = np.random.default_rng(seed)
        gamma = float(10.0 ** rng.uniform(-4, 0))
        mesh = Mesh1D(int(rng.integers(16, 513)))
        problem = ProblemInstance(mesh, MultibangConfig(gamma=gamma), _random_target(rng))
        state = _state_with_adjoint(problem, rng.uniform(-6, 6, mesh.n_interior))

        a = active_set_step(problem, state)
        b = newton_step(problem, state)
        np.testing.assert_array_equal(a.partition.codes, b.partition.codes)
        for fa, fb in ((a.u, b.u), (a.y, b.y), (a.p, b.p)):
            scale = max(np.max(np.abs(fa.values)), np.max(np.abs(fb.values)), 1.0)
            assert np.max(np.abs(fa.values - fb.values)) <= 1e-10 * scale


class TestVariationalInequality:
    """变分不等式残差"""

    def _level_fields(self, problem):
        return [NodalField.constant(problem.mesh, v) for v in problem.cfg.levels]

    def test_nonnegative_at_solution(self, converged):
        problem, result = converged
        s = result.state
        tests = self._level_fields(problem) + [s.u]
        assert abs(vi_residual(problem, s.u, s.p, tests)) <= 1e-8

    def test_random_admissible_fields_at_solution(self, converged):
        problem, result = converged
        s = result.state
        cfg = problem.cfg
        rng = np.random.default_rng(11)
        tests = [NodalField(problem.mesh, rng.uniform(cfg.u_min, cfg.u_max, problem.mesh.n_nodes))
                 for _ in range(100)]
        assert vi_residual(problem, s.u, s.p, tests) >= -1e-9

    def test_negative_for_non_optimal_pair(self):
        cfg = MultibangConfig(gamma=0.1)
        mesh = Mesh1D(16)
        problem = ProblemInstance(mesh, cfg, PiecewisePolynomial.zero())
        u = NodalField.constant(mesh, cfg.u_min)
        p = NodalField.constant(mesh, 10.0)
        np.testing.assert_array_equal(H_gamma_array(cfg, p.values), cfg.u_max)
        w = NodalField.constant(mesh, cfg.u_max)
        for quadrature in ("nodal", "exact"):
            assert vi_residual(problem, u, p, [w], quadrature=quadrature) < 0.0

    def test_exact_quadrature_bounded_by_self(self, converged):
        problem, result = converged
        s = result.state
        assert vi_residual(problem, s.u, s.p, [s.u], quadrature="exact") == pytest.approx(0.0, abs=1e-12)

    def test_invalid(self, converged):
        problem, result = converged
        s = result.state
        with pytest.raises(ArgumentError):
            vi_residual(problem, s.u, s.p, [s.u], quadrature="simpson")
        with pytest.raises(ArgumentError):
            vi_residual(problem, s.u, s.p, [])
        with pytest.raises(ArgumentError):
            vi_residual(problem, s.u, s.p, [NodalField.constant(problem.mesh, 3.0)])


class TestContinuation:
    """γ 延拓"""

    def test_results_per_gamma(self, example1):
        template = ProblemInstance(Mesh1D.from_h(1e-2), example1.cfg.with_gamma(1.0), example1.z)
        gammas = [2.0 ** -k for k in range(3, 8)]
        results = gamma_continuation(template, gammas)
        assert [r.gamma for r in results] == gammas
        assert all(r.converged for r in results)

    def test_warm_start(self, example1):
        template = ProblemInstance(Mesh1D.from_h(1e-2), example1.cfg.with_gamma(1.0), example1.z)
        first, second = gamma_continuation(template, [2.0 ** -5, 2.0 ** -5 * 0.9])
        assert first.converged and second.converged
        np.testing.assert_allclose(second.state.u.values, first.state.u.values, atol=0.5)

    def test_explicit_initial_state(self, example1):
        template = ProblemInstance(Mesh1D.from_h(1e-2), example1.cfg.with_gamma(2.0 ** -4), example1.z)
        start = active_set_solve(template)
        again = active_set_solve(template, init=start.state)
        assert again.converged
        assert again.iterations == 1

    @pytest.mark.parametrize("gammas", [[0.5, 0.5], [0.25, 0.5], [0.5, 0.0], [-0.1]])
    def test_invalid_sequence(self, example1, gammas):
        template = ProblemInstance(Mesh1D(8), example1.cfg.with_gamma(1.0), example1.z)
        with pytest.raises(ArgumentError):
            gamma_continuation(template, gammas)
