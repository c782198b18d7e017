#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多重bang控制 - 原始-对偶主动集求解器
按当前伴随值逐节点划分区域、组装并求解耦合KKT系统、划分不变时终止；
另提供等价的半光滑Newton步与最优性诊断
"""

import hashlib
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from src.multibang.errors import ArgumentError, MultibangError
from src.multibang.penalty import (
    LEVEL_TOL,
    MultibangConfig,
    RegionLabel,
    G_dir_derivative,
    G_eval,
    H_gamma,
    H_gamma_array,
    classify_reg_array,
    labels_from_codes,
    require_gamma,
)
from src.numerics.fem1d import (
    BandedSystem,
    Mesh1D,
    NodalField,
    assemble_full_mass,
    l2_error_sq,
    load_vector,
    mass_matrix,
    solve_dirichlet,
)
from src.numerics.piecewise_poly import PiecewisePolynomial

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 100
# 最优性容差按 (u_d − u_1) 缩放
OPTIMALITY_TOL = 1e-10


@dataclass(eq=False)
class ActiveSetPartition:
    """每个内部节点的区域编码（见 RegionLabel.code）"""
    codes: np.ndarray

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)

    @property
    def labels(self) -> tuple:
        return labels_from_codes(self.codes)

    @property
    def singular(self) -> np.ndarray:
        return self.codes % 2 == 1

    @property
    def regular(self) -> np.ndarray:
        return ~self.singular

    def __len__(self) -> int:
        return len(self.codes)

    def __eq__(self, other) -> bool:
        return isinstance(other, ActiveSetPartition) and np.array_equal(self.codes, other.codes)

    def __hash__(self) -> int:
        return hash(self.digest())

    def digest(self) -> str:
        return hashlib.sha1(self.codes.tobytes()).hexdigest()

    def n_changed(self, other: "ActiveSetPartition") -> int:
        return int(np.count_nonzero(self.codes != other.codes))

    def validate(self, cfg: MultibangConfig, n_interior: int):
        if len(self) != n_interior:
            raise ArgumentError(f"划分长度 {len(self)} 与内部节点数 {n_interior} 不符")
        if np.any(self.codes < 0) or np.any(self.codes > 2 * (cfg.d - 1)):
            raise ArgumentError("划分中存在超出范围的区域编码")

    def summary(self) -> dict:
        values, counts = np.unique(self.codes, return_counts=True)
        return {str(RegionLabel.from_code(v)): int(c) for v, c in zip(values, counts)}


@dataclass(eq=False)
class ProblemInstance:
    """离散问题 (P_γ,h)：网格、多重bang配置、目标 z"""
    mesh: Mesh1D
    cfg: MultibangConfig
    target: PiecewisePolynomial
    target_load: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.target_load is None:
            self.target_load = load_vector(self.mesh, self.target)

    def with_gamma(self, gamma: float) -> "ProblemInstance":
        return ProblemInstance(self.mesh, self.cfg.with_gamma(gamma), self.target, self.target_load)

    @property
    def boundary_control(self) -> float:
        """边界节点上伴随为0，控制取 H_γ(0)"""
        return H_gamma(self.cfg, 0.0)


@dataclass(eq=False)
class SolverState:
    u: NodalField
    y: NodalField
    p: NodalField
    lam: NodalField
    partition: ActiveSetPartition
    iteration: int = 0


@dataclass(eq=False)
class SolverResult:
    state: Optional[SolverState]
    converged: bool
    iterations: int
    optimality_residual: float
    partition_history_length: int
    gamma: float = 0.0
    message: str = ""
    elapsed: float = 0.0


# ---- 基本映射 ----

def _boundary_load(mesh: Mesh1D, u_left: float, u_right: float) -> np.ndarray:
    """边界控制值经质量矩阵进入内部方程的部分"""
    bc = np.zeros(mesh.n_interior)
    s = mesh.h / 6.0
    bc[0] += s * u_left
    bc[-1] += s * u_right
    return bc


def state_from_control(problem: ProblemInstance, u: NodalField) -> NodalField:
    """y = K_h u"""
    mesh = problem.mesh
    rhs = mass_matrix(mesh) @ u.interior + _boundary_load(mesh, u.values[0], u.values[-1])
    return solve_dirichlet(mesh, rhs)


def adjoint_from_state(problem: ProblemInstance, y: NodalField) -> NodalField:
    """A_h p = load(z) − M_h y"""
    rhs = problem.target_load - mass_matrix(problem.mesh) @ y.interior
    return solve_dirichlet(problem.mesh, rhs)


def _multiplier(cfg: MultibangConfig, u: NodalField, p: NodalField) -> NodalField:
    return NodalField(u.mesh, (p.values - cfg.gamma * u.values) / cfg.alpha)


def classify_field(cfg: MultibangConfig, p: NodalField) -> ActiveSetPartition:
    """内部节点逐点正则分类"""
    require_gamma(cfg)
    return ActiveSetPartition(classify_reg_array(cfg, p.interior))


def initial_state(problem: ProblemInstance) -> SolverState:
    """u⁰ 取最接近0的可行常数，y⁰ = K_h u⁰，p⁰ 由伴随方程给出"""
    cfg = problem.cfg
    require_gamma(cfg)
    mesh = problem.mesh
    u0 = float(np.clip(0.0, cfg.u_min, cfg.u_max))
    ub = problem.boundary_control
    u = NodalField.from_interior(mesh, np.full(mesh.n_interior, u0), boundary=(ub, ub))
    y = state_from_control(problem, u)
    p = adjoint_from_state(problem, y)
    return SolverState(u, y, p, _multiplier(cfg, u, p), classify_field(cfg, p), 0)


# ---- 主动集步 ----

def assemble_kkt(problem: ProblemInstance, partition: ActiveSetPartition) -> BandedSystem:
    """
    组装KKT系统，未知量按节点交错排列 (u_j, y_j, p_j, λ_j)

    行：A y − M u = 边界项；A p + M y = load(z)；−p + γu + αλ = 0；
    Regular(i) 节点 u = u_i，Singular(i,i+1) 节点 λ = ½(u_i+u_{i+1})。
    """
    cfg = problem.cfg
    mesh = problem.mesh
    require_gamma(cfg)
    m = mesh.n_interior
    partition.validate(cfg, m)
    h = mesh.h
    j = np.arange(m)

    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(np.broadcast_to(np.asarray(v, dtype=float), r.shape))

    for shift, a_coef, m_coef in ((-1, -1.0 / h, h / 6.0), (0, 2.0 / h, 4.0 * h / 6.0), (1, -1.0 / h, h / 6.0)):
        k = j + shift
        ok = (k >= 0) & (k < m)
        r, c = j[ok], k[ok]
        add(4 * r, 4 * c + 1, a_coef)
        add(4 * r, 4 * c, -m_coef)
        add(4 * r + 1, 4 * c + 2, a_coef)
        add(4 * r + 1, 4 * c + 1, m_coef)

    add(4 * j + 2, 4 * j + 2, -1.0)
    add(4 * j + 2, 4 * j, cfg.gamma)
    add(4 * j + 2, 4 * j + 3, cfg.alpha)

    reg = partition.regular
    add(4 * j[reg] + 3, 4 * j[reg], 1.0)
    add(4 * j[~reg] + 3, 4 * j[~reg] + 3, 1.0)

    ub = problem.boundary_control
    rhs = np.zeros(4 * m)
    rhs[0::4] = _boundary_load(mesh, ub, ub)
    rhs[1::4] = problem.target_load
    idx = partition.codes // 2
    pinned = np.where(reg, cfg.level_array[np.minimum(idx, cfg.d - 1)], cfg.slopes[np.minimum(idx, cfg.d - 2)])
    rhs[3::4] = pinned

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(4 * m, 4 * m)
    )
    return BandedSystem.from_sparse(matrix, rhs)


def _state_from_kkt(problem: ProblemInstance, partition: ActiveSetPartition, x: np.ndarray,
                    iteration: int) -> SolverState:
    cfg = problem.cfg
    mesh = problem.mesh
    ub = problem.boundary_control
    u_int, y_int, p_int, lam_int = x[0::4].copy(), x[1::4], x[2::4], x[3::4].copy()

    reg = partition.regular
    idx = partition.codes // 2
    u_int[reg] = cfg.level_array[idx[reg]]
    lam_int[~reg] = cfg.slopes[idx[~reg]]

    u = NodalField.from_interior(mesh, u_int, boundary=(ub, ub))
    y = NodalField.from_interior(mesh, y_int)
    p = NodalField.from_interior(mesh, p_int)
    lam_b = (0.0 - cfg.gamma * ub) / cfg.alpha
    lam = NodalField.from_interior(mesh, lam_int, boundary=(lam_b, lam_b))
    return SolverState(u, y, p, lam, partition, iteration)


def solve_partition(problem: ProblemInstance, partition: ActiveSetPartition, iteration: int = 0) -> SolverState:
    """固定划分下求解KKT系统"""
    system = assemble_kkt(problem, partition)
    return _state_from_kkt(problem, partition, system.solve(), iteration)


def active_set_step(problem: ProblemInstance, state: SolverState) -> SolverState:
    """由 state.p 划分后求解一次KKT系统"""
    partition = classify_field(problem.cfg, state.p)
    return solve_partition(problem, partition, state.iteration + 1)


def _finalize(problem: ProblemInstance, state: SolverState) -> SolverState:
    """收敛后把奇异节点的控制写成 H_γ(p)，消除舍入"""
    cfg = problem.cfg
    sing = state.partition.singular
    u = state.u.copy()
    interior = u.values[1:-1]
    interior[sing] = H_gamma_array(cfg, state.p.interior[sing])
    return SolverState(u, state.y, state.p, state.lam, state.partition, state.iteration)


def active_set_solve(problem: ProblemInstance, init: Optional[SolverState] = None,
                     max_iter: int = DEFAULT_MAX_ITER) -> SolverResult:
    """
    主动集迭代

    求解 → 重新分类 → 与上一划分比较；划分不变即收敛。
    若新划分与更早的某个划分相同则判为循环并停止。
    """
    cfg = problem.cfg
    require_gamma(cfg)
    if max_iter < 1:
        raise ArgumentError(f"max_iter 必须不小于1: {max_iter}")

    start = time.time()
    state = init if init is not None else initial_state(problem)
    partition = classify_field(cfg, state.p)
    history = {partition.digest(): 0}
    converged = False
    message = ""
    iterations = 0

    for k in range(1, max_iter + 1):
        state = solve_partition(problem, partition, k)
        iterations = k
        new_partition = classify_field(cfg, state.p)
        changed = partition.n_changed(new_partition)
        logger.debug(f"迭代 {k}: {changed} 个节点改变区域")

        if changed == 0:
            converged = True
            break

        digest = new_partition.digest()
        if digest in history:
            message = f"检测到划分循环：第 {k} 步的划分与第 {history[digest]} 步相同"
            logger.warning(message)
            break
        history[digest] = k
        partition = new_partition
    else:
        message = f"达到最大迭代次数 {max_iter}"
        logger.warning(message)

    if converged:
        state = _finalize(problem, state)
    residual = optimality_residual(cfg, state.u, state.p)
    if converged and residual > OPTIMALITY_TOL * cfg.span:
        converged = False
        message = f"划分已固定但最优性残差 {residual:.3e} 超出容差"
        logger.warning(message)

    elapsed = time.time() - start
    if converged:
        logger.info(f"γ = {cfg.gamma:.6g}, n = {problem.mesh.n_elements}: {iterations} 次迭代收敛 ({elapsed:.2f}s)")
    return SolverResult(
        state=state,
        converged=converged,
        iterations=iterations,
        optimality_residual=residual,
        partition_history_length=len(history),
        gamma=cfg.gamma,
        message=message,
        elapsed=elapsed,
    )


# ---- 半光滑Newton步 ----

def newton_step(problem: ProblemInstance, state: SolverState) -> SolverState:
    """
    一次半光滑Newton步，未知量 (u_j, y_j, p_j)

    Newton导数为0的节点：u' = H_γ(p)；为 1/γ 的节点：方程乘以 γ 后为
    γu' − p' = γH_γ(p) − p。λ 由 (p' − γu')/α 重建。
    """
    cfg = problem.cfg
    mesh = problem.mesh
    require_gamma(cfg)
    m = mesh.n_interior
    h = mesh.h
    j = np.arange(m)

    partition = classify_field(cfg, state.p)
    sing = partition.singular
    p_old = state.p.interior
    h_old = H_gamma_array(cfg, p_old)

    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(np.broadcast_to(np.asarray(v, dtype=float), r.shape))

    for shift, a_coef, m_coef in ((-1, -1.0 / h, h / 6.0), (0, 2.0 / h, 4.0 * h / 6.0), (1, -1.0 / h, h / 6.0)):
        k = j + shift
        ok = (k >= 0) & (k < m)
        r, c = j[ok], k[ok]
        add(3 * r, 3 * c + 1, a_coef)
        add(3 * r, 3 * c, -m_coef)
        add(3 * r + 1, 3 * c + 2, a_coef)
        add(3 * r + 1, 3 * c + 1, m_coef)

    add(3 * j[~sing] + 2, 3 * j[~sing], 1.0)
    add(3 * j[sing] + 2, 3 * j[sing], cfg.gamma)
    add(3 * j[sing] + 2, 3 * j[sing] + 2, -1.0)

    ub = problem.boundary_control
    rhs = np.zeros(3 * m)
    rhs[0::3] = _boundary_load(mesh, ub, ub)
    rhs[1::3] = problem.target_load
    third = h_old.copy()
    # 奇异带上 γH_γ(p) − p = −α/2(u_i+u_{i+1})
    third[sing] = -cfg.thresholds[partition.codes[sing] // 2]
    rhs[2::3] = third

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * m, 3 * m)
    )
    x = BandedSystem.from_sparse(matrix, rhs).solve()

    u_int = x[0::3].copy()
    u_int[~sing] = h_old[~sing]
    u = NodalField.from_interior(mesh, u_int, boundary=(ub, ub))
    y = NodalField.from_interior(mesh, x[1::3])
    p = NodalField.from_interior(mesh, x[2::3])
    return SolverState(u, y, p, _multiplier(cfg, u, p), partition, state.iteration + 1)


# ---- 诊断 ----

def optimality_residual(cfg: MultibangConfig, u: NodalField, p: NodalField) -> float:
    """内部节点上 max |u − H_γ(p)|"""
    require_gamma(cfg)
    if u.mesh.n_interior == 0:
        return 0.0
    return float(np.max(np.abs(u.interior - H_gamma_array(cfg, p.interior))))


def _pointwise_dir_derivative(cfg: MultibangConfig, u: np.ndarray, d: np.ndarray,
                              tol: float = LEVEL_TOL) -> np.ndarray:
    """g'(u; d) 逐点"""
    lv = cfg.level_array
    m = cfg.slopes
    nearest = np.argmin(np.abs(u[:, None] - lv[None, :]), axis=1)
    on_level = np.abs(u - lv[nearest]) <= tol
    seg = np.clip(np.searchsorted(lv, u, side="right") - 1, 0, cfg.d - 2)
    right = m[np.minimum(nearest, cfg.d - 2)]
    left = m[np.maximum(nearest - 1, 0)]
    one_sided = np.where(d >= 0, right * d, left * d)
    return np.where(on_level, one_sided, m[seg] * d)


def vi_residual(problem: ProblemInstance, u: NodalField, p: NodalField,
                test_fields: Sequence[NodalField], quadrature: str = "nodal") -> float:
    """
    min_w (−p + γu, w − u) + α G'(u; w − u)

    quadrature="nodal" 使用与节点配置一致的集中质量内积；
    "exact" 使用一致质量矩阵与逐单元精确的 G'。
    """
    cfg = problem.cfg
    if quadrature not in ("nodal", "exact"):
        raise ArgumentError(f"未知的求积方式: {quadrature}")
    if not test_fields:
        raise ArgumentError("至少需要一个测试场")

    mesh = u.mesh
    weights = np.full(mesh.n_nodes, mesh.h)
    weights[0] = weights[-1] = 0.5 * mesh.h
    grad = -p.values + cfg.gamma * u.values

    best = np.inf
    for w in test_fields:
        if np.any(w.values < cfg.u_min - LEVEL_TOL) or np.any(w.values > cfg.u_max + LEVEL_TOL):
            raise ArgumentError("测试场取值超出 [u_1, u_d]")
        direction = w - u
        if quadrature == "nodal":
            value = float(np.sum(weights * (grad * direction.values
                                            + cfg.alpha * _pointwise_dir_derivative(cfg, u.values, direction.values))))
        else:
            value = float(grad @ (assemble_full_mass(mesh) @ direction.values))
            value += cfg.alpha * G_dir_derivative(cfg, u, direction)
        best = min(best, value)
    return best


def discrete_objective(problem: ProblemInstance, u: NodalField) -> float:
    """½‖K_h u − z‖² + αG(u) + γ/2‖u‖²，各项精确积分"""
    cfg = problem.cfg
    y = state_from_control(problem, u)
    return 0.5 * l2_error_sq(y, problem.target) + cfg.alpha * G_eval(cfg, u) + 0.5 * cfg.gamma * u.norm_sq()


def gamma_continuation(problem_template: ProblemInstance, gamma_list: Sequence[float],
                       max_iter: int = DEFAULT_MAX_ITER,
                       init: Optional[SolverState] = None) -> List[SolverResult]:
    """
    按递减的 γ 依次求解，每次以上一个收敛解作为初值

    单个 γ 的失败记录在结果中，不中断整个序列。
    """
    gammas = [float(g) for g in gamma_list]
    if any(g <= 0 for g in gammas):
        raise ArgumentError(f"γ 必须全部为正: {gammas}")
    if any(b >= a for a, b in zip(gammas, gammas[1:])):
        raise ArgumentError(f"γ 序列必须严格递减: {gammas}")

    results: List[SolverResult] = []
    warm = init
    for gamma in gammas:
        problem = problem_template.with_gamma(gamma)
        try:
            result = active_set_solve(problem, init=warm, max_iter=max_iter)
        except MultibangError as e:
            logger.error(f"γ = {gamma:.6g} 求解失败: {e}")
            result = SolverResult(None, False, 0, float("nan"), 0, gamma=gamma, message=str(e))
        results.append(result)
        if result.converged:
            warm = result.state
    return results
