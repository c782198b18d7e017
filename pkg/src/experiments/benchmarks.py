#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多重bang控制 - 基准算例
两组精确构造的一维Poisson多重bang控制问题：伴随 p̄、控制 ū、最优状态 w = Kū、
目标 z = w − p̄''，全部为有理系数分段多项式
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional

import numpy as np

from src.multibang.errors import ArgumentError, DiagnosticError
from src.multibang.penalty import MultibangConfig, classify_unreg_array
from src.numerics.piecewise_poly import PiecewisePolynomial

logger = logging.getLogger(__name__)

F = Fraction

CONSISTENCY_GRID = 10_000
# 一致性检查时排除断点附近的网格点
BREAKPOINT_EXCLUSION = 1e-9

# ū 对两个算例相同
U_BAR_BREAKPOINTS = [0, F(2, 27), F(2, 9), F(3, 9), F(4, 9), F(5, 9), F(6, 9), F(7, 9), F(25, 27), 1]
U_BAR_VALUES = [0, 1, 2, 1, 0, -1, -2, -1, 0]

EXAMPLE1_BREAKPOINTS = [0, F(2, 9), F(3, 9), F(6, 9), F(7, 9), 1]
EXAMPLE1_PIECES = [
    [0, F(27, 2)],
    [-72, F(3123, 2), -13122, 54675, -111537, F(177147, 2)],
    [9, -18],
    [-20079, 136062, -367416, 494262, F(-662661, 2), F(177147, 2)],
    [F(-27, 2), F(27, 2)],
]

EXAMPLE2_BREAKPOINTS = [0, F(3, 27), F(2, 9), F(5, 18), F(3, 9), F(4, 9), F(5, 9), F(6, 9), F(13, 18),
                        F(7, 9), F(8, 9), 1]
EXAMPLE2_PIECES = [
    [0, F(27, 2)],
    [F(-1703, 81), F(6812, 9), F(-20437, 2), F(135765, 2), F(-433593, 2), 266085],
    [F(-860051, 81), F(1943450, 9), F(-3498235, 2), 7054821, -14168034, 11334492],
    [F(528697, 18), F(-1457650, 3), F(6413635, 2), -10553301, 17316666, -11334492],
    [F(27761, 9), F(-121150, 3), 210182, F(-1085913, 2), 696195, F(-709317, 2)],
    [9, -18],
    [F(256331, 9), F(-710804, 3), F(1573075, 2), F(-2604285, 2), F(2149821, 2), F(-707859, 2)],
    [F(16396175, 9), F(-39434798, 3), F(75835981, 2), -54660123, 39376206, -11340324],
    [F(-433967467, 162), F(161022862, 9), F(-95552197, 2), 63759915, -42526134, 11340324],
    [F(-17395339, 162), F(11616563, 18), -1549124, F(3712707, 2), F(-2221101, 2), 265356],
    [F(-27, 2), F(27, 2)],
]


@dataclass
class ExampleProblem:
    """基准算例；cfg 不含 γ"""
    example_id: int
    cfg: MultibangConfig
    p_bar: PiecewisePolynomial
    u_bar: PiecewisePolynomial
    w: PiecewisePolynomial
    z: PiecewisePolynomial
    kappa_expected: Optional[float] = None

    @property
    def breakpoints(self) -> np.ndarray:
        return np.union1d(self.p_bar.float_breakpoints, self.u_bar.float_breakpoints)


@dataclass
class ClassificationViolation:
    """p̄(x) 落在 Regular(i) 区域但 ū(x) ≠ u_i"""
    x: float
    p_value: float
    expected_level: float
    u_value: float
    excess: float


@dataclass
class ConsistencyReport:
    example_id: int
    max_deviation: float
    grid_size: int
    exclusion_radius: float
    violations: List[ClassificationViolation] = field(default_factory=list)

    @property
    def max_excess(self) -> float:
        return max((v.excess for v in self.violations), default=0.0)

    def ok(self, deviation_tol: float = 1e-10) -> bool:
        return self.max_deviation <= deviation_tol and not self.violations


@dataclass
class AdjointProfile:
    """等距网格上的 p̄、p̄'、ū 与阈值，供作图"""
    example_id: int
    x: np.ndarray
    p_bar: np.ndarray
    dp_bar: np.ndarray
    u_bar: np.ndarray
    thresholds: np.ndarray


def u_bar_polynomial() -> PiecewisePolynomial:
    return PiecewisePolynomial.from_pieces(U_BAR_BREAKPOINTS, [[v] for v in U_BAR_VALUES])


def exact_poisson_solve_pwpoly(f: PiecewisePolynomial) -> PiecewisePolynomial:
    """
    −w'' = f，w(0) = w(1) = 0 的精确解

    w = −F₂ + F₂(1)·x，F₂ 为从0起的二重原函数。
    """
    f2 = f.antiderivative(0).antiderivative(0)
    return -f2 + PiecewisePolynomial.polynomial([0, f2.eval_exact(1)])


def verify_construction(ex: ExampleProblem):
    """构造的有理恒等式：p̄(0)=p̄(1)=0，ū 取值于控制水平，z = w − p̄''"""
    if ex.p_bar.eval_exact(0) != 0 or ex.p_bar.eval_exact(1) != 0:
        raise DiagnosticError(f"算例 {ex.example_id}: p̄ 在边界上不为0")
    levels = {F(v) for v in ex.cfg.levels}
    for piece in ex.u_bar.pieces:
        if len(piece) != 1 or piece[0] not in levels:
            raise DiagnosticError(f"算例 {ex.example_id}: ū 不是取值于控制水平的分段常数")
    if not (ex.z - ex.w + ex.p_bar.differentiate().differentiate()).is_zero():
        raise DiagnosticError(f"算例 {ex.example_id}: z ≠ w − p̄''")


def build_example(example_id: int, cfg: Optional[MultibangConfig] = None) -> ExampleProblem:
    """构造算例1或2：水平 (−2,−1,0,1,2)，α = 2"""
    if example_id == 1:
        p_bar = PiecewisePolynomial.from_pieces(EXAMPLE1_BREAKPOINTS, EXAMPLE1_PIECES)
        kappa = 1.0
    elif example_id == 2:
        p_bar = PiecewisePolynomial.from_pieces(EXAMPLE2_BREAKPOINTS, EXAMPLE2_PIECES)
        kappa = None
    else:
        raise ArgumentError(f"未知算例编号: {example_id}")

    cfg = cfg or MultibangConfig()
    u_bar = u_bar_polynomial()
    w = exact_poisson_solve_pwpoly(u_bar)
    z = w - p_bar.differentiate().differentiate()
    ex = ExampleProblem(example_id, cfg, p_bar, u_bar, w, z, kappa)
    verify_construction(ex)
    logger.debug(f"算例 {example_id} 构造完成: z 含 {z.n_pieces} 段")
    return ex


def consistency_check(ex: ExampleProblem, grid_size: int = CONSISTENCY_GRID,
                      exclusion: float = BREAKPOINT_EXCLUSION) -> ConsistencyReport:
    """
    检查 K(z − Kū) = p̄，并检查 p̄ 的非正则分类与 ū 是否一致

    网格点 x_k = (k + ½)/N；分类检查跳过断点附近 exclusion 以内的点。
    """
    x = (np.arange(grid_size) + 0.5) / grid_size
    recovered = exact_poisson_solve_pwpoly(ex.z - ex.w)
    deviation = float(np.max(np.abs(recovered.eval_array(x) - ex.p_bar.eval_array(x))))

    bps = ex.breakpoints
    nearest = np.min(np.abs(x[:, None] - bps[None, :]), axis=1)
    keep = nearest > exclusion
    xs = x[keep]
    p = ex.p_bar.eval_array(xs)
    u = ex.u_bar.eval_array(xs)
    codes = classify_unreg_array(ex.cfg, p)

    levels = ex.cfg.level_array
    t = ex.cfg.thresholds
    lower = np.concatenate(([-np.inf], t))
    upper = np.concatenate((t, [np.inf]))
    violations: List[ClassificationViolation] = []
    regular = codes % 2 == 0
    expected = levels[codes // 2]
    bad = np.nonzero(regular & (u != expected))[0]
    for k in bad:
        # ū(x) = u_k 要求 p 落在 [t_{k−1}, t_k] 内；超出的距离
        level_idx = int(np.argmin(np.abs(levels - u[k])))
        excess = max(lower[level_idx] - p[k], p[k] - upper[level_idx], 0.0)
        violations.append(ClassificationViolation(float(xs[k]), float(p[k]), float(expected[k]),
                                                  float(u[k]), float(excess)))

    if violations:
        logger.info(f"算例 {ex.example_id}: {len(violations)} 个网格点分类与 ū 不一致，"
                    f"最大越界 {max(v.excess for v in violations):.3e}")
    return ConsistencyReport(ex.example_id, deviation, grid_size, exclusion, violations)


def sample_profile(ex: ExampleProblem, points: int = 1001) -> AdjointProfile:
    """
    在 x_k = k/(points − 1) 上采样 p̄、p̄' 与 ū

    断点处取右侧段的值。
    """
    if points < 2:
        raise ArgumentError(f"采样点数必须不小于2: {points}")
    x = np.linspace(0.0, 1.0, points)
    dp_bar = ex.p_bar.differentiate()
    return AdjointProfile(
        example_id=ex.example_id,
        x=x,
        p_bar=ex.p_bar.eval_array(x),
        dp_bar=dp_bar.eval_array(x),
        u_bar=ex.u_bar.eval_array(x),
        thresholds=np.array(ex.cfg.thresholds, dtype=float),
    )


def tampered(ex: ExampleProblem, scale: int = 2) -> ExampleProblem:
    """把 p̄ 放大 scale 倍，z 保持不变（用于检查一致性诊断）"""
    return dataclasses.replace(ex, p_bar=ex.p_bar * scale)
