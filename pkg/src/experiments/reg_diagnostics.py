#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多重bang控制 - 奇异集正则性诊断
测度 meas{x : |p̄(x) − τ_i| < ε} 的计算、κ 的对数拟合，
以及阈值水平集上 |p̄'| 的最小值
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.multibang.errors import ArgumentError, DiagnosticError
from src.multibang.penalty import MultibangConfig
from src.numerics.piecewise_poly import PiecewisePolynomial

logger = logging.getLogger(__name__)

DEFAULT_EPS_RANGE = (1e-6, 1e-2)
DEFAULT_EPS_POINTS = 16
LEVEL_SET_TOL = 1e-12


@dataclass
class RegEstimate:
    epsilons: List[float]
    measures: List[float]
    kappa_fit: float
    c_fit: float
    used_points: int = 0


def default_epsilon_grid() -> np.ndarray:
    return np.geomspace(DEFAULT_EPS_RANGE[0], DEFAULT_EPS_RANGE[1], DEFAULT_EPS_POINTS)


def reg_measure(p_bar: PiecewisePolynomial, cfg: MultibangConfig, epsilon: float) -> float:
    """
    ⋃_i {x : |p̄(x) − τ_i| < ε} 的测度

    以 τ_i ± ε 的水平集点和 p̄ 的断点切分 [0,1]，每个子区间上 |p̄ − τ_i| − ε
    不变号，按中点判断是否属于并集。
    """
    if not epsilon > 0:
        raise ArgumentError(f"ε 必须为正: {epsilon}")
    cuts = [0.0, 1.0]
    cuts.extend(p_bar.float_breakpoints.tolist())
    for tau in cfg.thresholds:
        for c in (tau - epsilon, tau + epsilon):
            cuts.extend(p_bar.level_set_points(float(c), LEVEL_SET_TOL))
    pts = np.unique(np.clip(np.array(cuts), 0.0, 1.0))
    left, right = pts[:-1], pts[1:]
    mid = 0.5 * (left + right)
    values = p_bar.eval_array(mid)
    inside = (np.abs(values[:, None] - cfg.thresholds[None, :]) < epsilon).any(axis=1)
    return float(np.sum((right - left)[inside]))


def _check_geometric(grid: np.ndarray):
    if grid.size < 4:
        raise ArgumentError(f"ε 网格至少需要4个点: {grid.size}")
    if np.any(grid <= 0):
        raise ArgumentError("ε 网格必须为正")
    ratios = grid[1:] / grid[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-6) or np.isclose(ratios[0], 1.0):
        raise ArgumentError("ε 网格必须为等比数列")


def fit_reg_kappa(p_bar: PiecewisePolynomial, cfg: MultibangConfig,
                  epsilon_grid: Optional[Sequence[float]] = None) -> RegEstimate:
    """log(测度) 对 log(ε) 的最小二乘直线：斜率 κ，截距给出 c"""
    grid = default_epsilon_grid() if epsilon_grid is None else np.asarray(epsilon_grid, dtype=float)
    _check_geometric(grid)
    measures = np.array([reg_measure(p_bar, cfg, eps) for eps in grid])
    return fit_log_line(grid, measures)


def fit_log_line(epsilons: np.ndarray, measures: np.ndarray) -> RegEstimate:
    """测度为0的点不参与拟合"""
    epsilons = np.asarray(epsilons, dtype=float)
    measures = np.asarray(measures, dtype=float)
    usable = measures > 0
    if np.count_nonzero(usable) < 2:
        raise DiagnosticError(f"可用于拟合的点不足: {np.count_nonzero(usable)}")
    slope, intercept = np.polyfit(np.log(epsilons[usable]), np.log(measures[usable]), 1)
    logger.debug(f"REG拟合: κ = {slope:.4f}, c = {np.exp(intercept):.4e}")
    return RegEstimate(epsilons.tolist(), measures.tolist(), float(slope), float(np.exp(intercept)),
                       int(np.count_nonzero(usable)))


def min_gradient_point(p_bar: PiecewisePolynomial, cfg: MultibangConfig) -> Tuple[float, float, float]:
    """
    所有阈值水平集上 |p̄'| 的最小值

    返回 (值, 位置, 阈值)；没有任何交点时值为 +∞。并列时取最靠左的点。
    """
    derivative = p_bar.differentiate()
    best = (np.inf, np.nan, np.nan)
    for tau in cfg.thresholds:
        for x in p_bar.level_set_points(float(tau), LEVEL_SET_TOL):
            value = abs(derivative.eval(min(max(x, 0.0), 1.0)))
            if value < best[0] or (value == best[0] and x < best[1]):
                best = (value, float(x), float(tau))
    return best


def min_gradient_on_levelsets(p_bar: PiecewisePolynomial, cfg: MultibangConfig) -> float:
    return min_gradient_point(p_bar, cfg)[0]
