#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多重bang控制 - γ/h 扫描
每个网格尺寸一条通道，通道内按 γ 递减做延拓求解；计算误差表与数值收敛阶 κ_{γ,h}
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from src.experiments.benchmarks import build_example
from src.multibang.errors import ArgumentError
from src.multibang.penalty import MultibangConfig
from src.multibang.solver import ProblemInstance, gamma_continuation, optimality_residual
from src.numerics.fem1d import Mesh1D, l1_error, l2_error_sq, l2_error_sq_controls
from src.harness.config import SweepConfig

logger = logging.getLogger(__name__)

RATE_COLUMNS = ["gamma", "h", "err_l2_sq", "err_l1", "err_state_sq", "kappa", "iterations", "converged"]


@dataclass
class RateRow:
    gamma: float
    h: float
    err_l2_sq: float
    err_l1: float
    err_state_sq: float
    kappa: Optional[float]
    iterations: int
    converged: bool
    optimality_residual: float = field(default=math.nan, compare=False)
    err_control_sq: float = field(default=math.nan, compare=False)
    message: str = field(default="", compare=False)


class RateTable:
    """误差与收敛阶表，行按 h 升序、γ 降序排列"""

    def __init__(self, rows: Optional[Sequence[RateRow]] = None):
        self.rows: List[RateRow] = sorted(rows or [], key=lambda r: (r.h, -r.gamma))

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def lane(self, h: float) -> List[RateRow]:
        return [r for r in self.rows if r.h == h]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            [[r.gamma, r.h, r.err_l2_sq, r.err_l1, r.err_state_sq,
              np.nan if r.kappa is None else r.kappa, r.iterations, r.converged] for r in self.rows],
            columns=RATE_COLUMNS,
        )
        return frame.astype({"gamma": float, "h": float, "err_l2_sq": float, "err_l1": float,
                             "err_state_sq": float, "kappa": float, "iterations": int, "converged": bool})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "RateTable":
        rows = []
        for rec in frame.to_dict("records"):
            kappa = rec["kappa"]
            rows.append(RateRow(
                gamma=float(rec["gamma"]),
                h=float(rec["h"]),
                err_l2_sq=float(rec["err_l2_sq"]),
                err_l1=float(rec["err_l1"]),
                err_state_sq=float(rec["err_state_sq"]),
                kappa=None if pd.isna(kappa) else float(kappa),
                iterations=int(rec["iterations"]),
                converged=bool(rec["converged"]),
            ))
        return cls(rows)

    @classmethod
    def from_csv(cls, path: str) -> "RateTable":
        frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=True)
        return cls.from_frame(frame)


def kappa_numeric(err_sq_at_gamma: float, err_sq_at_half_gamma: float) -> float:
    """log₂(e(γ)/e(γ/2))：误差平方按 γ^κ 衰减时得到 +κ"""
    if not (err_sq_at_gamma > 0 and err_sq_at_half_gamma > 0):
        raise ArgumentError(f"误差必须为正: {err_sq_at_gamma}, {err_sq_at_half_gamma}")
    return math.log2(err_sq_at_gamma / err_sq_at_half_gamma)


def kappa_between(err_prev: float, err_cur: float, gamma_prev: float, gamma_cur: float) -> float:
    """相邻 γ（不一定相差2倍）之间的收敛阶"""
    if gamma_prev == 2 * gamma_cur:
        return kappa_numeric(err_prev, err_cur)
    if not (err_prev > 0 and err_cur > 0):
        raise ArgumentError(f"误差必须为正: {err_prev}, {err_cur}")
    return math.log(err_prev / err_cur) / math.log(gamma_prev / gamma_cur)


def run_lane(example_id: int, h: float, gammas: Sequence[float], max_iter: int = 100,
             alpha: float = 2.0, optimality_tol: float = 1e-10) -> List[RateRow]:
    """
    单个网格尺寸上的 γ 延拓

    模块级函数，供进程池调用。
    """
    start = time.time()
    ex = build_example(example_id, MultibangConfig(alpha=alpha))
    mesh = Mesh1D.from_h(h)
    logger.info(f"通道 h = {h:g} (n = {mesh.n_elements}): {len(gammas)} 个 γ")
    if not gammas:
        return []

    template = ProblemInstance(mesh, ex.cfg.with_gamma(gammas[0]), ex.z)
    results = gamma_continuation(template, gammas, max_iter=max_iter)

    rows: List[RateRow] = []
    previous = None
    for gamma, result in zip(gammas, results):
        cfg = ex.cfg.with_gamma(gamma)
        if result.state is None:
            rows.append(RateRow(gamma, h, math.nan, math.nan, math.nan, None, result.iterations, False,
                                message=result.message))
            previous = None
            continue
        try:
            u, y, p = result.state.u, result.state.y, result.state.p
            err_l2 = l2_error_sq(u, ex.u_bar)
            err_l1 = l1_error(u, ex.u_bar)
            err_state = l2_error_sq(y, ex.w)
            err_control = l2_error_sq_controls(p, cfg, ex.u_bar)
            residual = optimality_residual(cfg, u, p)
        except Exception as e:
            logger.error(f"γ = {gamma:.6g}, h = {h:g} 误差计算失败: {e}")
            rows.append(RateRow(gamma, h, math.nan, math.nan, math.nan, None, result.iterations, False,
                                message=str(e)))
            previous = None
            continue

        converged = result.converged and residual <= optimality_tol * cfg.span
        if result.converged and not converged:
            logger.error(f"γ = {gamma:.6g}, h = {h:g} 最优性复检失败: 残差 {residual:.3e}")

        kappa = None
        if converged and previous is not None and previous[1] > 0 and err_l2 > 0:
            kappa = kappa_between(previous[1], err_l2, previous[0], gamma)
        rows.append(RateRow(gamma, h, err_l2, err_l1, err_state, kappa, result.iterations, converged,
                            optimality_residual=residual, err_control_sq=err_control,
                            message=result.message))
        previous = (gamma, err_l2) if converged else None
        logger.info(f"h = {h:g}, γ = 2^{math.log2(gamma):.0f}: ‖u−ū‖² = {err_l2:.4e}, "
                    f"‖H_γ(p)−ū‖² = {err_control:.4e}, "
                    f"κ = {'-' if kappa is None else f'{kappa:.4f}'}, 迭代 {result.iterations}")

    logger.info(f"通道 h = {h:g} 完成 ({time.time() - start:.1f}s)")
    return rows


def run_sweep(cfg: SweepConfig) -> RateTable:
    """
    按配置运行全部通道

    worker_count > 1 时各通道在进程池中并行，结果按配置顺序合并。
    """
    gammas = cfg.gammas
    if not gammas:
        return RateTable([])

    args = [(cfg.example_id, h, gammas, cfg.max_iter, cfg.alpha, cfg.optimality_tol) for h in cfg.h_list]
    workers = min(cfg.worker_count, len(args))
    if workers <= 1:
        lanes = [run_lane(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_lane, *a) for a in args]
            lanes = [f.result() for f in futures]

    table = RateTable([row for lane in lanes for row in lane])
    failed = sum(1 for r in table if not r.converged)
    if failed:
        logger.warning(f"{failed} 个求解未收敛")
    return table


def emit_csv(table: RateTable, path: str):
    """写出 gamma,h,err_l2_sq,err_l1,err_state_sq,kappa,iterations,converged"""
    target = Path(path)
    try:
        if target.parent and not target.parent.exists():
            target.parent.mkdir(parents=True, exist_ok=True)
        table.to_frame().to_csv(target, index=False, na_rep="")
    except OSError as e:
        raise OSError(f"写入 {path} 失败: {e}") from e
    logger.info(f"已写出 {len(table)} 行到 {path}")
