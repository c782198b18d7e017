#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多重bang控制命令行
子命令：solve（单次求解）、sweep（γ/h 扫描）、reg-estimate（REG 测度拟合）、check（算例一致性）、
profile（伴随剖面作图数据）
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

# 添加项目根目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.experiments.benchmarks import build_example, consistency_check, sample_profile
from src.experiments.reg_diagnostics import fit_reg_kappa, min_gradient_point
from src.harness.config import (
    load_config_file,
    merge_settings,
    parse_eps_grid,
    sweep_config_from_settings,
)
from src.harness.sweep import emit_csv, run_sweep
from src.multibang.errors import ArgumentError, MultibangError
from src.multibang.penalty import MultibangConfig
from src.multibang.solver import ProblemInstance, active_set_solve
from src.numerics.fem1d import Mesh1D

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_USAGE = 2


def setup_logging(debug: bool = False, log_file: Optional[str] = None):
    """设置日志配置"""
    level = logging.DEBUG if debug else logging.INFO
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"不是数值: {text}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"必须为正: {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value 配置文件")
    common.add_argument("--debug", action="store_true", help="调试日志")
    common.add_argument("--log-file", help="额外写入的日志文件")
    common.add_argument("--example", type=int, choices=[1, 2], help="算例编号")
    common.add_argument("--alpha", type=_positive_float, help="惩罚权重 α")

    parser = argparse.ArgumentParser(prog="multibang", description="一维Poisson多重bang最优控制求解与收敛阶实验")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", parents=[common], help="单次求解，写出节点场")
    solve.add_argument("--gamma", type=_positive_float, help="正则化参数 γ")
    solve.add_argument("--h", type=_positive_float, help="网格尺寸 1/n")
    solve.add_argument("--max-iter", type=int)
    solve.add_argument("--out", help="节点场 CSV")
    solve.set_defaults(handler=cmd_solve)

    sweep = sub.add_parser("sweep", parents=[common], help="γ/h 扫描并写出收敛阶表")
    sweep.add_argument("--gamma-exponents", help="LO:HI[:STEP]，γ = 2^-e")
    sweep.add_argument("--h", help="逗号分隔的网格尺寸")
    sweep.add_argument("--out", help="输出 CSV")
    sweep.add_argument("--workers", type=int, help="并行通道数（默认取 MBC_WORKERS）")
    sweep.add_argument("--max-iter", type=int)
    sweep.add_argument("--allow-fine", action="store_true", default=None, help="允许 h < 1e-5")
    sweep.set_defaults(handler=cmd_sweep)

    reg = sub.add_parser("reg-estimate", parents=[common], help="REG 测度与 κ 拟合")
    reg.add_argument("--eps", help="LO:HI:POINTS")
    reg.add_argument("--out", help="输出 CSV")
    reg.set_defaults(handler=cmd_reg_estimate)

    check = sub.add_parser("check", parents=[common], help="算例构造一致性与水平集梯度")
    check.set_defaults(handler=cmd_check)

    profile = sub.add_parser("profile", parents=[common], help="等距网格上的 p̄、p̄'、ū 与阈值")
    profile.add_argument("--points", type=int, help="采样点数（含两端）")
    profile.add_argument("--out", help="输出 CSV")
    profile.set_defaults(handler=cmd_profile)
    return parser


def _settings(args: argparse.Namespace, keys: List[str]) -> Dict[str, Any]:
    file_values = load_config_file(args.config) if args.config else None
    overrides = {key: getattr(args, key, None) for key in keys}
    return merge_settings(file_values, overrides)


def cmd_solve(args: argparse.Namespace) -> int:
    settings = _settings(args, ["example", "alpha", "gamma", "h", "max_iter", "out"])
    if settings.get("gamma") is None:
        raise ArgumentError("solve 需要 --gamma")
    gamma = float(settings["gamma"])
    if not gamma > 0:
        raise ArgumentError(f"γ 必须为正: {gamma}")
    h = float(str(settings["h"]).split(",")[0])

    ex = build_example(int(settings["example"]), MultibangConfig(alpha=float(settings["alpha"])))
    mesh = Mesh1D.from_h(h)
    problem = ProblemInstance(mesh, ex.cfg.with_gamma(gamma), ex.z)
    result = active_set_solve(problem, max_iter=int(settings["max_iter"]))

    print(f"算例 {ex.example_id}, γ = {gamma:g}, h = {h:g}: "
          f"{'收敛' if result.converged else '未收敛'}，迭代 {result.iterations} 次，"
          f"最优性残差 {result.optimality_residual:.3e}")
    if result.message:
        print(result.message)

    out = settings.get("out")
    if out:
        state = result.state
        frame = pd.DataFrame({
            "x": mesh.nodes,
            "u": state.u.values,
            "y": state.y.values,
            "p": state.p.values,
            "lambda": state.lam.values,
        })
        try:
            frame.to_csv(out, index=False)
        except OSError as e:
            raise OSError(f"写入 {out} 失败: {e}") from e
        logger.info(f"节点场已写出到 {out}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args: argparse.Namespace) -> int:
    keys = ["example", "alpha", "gamma_exponents", "h", "out", "workers", "max_iter", "allow_fine"]
    cfg = sweep_config_from_settings(_settings(args, keys))
    logger.info(f"扫描: 算例 {cfg.example_id}, γ 指数 {cfg.gamma_exponents}, h {cfg.h_list}, "
                f"{cfg.worker_count} 个进程")
    table = run_sweep(cfg)
    if cfg.output_path:
        emit_csv(table, cfg.output_path)
    for row in table:
        kappa = "" if row.kappa is None else f"{row.kappa:.4f}"
        print(f"h={row.h:<8g} γ=2^{np.log2(row.gamma):<6.0f} err²={row.err_l2_sq:.4e} κ={kappa}")
    return EXIT_OK if all(r.converged for r in table) else EXIT_NOT_CONVERGED


def cmd_reg_estimate(args: argparse.Namespace) -> int:
    settings = _settings(args, ["example", "alpha", "eps", "out"])
    ex = build_example(int(settings["example"]), MultibangConfig(alpha=float(settings["alpha"])))
    grid = parse_eps_grid(settings["eps"])
    estimate = fit_reg_kappa(ex.p_bar, ex.cfg, grid)
    print(f"算例 {ex.example_id}: κ_fit = {estimate.kappa_fit:.4f}, c_fit = {estimate.c_fit:.4e} "
          f"({estimate.used_points} 个点)")
    out = settings.get("out")
    if out:
        frame = pd.DataFrame({
            "epsilon": estimate.epsilons,
            "measure": estimate.measures,
            "kappa_fit": [estimate.kappa_fit] * len(estimate.epsilons),
        })
        try:
            frame.to_csv(out, index=False)
        except OSError as e:
            raise OSError(f"写入 {out} 失败: {e}") from e
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    settings = _settings(args, ["example", "alpha"])
    ex = build_example(int(settings["example"]), MultibangConfig(alpha=float(settings["alpha"])))
    report = consistency_check(ex)
    value, x, tau = min_gradient_point(ex.p_bar, ex.cfg)

    print(f"算例 {ex.example_id}")
    print(f"  K(z − Kū) 与 p̄ 的最大偏差: {report.max_deviation:.3e} ({report.grid_size} 个网格点)")
    print(f"  分类不一致的网格点: {len(report.violations)}，最大越界 {report.max_excess:.3e}")
    for v in report.violations[:10]:
        print(f"    x = {v.x:.6f}: p̄ = {v.p_value:.12f}, ū = {v.u_value:g}")
    if np.isfinite(value):
        print(f"  阈值水平集上 min |p̄'| = {value:.3e}，位于 x = {x:.9f} (阈值 {tau:g})")
    else:
        print("  p̄ 不穿过任何阈值")
    return EXIT_OK


def cmd_profile(args: argparse.Namespace) -> int:
    settings = _settings(args, ["example", "alpha", "points", "out"])
    ex = build_example(int(settings["example"]), MultibangConfig(alpha=float(settings["alpha"])))
    prof = sample_profile(ex, int(settings["points"]))

    frame = pd.DataFrame({"x": prof.x, "p_bar": prof.p_bar, "dp_bar": prof.dp_bar, "u_bar": prof.u_bar})
    for k, t in enumerate(prof.thresholds, start=1):
        frame[f"t_{k}"] = t
    print(f"算例 {ex.example_id}: {len(frame)} 个采样点，阈值 "
          + ", ".join(f"{t:g}" for t in prof.thresholds))
    print(f"  p̄ ∈ [{prof.p_bar.min():.6f}, {prof.p_bar.max():.6f}]")

    out = settings.get("out")
    if out:
        try:
            frame.to_csv(out, index=False)
        except OSError as e:
            raise OSError(f"写入 {out} 失败: {e}") from e
        logger.info(f"伴随剖面已写出到 {out}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    setup_logging(args.debug, args.log_file)
    try:
        return args.handler(args)
    except (ArgumentError, ValidationError) as e:
        logger.error(f"参数错误: {e}")
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except MultibangError as e:
        logger.error(f"求解失败: {e}")
        return EXIT_NOT_CONVERGED
    except ValueError as e:
        # 配置值无法转换为数值
        logger.error(f"参数错误: {e}")
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"{e}")
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
