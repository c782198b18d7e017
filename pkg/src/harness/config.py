#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多重bang控制 - 实验配置
扁平 key = value 配置文件、命令行覆盖、环境变量默认值，以及经校验的扫描配置
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from src.multibang.errors import ArgumentError

logger = logging.getLogger(__name__)

WORKERS_ENV = "MBC_WORKERS"
# 小于该网格尺寸需要 --allow-fine
FINE_H_LIMIT = 1e-5

DEFAULT_SETTINGS: Dict[str, Any] = {
    "example": "1",
    "alpha": "2",
    "gamma": None,
    "gamma_exponents": "3:14",
    "h": "1e-4,1e-5",
    "out": None,
    "max_iter": "100",
    "allow_fine": "false",
    "optimality_tol": "1e-10",
    "eps": "1e-6:1e-2:16",
    "points": "1001",
}


def default_workers() -> int:
    """MBC_WORKERS 环境变量，缺省为1"""
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return 1
    try:
        return max(int(raw), 1)
    except ValueError:
        logger.warning(f"忽略无效的 {WORKERS_ENV}={raw}")
        return 1


def load_config_file(path: str) -> Dict[str, str]:
    """读取 key = value 配置文件，# 开头为注释"""
    values: Dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ArgumentError(f"{path}:{lineno}: 缺少 '=': {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise ArgumentError(f"{path}:{lineno}: 键为空")
        values[key.replace("-", "_")] = value
    logger.debug(f"从 {path} 读取 {len(values)} 项配置")
    return values


def merge_settings(file_values: Optional[Dict[str, str]], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """默认值 ← 配置文件 ← 命令行（非 None 的项）"""
    settings = dict(DEFAULT_SETTINGS)
    settings["workers"] = str(default_workers())
    if file_values:
        unknown = set(file_values) - set(settings)
        if unknown:
            raise ArgumentError(f"未知配置项: {sorted(unknown)}")
        settings.update(file_values)
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return settings


def parse_exponents(text: str) -> List[int]:
    """LO:HI[:STEP]，闭区间"""
    parts = str(text).split(":")
    if len(parts) not in (2, 3):
        raise ArgumentError(f"γ 指数格式应为 LO:HI[:STEP]: {text}")
    try:
        lo, hi = int(parts[0]), int(parts[1])
        step = int(parts[2]) if len(parts) == 3 else 1
    except ValueError as e:
        raise ArgumentError(f"γ 指数必须为整数: {text}") from e
    if step < 1:
        raise ArgumentError(f"步长必须为正: {text}")
    return list(range(lo, hi + 1, step))


def parse_h_list(text: str) -> List[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as e:
        raise ArgumentError(f"无效的网格尺寸列表: {text}") from e


def parse_eps_grid(text: str) -> np.ndarray:
    """LO:HI:POINTS 等比网格"""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ArgumentError(f"ε 网格格式应为 LO:HI:POINTS: {text}")
    try:
        lo, hi, points = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as e:
        raise ArgumentError(f"无效的 ε 网格: {text}") from e
    if not 0 < lo < hi:
        raise ArgumentError(f"ε 网格要求 0 < LO < HI: {text}")
    return np.geomspace(lo, hi, points)


def parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ArgumentError(f"无效的布尔值: {value}")


class SweepConfig(BaseModel):
    """γ/h 扫描配置"""
    example_id: int = 1
    gamma_exponents: List[int] = Field(default_factory=list)
    h_list: List[float] = Field(default_factory=lambda: [1e-4])
    output_path: Optional[str] = None
    worker_count: int = Field(default=1, ge=1)
    max_iter: int = Field(default=100, ge=1)
    alpha: float = Field(default=2.0, gt=0)
    optimality_tol: float = Field(default=1e-10, gt=0)
    allow_fine: bool = False

    @field_validator("example_id")
    @classmethod
    def _known_example(cls, v: int) -> int:
        if v not in (1, 2):
            raise ValueError(f"算例编号必须为1或2: {v}")
        return v

    @field_validator("gamma_exponents")
    @classmethod
    def _positive_exponents(cls, v: List[int]) -> List[int]:
        if any(e <= 0 for e in v):
            raise ValueError(f"γ 指数必须为正: {v}")
        return sorted(set(v))

    @field_validator("h_list")
    @classmethod
    def _reciprocal_integers(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("至少需要一个网格尺寸")
        for h in v:
            if h <= 0:
                raise ValueError(f"网格尺寸必须为正: {h}")
            n = round(1.0 / h)
            if n < 2 or abs(n * h - 1.0) > 1e-9:
                raise ValueError(f"网格尺寸 {h} 不是 1/n (n ≥ 2) 的形式")
        return v

    @model_validator(mode="after")
    def _fine_meshes_gated(self) -> "SweepConfig":
        fine = [h for h in self.h_list if h < FINE_H_LIMIT]
        if fine and not self.allow_fine:
            raise ValueError(f"网格尺寸 {fine} 小于 {FINE_H_LIMIT}，需要 --allow-fine")
        return self

    @property
    def gammas(self) -> List[float]:
        """按降序排列的 γ = 2^−e"""
        return [2.0 ** -e for e in self.gamma_exponents]


def sweep_config_from_settings(settings: Dict[str, Any]) -> SweepConfig:
    return SweepConfig(
        example_id=int(settings["example"]),
        gamma_exponents=parse_exponents(settings["gamma_exponents"]),
        h_list=parse_h_list(settings["h"]),
        output_path=settings.get("out"),
        worker_count=int(settings["workers"]),
        max_iter=int(settings["max_iter"]),
        alpha=float(settings["alpha"]),
        optimality_tol=float(settings["optimality_tol"]),
        allow_fine=parse_bool(settings["allow_fine"]),
    )
