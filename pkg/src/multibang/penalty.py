#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多重bang控制 - 惩罚函数
多重bang被积函数 g、积分泛函 G 及其方向导数、伴随值的区域分类、
Moreau-Yosida 正则化的预解映射 H_γ 及其Newton导数
"""

import dataclasses
import logging
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Sequence, Tuple

import numpy as np

from src.multibang.errors import ArgumentError, DomainError

if TYPE_CHECKING:
    from src.numerics.fem1d import NodalField

logger = logging.getLogger(__name__)

DEFAULT_LEVELS = (-2.0, -1.0, 0.0, 1.0, 2.0)
DEFAULT_ALPHA = 2.0
# 非正则分类的相对容差
CLASSIFY_TOL = 1e-12
# 节点值视为位于某个水平上的容差
LEVEL_TOL = 1e-12


@dataclass(frozen=True)
class MultibangConfig:
    """多重bang配置：控制水平 u_1 < … < u_d，惩罚权重 α，正则化参数 γ"""
    levels: Tuple[float, ...] = DEFAULT_LEVELS
    alpha: float = DEFAULT_ALPHA
    gamma: float = 0.0

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if len(levels) < 2:
            raise ArgumentError(f"至少需要两个控制水平: {levels}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ArgumentError(f"控制水平必须严格递增: {levels}")
        if not self.alpha > 0:
            raise ArgumentError(f"α 必须为正: {self.alpha}")
        if not self.gamma >= 0:
            raise ArgumentError(f"γ 不能为负: {self.gamma}")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def d(self) -> int:
        return len(self.levels)

    @property
    def u_min(self) -> float:
        return self.levels[0]

    @property
    def u_max(self) -> float:
        return self.levels[-1]

    @property
    def span(self) -> float:
        return self.u_max - self.u_min

    @property
    def level_array(self) -> np.ndarray:
        return np.array(self.levels)

    @property
    def slopes(self) -> np.ndarray:
        """g 在各段上的斜率 ½(u_i + u_{i+1})"""
        u = self.level_array
        return 0.5 * (u[:-1] + u[1:])

    @property
    def thresholds(self) -> np.ndarray:
        """α/2 (u_i + u_{i+1})"""
        return self.alpha * self.slopes

    def band_edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """奇异带 Q_{i,i+1}^γ = [t_i + γu_i, t_i + γu_{i+1}] 的左右端点"""
        require_gamma(self)
        u = self.level_array
        t = self.thresholds
        return t + self.gamma * u[:-1], t + self.gamma * u[1:]

    def with_gamma(self, gamma: float) -> "MultibangConfig":
        return dataclasses.replace(self, gamma=gamma)


class RegionKind(Enum):
    """区域类型"""
    REGULAR = "regular"
    SINGULAR = "singular"


@dataclass(frozen=True)
class RegionLabel:
    """
    区域标签：Regular(i) 或 Singular(i, i+1)，i 从1开始

    整数编码：Regular(i) → 2(i−1)，Singular(i, i+1) → 2(i−1)+1
    """
    kind: RegionKind
    index: int

    @classmethod
    def regular(cls, i: int) -> "RegionLabel":
        return cls(RegionKind.REGULAR, i)

    @classmethod
    def singular(cls, i: int) -> "RegionLabel":
        return cls(RegionKind.SINGULAR, i)

    @classmethod
    def from_code(cls, code: int) -> "RegionLabel":
        code = int(code)
        if code % 2:
            return cls.singular(code // 2 + 1)
        return cls.regular(code // 2 + 1)

    @property
    def code(self) -> int:
        return 2 * (self.index - 1) + (1 if self.is_singular else 0)

    @property
    def is_singular(self) -> bool:
        return self.kind is RegionKind.SINGULAR

    def validate(self, cfg: MultibangConfig):
        limit = cfg.d - 1 if self.is_singular else cfg.d
        if not 1 <= self.index <= limit:
            raise ArgumentError(f"标签 {self} 超出 d = {cfg.d} 的范围")

    def __str__(self) -> str:
        if self.is_singular:
            return f"Singular({self.index},{self.index + 1})"
        return f"Regular({self.index})"


def require_gamma(cfg: MultibangConfig):
    if not cfg.gamma > 0:
        raise ArgumentError(f"正则化求解需要 γ > 0，当前 γ = {cfg.gamma}")


def _check_domain(cfg: MultibangConfig, v: np.ndarray, tol: float = 0.0):
    v = np.asarray(v, dtype=float)
    if np.any(v < cfg.u_min - tol) or np.any(v > cfg.u_max + tol) or np.any(np.isnan(v)):
        bad = v[(v < cfg.u_min - tol) | (v > cfg.u_max + tol) | np.isnan(v)]
        raise DomainError(f"取值 {bad[:5]} 不在 dom g = [{cfg.u_min}, {cfg.u_max}] 内")


def _segment_index(cfg: MultibangConfig, v: np.ndarray) -> np.ndarray:
    return np.clip(np.searchsorted(cfg.level_array, v, side="right") - 1, 0, cfg.d - 2)


# ---- 被积函数 g ----

def g_eval_array(cfg: MultibangConfig, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    _check_domain(cfg, v)
    u = cfg.level_array
    i = _segment_index(cfg, v)
    return 0.5 * ((u[i] + u[i + 1]) * v - u[i] * u[i + 1])


def g_eval(cfg: MultibangConfig, v: float) -> float:
    """g(v) = ½((u_i + u_{i+1})v − u_i u_{i+1})，v ∈ [u_i, u_{i+1}]"""
    return float(g_eval_array(cfg, np.array([v]))[0])


def subgradient_interval(cfg: MultibangConfig, v: float, level_tol: float = 0.0) -> Tuple[float, float]:
    """∂g(v)，边界水平处带 ±∞ 端点"""
    _check_domain(cfg, np.array([v]), level_tol)
    u = cfg.level_array
    m = cfg.slopes
    hit = np.nonzero(np.abs(u - v) <= level_tol)[0]
    if hit.size:
        k = int(hit[np.argmin(np.abs(u[hit] - v))])
        lower = -np.inf if k == 0 else float(m[k - 1])
        upper = np.inf if k == cfg.d - 1 else float(m[k])
        return lower, upper
    slope = float(m[int(_segment_index(cfg, np.array([v]))[0])])
    return slope, slope


# ---- 泛函 G ----

def _overlaps(cfg: MultibangConfig, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    仿射段 [min(a,b), max(a,b)] 与各水平段的重叠长度及重叠中点，形状 (单元数, d−1)
    """
    u = cfg.level_array
    lo = np.minimum(a, b)[:, None]
    hi = np.maximum(a, b)[:, None]
    left = np.maximum(lo, u[None, :-1])
    right = np.minimum(hi, u[None, 1:])
    length = np.clip(right - left, 0.0, None)
    return length, 0.5 * (left + right)


def G_eval(cfg: MultibangConfig, u: "NodalField") -> float:
    """
    ∫ g(u(x)) dx

    每个单元按 u 穿过水平的位置切开，子段上被积函数为线性，精确积分。
    """
    values = u.values
    _check_domain(cfg, values)
    h = u.mesh.h
    a, b = values[:-1], values[1:]
    width = np.abs(b - a)
    length, mid = _overlaps(cfg, a, b)

    lv = cfg.level_array
    g_mid = 0.5 * ((lv[:-1] + lv[1:])[None, :] * mid - (lv[:-1] * lv[1:])[None, :])
    flat = width == 0
    per_elem = np.empty_like(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_elem[~flat] = (length[~flat] * g_mid[~flat]).sum(axis=1) / width[~flat]
    if np.any(flat):
        per_elem[flat] = g_eval_array(cfg, a[flat])
    return float(h * per_elem.sum())


def _positive_part_mean(v0: np.ndarray, v1: np.ndarray) -> np.ndarray:
    """∫_0^1 max(v,0) ds，v 为线性、端点值 v0, v1"""
    both_pos = (v0 >= 0) & (v1 >= 0)
    both_neg = (v0 <= 0) & (v1 <= 0)
    out = np.zeros_like(v0)
    out[both_pos] = 0.5 * (v0[both_pos] + v1[both_pos])
    cross = ~both_pos & ~both_neg
    pos = np.maximum(v0[cross], v1[cross])
    out[cross] = pos * pos / (2.0 * (np.abs(v0[cross]) + np.abs(v1[cross])))
    return out


def check_tangential_cone(cfg: MultibangConfig, u: "NodalField", v: "NodalField", tol: float = LEVEL_TOL):
    """u = u_1 处要求 v ≥ 0，u = u_d 处要求 v ≤ 0"""
    at_min = np.abs(u.values - cfg.u_min) <= tol
    at_max = np.abs(u.values - cfg.u_max) <= tol
    if np.any(at_min & (v.values < -tol)) or np.any(at_max & (v.values > tol)):
        raise ArgumentError("方向 v 不在 u 的切锥内")


def G_dir_derivative(cfg: MultibangConfig, u: "NodalField", v: "NodalField", tol: float = LEVEL_TOL) -> float:
    """
    G 在 u 处沿 v 的方向导数

    u 严格介于两水平之间时斜率为 ½(u_i+u_{i+1})；u 位于水平 u_i 上时
    按 v 的符号取单侧斜率。
    """
    _check_domain(cfg, u.values)
    check_tangential_cone(cfg, u, v, tol)
    h = u.mesh.h
    m = cfg.slopes
    a, b = u.values[:-1], u.values[1:]
    v0, v1 = v.values[:-1], v.values[1:]
    per_elem = np.empty_like(a)

    # u 在单元上非常数：按水平切开，每段斜率固定
    moving = a != b
    if np.any(moving):
        am, bm = a[moving], b[moving]
        length, mid = _overlaps(cfg, am, bm)
        width = np.abs(bm - am)
        s_mid = (mid - am[:, None]) / (bm - am)[:, None]
        v_mid = v0[moving][:, None] + (v1[moving] - v0[moving])[:, None] * s_mid
        per_elem[moving] = (m[None, :] * length * v_mid).sum(axis=1) / width

    # u 在单元上为常数
    flat = ~moving
    if np.any(flat):
        af = a[flat]
        lv = cfg.level_array
        nearest = np.argmin(np.abs(af[:, None] - lv[None, :]), axis=1)
        on_level = np.abs(af - lv[nearest]) <= tol
        seg = _segment_index(cfg, af)
        vf0, vf1 = v0[flat], v1[flat]
        mean_v = 0.5 * (vf0 + vf1)
        plus = _positive_part_mean(vf0, vf1)
        minus = mean_v - plus
        slope_right = m[np.minimum(nearest, cfg.d - 2)]
        slope_left = m[np.maximum(nearest - 1, 0)]
        per_elem[flat] = np.where(on_level, slope_right * plus + slope_left * minus, m[seg] * mean_v)

    return float(h * per_elem.sum())


# ---- 分类与预解映射 ----

def classify_unreg_array(cfg: MultibangConfig, q: np.ndarray) -> np.ndarray:
    """非正则分类的整数编码；只有阈值上的值（容差内）归入奇异区域"""
    q = np.asarray(q, dtype=float)
    t = cfg.thresholds
    tol = CLASSIFY_TOL * (1.0 + np.abs(q))
    hit = np.abs(q[..., None] - t) <= tol[..., None]
    codes = 2 * (q[..., None] > t).sum(axis=-1)
    on = hit.any(axis=-1)
    codes = np.where(on, 2 * np.argmax(hit, axis=-1) + 1, codes)
    return codes.astype(np.int64)


def classify_unreg(cfg: MultibangConfig, q: float) -> RegionLabel:
    return RegionLabel.from_code(classify_unreg_array(cfg, np.array([q]))[0])


def classify_reg_array(cfg: MultibangConfig, q: np.ndarray) -> np.ndarray:
    """
    正则分类的整数编码

    Q_i^γ 为开集、Q_{i,i+1}^γ 为闭集，带边界上的值归入奇异带。
    """
    lo, hi = cfg.band_edges()
    q = np.asarray(q, dtype=float)
    return (np.searchsorted(lo, q, side="right") + np.searchsorted(hi, q, side="left")).astype(np.int64)


def classify_reg(cfg: MultibangConfig, q: float) -> RegionLabel:
    return RegionLabel.from_code(classify_reg_array(cfg, np.array([q]))[0])


def H_gamma_array(cfg: MultibangConfig, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    codes = classify_reg_array(cfg, q)
    u = cfg.level_array
    i = codes // 2
    singular = codes % 2 == 1
    out = u[np.minimum(i, cfg.d - 1)].astype(float)
    if np.any(singular):
        k = i[singular]
        raw = (q[singular] - cfg.thresholds[k]) / cfg.gamma
        out[singular] = np.clip(raw, u[k], u[k + 1])
    return out


def H_gamma(cfg: MultibangConfig, q: float) -> float:
    """u_γ = H_γ(q)：正则区域取水平 u_i，奇异带上取 (q − α/2(u_i+u_{i+1}))/γ"""
    return float(H_gamma_array(cfg, np.array([q]))[0])


def H_gamma_newton_derivative_array(cfg: MultibangConfig, q: np.ndarray) -> np.ndarray:
    codes = classify_reg_array(cfg, q)
    return np.where(codes % 2 == 1, 1.0 / cfg.gamma, 0.0)


def H_gamma_newton_derivative(cfg: MultibangConfig, q: float) -> float:
    return float(H_gamma_newton_derivative_array(cfg, np.array([q]))[0])


def labels_from_codes(codes: Sequence[int]) -> Tuple[RegionLabel, ...]:
    return tuple(RegionLabel.from_code(c) for c in codes)
