#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多重bang控制 - 分段多项式精确运算
有理断点、有理系数的分段多项式：构造解 p̄、ū、w、z 的载体，
也是有限元精确积分的被积函数
"""

import bisect
import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from math import comb
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import brentq

from src.multibang.errors import ArgumentError, DomainError

logger = logging.getLogger(__name__)

RationalLike = Union[int, str, Fraction, float]

# 根去重的距离
POINT_MERGE_TOL = 1e-12


def to_rational(value: RationalLike) -> Fraction:
    """转换为有理数；浮点数按其二进制值精确转换"""
    if isinstance(value, Fraction):
        return value
    return Fraction(value)


def _horner_exact(coeffs: Sequence[Fraction], x: Fraction) -> Fraction:
    acc = Fraction(0)
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def _trim(coeffs: Sequence[Fraction]) -> Tuple[Fraction, ...]:
    """去掉高次零系数，至少保留一项"""
    out = list(coeffs)
    while len(out) > 1 and out[-1] == 0:
        out.pop()
    return tuple(out)


def _shift(coeffs: Sequence[Fraction], a: Fraction) -> Tuple[Fraction, ...]:
    """把 Σ c_k x^k 改写为 Σ d_k (x − a)^k（精确）"""
    n = len(coeffs)
    out = []
    for k in range(n):
        out.append(sum((coeffs[i] * comb(i, k) * a ** (i - k) for i in range(k, n)), Fraction(0)))
    return tuple(out)


@dataclass(frozen=True)
class LevelSet:
    """水平集：孤立点与退化区间（pp ≡ c 的整段）"""
    points: Tuple[float, ...]
    intervals: Tuple[Tuple[float, float], ...] = ()

    def flattened(self) -> List[float]:
        """升序点列，退化区间以两个端点给出"""
        values = list(self.points)
        for a, b in self.intervals:
            values.extend((a, b))
        return _dedupe(sorted(values))


def _dedupe(values: Iterable[float], tol: float = POINT_MERGE_TOL) -> List[float]:
    out: List[float] = []
    for v in values:
        if not out or v - out[-1] > tol:
            out.append(v)
    return out


@dataclass(frozen=True)
class PiecewisePolynomial:
    """
    [0,1] 上的分段多项式

    系数按升幂排列、以全局变量 x 表示，均为精确有理数。
    区间约定为半开 [b_j, b_{j+1})，最后一段闭合。
    """
    breakpoints: Tuple[Fraction, ...]
    pieces: Tuple[Tuple[Fraction, ...], ...]

    def __post_init__(self):
        bps = tuple(to_rational(b) for b in self.breakpoints)
        pieces = tuple(_trim([to_rational(c) for c in piece]) if len(piece) else () for piece in self.pieces)

        if len(bps) < 2 or bps[0] != 0 or bps[-1] != 1:
            raise ArgumentError(f"断点必须从0开始到1结束: {bps}")
        if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])):
            raise ArgumentError("断点必须严格递增")
        if len(pieces) != len(bps) - 1:
            raise ArgumentError(f"分段数 {len(pieces)} 与断点数 {len(bps)} 不匹配")
        if any(len(p) == 0 for p in pieces):
            raise ArgumentError("每段系数列表必须非空")

        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "pieces", pieces)

    # ---- 构造 ----

    @classmethod
    def from_pieces(cls, breakpoints: Sequence[RationalLike],
                    pieces: Sequence[Sequence[RationalLike]]) -> "PiecewisePolynomial":
        return cls(tuple(breakpoints), tuple(tuple(p) for p in pieces))

    @classmethod
    def constant(cls, value: RationalLike) -> "PiecewisePolynomial":
        return cls((0, 1), ((value,),))

    @classmethod
    def polynomial(cls, coeffs: Sequence[RationalLike]) -> "PiecewisePolynomial":
        """单段全局多项式"""
        return cls((0, 1), (tuple(coeffs),))

    @classmethod
    def zero(cls) -> "PiecewisePolynomial":
        return cls.constant(0)

    # ---- 基本属性 ----

    @property
    def n_pieces(self) -> int:
        return len(self.pieces)

    @property
    def degree(self) -> int:
        return max(len(p) for p in self.pieces) - 1

    @cached_property
    def float_breakpoints(self) -> np.ndarray:
        return np.array([float(b) for b in self.breakpoints])

    @cached_property
    def local_pieces(self) -> Tuple[Tuple[Fraction, ...], ...]:
        """以各段左端点为中心的精确系数"""
        return tuple(_shift(p, b) for p, b in zip(self.pieces, self.breakpoints))

    @cached_property
    def _local_matrix(self) -> np.ndarray:
        width = self.degree + 1
        mat = np.zeros((self.n_pieces, width))
        for j, coeffs in enumerate(self.local_pieces):
            mat[j, :len(coeffs)] = [float(c) for c in coeffs]
        return mat

    @cached_property
    def _primitive(self) -> "PiecewisePolynomial":
        return self.antiderivative(0)

    @cached_property
    def piece_degrees(self) -> np.ndarray:
        return np.array([len(p) - 1 for p in self.pieces], dtype=np.int64)

    def local_coefficients(self, j: int, origin: float) -> np.ndarray:
        """第 j 段在 t = x − origin 下的浮点升幂系数"""
        c = self._local_matrix[j, :len(self.pieces[j])]
        s = origin - float(self.breakpoints[j])
        return np.array([sum(c[i] * comb(i, k) * s ** (i - k) for i in range(k, len(c))) for k in range(len(c))])

    def is_zero(self) -> bool:
        return all(c == 0 for p in self.pieces for c in p)

    # ---- 求值 ----

    def piece_index(self, x: float) -> int:
        idx = int(np.searchsorted(self.float_breakpoints, x, side="right")) - 1
        return min(max(idx, 0), self.n_pieces - 1)

    def piece_index_exact(self, x: Fraction) -> int:
        idx = bisect.bisect_right(self.breakpoints, x) - 1
        return min(max(idx, 0), self.n_pieces - 1)

    def eval(self, x: float) -> float:
        """在 x ∈ [0,1] 处求值"""
        if not 0.0 <= x <= 1.0:
            raise DomainError(f"x = {x} 不在 [0, 1] 内")
        return float(self.eval_array(np.array([float(x)]))[0])

    def eval_exact(self, x: RationalLike) -> Fraction:
        """有理数精确求值"""
        xr = to_rational(x)
        if not 0 <= xr <= 1:
            raise DomainError(f"x = {xr} 不在 [0, 1] 内")
        return _horner_exact(self.pieces[self.piece_index_exact(xr)], xr)

    def eval_array(self, x: np.ndarray, piece_index: Optional[np.ndarray] = None) -> np.ndarray:
        """
        向量化浮点求值

        piece_index 可由调用方给出（例如在断点处需要取左侧段的值时）。
        """
        x = np.asarray(x, dtype=float)
        if piece_index is None:
            idx = np.clip(np.searchsorted(self.float_breakpoints, x, side="right") - 1, 0, self.n_pieces - 1)
        else:
            idx = np.asarray(piece_index)
        t = x - self.float_breakpoints[idx]
        mat = self._local_matrix
        acc = mat[idx, -1].copy()
        for k in range(mat.shape[1] - 2, -1, -1):
            acc = acc * t + mat[idx, k]
        return acc

    def __call__(self, x):
        if np.ndim(x) == 0:
            return self.eval(x)
        return self.eval_array(x)

    # ---- 微积分 ----

    def differentiate(self) -> "PiecewisePolynomial":
        """逐段求导，断点不变"""
        pieces = []
        for p in self.pieces:
            d = [p[k] * k for k in range(1, len(p))]
            pieces.append(tuple(d) if d else (Fraction(0),))
        return PiecewisePolynomial(self.breakpoints, tuple(pieces))

    def antiderivative(self, value_at_zero: RationalLike = 0) -> "PiecewisePolynomial":
        """连续原函数 F，F(0) = value_at_zero，跨断点精确连续"""
        pieces = []
        previous: Optional[Tuple[Fraction, ...]] = None
        for j, p in enumerate(self.pieces):
            raw = [Fraction(0)] + [c / (k + 1) for k, c in enumerate(p)]
            b = self.breakpoints[j]
            if previous is None:
                raw[0] = to_rational(value_at_zero)
            else:
                raw[0] = _horner_exact(previous, b) - _horner_exact(raw, b)
            previous = tuple(raw)
            pieces.append(previous)
        return PiecewisePolynomial(self.breakpoints, tuple(pieces))

    def integrate_exact(self, a: RationalLike, b: RationalLike) -> Fraction:
        ar, br = to_rational(a), to_rational(b)
        if ar > br:
            raise ArgumentError(f"积分下限 {a} 大于上限 {b}")
        F = self._primitive
        return F.eval_exact(br) - F.eval_exact(ar)

    def integrate(self, a: RationalLike = 0, b: RationalLike = 1) -> float:
        """定积分 ∫_a^b pp dx（有理精确，返回浮点）"""
        return float(self.integrate_exact(a, b))

    # ---- 算术 ----

    def refine(self, points: Iterable[RationalLike]) -> "PiecewisePolynomial":
        """插入额外断点，函数不变"""
        merged = sorted(set(self.breakpoints) | {to_rational(p) for p in points})
        pieces = []
        for left, right in zip(merged, merged[1:]):
            pieces.append(self.pieces[self.piece_index_exact((left + right) / 2)])
        return PiecewisePolynomial(tuple(merged), tuple(pieces))

    def _combine(self, other: "PiecewisePolynomial", sign: int) -> "PiecewisePolynomial":
        left = self.refine(other.breakpoints)
        right = other.refine(self.breakpoints)
        pieces = []
        for p, q in zip(left.pieces, right.pieces):
            n = max(len(p), len(q))
            pieces.append(tuple(
                (p[k] if k < len(p) else 0) + sign * (q[k] if k < len(q) else 0) for k in range(n)
            ))
        return PiecewisePolynomial(left.breakpoints, tuple(pieces))

    def __add__(self, other):
        if isinstance(other, PiecewisePolynomial):
            return self._combine(other, 1)
        return self._combine(PiecewisePolynomial.constant(other), 1)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, PiecewisePolynomial):
            return self._combine(other, -1)
        return self._combine(PiecewisePolynomial.constant(other), -1)

    def __neg__(self):
        return self * -1

    def __mul__(self, scalar):
        if isinstance(scalar, PiecewisePolynomial):
            return NotImplemented
        s = to_rational(scalar)
        return PiecewisePolynomial(self.breakpoints, tuple(tuple(c * s for c in p) for p in self.pieces))

    __rmul__ = __mul__

    # ---- 水平集 ----

    def level_set(self, c: RationalLike, tol: float = 1e-12) -> LevelSet:
        """
        求 pp(x) = c 在 [0,1] 上的全部解

        每段按导数的零点切成单调小段，小段上至多一个变号根，用 brentq 求出；
        切触根在临界点处检测。pp ≡ c 的整段作为退化区间返回。
        """
        if tol <= 0:
            raise ArgumentError(f"tol 必须为正: {tol}")
        cr = to_rational(c)
        scale = tol * (1.0 + abs(float(cr)))
        points: List[float] = []
        intervals: List[Tuple[float, float]] = []

        for j, local in enumerate(self.local_pieces):
            a = float(self.breakpoints[j])
            width = float(self.breakpoints[j + 1] - self.breakpoints[j])
            shifted = list(local)
            shifted[0] -= cr
            if all(v == 0 for v in shifted):
                intervals.append((a, float(self.breakpoints[j + 1])))
                continue

            coeffs = np.array([float(v) for v in shifted])
            last_piece = j == self.n_pieces - 1
            for t in piece_roots(coeffs, width, scale, include_right=last_piece):
                points.append(a + t)

        points = _dedupe(sorted(points))
        # 退化区间内部（含端点）的点不再单列
        if intervals:
            points = [x for x in points
                      if not any(lo - POINT_MERGE_TOL <= x <= hi + POINT_MERGE_TOL for lo, hi in intervals)]
        return LevelSet(tuple(points), tuple(_merge_intervals(intervals)))

    def level_set_points(self, c: RationalLike, tol: float = 1e-12) -> List[float]:
        """pp(x) = c 的升序解点；退化区间以两端点给出"""
        return self.level_set(c, tol).flattened()


def _merge_intervals(intervals: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    merged: List[Tuple[float, float]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1] + POINT_MERGE_TOL:
            merged[-1] = (merged[-1][0], max(hi, merged[-1][1]))
        else:
            merged.append((lo, hi))
    return merged


def _trim_float(coeffs: np.ndarray) -> np.ndarray:
    nz = np.nonzero(coeffs)[0]
    return coeffs[:nz[-1] + 1] if nz.size else coeffs[:1]


def interval_roots(coeffs: Sequence[float], lo: float, hi: float, scale: float = 0.0) -> List[float]:
    """
    升幂系数多项式在 [lo, hi) 上的根（升序）

    先递归求导数的根，把区间切成单调小段，每个单调小段上至多一个变号根。
    小段左端点处 |f| ≤ scale 时记该端点为根（切触根），不再在该段内求变号根。
    """
    c = _trim_float(np.asarray(coeffs, dtype=float))
    if len(c) == 1 or hi <= lo:
        return []
    if len(c) == 2:
        t = -c[0] / c[1]
        return [float(t)] if lo <= t < hi else []

    def f(t):
        return npoly.polyval(t, c)

    knots = [lo] + [t for t in interval_roots(npoly.polyder(c), lo, hi) if lo < t < hi] + [hi]
    roots: List[float] = []
    for a, b in zip(knots, knots[1:]):
        fa, fb = f(a), f(b)
        if abs(fa) <= scale:
            roots.append(float(a))
        elif fa * fb < 0 and abs(fb) > scale:
            roots.append(brentq(f, a, b, xtol=1e-16, rtol=4 * np.finfo(float).eps))
    return roots


def piece_roots(coeffs: np.ndarray, width: float, scale: float, include_right: bool) -> List[float]:
    """局部坐标 t ∈ [0, width] 上的根；右端点只在 include_right 时计入"""
    roots = interval_roots(coeffs, 0.0, width, scale)
    if include_right and abs(npoly.polyval(width, np.asarray(coeffs, dtype=float))) <= scale:
        roots.append(float(width))
    return roots
