#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多重bang控制 - 一维线性有限元
Ω=(0,1) 上的均匀网格、齐次Dirichlet边界：刚度/质量矩阵、带状求解、
对分段多项式的精确载荷向量与精确误差范数
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, solve_banded

from src.multibang.errors import ArgumentError, SolverError
from src.numerics.piecewise_poly import PiecewisePolynomial, interval_roots

logger = logging.getLogger(__name__)

# 子区间端点合并阈值
SEGMENT_MERGE_TOL = 1e-14
LOAD_GAUSS_POINTS = 5
ERROR_GAUSS_POINTS = 6


@dataclass(frozen=True)
class Mesh1D:
    """均匀网格，节点 x_j = j·h"""
    n_elements: int

    def __post_init__(self):
        if int(self.n_elements) != self.n_elements or self.n_elements < 2:
            raise ArgumentError(f"单元数必须是不小于2的整数: {self.n_elements}")
        object.__setattr__(self, "n_elements", int(self.n_elements))

    @classmethod
    def from_h(cls, h: float) -> "Mesh1D":
        """由网格尺寸构造；h 必须是 1/n"""
        if h <= 0:
            raise ArgumentError(f"网格尺寸必须为正: {h}")
        n = int(round(1.0 / h))
        if n < 2 or abs(n * h - 1.0) > 1e-9:
            raise ArgumentError(f"网格尺寸 {h} 不是 1/n 的形式")
        return cls(n)

    @property
    def h(self) -> float:
        return 1.0 / self.n_elements

    @property
    def h_exact(self) -> Fraction:
        return Fraction(1, self.n_elements)

    @property
    def n_nodes(self) -> int:
        return self.n_elements + 1

    @property
    def n_interior(self) -> int:
        return self.n_elements - 1

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.h


@dataclass(eq=False)
class NodalField:
    """
    网格上的P1函数（包含边界节点的全部节点值）
    """
    mesh: Mesh1D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ArgumentError(
                f"节点值长度 {self.values.shape} 与网格节点数 {self.mesh.n_nodes} 不符"
            )

    @classmethod
    def zeros(cls, mesh: Mesh1D) -> "NodalField":
        return cls(mesh, np.zeros(mesh.n_nodes))

    @classmethod
    def constant(cls, mesh: Mesh1D, value: float) -> "NodalField":
        return cls(mesh, np.full(mesh.n_nodes, float(value)))

    @classmethod
    def from_interior(cls, mesh: Mesh1D, interior: np.ndarray,
                      boundary: Tuple[float, float] = (0.0, 0.0)) -> "NodalField":
        values = np.empty(mesh.n_nodes)
        values[0], values[-1] = boundary
        values[1:-1] = interior
        return cls(mesh, values)

    @classmethod
    def interpolate(cls, mesh: Mesh1D,
                    f: Union[PiecewisePolynomial, Callable[[np.ndarray], np.ndarray]]) -> "NodalField":
        """节点插值"""
        if isinstance(f, PiecewisePolynomial):
            return cls(mesh, f.eval_array(mesh.nodes))
        return cls(mesh, np.asarray(f(mesh.nodes), dtype=float))

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1]

    def copy(self) -> "NodalField":
        return NodalField(self.mesh, self.values.copy())

    def _check_mesh(self, other: "NodalField"):
        if other.mesh != self.mesh:
            raise ArgumentError("两个节点场不在同一网格上")

    def __add__(self, other: "NodalField") -> "NodalField":
        self._check_mesh(other)
        return NodalField(self.mesh, self.values + other.values)

    def __sub__(self, other: "NodalField") -> "NodalField":
        self._check_mesh(other)
        return NodalField(self.mesh, self.values - other.values)

    def __mul__(self, scalar: float) -> "NodalField":
        return NodalField(self.mesh, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "NodalField":
        return NodalField(self.mesh, -self.values)

    def inner(self, other: "NodalField") -> float:
        """精确 L² 内积（一致质量矩阵，含边界节点）"""
        self._check_mesh(other)
        return float(self.values @ (assemble_full_mass(self.mesh) @ other.values))

    def norm_sq(self) -> float:
        return self.inner(self)

    def eval_array(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.mesh.nodes, self.values)


@dataclass
class BandedSystem:
    """
    带状存储的线性系统

    ab[u + i − j, j] = a_ij，与 scipy.linalg.solve_banded 的约定一致。
    """
    ab: np.ndarray
    lower: int
    upper: int
    rhs: Optional[np.ndarray] = None

    @property
    def dimension(self) -> int:
        return self.ab.shape[1]

    @property
    def bandwidth(self) -> Tuple[int, int]:
        return self.lower, self.upper

    @classmethod
    def from_sparse(cls, matrix: sp.spmatrix, rhs: Optional[np.ndarray] = None) -> "BandedSystem":
        """由稀疏矩阵转换，带宽按非零模式计算"""
        coo = sp.coo_matrix(matrix)
        n = coo.shape[0]
        if coo.shape != (n, n):
            raise ArgumentError(f"矩阵必须为方阵: {coo.shape}")
        offset = coo.row.astype(np.int64) - coo.col.astype(np.int64)
        lower = int(max(offset.max(initial=0), 0))
        upper = int(max((-offset).max(initial=0), 0))
        ab = np.zeros((lower + upper + 1, n))
        np.add.at(ab, (upper + offset, coo.col), coo.data)
        return cls(ab, lower, upper, None if rhs is None else np.asarray(rhs, dtype=float))

    def to_sparse(self) -> sp.csr_matrix:
        offsets = [self.upper - r for r in range(self.lower + self.upper + 1)]
        return sp.dia_matrix((self.ab, offsets), shape=(self.dimension, self.dimension)).tocsr()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_sparse() @ np.asarray(x, dtype=float)

    def solve(self, rhs: Optional[np.ndarray] = None) -> np.ndarray:
        """带状LU分解求解"""
        b = self.rhs if rhs is None else np.asarray(rhs, dtype=float)
        if b is None:
            raise ArgumentError("缺少右端项")
        if b.shape[0] != self.dimension:
            raise ArgumentError(f"右端项长度 {b.shape[0]} 与系统维数 {self.dimension} 不符")
        try:
            x = solve_banded((self.lower, self.upper), self.ab, b, check_finite=False)
        except (LinAlgError, ValueError) as e:
            raise SolverError(f"带状分解失败: {e}") from e
        if not np.all(np.isfinite(x)):
            raise SolverError("带状求解得到非有限值")
        return x


# ---- 组装 ----

def _tridiagonal(m: int, off: float, diag: float) -> sp.csr_matrix:
    if m == 1:
        return sp.csr_matrix(np.array([[diag]]))
    return sp.diags([off * np.ones(m - 1), diag * np.ones(m), off * np.ones(m - 1)],
                    [-1, 0, 1], shape=(m, m), format="csr")


def stiffness_matrix(mesh: Mesh1D) -> sp.csr_matrix:
    """内部节点上的 (1/h)(−1, 2, −1)"""
    inv_h = 1.0 / mesh.h
    return _tridiagonal(mesh.n_interior, -inv_h, 2 * inv_h)


def mass_matrix(mesh: Mesh1D) -> sp.csr_matrix:
    """内部节点上的 (h/6)(1, 4, 1)"""
    s = mesh.h / 6.0
    return _tridiagonal(mesh.n_interior, s, 4 * s)


def assemble_stiffness(mesh: Mesh1D) -> BandedSystem:
    return BandedSystem.from_sparse(stiffness_matrix(mesh))


def assemble_mass(mesh: Mesh1D) -> BandedSystem:
    return BandedSystem.from_sparse(mass_matrix(mesh))


def assemble_full_mass(mesh: Mesh1D) -> sp.csr_matrix:
    """包含边界节点的一致质量矩阵"""
    n = mesh.n_nodes
    s = mesh.h / 6.0
    diag = 4 * s * np.ones(n)
    diag[0] = diag[-1] = 2 * s
    return sp.diags([s * np.ones(n - 1), diag, s * np.ones(n - 1)], [-1, 0, 1], format="csr")


# ---- 子区间划分与求积 ----

def _subsegments(mesh: Mesh1D, extra: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """网格节点与附加断点的并集；返回 (左端, 右端, 所在单元)"""
    pts = np.union1d(mesh.nodes, np.asarray(extra, dtype=float))
    keep = np.concatenate(([True], np.diff(pts) > SEGMENT_MERGE_TOL))
    pts = pts[keep]
    pts[0], pts[-1] = 0.0, 1.0
    left, right = pts[:-1], pts[1:]
    elem = np.clip(np.floor(0.5 * (left + right) / mesh.h).astype(np.int64), 0, mesh.n_elements - 1)
    return left, right, elem


def _gauss(left: np.ndarray, right: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """每个子区间上的Gauss点与权重，形状 (m, order)"""
    xg, wg = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (right - left)
    mid = 0.5 * (right + left)
    return mid[:, None] + half[:, None] * xg[None, :], half[:, None] * wg[None, :]


def _hat_weights(mesh: Mesh1D, x: np.ndarray, elem: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """单元左右节点基函数在 x 处的值"""
    x_left = mesh.nodes[elem]
    if x.ndim == 2:
        x_left = x_left[:, None]
    phi_right = (x - x_left) / mesh.h
    return 1.0 - phi_right, phi_right


def _piece_of(ref: PiecewisePolynomial, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    mid = 0.5 * (left + right)
    return np.clip(np.searchsorted(ref.float_breakpoints, mid, side="right") - 1, 0, ref.n_pieces - 1)


def _eval_on(ref: PiecewisePolynomial, x: np.ndarray, pidx: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        return ref.eval_array(x.ravel(), np.repeat(pidx, x.shape[1])).reshape(x.shape)
    return ref.eval_array(x, pidx)


def _field_on(u_h: NodalField, x: np.ndarray, elem: np.ndarray) -> np.ndarray:
    phi_l, phi_r = _hat_weights(u_h.mesh, x, elem)
    v = u_h.values
    if x.ndim == 2:
        return v[elem][:, None] * phi_l + v[elem + 1][:, None] * phi_r
    return v[elem] * phi_l + v[elem + 1] * phi_r


def load_vector(mesh: Mesh1D, f: PiecewisePolynomial) -> np.ndarray:
    """
    内部节点载荷 ∫ f φ_j dx

    单元在 f 的断点处切分，每段5点Gauss积分（对五次 f 乘线性基函数精确）。
    """
    left, right, elem = _subsegments(mesh, f.float_breakpoints)
    x, w = _gauss(left, right, LOAD_GAUSS_POINTS)
    fx = _eval_on(f, x, _piece_of(f, left, right)) * w
    phi_l, phi_r = _hat_weights(mesh, x, elem)
    full = np.bincount(elem, weights=(fx * phi_l).sum(axis=1), minlength=mesh.n_nodes)
    full += np.bincount(elem + 1, weights=(fx * phi_r).sum(axis=1), minlength=mesh.n_nodes)
    return full[1:-1]


def solve_dirichlet(mesh: Mesh1D, rhs: np.ndarray) -> NodalField:
    """求解 A_h y = rhs，边界值为0"""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (mesh.n_interior,):
        raise ArgumentError(f"右端项长度 {rhs.shape} 与内部节点数 {mesh.n_interior} 不符")
    interior = assemble_stiffness(mesh).solve(rhs)
    return NodalField.from_interior(mesh, interior)


def l2_error_sq(u_h: NodalField, ref: PiecewisePolynomial) -> float:
    """精确 ∫(u_h − ref)² dx（6点Gauss，按断点切分）"""
    mesh = u_h.mesh
    left, right, elem = _subsegments(mesh, ref.float_breakpoints)
    x, w = _gauss(left, right, ERROR_GAUSS_POINTS)
    diff = _field_on(u_h, x, elem) - _eval_on(ref, x, _piece_of(ref, left, right))
    return float(np.sum(w * diff * diff))


def l1_error(u_h: NodalField, ref: PiecewisePolynomial) -> float:
    """
    ∫|u_h − ref| dx

    u_h − ref 在每个子区间上是多项式：ref 为线性的段直接求线性根，
    高次段用 interval_roots 精确隔离全部根。按根切开后在符号恒定的小段上做Gauss积分。
    """
    mesh = u_h.mesh
    left, right, elem = _subsegments(mesh, ref.float_breakpoints)
    pidx = _piece_of(ref, left, right)

    da = _field_on(u_h, left, elem) - ref.eval_array(left, pidx)
    db = _field_on(u_h, right, elem) - ref.eval_array(right, pidx)
    linear = ref.piece_degrees[pidx] <= 1
    cross = linear & (da * db < 0)
    roots = left[cross] + (right - left)[cross] * da[cross] / (da[cross] - db[cross])

    cut_x = [roots]
    cut_seg = [np.nonzero(cross)[0]]
    slope = np.diff(u_h.values) / mesh.h
    for k in np.nonzero(~linear)[0]:
        a, width = left[k], right[k] - left[k]
        coeffs = -ref.local_coefficients(int(pidx[k]), a)
        coeffs[0] += _field_on(u_h, np.array([a]), elem[k:k + 1])[0]
        coeffs[1] += slope[elem[k]]
        inner = [t for t in interval_roots(coeffs, 0.0, width) if 0.0 < t < width]
        if inner:
            cut_x.append(a + np.array(inner))
            cut_seg.append(np.full(len(inner), k))

    # 按 (子区间, 位置) 排序后把每个子区间切成符号恒定的小段
    pts = np.concatenate((left, right, *cut_x))
    seg = np.concatenate((np.arange(len(left)), np.arange(len(left)), *cut_seg))
    order = np.lexsort((pts, seg))
    pts, seg = pts[order], seg[order]
    same = seg[1:] == seg[:-1]
    seg_l, seg_r, seg_k = pts[:-1][same], pts[1:][same], seg[:-1][same]

    x, w = _gauss(seg_l, seg_r, ERROR_GAUSS_POINTS)
    vals = _field_on(u_h, x, elem[seg_k]) - _eval_on(ref, x, pidx[seg_k])
    return float(np.sum(w * np.abs(vals)))


def l2_error_sq_controls(p_h: NodalField, cfg, ref: PiecewisePolynomial) -> float:
    """
    隐式控制 H_γ(p_h(x)) 与 ref 的 L² 误差平方

    p_h 在单元上为线性，于是在带边界交点处切分后 H_γ∘p_h 在每段上为常数或线性。
    """
    from src.multibang.penalty import H_gamma_array

    mesh = p_h.mesh
    lo_edges, hi_edges = cfg.band_edges()
    edges = np.concatenate((lo_edges, hi_edges))

    p0 = p_h.values[:-1]
    p1 = p_h.values[1:]
    dp = p1 - p0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (edges[None, :] - p0[:, None]) / dp[:, None]
    inside = np.isfinite(s) & (s > 0) & (s < 1)
    rows, cols = np.nonzero(inside)
    crossings = mesh.nodes[rows] + s[rows, cols] * mesh.h

    left, right, elem = _subsegments(mesh, np.concatenate((ref.float_breakpoints, crossings)))
    x, w = _gauss(left, right, ERROR_GAUSS_POINTS)
    control = H_gamma_array(cfg, _field_on(p_h, x, elem))
    diff = control - _eval_on(ref, x, _piece_of(ref, left, right))
    return float(np.sum(w * diff * diff))
