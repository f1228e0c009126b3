"""
谱分解、Chebyshev 滤波与 motif 谱缓存
"""

import threading
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Dict, Hashable, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from numba import njit

from app.core.config import settings
from app.core.errors import SpectralError
from app.schemas import BasisConvention

UNWEIGHTED = "unweighted"


@dataclass(frozen=True)
class EigenDecomposition:
    """特征值升序，eigenvectors 的列与特征值一一对应"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def lambda_max(self) -> float:
        """平移所用的最大模特征值（允许不定矩阵）"""
        return float(np.abs(self.eigenvalues).max()) if self.dim else 0.0


@njit(cache=True)
def _jacobi_sweeps(a, v, tol, max_sweeps):
    n = a.shape[0]
    sweeps = 0
    for sweeps in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if off <= tol:
            break
        # 固定的 (p, q) 扫描顺序保证结果可复现
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return sweeps


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    # 每列第一个非零分量取正，便于复现
    for col in range(vectors.shape[1]):
        column = vectors[:, col]
        nz = np.flatnonzero(np.abs(column) > 1e-12)
        if nz.size and column[nz[0]] < 0:
            vectors[:, col] = -column
    return vectors


def eigh(m: np.ndarray) -> EigenDecomposition:
    """对称矩阵特征分解：小矩阵用循环 Jacobi，大矩阵用 LAPACK"""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SpectralError(f"需要方阵，得到形状 {m.shape}")
    if m.size and np.max(np.abs(m - m.T)) > 1e-10:
        raise SpectralError("输入矩阵不对称")

    n = m.shape[0]
    if n == 0:
        return EigenDecomposition(np.zeros(0), np.zeros((0, 0)))

    if n <= settings.JACOBI_MAX_DIM:
        a = np.array(0.5 * (m + m.T), dtype=np.float64, order="C")
        v = np.eye(n, dtype=np.float64)
        scale = max(float(np.sum(a * a)), 1.0)
        _jacobi_sweeps(a, v, 1e-30 * scale, 100)
        values = np.diag(a).copy()
    else:
        values, v = np.linalg.eigh(m)

    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = _canonical_signs(np.ascontiguousarray(v[:, order]))
    values.flags.writeable = False
    vectors.flags.writeable = False
    return EigenDecomposition(values, vectors)


def chebyshev_basis(x: np.ndarray, order: int) -> np.ndarray:
    """T_0..T_order 在 x 上的取值，形状 (order + 1, len(x))"""
    x = np.asarray(x, dtype=np.float64)
    basis = np.empty((order + 1,) + x.shape, dtype=np.float64)
    basis[0] = 1.0
    if order >= 1:
        basis[1] = x
    for k in range(2, order + 1):
        basis[k] = 2.0 * x * basis[k - 1] - basis[k - 2]
    return basis


def shifted_eigenvalues(decomp: EigenDecomposition, lambda_max: Optional[float] = None) -> Optional[np.ndarray]:
    """λ̃ = 2λ/λ_max - 1；λ_max 退化时返回 None"""
    lam = decomp.lambda_max if lambda_max is None else abs(float(lambda_max))
    if lam <= settings.DEGENERATE_EPS:
        return None
    return 2.0 * decomp.eigenvalues / lam - 1.0


def chebyshev_filter(decomp: EigenDecomposition, coeffs: Sequence[float], start: int = 0,
                     lambda_max: Optional[float] = None) -> np.ndarray:
    """g_θ(Λ) = Σ θ_k' T_k'(Λ̃)，coeffs[0] 对应 k' = start"""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.size == 0:
        raise SpectralError("Chebyshev 系数为空")
    if start not in (0, 1):
        raise SpectralError(f"start 只能为 0 或 1，得到 {start}")

    shifted = shifted_eigenvalues(decomp, lambda_max)
    if shifted is None:
        logger.debug("λ_max 退化，滤波输出为零")
        return np.zeros(decomp.dim, dtype=np.float64)

    basis = chebyshev_basis(shifted, start + coeffs.size - 1)[start:]
    return coeffs @ basis


def analysis_matrix(decomp: EigenDecomposition,
                    convention: BasisConvention = BasisConvention.ANALYSIS_ROWS) -> np.ndarray:
    """公式中的 U：analysis-rows 约定下 U 的行为特征向量"""
    if BasisConvention(convention) == BasisConvention.ANALYSIS_ROWS:
        return decomp.eigenvectors.T
    return decomp.eigenvectors


def filter_matrix(decomp: EigenDecomposition, filtered_diag: np.ndarray,
                  convention: BasisConvention = BasisConvention.ANALYSIS_ROWS) -> np.ndarray:
    """Uᵀ diag(g) U"""
    u = analysis_matrix(decomp, convention)
    filtered_diag = np.asarray(filtered_diag, dtype=np.float64)
    if filtered_diag.shape != (decomp.dim,):
        raise SpectralError(f"滤波对角长度 {filtered_diag.shape} 与维度 {decomp.dim} 不匹配")
    return u.T @ (filtered_diag[:, None] * u)


def apply_filter(decomp: EigenDecomposition, filtered_diag: np.ndarray, h: np.ndarray,
                 convention: BasisConvention = BasisConvention.ANALYSIS_ROWS) -> np.ndarray:
    """Uᵀ diag(g) U H"""
    h = np.asarray(h, dtype=np.float64)
    squeeze = h.ndim == 1
    if squeeze:
        h = h[:, None]
    if h.shape[0] != decomp.dim:
        raise SpectralError(f"特征行数 {h.shape[0]} 与分解维度 {decomp.dim} 不匹配")
    u = analysis_matrix(decomp, convention)
    out = u.T @ (np.asarray(filtered_diag, dtype=np.float64)[:, None] * (u @ h))
    return out[:, 0] if squeeze else out


def star_laplacian(k: int, weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """k 节点星形图的加权 D - A，中心为第 0 行"""
    if k < 2:
        raise SpectralError(f"motif 大小至少为 2，得到 {k}")
    w = np.ones(k - 1) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (k - 1,):
        raise SpectralError(f"星形图需要 {k - 1} 个边权，得到 {w.shape}")
    lap = np.zeros((k, k), dtype=np.float64)
    lap[0, 0] = w.sum()
    lap[0, 1:] = -w
    lap[1:, 0] = -w
    lap[np.arange(1, k), np.arange(1, k)] = w
    return lap


@dataclass(frozen=True)
class MotifSpectrum:
    """星形 motif 拉普拉斯的谱；叶子按 weights_key 的顺序排列"""
    k: int
    weights_key: Hashable
    decomposition: EigenDecomposition


WeightsKey = Union[str, Tuple[float, ...]]


def canonical_key(weights: Union[str, Sequence[float]]) -> WeightsKey:
    """星形图叶子可交换，键为排序后的权重多重集"""
    if isinstance(weights, str):
        if weights != UNWEIGHTED:
            raise SpectralError(f"未知的权重键: {weights}")
        return UNWEIGHTED
    return tuple(sorted(float(w) for w in weights))


class MotifSpectrumCache:
    """(k, 权重多重集) -> MotifSpectrum；读并发，插入互斥"""

    def __init__(self, nu_max: Optional[int] = None):
        self.nu_max = nu_max
        self._entries: Dict[Tuple[int, WeightsKey], MotifSpectrum] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        k, weights = key
        return (k, canonical_key(weights)) in self._entries

    def get(self, k: int, weights: Union[str, Sequence[float]]) -> MotifSpectrum:
        if k < 2 or (self.nu_max is not None and k > self.nu_max):
            raise SpectralError(f"motif 大小 {k} 超出范围 [2, {self.nu_max}]")
        key = (k, canonical_key(weights))
        entry = self._entries.get(key)
        if entry is not None:
            with self._lock:
                self.hits += 1
            return entry
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None:
                self.hits += 1
            else:
                self.misses += 1
                leaf_weights = None if key[1] == UNWEIGHTED else key[1]
                entry = MotifSpectrum(k, key[1], eigh(star_laplacian(k, leaf_weights)))
                self._entries[key] = entry
            return entry

    def warm_up(self, nu: int, values: Sequence[float] = (-1.0, 0.0, 1.0)):
        """预先计算 k = 3..ν 所有符号多重集的谱"""
        for k in range(3, nu + 1):
            for pattern in combinations_with_replacement(values, k - 1):
                self.get(k, pattern)
        logger.debug(f"motif 谱缓存预热完成: ν={nu}, 条目数={len(self)}")


_default_cache = MotifSpectrumCache()


def shared_motif_cache() -> MotifSpectrumCache:
    """离散权重模式共用的进程级缓存"""
    return _default_cache


def motif_spectrum_cache(k: int, weights_key: Union[str, Sequence[float]]) -> MotifSpectrum:
    """进程级缓存入口"""
    return _default_cache.get(k, weights_key)
