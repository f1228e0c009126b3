"""
分析工具：Dirichlet 能量、分阶能量、能量上界检查、运行时基准与混合度剖面
"""

import time
from dataclasses import dataclass, field
from math import comb, log
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger
from scipy import sparse

from app.engine.curvature import CurvatureMap
from app.engine.graph import Graph, as_features, laplacian
from app.engine.model import (
    ForwardCache,
    GraphOperators,
    ModelState,
    build_operators,
    init_state,
    jacobian_probe,
    model_backward,
    model_forward,
    probe_features,
)
from app.schemas import EnergyAveraging, LaplacianKind, ModelConfig

LOG_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Dirichlet 能量
# ---------------------------------------------------------------------------

def dirichlet_energy(g: Graph, h: np.ndarray) -> float:
    """Σ_{(i,j)∈E} ‖h_i/√d_i - h_j/√d_j‖²"""
    h = as_features(g, h)
    if not g.n_edges:
        return 0.0
    rows, cols = np.array(g.edges, dtype=np.int64).T
    scale = 1.0 / np.sqrt(g.degrees.astype(np.float64)[np.concatenate([rows, cols])])
    diff = h[rows] * scale[: rows.size, None] - h[cols] * scale[rows.size:, None]
    return float(np.sum(diff * diff))


def dirichlet_energy_trace(g: Graph, h: np.ndarray) -> float:
    """Tr(Hᵀ 𝓛 H)，𝓛 为对称归一化拉普拉斯"""
    h = as_features(g, h)
    lap = sparse.csr_matrix(laplacian(g, LaplacianKind.SYMMETRIC_NORMALIZED))
    return float(np.sum(h * (lap @ h)))


# ---------------------------------------------------------------------------
# 上界
# ---------------------------------------------------------------------------

def bound_order_factor(nu: int, d_max: int) -> int:
    """单阶因子 ν·C(d_max, ν-1)"""
    return nu * comb(d_max, nu - 1)


def cumulative_bound_factor(nu: int, d_max: int) -> int:
    """Π_{k=2..ν} k·C(d_max, k-1)，跳过 C = 0 的阶"""
    total = 1
    for k in range(2, nu + 1):
        factor = bound_order_factor(k, d_max)
        if factor:
            total *= factor
    return total


def lemma_growth_factor(nu: int, d_max: int) -> int:
    """ν·d_max^(ν-1)"""
    return nu * d_max ** (nu - 1)


def bound_factor_rows(d_max: int, nu_max: int) -> List[dict]:
    return [
        {
            "nu": nu,
            "order_factor": float(bound_order_factor(nu, d_max)),
            "cumulative_factor": float(cumulative_bound_factor(nu, d_max)),
            "lemma_factor": float(lemma_growth_factor(nu, d_max)),
        }
        for nu in range(2, nu_max + 1)
    ]


@dataclass
class BoundReport:
    """观测能量与能量上界的比较"""
    observed_energy: float
    bound_value: float
    satisfied: bool
    lambda_max: float
    d_max: int
    n_nodes: int
    nu: int
    layers: int
    layer_weights: List[float] = field(default_factory=list)
    h_bound: float = 0.0

    def as_dict(self) -> dict:
        return {
            "observed_energy": self.observed_energy,
            "bound_value": self.bound_value,
            "satisfied": self.satisfied,
            "lambda_max": self.lambda_max,
            "d_max": self.d_max,
            "n_nodes": self.n_nodes,
            "nu": self.nu,
            "layers": self.layers,
            "h_bound": self.h_bound,
        }


def energy_bound_value(lambda_max: float, n_nodes: int, d_max: int, nu: int, layers: int,
                       layer_weights: Sequence[float], h_bound: float, channels: int = 1) -> float:
    """channels·λ_max·|N|·(Π_k (k·C(d_max,k-1))^t · Π_t w^(t) · h)²"""
    inner = float(cumulative_bound_factor(nu, d_max)) ** layers
    for w in layer_weights:
        inner *= w
    inner *= h_bound
    return channels * lambda_max * n_nodes * inner * inner


def energy_bound(g: Graph, cm: Optional[CurvatureMap], config: ModelConfig, state: ModelState,
                 x: np.ndarray, h0_bound: Optional[float] = None,
                 operators: Optional[GraphOperators] = None,
                 cache: Optional[ForwardCache] = None) -> BoundReport:
    """用观测到的逐层最大参数和初始特征上界计算能量上界，并与前向后的能量比较"""
    if cache is None:
        _, cache = model_forward(g, cm, x, state, config, operators)
    observed = dirichlet_energy(g, cache.hidden[-1])

    lambda_max = cache.operators.lambda_max
    # 残差通路的权重为 1
    weights = [max(1.0, state.layer_max_abs(t)) for t in range(config.layers)]
    h = float(np.max(np.abs(cache.h0))) if h0_bound is None else float(h0_bound)

    bound = energy_bound_value(lambda_max, g.n_nodes, g.d_max, config.nu, config.layers,
                               weights, h, channels=config.hidden_dim)
    satisfied = observed <= bound * (1.0 + 1e-12) + 1e-12
    if not satisfied:
        logger.warning(f"观测能量 {observed:.6g} 超过上界 {bound:.6g}")
    return BoundReport(observed, bound, satisfied, lambda_max, g.d_max, g.n_nodes,
                       config.nu, config.layers, weights, h)


# ---------------------------------------------------------------------------
# 分阶能量
# ---------------------------------------------------------------------------

@dataclass
class EnergyTrace:
    """逐 epoch 的总能量与分阶能量"""
    nu: int
    rows: List[Dict[str, float]] = field(default_factory=list)

    def append(self, epoch: int, total: float, per_order: Dict[int, float]):
        row = {"epoch": epoch, "dirichlet_energy": total, "log_energy": log_energy(total)}
        for k in range(2, self.nu + 1):
            value = per_order.get(k, 0.0)
            row[f"energy_k{k}"] = value
            row[f"log_energy_k{k}"] = log_energy(value)
        self.rows.append(row)


def order_components(cache: ForwardCache) -> Dict[int, List[np.ndarray]]:
    """每层各阶的消息分量：k=2 为两体消息 X，k>=3 为该阶的 motif 和"""
    components: Dict[int, List[np.ndarray]] = {2: [layer.x_msg for layer in cache.layers]}
    for k in range(3, cache.config.nu + 1):
        components[k] = [layer.order_sums[k] for layer in cache.layers]
    return components


def per_order_energy(cache: ForwardCache, g: Graph,
                     averaging: EnergyAveraging = EnergyAveraging.MEAN_OF_LAYERS) -> Dict[int, float]:
    """各阶分量的 Dirichlet 能量在层之间平均"""
    result: Dict[int, float] = {}
    for k, parts in order_components(cache).items():
        if not parts:
            result[k] = 0.0
        elif EnergyAveraging(averaging) == EnergyAveraging.ENERGY_OF_MEAN:
            result[k] = dirichlet_energy(g, np.mean(parts, axis=0))
        else:
            result[k] = float(np.mean([dirichlet_energy(g, p) for p in parts]))
    return result


def log_energy(value: float) -> float:
    return log(max(value, LOG_FLOOR))


# ---------------------------------------------------------------------------
# 基准
# ---------------------------------------------------------------------------

def _time_ms(fn: Callable[[], None]) -> float:
    start = time.perf_counter_ns()
    fn()
    return (time.perf_counter_ns() - start) / 1e6


def benchmark(g: Graph, cm: Optional[CurvatureMap], models: Dict[str, ModelConfig],
              layer_counts: Sequence[int], reps: int = 30, warmup: int = 1,
              threads: int = 1) -> List[dict]:
    """每个 (模型, 层数) 计时一次前向加反向；预热次数不计入统计"""
    rows = []
    for name, base in models.items():
        for layers in layer_counts:
            config = base.model_copy(update={"layers": layers})
            ops = build_operators(g, cm, config, threads=threads)
            state = init_state(config)
            x = probe_features(g, config)

            def step():
                out, cache = model_forward(g, cm, x, state, config, ops)
                model_backward(cache, np.ones_like(out))

            for _ in range(warmup):
                step()
            samples = np.array([_time_ms(step) for _ in range(reps)])
            rows.append({
                "model": name,
                "layers": layers,
                "mean_ms": float(samples.mean()),
                "std_ms": float(samples.std()),
                "threads": threads,
            })
            logger.debug(f"基准 {name} layers={layers}: {samples.mean():.3f} ms")
    return rows


def linear_fit_r2(x: Sequence[float], y: Sequence[float]) -> float:
    """一次拟合的决定系数 R²"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    return 1.0 - float(np.sum(residual ** 2) / total) if total > 0 else 1.0


def runtime_ratio(rows: List[dict], model: str, baseline: str, layers: int) -> Optional[float]:
    def lookup(name):
        return next((r["mean_ms"] for r in rows if r["model"] == name and r["layers"] == layers), None)

    a, b = lookup(model), lookup(baseline)
    return a / b if a is not None and b else None


# ---------------------------------------------------------------------------
# 混合度剖面
# ---------------------------------------------------------------------------

def mixing_profile(g: Graph, cm: Optional[CurvatureMap], state: ModelState, config: ModelConfig,
                   spine_length: int, operators: Optional[GraphOperators] = None) -> List[dict]:
    """脊柱上连续 s 个节点（s = 3..ν）组成的组：从组首到组内其余成员的平均敏感度"""
    ops = operators or build_operators(g, cm, config)
    x = probe_features(g, config)
    rows = []
    for size in range(3, max(config.nu, 3) + 1):
        if size > spine_length:
            break
        totals: Dict[int, List[float]] = {}
        for start in range(spine_length - size + 1):
            for offset in range(1, size):
                value = jacobian_probe(g, cm, state, config, start, start + offset,
                                       config.layers, x=x, operators=ops)
                totals.setdefault(offset, []).append(value)
        for distance, values in sorted(totals.items()):
            rows.append({
                "group_size": size,
                "distance": distance,
                "mean_sensitivity": float(np.mean(values)),
            })
    return rows


def mixing_profile_summary(profiles: Sequence[List[dict]]) -> List[dict]:
    """多个模型（初始化种子或检查点）的剖面按 (group_size, distance) 汇总均值和标准差"""
    values: Dict[tuple, List[float]] = {}
    for rows in profiles:
        for row in rows:
            values.setdefault((row["group_size"], row["distance"]), []).append(row["mean_sensitivity"])
    return [
        {
            "group_size": size,
            "distance": distance,
            "mean_sensitivity": float(np.mean(vs)),
            "std_sensitivity": float(np.std(vs)),
            "n_models": len(vs),
        }
        for (size, distance), vs in sorted(values.items())
    ]
