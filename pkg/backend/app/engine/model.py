"""
many-body MPNN：motif 枚举、两体与高阶消息、残差更新、参数存储和反向传播

约定：特征按行存放 (n_nodes, d)；层更新 H' = H + X W_xᵀ + Y W_yᵀ。
高阶消息对每个阶 k 可写成固定的稀疏算子之和 S_k = Σ_q θ_{k,q} C_{k,q} H，
其中 C_{k,q} 汇总了以各节点为中心的所有 k-motif 的滤波中心行，只依赖图、曲率和配置。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import sparse

from app.core.errors import ConfigError, GraphError, MissingCacheError
from app.engine.curvature import CurvatureMap, motif_edge_weights
from app.engine.graph import Graph, as_features, laplacian, sparse_adjacency
from app.engine.spectral import (
    UNWEIGHTED,
    MotifSpectrum,
    MotifSpectrumCache,
    analysis_matrix,
    apply_filter,
    chebyshev_basis,
    chebyshev_filter,
    eigh,
    motif_spectrum_cache,
    shifted_eigenvalues,
    shared_motif_cache,
    star_laplacian,
)
from app.schemas import BasisConvention, LaplacianKind, ModelConfig, ModelKind, TaskKind, WeightMode

_DISCRETE_MODES = (WeightMode.SIGN_ROUNDED, WeightMode.UNWEIGHTED_LEARNABLE)


# ---------------------------------------------------------------------------
# 参数
# ---------------------------------------------------------------------------

def param_name(layer: int, name: str) -> str:
    return f"layer{layer}.{name}"


@dataclass
class ModelState:
    """全部可学习张量及梯度缓冲"""
    params: Dict[str, np.ndarray]
    grads: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.grads:
            self.zero_grad()

    def zero_grad(self):
        self.grads = {name: np.zeros_like(value) for name, value in self.params.items()}

    def layer(self, t: int, name: str) -> np.ndarray:
        return self.params[param_name(t, name)]

    def copy(self) -> "ModelState":
        return ModelState({k: v.copy() for k, v in self.params.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def layer_max_abs(self, t: int) -> float:
        prefix = f"layer{t}."
        return max(float(np.max(np.abs(v))) for k, v in self.params.items() if k.startswith(prefix))


def two_body_coeffs(config: ModelConfig) -> int:
    """θ2 的长度：Chebyshev k'=0..K，GCN 只有一个传播系数"""
    return 1 if ModelKind(config.kind) == ModelKind.GCN else config.cheb_order_2body + 1


def _motif_budget(config: ModelConfig) -> int:
    return config.enumeration_cap if config.enumeration_cap > 0 else 16


def init_state(config: ModelConfig) -> ModelState:
    """均匀分布初始化，尺度 1/√fan"""
    rng = np.random.default_rng([config.rng_seed, 0])
    s = config.init_scale
    d = config.hidden_dim

    def uniform(shape, fan):
        bound = s / np.sqrt(fan)
        return rng.uniform(-bound, bound, size=shape)

    params: Dict[str, np.ndarray] = {"W_in": uniform((config.in_dim, d), config.in_dim)}
    budget = _motif_budget(config)
    for t in range(config.layers):
        n_two_body = two_body_coeffs(config)
        params[param_name(t, "theta2")] = uniform((n_two_body,), n_two_body)
        for k in range(3, config.nu + 1):
            # 每阶要对最多 budget 个 motif 求和，fan 计入求和项数
            params[param_name(t, f"theta{k}")] = uniform((k,), k * budget * budget)
        params[param_name(t, "W_x")] = uniform((d, d), d)
        params[param_name(t, "W_y")] = uniform((d, d), d)
    params["W_out"] = uniform((d, config.out_dim), d)
    params["b_out"] = np.zeros(config.out_dim)
    return ModelState(params)


# ---------------------------------------------------------------------------
# motif 枚举
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MotifInstance:
    """以 center 为中心、leaves 为叶子的 k-星形 motif"""
    center: int
    leaves: Tuple[int, ...]
    spectrum: Optional[MotifSpectrum] = None

    @property
    def k(self) -> int:
        return len(self.leaves) + 1


def enumerate_motifs(g: Graph, i: int, k: int, cap: int = 0, seed: int = 0) -> List[MotifInstance]:
    """枚举节点 i 的 k-1 个邻居子集；超过 cap 时无放回均匀抽样"""
    if k < 3:
        raise ConfigError(f"motif 大小至少为 3，得到 {k}", field_path="k")
    if cap < 0:
        raise ConfigError("cap 不能为负", field_path="enumeration_cap")

    neighbors = g.adjacency[i]
    size = k - 1
    if len(neighbors) < size:
        return []

    if cap == 0 or comb(len(neighbors), size) <= cap:
        return [MotifInstance(i, subset) for subset in combinations(neighbors, size)]

    # 每个邻居出现在任意位置的概率相同；种子按 (seed, i, k) 拆分
    rng = np.random.default_rng([seed, i, k])
    pool = np.asarray(neighbors)
    seen = set()
    motifs: List[MotifInstance] = []
    while len(motifs) < cap:
        pick = tuple(sorted(pool[rng.choice(pool.size, size=size, replace=False)].tolist()))
        if pick not in seen:
            seen.add(pick)
            motifs.append(MotifInstance(i, pick))
    return motifs


def _motif_weights(cm: Optional[CurvatureMap], center: int, leaves: Sequence[int],
                   mode: WeightMode) -> np.ndarray:
    if WeightMode(mode) == WeightMode.UNWEIGHTED_LEARNABLE:
        return np.ones(len(leaves), dtype=np.float64)
    if cm is None:
        raise ConfigError(f"权重模式 {mode} 需要曲率", field_path="weight_mode")
    return motif_edge_weights(cm, center, leaves, mode)


def center_rows(spectrum: MotifSpectrum, convention: BasisConvention) -> Optional[np.ndarray]:
    """Uᵀ T_q(Λ̃) U 的中心行，形状 (k + 1, k)；λ_max 退化时返回 None"""
    decomp = spectrum.decomposition
    shifted = shifted_eigenvalues(decomp)
    if shifted is None:
        return None
    basis = chebyshev_basis(shifted, spectrum.k)
    u = analysis_matrix(decomp, convention)
    return (basis * u[:, 0][None, :]) @ u


# ---------------------------------------------------------------------------
# 预计算算子
# ---------------------------------------------------------------------------

@dataclass
class GraphOperators:
    """一张图在给定配置下的固定线性算子"""
    n_nodes: int
    two_body: List[sparse.csr_matrix]
    motif: Dict[int, List[sparse.csr_matrix]]
    has_motif: Dict[int, np.ndarray]
    lambda_max: float
    n_motifs: Dict[int, int] = field(default_factory=dict)
    degenerate_motifs: int = 0


def two_body_operators(g: Graph, order: int,
                       convention: BasisConvention = BasisConvention.ANALYSIS_ROWS
                       ) -> Tuple[List[sparse.csr_matrix], float]:
    """全局对称归一化拉普拉斯上的 Uᵀ T_q(Λ̃) U，q = 0..order"""
    decomp = eigh(laplacian(g, LaplacianKind.SYMMETRIC_NORMALIZED))
    shifted = shifted_eigenvalues(decomp)
    if shifted is None:
        # 无边图：所有特征值为 0，取极限 λ̃ = -1
        shifted = -np.ones(g.n_nodes)
    basis = chebyshev_basis(shifted, order)
    u = analysis_matrix(decomp, convention)
    masked = BasisConvention(convention) == BasisConvention.ANALYSIS_ROWS

    adj = sparse_adjacency(g)
    reach = sparse.identity(g.n_nodes, format="csr", dtype=np.float64)
    operators = []
    for q in range(order + 1):
        dense = u.T @ (basis[q][:, None] * u)
        if masked:
            # T_q(L̃) 的支撑在 q 跳以内，之外的舍入误差置零
            dense = np.where(reach.toarray() > 0, dense, 0.0)
            reach = ((reach + reach @ adj) > 0).astype(np.float64)
        operators.append(sparse.csr_matrix(dense))
    return operators, decomp.lambda_max


def gcn_operators(g: Graph) -> Tuple[List[sparse.csr_matrix], float]:
    """GCN 一跳传播 D̃^(-1/2) (A + I) D̃^(-1/2)；λ_max 仍取对称归一化拉普拉斯的，供能量上界使用"""
    a_hat = sparse_adjacency(g) + sparse.identity(g.n_nodes, format="csr", dtype=np.float64)
    scale = sparse.diags(1.0 / np.sqrt(np.asarray(a_hat.sum(axis=1)).ravel()))
    propagation = sparse.csr_matrix(scale @ a_hat @ scale)
    lambda_max = eigh(laplacian(g, LaplacianKind.SYMMETRIC_NORMALIZED)).lambda_max
    return [propagation], lambda_max


def _motif_chunk(g: Graph, cm: Optional[CurvatureMap], config: ModelConfig, nodes: Sequence[int],
                 lookup: Callable[[int, object], MotifSpectrum], rows_table: Dict):
    """一组节点的 motif 贡献，按节点顺序返回 COO 片段"""
    mode = WeightMode(config.weight_mode)
    out = {}
    degenerate = 0
    for k in range(3, config.nu + 1):
        rows: List[int] = []
        cols: List[int] = []
        data: List[np.ndarray] = []
        present = []
        count = 0
        for i in nodes:
            motifs = enumerate_motifs(g, i, k, config.enumeration_cap, config.rng_seed)
            if motifs:
                present.append(i)
            for motif in motifs:
                count += 1
                weights = _motif_weights(cm, i, motif.leaves, mode)
                order = sorted(range(k - 1), key=lambda p: (weights[p], motif.leaves[p]))
                if mode == WeightMode.UNWEIGHTED_LEARNABLE:
                    # 叶子权重全为 1，直接取预计算的无权谱
                    spectrum = lookup(k, UNWEIGHTED)
                else:
                    spectrum = lookup(k, weights[order])
                key = (k, spectrum.weights_key)
                if key not in rows_table:
                    rows_table.setdefault(key, center_rows(spectrum, config.basis_convention))
                center = rows_table[key]
                if center is None:
                    degenerate += 1
                    continue
                members = [i] + [motif.leaves[p] for p in order]
                rows.extend([i] * k)
                cols.extend(members)
                data.append(center[1:])
        out[k] = (rows, cols, data, present, count)
    return out, degenerate


def build_operators(g: Graph, cm: Optional[CurvatureMap], config: ModelConfig,
                    threads: int = 1) -> GraphOperators:
    """预计算两体和各阶 motif 算子；多线程按节点分块，按节点顺序合并"""
    if ModelKind(config.kind) == ModelKind.GCN:
        two_body, lambda_max = gcn_operators(g)
    else:
        two_body, lambda_max = two_body_operators(g, config.cheb_order_2body, config.basis_convention)

    if WeightMode(config.weight_mode) in _DISCRETE_MODES:
        # 离散权重的谱与图无关，走进程级缓存
        cache = shared_motif_cache()
        lookup = motif_spectrum_cache
    else:
        cache = MotifSpectrumCache()
        lookup = cache.get
    rows_table: Dict = {}

    n = g.n_nodes
    chunk_size = max(1, -(-n // max(1, threads)))
    chunks = [list(range(s, min(n, s + chunk_size))) for s in range(0, n, chunk_size)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _motif_chunk(g, cm, config, c, lookup, rows_table), chunks))
    else:
        parts = [_motif_chunk(g, cm, config, c, lookup, rows_table) for c in chunks]

    motif_ops: Dict[int, List[sparse.csr_matrix]] = {}
    has_motif: Dict[int, np.ndarray] = {}
    n_motifs: Dict[int, int] = {}
    degenerate = sum(d for _, d in parts)
    for k in range(3, config.nu + 1):
        rows = np.array([r for part, _ in parts for r in part[k][0]], dtype=np.int64)
        cols = np.array([c for part, _ in parts for c in part[k][1]], dtype=np.int64)
        blocks = [b for part, _ in parts for b in part[k][2]]
        data = np.concatenate(blocks, axis=1) if blocks else np.zeros((k, 0))
        mask = np.zeros(n, dtype=bool)
        mask[[i for part, _ in parts for i in part[k][3]]] = True
        has_motif[k] = mask
        n_motifs[k] = sum(part[k][4] for part, _ in parts)
        motif_ops[k] = [
            sparse.csr_matrix((data[q], (rows, cols)), shape=(n, n)) for q in range(k)
        ]

    if degenerate:
        logger.debug(f"退化 motif（λ_max = 0）按零消息处理: {degenerate} 个")
    logger.debug(f"算子预计算完成: n={n}, motif 数={n_motifs}, 缓存条目={len(cache)}")
    return GraphOperators(n, two_body, motif_ops, has_motif, lambda_max, n_motifs, degenerate)


def reach_hops(config: ModelConfig) -> int:
    """单层感受野（跳数）"""
    if ModelKind(config.kind) == ModelKind.GCN:
        return 1
    return max(config.cheb_order_2body, 1 if config.nu >= 3 else 0)


# ---------------------------------------------------------------------------
# 消息与前向
# ---------------------------------------------------------------------------

def _combine(operators: Sequence[sparse.csr_matrix], coeffs: np.ndarray) -> sparse.csr_matrix:
    total = operators[0] * coeffs[0]
    for op, c in zip(operators[1:], coeffs[1:]):
        total = total + op * c
    return total


def two_body_message(g: Graph, h_prev: np.ndarray, theta2: Sequence[float],
                     convention: BasisConvention = BasisConvention.ANALYSIS_ROWS,
                     operators: Optional[List[sparse.csr_matrix]] = None) -> np.ndarray:
    """X = Uᵀ g_θ2(Λ) U H，系数从 k' = 0 开始"""
    theta2 = np.asarray(theta2, dtype=np.float64)
    h_prev = as_features(g, h_prev)
    if operators is None:
        operators, _ = two_body_operators(g, theta2.size - 1, convention)
    x = np.zeros_like(h_prev)
    for q, op in enumerate(operators[: theta2.size]):
        x += theta2[q] * (op @ h_prev)
    return x


def higher_order_message(g: Graph, cm: Optional[CurvatureMap], h_prev: np.ndarray, state: ModelState,
                         i: int, config: ModelConfig, layer_index: int = 0) -> np.ndarray:
    """节点 i 的高阶消息 Y_i：逐阶对 motif 求和，再跨阶做 Hadamard 积"""
    h_prev = np.asarray(h_prev, dtype=np.float64)
    d = h_prev.shape[1]
    result = None
    for k in range(3, config.nu + 1):
        motifs = enumerate_motifs(g, i, k, config.enumeration_cap, config.rng_seed)
        if not motifs:
            # 缺失的阶按全 1 因子处理
            continue
        theta = state.layer(layer_index, f"theta{k}")
        total = np.zeros(d)
        for motif in motifs:
            weights = _motif_weights(cm, i, motif.leaves, config.weight_mode)
            decomp = eigh(star_laplacian(k, weights))
            diag = chebyshev_filter(decomp, theta, start=1)
            members = [i, *motif.leaves]
            total += apply_filter(decomp, diag, h_prev[members], config.basis_convention)[0]
        result = total if result is None else result * total
    return np.zeros(d) if result is None else result


@dataclass
class LayerCache:
    h_prev: np.ndarray
    two_body_terms: List[np.ndarray]
    x_msg: np.ndarray
    order_terms: Dict[int, List[np.ndarray]]
    order_sums: Dict[int, np.ndarray]
    factors: Dict[int, np.ndarray]
    y_msg: np.ndarray
    h_out: np.ndarray


@dataclass
class ForwardCache:
    """前向中间量，供反向传播和能量分析使用"""
    state: ModelState
    config: ModelConfig
    operators: GraphOperators
    x: np.ndarray
    h0: np.ndarray
    layers: List[LayerCache]
    output: np.ndarray

    @property
    def hidden(self) -> List[np.ndarray]:
        """H^(0)..H^(t)"""
        return [self.h0] + [layer.h_out for layer in self.layers]


def _layer_forward(ops: GraphOperators, h_prev: np.ndarray, state: ModelState, t: int,
                   config: ModelConfig) -> LayerCache:
    theta2 = state.layer(t, "theta2")
    two_body_terms = [op @ h_prev for op in ops.two_body]
    x_msg = np.zeros_like(h_prev)
    for q, term in enumerate(two_body_terms):
        x_msg += theta2[q] * term

    order_terms: Dict[int, List[np.ndarray]] = {}
    order_sums: Dict[int, np.ndarray] = {}
    factors: Dict[int, np.ndarray] = {}
    y_msg = np.zeros_like(h_prev)
    if config.nu >= 3:
        y_msg = np.ones_like(h_prev)
        for k in range(3, config.nu + 1):
            theta = state.layer(t, f"theta{k}")
            terms = [op @ h_prev for op in ops.motif[k]]
            s = np.zeros_like(h_prev)
            for q, term in enumerate(terms):
                s += theta[q] * term
            order_terms[k] = terms
            order_sums[k] = s
            factors[k] = np.where(ops.has_motif[k][:, None], s, 1.0)
            y_msg *= factors[k]
        # 没有任何 motif 的节点：空和为零
        y_msg = np.where(ops.has_motif[3][:, None], y_msg, 0.0)

    h_out = h_prev + x_msg @ state.layer(t, "W_x").T + y_msg @ state.layer(t, "W_y").T
    return LayerCache(h_prev, two_body_terms, x_msg, order_terms, order_sums, factors, y_msg, h_out)


def layer_forward(g: Graph, cm: Optional[CurvatureMap], h_prev: np.ndarray, state: ModelState,
                  layer_index: int, config: ModelConfig,
                  operators: Optional[GraphOperators] = None) -> np.ndarray:
    """H^(t) = H^(t-1) + W_x X^(t) + W_y Y^(t)"""
    h_prev = as_features(g, h_prev)
    ops = operators or build_operators(g, cm, config)
    return _layer_forward(ops, h_prev, state, layer_index, config).h_out


def _readout(h: np.ndarray, state: ModelState, config: ModelConfig) -> np.ndarray:
    if TaskKind(config.task) == TaskKind.NODE_CLASSIFICATION:
        return h @ state.params["W_out"] + state.params["b_out"]
    pooled = h.sum(axis=0, keepdims=True)
    return pooled @ state.params["W_out"] + state.params["b_out"]


def model_forward(g: Graph, cm: Optional[CurvatureMap], x: np.ndarray, state: ModelState,
                  config: ModelConfig, operators: Optional[GraphOperators] = None,
                  upto_layer: Optional[int] = None) -> Tuple[np.ndarray, ForwardCache]:
    """输入投影 → t 层 → 读出；返回输出与缓存"""
    x = as_features(g, x)
    if x.shape[1] != config.in_dim:
        raise GraphError(f"输入维度 {x.shape[1]} 与配置 in_dim={config.in_dim} 不匹配")
    ops = operators or build_operators(g, cm, config)
    if ops.n_nodes != g.n_nodes:
        raise GraphError("算子与图的节点数不一致")

    n_layers = config.layers if upto_layer is None else upto_layer
    h = x @ state.params["W_in"]
    h0 = h
    layers: List[LayerCache] = []
    for t in range(n_layers):
        cache = _layer_forward(ops, h, state, t, config)
        layers.append(cache)
        h = cache.h_out

    output = _readout(h, state, config)
    return output, ForwardCache(state, config, ops, x, h0, layers, output)


def model_backward(cache: Optional[ForwardCache], loss_grad: np.ndarray, accumulate: bool = False) -> ModelState:
    """解析反向传播，梯度写入 cache.state.grads；accumulate 为真时累加到已有梯度"""
    if cache is None:
        raise MissingCacheError("没有前向缓存，无法反向传播")
    state, config, ops = cache.state, cache.config, cache.operators
    if len(cache.layers) != config.layers:
        raise MissingCacheError("前向缓存不完整（截断的前向不能反向）")
    if not accumulate:
        state.zero_grad()
    grads = state.grads
    loss_grad = np.asarray(loss_grad, dtype=np.float64).reshape(cache.output.shape)

    h_last = cache.layers[-1].h_out if cache.layers else cache.h0
    w_out = state.params["W_out"]
    if TaskKind(config.task) == TaskKind.NODE_CLASSIFICATION:
        grads["W_out"] += h_last.T @ loss_grad
        grads["b_out"] += loss_grad.sum(axis=0)
        dh = loss_grad @ w_out.T
    else:
        pooled = h_last.sum(axis=0, keepdims=True)
        grads["W_out"] += pooled.T @ loss_grad
        grads["b_out"] += loss_grad.sum(axis=0)
        dh = np.repeat(loss_grad @ w_out.T, h_last.shape[0], axis=0)

    for t in reversed(range(len(cache.layers))):
        layer = cache.layers[t]
        w_x = state.layer(t, "W_x")
        w_y = state.layer(t, "W_y")
        grads[param_name(t, "W_x")] += dh.T @ layer.x_msg
        grads[param_name(t, "W_y")] += dh.T @ layer.y_msg
        dx_msg = dh @ w_x
        dy_msg = dh @ w_y
        dh_prev = dh.copy()

        theta2 = state.layer(t, "theta2")
        g_theta2 = grads[param_name(t, "theta2")]
        for q, term in enumerate(layer.two_body_terms):
            g_theta2[q] += np.sum(dx_msg * term)
        dh_prev += _combine(ops.two_body, theta2).T @ dx_msg

        if config.nu >= 3:
            gated = np.where(ops.has_motif[3][:, None], dy_msg, 0.0)
            for k in range(3, config.nu + 1):
                others = np.ones_like(gated)
                for j, factor in layer.factors.items():
                    if j != k:
                        others *= factor
                ds = np.where(ops.has_motif[k][:, None], gated * others, 0.0)
                theta = state.layer(t, f"theta{k}")
                g_theta = grads[param_name(t, f"theta{k}")]
                for q, term in enumerate(layer.order_terms[k]):
                    g_theta[q] += np.sum(ds * term)
                dh_prev += _combine(ops.motif[k], theta).T @ ds
        dh = dh_prev

    grads["W_in"] += cache.x.T @ dh
    return state


# ---------------------------------------------------------------------------
# 敏感度探针
# ---------------------------------------------------------------------------

def probe_features(g: Graph, config: ModelConfig) -> np.ndarray:
    rng = np.random.default_rng([config.rng_seed, 1])
    return rng.normal(size=(g.n_nodes, config.in_dim))


def jacobian_probe(g: Graph, cm: Optional[CurvatureMap], state: ModelState, config: ModelConfig,
                   u: int, v: int, r: int, x: Optional[np.ndarray] = None,
                   operators: Optional[GraphOperators] = None, eps: float = 1e-6) -> float:
    """max |∂h_u^(r) / ∂x_v|，对输入维度做中心差分，对输出维度取最大"""
    if not 0 <= r <= config.layers:
        raise ConfigError(f"r={r} 超出层数 {config.layers}", field_path="r")
    ops = operators or build_operators(g, cm, config)
    x = probe_features(g, config) if x is None else as_features(g, x)

    best = 0.0
    for c in range(x.shape[1]):
        plus, minus = x.copy(), x.copy()
        plus[v, c] += eps
        minus[v, c] -= eps
        _, cache_p = model_forward(g, cm, plus, state, config, ops, upto_layer=r)
        _, cache_m = model_forward(g, cm, minus, state, config, ops, upto_layer=r)
        diff = cache_p.hidden[-1][u] - cache_m.hidden[-1][u]
        best = max(best, float(np.max(np.abs(diff))) / (2.0 * eps))
    return best
