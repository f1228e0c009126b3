"""
合成图生成器与图能量目标

所有生成器都是 (参数, 种子) 的纯函数；数据集的第 i 个实例使用种子 (seed, i)。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import comb
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger

from app.core.errors import DatasetError, GraphError
from app.engine.graph import (
    Graph,
    adjacency_matrix,
    average_clustering,
    average_shortest_path,
    build_graph,
    is_connected,
    local_clustering,
    shortest_path_lengths,
)
from app.engine.spectral import eigh
from app.schemas import DatasetSpec, GraphFamily, TargetKind

# 距离类目标要求连通图，ER 采样的最大重试次数
MAX_CONNECT_ATTEMPTS = 100


@dataclass
class GraphInstance:
    """数据集中的一个图实例"""
    graph_id: int
    graph: Graph
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    target: Optional[float] = None
    seed: Tuple[int, int] = (0, 0)


def gen_erdos_renyi(n: int, p: float, seed) -> Graph:
    """G(n, p)：每个无序节点对独立以概率 p 连边"""
    if n < 2:
        raise GraphError(f"ER 图至少需要 2 个节点，得到 {n}")
    if not 0.0 <= p <= 1.0:
        raise GraphError(f"边概率 p={p} 不在 [0, 1] 内")
    rng = np.random.default_rng(seed)
    rows, cols = np.triu_indices(n, k=1)
    keep = rng.random(rows.size) < p
    return build_graph(zip(rows[keep].tolist(), cols[keep].tolist()), n)


def ring(n: int) -> Graph:
    if n < 3:
        raise GraphError(f"环至少需要 3 个节点，得到 {n}")
    return build_graph(((i, (i + 1) % n) for i in range(n)), n)


def crossed_ring(n: int, chord_offset: int = 1) -> Graph:
    """环加弦：对 i < n/2 连接 i 与 i + n/2 + offset（模 n）"""
    if n < 4 or n % 2:
        raise GraphError(f"CrossedRing 需要不小于 4 的偶数节点数，得到 {n}")
    half = n // 2
    step = (half + chord_offset) % n
    if step in (0, 1, n - 1):
        raise GraphError(f"chord_offset={chord_offset} 使弦退化为环边或自环")
    edges = [(i, (i + 1) % n) for i in range(n)]
    edges += [(i, (i + step) % n) for i in range(half)]
    return build_graph(edges, n)


def clique_path(m: int, path_length: int) -> Graph:
    """两个 K_m 由 path_length 个中间节点的路径相连"""
    if m < 2 or path_length < 0:
        raise GraphError(f"CliquePath 尺寸不合法: m={m}, path={path_length}")
    n = 2 * m + path_length
    edges = [(a, b) for a in range(m) for b in range(a + 1, m)]
    second = m + path_length
    edges += [(second + a, second + b) for a in range(m) for b in range(a + 1, m)]
    # 路径从第一个团的最后一个节点连到第二个团的第一个节点
    chain = [m - 1] + list(range(m, m + path_length)) + [second]
    edges += list(zip(chain[:-1], chain[1:]))
    g = build_graph(edges, n)
    expected = 2 * comb(m, 2) + path_length + 1
    if g.n_edges != expected:
        raise GraphError(f"CliquePath 边数 {g.n_edges} 与预期 {expected} 不符")
    return g


def spine(length: int, leaves: int) -> Graph:
    """长度为 length 的脊柱路径，每个脊柱节点挂 leaves 个叶子；叶子编号接在脊柱之后"""
    if length < 2 or leaves < 0:
        raise GraphError(f"Spine 尺寸不合法: length={length}, leaves={leaves}")
    edges = [(i, i + 1) for i in range(length - 1)]
    for s in range(length):
        base = length + s * leaves
        edges += [(s, base + f) for f in range(leaves)]
    return build_graph(edges, length * (1 + leaves))


def gen_fixed_shape(family: GraphFamily, n: int = 8, chord_offset: int = 1, clique_size: int = 4,
                    path_length: int = 3, spine_length: int = 8, spine_leaves: int = 3) -> Graph:
    family = GraphFamily(family)
    if family == GraphFamily.RING:
        return ring(n)
    if family == GraphFamily.CROSSED_RING:
        return crossed_ring(n, chord_offset)
    if family == GraphFamily.CLIQUE_PATH:
        return clique_path(clique_size, path_length)
    if family == GraphFamily.SPINE:
        return spine(spine_length, spine_leaves)
    raise GraphError(f"{family.value} 不是固定形状图族")


def gen_heterophilic(n: int, n_classes: int, feature_dim: int, avg_degree: float, p_hetero: float,
                     seed, class_sep: float = 1.0) -> Tuple[Graph, np.ndarray, np.ndarray]:
    """异配图：标签均匀随机，候选节点对按标签是否不同以 p_hetero / 1-p_hetero 接受"""
    if n_classes < 2:
        raise GraphError(f"类别数至少为 2，得到 {n_classes}")
    if not 0.0 <= p_hetero <= 1.0:
        raise GraphError(f"p_hetero={p_hetero} 不在 [0, 1] 内")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n)

    target = int(round(n * avg_degree / 2.0))
    if target > comb(n, 2):
        raise GraphError(f"平均度 {avg_degree} 超出 {n} 个节点的完全图")

    pairs = set()
    attempts = 0
    budget = 1000 * max(target, 1)
    while len(pairs) < target:
        i, j = rng.integers(0, n, size=2)
        u = rng.random()
        attempts += 1
        if attempts > budget:
            raise DatasetError(f"异配图采样未收敛: 已接受 {len(pairs)}/{target} 条边")
        if i == j:
            continue
        key = (int(min(i, j)), int(max(i, j)))
        if key in pairs:
            continue
        accept = p_hetero if labels[i] != labels[j] else 1.0 - p_hetero
        if u < accept:
            pairs.add(key)

    g = build_graph(sorted(pairs), n)
    means = class_sep * rng.normal(size=(n_classes, feature_dim))
    features = means[labels] + rng.normal(size=(n, feature_dim))
    return g, labels, features


def expected_cross_fraction(labels: np.ndarray, p_hetero: float) -> float:
    """接受模型下跨类边比例的期望值"""
    n = labels.size
    counts = np.bincount(labels)
    same = float(np.sum(counts * (counts - 1))) / (n * (n - 1))
    cross = 1.0 - same
    accepted_cross = p_hetero * cross
    accepted_same = (1.0 - p_hetero) * same
    total = accepted_cross + accepted_same
    return accepted_cross / total if total > 0 else 0.0


def energy_target(g: Graph, kind: TargetKind, c1: float = 2.0, c2: float = 10.0) -> float:
    """图级能量回归目标"""
    kind = TargetKind(kind)
    if kind in (TargetKind.DIST_EMPH, TargetKind.SPECTRAL_DIST) and not is_connected(g):
        raise GraphError(f"{kind.value} 目标要求连通图")

    if kind == TargetKind.DIST_EMPH:
        return float(np.exp(average_shortest_path(g) / c1))
    if kind == TargetKind.CLUST_EMPH:
        return float(np.log1p(c2 * average_clustering(g)))
    if kind == TargetKind.SPECTRAL_DIST:
        dist = shortest_path_lengths(g).astype(np.float64)
        return float(np.abs(eigh(dist).eigenvalues).sum())
    if kind == TargetKind.SPECTRAL_ADJ:
        return float(np.abs(eigh(adjacency_matrix(g)).eigenvalues).sum())
    raise DatasetError("目标类型 none 没有数值")


def regression_features(g: Graph, feature_dim: int, rng: np.random.Generator) -> np.ndarray:
    """[度/d_max, 局部聚类系数, 高斯填充]"""
    d_max = g.d_max
    degree = g.degrees / d_max if d_max else np.zeros(g.n_nodes)
    padding = rng.normal(size=(g.n_nodes, max(feature_dim - 2, 0)))
    return np.column_stack([degree, local_clustering(g), padding])


def _instance_graph(spec: DatasetSpec, rng: np.random.Generator) -> Graph:
    family = GraphFamily(spec.family)
    n = int(rng.integers(spec.n_nodes_min, spec.n_nodes_max + 1))
    if family == GraphFamily.ERDOS_RENYI:
        need_connected = TargetKind(spec.target) in (TargetKind.DIST_EMPH, TargetKind.SPECTRAL_DIST)
        for _ in range(MAX_CONNECT_ATTEMPTS):
            p = float(rng.uniform(spec.edge_prob_min, spec.edge_prob_max))
            g = gen_erdos_renyi(n, p, rng)
            if not need_connected or is_connected(g):
                return g
        raise DatasetError(f"{MAX_CONNECT_ATTEMPTS} 次采样内未得到连通 ER 图 (n={n})")
    if family == GraphFamily.CROSSED_RING and n % 2:
        n += 1
    return gen_fixed_shape(
        family, n=n, chord_offset=spec.chord_offset, clique_size=spec.clique_size,
        path_length=spec.path_length, spine_length=spec.spine_length, spine_leaves=spec.spine_leaves,
    )


def generate_instance(spec: DatasetSpec, index: int) -> GraphInstance:
    """生成第 index 个实例，种子 (spec.seed, index)"""
    seed = (spec.seed, index)
    rng = np.random.default_rng(list(seed))

    if GraphFamily(spec.family) == GraphFamily.HETEROPHILIC:
        n = int(rng.integers(spec.n_nodes_min, spec.n_nodes_max + 1))
        g, labels, features = gen_heterophilic(
            n, spec.n_classes, spec.feature_dim, spec.avg_degree, spec.p_hetero, rng, spec.class_sep
        )
        return GraphInstance(index, g, features, labels=labels, seed=seed)

    g = _instance_graph(spec, rng)
    features = regression_features(g, spec.feature_dim, rng)
    target = None
    if TargetKind(spec.target) != TargetKind.NONE:
        target = energy_target(g, spec.target, spec.c1, spec.c2)
    return GraphInstance(index, g, features, target=target, seed=seed)


def generate_dataset(spec: DatasetSpec, threads: int = 1) -> List[GraphInstance]:
    """按实例并行生成，结果按实例编号排列"""
    indices = range(spec.count)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            instances = list(pool.map(lambda i: generate_instance(spec, i), indices))
    else:
        instances = [generate_instance(spec, i) for i in indices]
    logger.info(f"生成数据集完成: family={spec.family.value}, count={spec.count}, seed={spec.seed}")
    return instances
