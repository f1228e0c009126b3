"""
图核心：不可变无向图、拉普拉斯矩阵、最短路与聚类系数
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from app.core.errors import GraphError
from app.schemas import LaplacianKind

Edge = Tuple[int, int]

# 不可达节点对的距离标记
UNREACHABLE = -1


@dataclass(frozen=True)
class Graph:
    """压缩邻接表形式的无向图，构造后不可变"""
    n_nodes: int
    edges: Tuple[Edge, ...]
    adjacency: Tuple[Tuple[int, ...], ...]
    degrees: np.ndarray
    edge_index: Dict[Edge, int] = field(repr=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def d_max(self) -> int:
        return int(self.degrees.max()) if self.n_nodes else 0

    def neighbors(self, i: int) -> Tuple[int, ...]:
        return self.adjacency[i]

    def has_edge(self, i: int, j: int) -> bool:
        return _key(i, j) in self.edge_index

    def edge_id(self, i: int, j: int) -> int:
        try:
            return self.edge_index[_key(i, j)]
        except KeyError:
            raise GraphError(f"({i}, {j}) 不是图中的边") from None


def _key(i: int, j: int) -> Edge:
    return (i, j) if i < j else (j, i)


def build_graph(edge_list: Iterable[Sequence[int]], n_nodes: int) -> Graph:
    """由边列表构造图：去重、对称化，边ID按排序后的节点对分配"""
    if n_nodes < 0:
        raise GraphError(f"节点数不能为负: {n_nodes}")

    pairs = set()
    for pair in edge_list:
        i, j = int(pair[0]), int(pair[1])
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise GraphError(f"节点ID越界: ({i}, {j})，节点数 {n_nodes}")
        if i == j:
            raise GraphError(f"不允许自环: ({i}, {i})")
        pairs.add(_key(i, j))

    edges = tuple(sorted(pairs))
    neighbor_lists: List[List[int]] = [[] for _ in range(n_nodes)]
    for i, j in edges:
        neighbor_lists[i].append(j)
        neighbor_lists[j].append(i)

    adjacency = tuple(tuple(sorted(nb)) for nb in neighbor_lists)
    degrees = np.array([len(nb) for nb in adjacency], dtype=np.int64)
    degrees.flags.writeable = False
    edge_index = {e: idx for idx, e in enumerate(edges)}

    return Graph(n_nodes=n_nodes, edges=edges, adjacency=adjacency, degrees=degrees, edge_index=edge_index)


def permute_graph(g: Graph, perm: Sequence[int]) -> Graph:
    """节点重标号：旧节点 i 变为 perm[i]"""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(g.n_nodes)):
        raise GraphError("perm 必须是 0..n-1 的排列")
    return build_graph(((int(perm[i]), int(perm[j])) for i, j in g.edges), g.n_nodes)


def as_features(g: Graph, values) -> np.ndarray:
    """校验特征矩阵：行数等于节点数且全部有限"""
    h = np.asarray(values, dtype=np.float64)
    if h.ndim == 1:
        h = h[:, None]
    if h.ndim != 2 or h.shape[0] != g.n_nodes:
        raise GraphError(f"特征矩阵形状 {h.shape} 与节点数 {g.n_nodes} 不匹配")
    if not np.all(np.isfinite(h)):
        raise GraphError("特征矩阵包含非有限值")
    return h


def _edge_weights(g: Graph, weights: Optional[Sequence[float]]) -> np.ndarray:
    if weights is None:
        return np.ones(g.n_edges, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (g.n_edges,):
        raise GraphError(f"边权数量 {w.shape} 与边数 {g.n_edges} 不匹配")
    return w


def adjacency_matrix(g: Graph, weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """稠密（加权）邻接矩阵"""
    a = np.zeros((g.n_nodes, g.n_nodes), dtype=np.float64)
    if g.n_edges:
        w = _edge_weights(g, weights)
        rows, cols = np.array(g.edges, dtype=np.int64).T
        a[rows, cols] = w
        a[cols, rows] = w
    return a


def sparse_adjacency(g: Graph) -> sparse.csr_matrix:
    """CSR 邻接矩阵"""
    if not g.n_edges:
        return sparse.csr_matrix((g.n_nodes, g.n_nodes), dtype=np.float64)
    rows, cols = np.array(g.edges, dtype=np.int64).T
    data = np.ones(2 * g.n_edges, dtype=np.float64)
    return sparse.csr_matrix(
        (data, (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(g.n_nodes, g.n_nodes),
    )


def laplacian(g: Graph, kind: LaplacianKind = LaplacianKind.SYMMETRIC_NORMALIZED,
              weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """稠密对称拉普拉斯矩阵；归一化形式中孤立节点对应零行零列"""
    a = adjacency_matrix(g, weights)
    deg = a.sum(axis=1)
    kind = LaplacianKind(kind)

    if kind == LaplacianKind.UNNORMALIZED:
        return np.diag(deg) - a

    inv_sqrt = np.zeros_like(deg)
    nonzero = deg > 0
    inv_sqrt[nonzero] = 1.0 / np.sqrt(deg[nonzero])
    norm_adj = inv_sqrt[:, None] * a * inv_sqrt[None, :]

    if kind == LaplacianKind.NORMALIZED_ADJACENCY:
        return norm_adj
    return np.diag(nonzero.astype(np.float64)) - norm_adj


def shortest_path_lengths(g: Graph) -> np.ndarray:
    """BFS 求两两跳数距离；不可达记为 UNREACHABLE"""
    dist = np.full((g.n_nodes, g.n_nodes), UNREACHABLE, dtype=np.int64)
    for source in range(g.n_nodes):
        row = dist[source]
        row[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for w in g.adjacency[u]:
                if row[w] == UNREACHABLE:
                    row[w] = row[u] + 1
                    queue.append(w)
    return dist


def hop_ball(g: Graph, sources: Iterable[int], hops: int) -> np.ndarray:
    """hops 跳以内可达的节点掩码"""
    mask = np.zeros(g.n_nodes, dtype=bool)
    frontier = list(sources)
    mask[frontier] = True
    for _ in range(hops):
        nxt = []
        for u in frontier:
            for w in g.adjacency[u]:
                if not mask[w]:
                    mask[w] = True
                    nxt.append(w)
        frontier = nxt
    return mask


def is_connected(g: Graph) -> bool:
    if g.n_nodes == 0:
        return True
    return bool(hop_ball(g, [0], g.n_nodes).all())


def average_shortest_path(g: Graph) -> float:
    """平均最短路长度，排除不可达节点对"""
    dist = shortest_path_lengths(g)
    off_diag = ~np.eye(g.n_nodes, dtype=bool)
    valid = dist[off_diag & (dist != UNREACHABLE)]
    return float(valid.mean()) if valid.size else 0.0


def triangles_at(g: Graph) -> np.ndarray:
    """每个节点参与的三角形数"""
    counts = np.zeros(g.n_nodes, dtype=np.int64)
    neighbor_sets = [set(nb) for nb in g.adjacency]
    for i in range(g.n_nodes):
        nb = g.adjacency[i]
        for a_pos, a in enumerate(nb):
            counts[i] += len(neighbor_sets[a].intersection(nb[a_pos + 1:]))
    return counts


def local_clustering(g: Graph) -> np.ndarray:
    """局部聚类系数，度小于 2 的节点为 0"""
    tri = triangles_at(g).astype(np.float64)
    deg = g.degrees.astype(np.float64)
    out = np.zeros(g.n_nodes, dtype=np.float64)
    mask = deg >= 2
    out[mask] = 2.0 * tri[mask] / (deg[mask] * (deg[mask] - 1.0))
    return out


def average_clustering(g: Graph) -> float:
    if g.n_nodes == 0:
        return 0.0
    return float(local_clustering(g).mean())


def graph_to_payload(g: Graph, features: Optional[np.ndarray] = None,
                     labels: Optional[np.ndarray] = None) -> dict:
    """按 JSON 格式导出图（边按排序后的节点对输出）"""
    payload = {"n_nodes": g.n_nodes, "edges": [list(e) for e in g.edges]}
    if features is not None:
        features = np.ascontiguousarray(features, dtype=np.float64)
        payload["dim"] = int(features.shape[1])
        payload["features"] = features.reshape(-1)
    if labels is not None:
        payload["labels"] = np.asarray(labels, dtype=np.int64)
    return payload


def graph_from_payload(payload: dict) -> Tuple[Graph, Optional[np.ndarray], Optional[np.ndarray]]:
    """从 JSON 格式读取图、特征和标签"""
    g = build_graph(payload.get("edges", []), int(payload["n_nodes"]))
    features = None
    if payload.get("features") is not None:
        dim = payload.get("dim")
        if not dim:
            raise GraphError("给出 features 时必须给出 dim")
        features = as_features(g, np.asarray(payload["features"], dtype=np.float64).reshape(g.n_nodes, int(dim)))
    labels = None
    if payload.get("labels") is not None:
        labels = np.asarray(payload["labels"], dtype=np.int64)
        if labels.shape != (g.n_nodes,):
            raise GraphError(f"标签数量 {labels.shape} 与节点数 {g.n_nodes} 不匹配")
    return g, features, labels
