"""
Balanced Forman 曲率
"""

from itertools import product

import networkx as nx
import numpy as np
import pytest

from app.engine.curvature import balanced_forman, curvature_rows, edge_curvature, motif_edge_weights
from app.engine.graph import build_graph
from app.schemas import WeightMode
from conftest import from_networkx, random_graph


def brute_force_curvature(g, i, j):
    """按定义逐个枚举 i~k~w~j 路径"""
    adj = np.zeros((g.n_nodes, g.n_nodes), dtype=bool)
    for a, b in g.edges:
        adj[a, b] = adj[b, a] = True
    d_i, d_j = int(adj[i].sum()), int(adj[j].sum())
    tri = int(np.sum(adj[i] & adj[j]))

    def side(a, b):
        closing = {}
        for k, w in product(range(g.n_nodes), repeat=2):
            if k in (a, b) or w in (a, b) or k == w:
                continue
            if adj[a, k] and adj[k, w] and adj[w, b] and not adj[k, b] and not adj[w, a]:
                closing[k] = closing.get(k, 0) + 1
        return len(closing), max(closing.values(), default=0)

    sq_i, gam_i = side(i, j)
    sq_j, gam_j = side(j, i)
    gamma = max(gam_i, gam_j)
    value = 2 / d_i + 2 / d_j - 2 + 2 * tri / max(d_i, d_j) + tri / min(d_i, d_j)
    if gamma:
        value += (sq_i + sq_j) / (gamma * max(d_i, d_j))
    return value


def test_golden_values(k4, c6, star5):
    assert balanced_forman(build_graph([(0, 1)], 2))[(0, 1)] == pytest.approx(2.0)
    assert np.all(balanced_forman(c6).values == 0.0)
    assert np.allclose(balanced_forman(k4).values, 4.0 / 3.0)
    assert balanced_forman(star5)[(0, 4)] == pytest.approx(0.5)
    assert np.allclose(balanced_forman(from_networkx(nx.cycle_graph(4))).values, 1.0)


def test_matches_brute_force_on_random_graphs(rng):
    for _ in range(30):
        g = random_graph(rng, 4, 12, p=float(rng.uniform(0.2, 0.7)))
        cm = balanced_forman(g)
        for idx, (i, j) in enumerate(g.edges):
            assert cm.values[idx] == pytest.approx(brute_force_curvature(g, i, j), abs=1e-12)


def test_edge_curvature_symmetric_in_endpoints(rng):
    g = random_graph(rng, 10, 12, p=0.4)
    for i, j in g.edges:
        assert edge_curvature(g, i, j) == edge_curvature(g, j, i)


def test_lower_bound_on_tree():
    # 两端度数均为 d 的树边趋近 -2
    hub_a = [(0, 2 + f) for f in range(5)]
    hub_b = [(1, 7 + f) for f in range(5)]
    g = build_graph([(0, 1)] + hub_a + hub_b, 12)
    value = balanced_forman(g)[(0, 1)]
    assert -2.0 < value < 0.0
    assert balanced_forman(g).rounded[g.edge_id(0, 1)] == -1


@pytest.mark.parametrize("mode, expected", [
    (WeightMode.LITERAL, [0.5, 0.5]),
    (WeightMode.SHIFTED_POSITIVE, [1.5, 1.5]),
    (WeightMode.SIGN_ROUNDED, [1.0, 1.0]),
    (WeightMode.UNWEIGHTED_LEARNABLE, [1.0, 1.0]),
])
def test_motif_edge_weights(star5, mode, expected):
    cm = balanced_forman(star5)
    assert np.allclose(motif_edge_weights(cm, 0, [1, 3], mode), expected)


def test_curvature_rows_layout(c6):
    rows = curvature_rows(balanced_forman(c6))
    assert len(rows) == 6
    assert list(rows[0]) == ["edge_id", "u", "v", "ricci", "rounded"]
    assert all(r["ricci"] == 0.0 and r["rounded"] == 0 for r in rows)
