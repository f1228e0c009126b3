"""
合成图生成器与能量目标
"""

from math import log

import numpy as np
import pytest

import app.engine.synthgen as synthgen
from app.core.errors import DatasetError, GraphError
from app.engine.graph import build_graph, is_connected
from app.engine.synthgen import (
    clique_path,
    crossed_ring,
    energy_target,
    expected_cross_fraction,
    gen_erdos_renyi,
    gen_fixed_shape,
    gen_heterophilic,
    generate_dataset,
    generate_instance,
    ring,
    spine,
)
from app.schemas import DatasetSpec, GraphFamily, TargetKind


def test_erdos_renyi_extremes_and_determinism():
    assert gen_erdos_renyi(10, 0.0, 1).n_edges == 0
    assert gen_erdos_renyi(10, 1.0, 1).n_edges == 45
    assert gen_erdos_renyi(30, 0.3, 5).edges == gen_erdos_renyi(30, 0.3, 5).edges
    with pytest.raises(GraphError):
        gen_erdos_renyi(10, 1.5, 0)


def test_ring():
    g = ring(6)
    assert g.n_edges == 6
    assert np.all(g.degrees == 2)


def test_spine_sizes():
    g = spine(5, 3)
    assert g.n_nodes == 20
    assert g.degrees[1:4].tolist() == [5, 5, 5]
    assert g.degrees[0] == g.degrees[4] == 4
    assert np.all(g.degrees[5:] == 1)


@pytest.mark.parametrize("m, path_length, n_nodes, n_edges", [(4, 3, 11, 16), (2, 0, 4, 3), (3, 1, 7, 8)])
def test_clique_path_sizes(m, path_length, n_nodes, n_edges):
    g = clique_path(m, path_length)
    assert g.n_nodes == n_nodes
    assert g.n_edges == n_edges
    assert is_connected(g)


@pytest.mark.parametrize("m, path_length", [(1, 3), (4, -1)])
def test_clique_path_rejects_bad_sizes(m, path_length):
    with pytest.raises(GraphError):
        clique_path(m, path_length)


def test_clique_path_edge_count_mismatch_raises(monkeypatch):
    build = synthgen.build_graph
    monkeypatch.setattr(synthgen, "build_graph", lambda edges, n: build(edges[:-1], n))
    with pytest.raises(GraphError):
        clique_path(4, 3)


def test_crossed_ring():
    assert np.all(crossed_ring(8, 0).degrees == 3)
    g = crossed_ring(8, 1)
    assert g.n_edges == 12
    assert g.has_edge(0, 5) and g.has_edge(0, 3)
    with pytest.raises(GraphError):
        crossed_ring(7)


def test_fixed_shape_dispatch():
    assert gen_fixed_shape(GraphFamily.RING, n=5).n_edges == 5
    with pytest.raises(GraphError):
        gen_fixed_shape(GraphFamily.ERDOS_RENYI)


def test_heterophilic_full_heterophily():
    g, labels, features = gen_heterophilic(300, 4, 8, 6.0, 1.0, seed=3)
    assert all(labels[i] != labels[j] for i, j in g.edges)
    assert g.n_edges == 900
    assert features.shape == (300, 8)


@pytest.mark.parametrize("n", [500, 2000])
def test_heterophilic_cross_fraction(n):
    g, labels, _ = gen_heterophilic(n, 7, 16, 10.0, 0.8, seed=11)
    cross = np.mean([labels[i] != labels[j] for i, j in g.edges])
    assert abs(cross - expected_cross_fraction(labels, 0.8)) <= 0.03


def test_energy_targets_golden(k3, c6):
    assert energy_target(k3, TargetKind.CLUST_EMPH) == pytest.approx(log(11.0))
    assert energy_target(build_graph([(0, 1)], 2), TargetKind.SPECTRAL_ADJ) == pytest.approx(2.0)
    assert energy_target(c6, TargetKind.SPECTRAL_ADJ) == pytest.approx(8.0)
    assert energy_target(k3, TargetKind.DIST_EMPH, c1=2.0) == pytest.approx(np.exp(0.5))
    # K3 距离矩阵 J - I 的特征值为 2, -1, -1
    assert energy_target(k3, TargetKind.SPECTRAL_DIST) == pytest.approx(4.0)


def test_energy_targets_errors():
    disconnected = build_graph([(0, 1)], 3)
    with pytest.raises(GraphError):
        energy_target(disconnected, TargetKind.DIST_EMPH)
    with pytest.raises(DatasetError):
        energy_target(disconnected, TargetKind.NONE)


def test_dataset_instances_are_seeded():
    spec = DatasetSpec(count=3, n_nodes_min=10, n_nodes_max=14, feature_dim=4, seed=8)
    first = generate_dataset(spec)
    second = generate_dataset(spec, threads=3)
    for a, b in zip(first, second):
        assert a.graph.edges == b.graph.edges
        assert np.array_equal(a.features, b.features)
        assert a.target == b.target
        assert is_connected(a.graph)
    assert generate_instance(spec, 1).graph.edges == first[1].graph.edges
    assert first[0].features.shape[1] == 4


def test_dataset_regression_features_layout():
    spec = DatasetSpec(family=GraphFamily.RING, count=1, n_nodes_min=6, n_nodes_max=6, feature_dim=3,
                       target=TargetKind.SPECTRAL_ADJ)
    inst = generate_instance(spec, 0)
    assert np.allclose(inst.features[:, 0], 1.0)
    assert np.allclose(inst.features[:, 1], 0.0)
    assert inst.target == pytest.approx(8.0)


def test_heterophilic_instance_has_labels():
    spec = DatasetSpec(family=GraphFamily.HETEROPHILIC, count=1, n_nodes_min=50, n_nodes_max=50,
                       n_classes=3, feature_dim=5, avg_degree=4.0)
    inst = generate_instance(spec, 0)
    assert inst.labels.shape == (50,)
    assert inst.target is None
