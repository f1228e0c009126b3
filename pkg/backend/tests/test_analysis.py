"""
Dirichlet 能量、能量上界、基准与混合度剖面
"""

from math import log

import networkx as nx
import numpy as np
import pytest
from pydantic import ValidationError

from app.engine.analysis import (
    LOG_FLOOR,
    EnergyTrace,
    benchmark,
    bound_factor_rows,
    bound_order_factor,
    cumulative_bound_factor,
    dirichlet_energy,
    dirichlet_energy_trace,
    energy_bound,
    energy_bound_value,
    lemma_growth_factor,
    linear_fit_r2,
    log_energy,
    mixing_profile,
    per_order_energy,
    runtime_ratio,
)
from app.engine.curvature import balanced_forman
from app.engine.graph import build_graph
from app.engine.model import init_state, model_forward
from app.engine.synthgen import gen_erdos_renyi, spine
from app.schemas import EnergyAveraging, ModelConfig
from conftest import from_networkx, random_graph


def test_dirichlet_energy_golden(c6):
    assert dirichlet_energy(build_graph([(0, 1)], 2), [[1.0], [-1.0]]) == pytest.approx(4.0)
    assert dirichlet_energy(c6, np.full((6, 3), 2.5)) == pytest.approx(0.0, abs=1e-24)
    assert dirichlet_energy(build_graph([], 1), [[3.0]]) == 0.0


def test_dirichlet_forms_agree(rng):
    for _ in range(500):
        g = random_graph(rng, 2, 10, p=float(rng.uniform(0.1, 0.9)))
        h = rng.normal(size=(g.n_nodes, int(rng.integers(1, 4))))
        assert dirichlet_energy(g, h) == pytest.approx(dirichlet_energy_trace(g, h), abs=1e-8)


def test_dirichlet_energy_zero_iff_scaled_constant_per_component(rng):
    g = build_graph([(0, 1), (1, 2), (3, 4), (4, 5), (5, 3)], 6)
    sqrt_deg = np.sqrt(g.degrees.astype(float))
    h = np.where(np.arange(6) < 3, 1.7, -0.4)[:, None] * sqrt_deg[:, None]
    assert dirichlet_energy(g, h) == pytest.approx(0.0, abs=1e-24)
    h[0, 0] += 0.1
    assert dirichlet_energy(g, h) > 0.0


def test_bound_factors():
    assert bound_order_factor(2, 4) == 8
    assert bound_order_factor(4, 4) == 16
    assert cumulative_bound_factor(3, 4) == 8 * 18
    # C(d_max, ν-1) = 0 的阶不计入
    assert cumulative_bound_factor(5, 2) == cumulative_bound_factor(3, 2)
    rows = bound_factor_rows(5, 4)
    assert [r["nu"] for r in rows] == [2, 3, 4]
    assert rows[1]["lemma_factor"] == 3 * 25


@pytest.mark.parametrize("d_max", range(2, 11))
def test_bound_grows_with_correlation_order(d_max):
    cumulative = [cumulative_bound_factor(nu, d_max) for nu in range(2, d_max + 2)]
    lemma = [lemma_growth_factor(nu, d_max) for nu in range(2, d_max + 2)]
    assert all(a < b for a, b in zip(cumulative, cumulative[1:]))
    assert all(a < b for a, b in zip(lemma, lemma[1:]))


def test_energy_bound_value_on_k3():
    # ν=2, t=1：λ_max·|N|·(2·d_max·w·h)² = 1.5·3·16
    assert energy_bound_value(1.5, 3, 2, 2, 1, [1.0], 1.0) == pytest.approx(72.0)


def test_energy_bound_edgeless_single_node():
    config = ModelConfig(nu=3, layers=1, hidden_dim=2)
    g = build_graph([], 1)
    report = energy_bound(g, balanced_forman(g), config, init_state(config), np.ones((1, 1)))
    assert report.bound_value == 0.0
    assert report.observed_energy == 0.0
    assert report.satisfied


@pytest.mark.parametrize("nu", [2, 3, 4])
def test_energy_bound_holds_after_forward(nu, rng):
    config = ModelConfig(nu=nu, layers=3, hidden_dim=4, enumeration_cap=0)
    g = from_networkx(nx.connected_watts_strogatz_graph(14, 4, 0.2, seed=nu))
    report = energy_bound(g, balanced_forman(g), config, init_state(config), rng.normal(size=(14, 1)))
    assert report.satisfied
    assert report.bound_value >= report.observed_energy >= 0.0
    assert report.as_dict()["lambda_max"] == pytest.approx(report.lambda_max)


def test_per_order_energy(rng):
    g = gen_erdos_renyi(12, 0.4, 2)
    x = rng.normal(size=(12, 1))
    config2 = ModelConfig(nu=2, layers=2, hidden_dim=3)
    _, cache2 = model_forward(g, None, x, init_state(config2), config2)
    assert set(per_order_energy(cache2, g)) == {2}

    config4 = ModelConfig(nu=4, layers=2, hidden_dim=3, enumeration_cap=0)
    _, cache4 = model_forward(g, balanced_forman(g), x, init_state(config4), config4)
    mean_of_layers = per_order_energy(cache4, g)
    energy_of_mean = per_order_energy(cache4, g, EnergyAveraging.ENERGY_OF_MEAN)
    assert set(mean_of_layers) == {2, 3, 4}
    assert all(v >= 0.0 for v in mean_of_layers.values())
    expected = np.mean([dirichlet_energy(g, layer.order_sums[3]) for layer in cache4.layers])
    assert mean_of_layers[3] == pytest.approx(expected)
    # 凸性：均值的能量不超过能量的均值
    assert energy_of_mean[3] <= mean_of_layers[3] + 1e-12


def test_energy_trace_columns():
    trace = EnergyTrace(nu=3)
    trace.append(1, 2.0, {2: 1.0, 3: 0.0})
    row = trace.rows[0]
    assert list(row) == ["epoch", "dirichlet_energy", "log_energy", "energy_k2", "log_energy_k2",
                         "energy_k3", "log_energy_k3"]
    assert row["log_energy_k3"] == log(LOG_FLOOR)
    assert log_energy(np.e) == pytest.approx(1.0)


def test_benchmark_table_shape():
    g = gen_erdos_renyi(20, 0.3, 1)
    base = ModelConfig(nu=3, hidden_dim=4, enumeration_cap=8)
    rows = benchmark(g, balanced_forman(g), {"many-body": base, "chebnet": base.model_copy(update={"nu": 2})},
                     [1, 2, 3, 4], reps=2)
    assert len(rows) == 8
    assert set(rows[0]) == {"model", "layers", "mean_ms", "std_ms", "threads"}
    assert all(r["mean_ms"] > 0 for r in rows)
    assert runtime_ratio(rows, "many-body", "chebnet", 4) > 0
    assert runtime_ratio(rows, "many-body", "chebnet", 99) is None


def test_zero_layer_model_rejected():
    with pytest.raises(ValidationError):
        ModelConfig(layers=0)


def test_linear_fit_r2():
    assert linear_fit_r2([1, 2, 3, 4], [3, 5, 7, 9]) == pytest.approx(1.0)
    assert linear_fit_r2([1, 2, 3, 4], [1, 4, 1, 4]) < 0.5


@pytest.mark.slow
def test_runtime_grows_linearly_with_layers():
    g = gen_erdos_renyi(120, 0.2, 0)
    base = ModelConfig(nu=3, hidden_dim=16, enumeration_cap=16)
    layers = [5, 10, 15, 20]
    rows = benchmark(g, balanced_forman(g), {"many-body": base, "chebnet": base.model_copy(update={"nu": 2})},
                     layers, reps=30)
    for name in ("many-body", "chebnet"):
        times = [r["mean_ms"] for r in rows if r["model"] == name]
        assert linear_fit_r2(layers, times) > 0.95


def test_mixing_profile_rows():
    config = ModelConfig(nu=4, layers=3, hidden_dim=3, cheb_order_2body=1, enumeration_cap=0)
    g = spine(6, 2)
    rows = mixing_profile(g, balanced_forman(g), init_state(config), config, 6)
    assert [(r["group_size"], r["distance"]) for r in rows] == [(3, 1), (3, 2), (4, 1), (4, 2), (4, 3)]
    assert all(r["mean_sensitivity"] > 0.0 for r in rows)
