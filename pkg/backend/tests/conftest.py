"""
测试公共夹具
"""

import os
import tempfile

# 在导入 app 之前把数据库、日志和输出目录指向临时目录
_TMP = tempfile.mkdtemp(prefix="manybody-tests-")
os.environ.setdefault("DATABASE_URL", f"sqlite:///{_TMP}/runs.db")
os.environ.setdefault("LOG_DIR", os.path.join(_TMP, "logs"))
os.environ.setdefault("RUNS_DIR", os.path.join(_TMP, "runs"))

import networkx as nx
import numpy as np
import pytest

from app.core.database import create_tables
from app.engine.graph import build_graph

create_tables()


def from_networkx(nxg: nx.Graph):
    nxg = nx.convert_node_labels_to_integers(nxg)
    return build_graph(nxg.edges(), nxg.number_of_nodes())


def random_graph(rng: np.random.Generator, n_min: int = 5, n_max: int = 12, p: float = 0.4):
    n = int(rng.integers(n_min, n_max + 1))
    rows, cols = np.triu_indices(n, k=1)
    keep = rng.random(rows.size) < p
    return build_graph(zip(rows[keep].tolist(), cols[keep].tolist()), n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def k3():
    return build_graph([(0, 1), (1, 2), (0, 2)], 3)


@pytest.fixture
def k4():
    return from_networkx(nx.complete_graph(4))


@pytest.fixture
def c6():
    return from_networkx(nx.cycle_graph(6))


@pytest.fixture
def star5():
    """中心 0，叶子 1..4"""
    return build_graph([(0, 1), (0, 2), (0, 3), (0, 4)], 5)
