"""
Adam、损失函数与检查点
"""

import numpy as np
import orjson
import pytest

from app.core.errors import CheckpointError
from app.engine.checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from app.engine.model import init_state
from app.engine.optim import Adam, accuracy, cross_entropy_loss, mse_loss, softmax
from app.schemas import AdamConfig, ModelConfig


def test_adam_first_step_moves_by_lr():
    params = {"a": np.array([1.0, -2.0, 0.5])}
    grads = {"a": np.array([0.3, -4.0, 1e-3])}
    Adam(AdamConfig(lr=0.01)).step(params, grads)
    # 第一步偏差校正后步长约为 lr·sign(g)
    assert np.allclose(params["a"], [0.99, -1.99, 0.49], atol=1e-6)


def test_adam_minimizes_quadratic():
    params = {"x": np.array([3.0, -1.5])}
    opt = Adam(AdamConfig(lr=0.1))
    for _ in range(1000):
        opt.step(params, {"x": 2.0 * params["x"]})
    assert np.all(np.abs(params["x"]) < 5e-2)
    assert opt.state_dict()["t"] == 1000


def test_adam_is_deterministic(rng):
    grads = [{"w": rng.normal(size=4), "b": rng.normal(size=2)} for _ in range(5)]
    results = []
    for _ in range(2):
        params = {"w": np.ones(4), "b": np.zeros(2)}
        opt = Adam()
        for g in grads:
            opt.step(params, g)
        results.append(params)
    assert all(np.array_equal(results[0][k], results[1][k]) for k in results[0])


def test_mse_loss_and_gradient():
    loss, grad = mse_loss([[1.0, 3.0]], [[0.0, 1.0]])
    assert loss == pytest.approx(2.5)
    assert np.allclose(grad, [[1.0, 2.0]])


def test_cross_entropy_gradient_matches_finite_differences(rng):
    logits = rng.normal(size=(5, 3))
    labels = np.array([0, 2, 1, 1, 0])
    mask = np.array([True, False, True, True, False])
    _, grad = cross_entropy_loss(logits, labels, mask)
    assert np.all(grad[~mask] == 0.0)

    eps = 1e-6
    for idx in np.ndindex(logits.shape):
        plus, minus = logits.copy(), logits.copy()
        plus[idx] += eps
        minus[idx] -= eps
        numeric = (cross_entropy_loss(plus, labels, mask)[0] - cross_entropy_loss(minus, labels, mask)[0]) / (2 * eps)
        assert grad[idx] == pytest.approx(numeric, abs=1e-7)


def test_cross_entropy_empty_mask():
    loss, grad = cross_entropy_loss(np.zeros((2, 2)), [0, 1], [False, False])
    assert loss == 0.0 and np.all(grad == 0.0)


def test_softmax_rows_sum_to_one():
    probs = softmax(np.array([[1000.0, 0.0], [1.0, 2.0]]))
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert probs[0, 0] == pytest.approx(1.0)


def test_accuracy_respects_mask():
    logits = np.array([[2.0, 0.0], [0.0, 1.0], [3.0, 0.0]])
    assert accuracy(logits, [0, 1, 1]) == pytest.approx(2.0 / 3.0)
    assert accuracy(logits, [0, 1, 1], [True, True, False]) == 1.0


def test_checkpoint_restores_bitwise(tmp_path, rng):
    config = ModelConfig(nu=4, layers=2, hidden_dim=3, in_dim=2)
    state = init_state(config)
    state.params["W_in"] = rng.normal(size=(2, 3)) / 3.0
    path = save_checkpoint(tmp_path / "ckpt" / "checkpoint.json", config, state)

    loaded_config, loaded = load_checkpoint(path)
    assert loaded_config == config
    for name, value in state.params.items():
        assert np.array_equal(loaded.params[name], value)


def test_checkpoint_missing_or_corrupt(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_bytes(b"{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_checkpoint_rejects_wrong_version(tmp_path):
    config = ModelConfig(layers=1, hidden_dim=2)
    path = save_checkpoint(tmp_path / "c.json", config, init_state(config))
    payload = orjson.loads(path.read_bytes())
    payload["format_version"] = FORMAT_VERSION + 1
    path.write_bytes(orjson.dumps(payload))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_rejects_shape_mismatch(tmp_path):
    config = ModelConfig(layers=1, hidden_dim=2)
    path = save_checkpoint(tmp_path / "c.json", config, init_state(config))
    payload = orjson.loads(path.read_bytes())
    payload["config"]["hidden_dim"] = 3
    path.write_bytes(orjson.dumps(payload))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)

    payload["config"]["hidden_dim"] = 2
    del payload["params"]["layer0.W_y"]
    path.write_bytes(orjson.dumps(payload))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
