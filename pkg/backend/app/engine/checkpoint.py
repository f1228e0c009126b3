"""
模型检查点：ModelConfig + 全部参数张量，orjson 序列化
"""

from pathlib import Path
from typing import Tuple, Union

import numpy as np
import orjson
from pydantic import ValidationError

from app.core.errors import CheckpointError
from app.engine.model import ModelState, two_body_coeffs
from app.schemas import ModelConfig

FORMAT_VERSION = 1


def checkpoint_bytes(config: ModelConfig, state: ModelState) -> bytes:
    payload = {
        "format_version": FORMAT_VERSION,
        "config": config.model_dump(mode="json"),
        "params": {
            name: {"shape": list(value.shape), "data": np.ascontiguousarray(value).reshape(-1)}
            for name, value in sorted(state.params.items())
        },
    }
    return orjson.dumps(payload, option=orjson.OPT_SERIALIZE_NUMPY)


def save_checkpoint(path: Union[str, Path], config: ModelConfig, state: ModelState) -> Path:
    """写入检查点；float64 以最短可还原表示输出，读回逐位一致"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(config, state))
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[ModelConfig, ModelState]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"检查点不存在: {path}")
    try:
        payload = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as e:
        raise CheckpointError(f"检查点无法解析: {path}: {e}") from e

    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"不支持的检查点版本: {version}")
    try:
        config = ModelConfig.model_validate(payload["config"])
        params = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in payload["params"].items()
        }
    except (KeyError, ValueError, ValidationError) as e:
        raise CheckpointError(f"检查点内容损坏: {path}: {e}") from e

    _check_shapes(config, params)
    return config, ModelState(params)


def _check_shapes(config: ModelConfig, params: dict):
    d = config.hidden_dim
    expected = {"W_in": (config.in_dim, d), "W_out": (d, config.out_dim), "b_out": (config.out_dim,)}
    for t in range(config.layers):
        expected[f"layer{t}.theta2"] = (two_body_coeffs(config),)
        expected[f"layer{t}.W_x"] = (d, d)
        expected[f"layer{t}.W_y"] = (d, d)
        for k in range(3, config.nu + 1):
            expected[f"layer{t}.theta{k}"] = (k,)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointError(f"检查点参数与配置不一致: 缺少 {missing}, 多余 {extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise CheckpointError(f"参数 {name} 形状 {params[name].shape} 与配置 {shape} 不一致")
