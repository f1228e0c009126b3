"""
数据集服务：生成、写盘与读取

目录结构：manifest.json + graphs/graph_XXXX.json + targets.csv（回归数据集）
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import orjson
import pandas as pd

from app.core.errors import DatasetError, GraphError
from app.core.logging import logger
from app.engine.graph import graph_from_payload, graph_to_payload
from app.engine.synthgen import GraphInstance, generate_dataset
from app.schemas import DatasetSpec, GraphFamily, TargetKind, validate_config

DATASET_FORMAT_VERSION = 1
MANIFEST = "manifest.json"
TARGETS = "targets.csv"

FEATURE_MODELS = {
    "regression": "[degree / d_max, local clustering, N(0, 1) padding]",
    "heterophilic": "class-conditional Gaussian: class_sep * N(0, I) class means plus N(0, I) noise",
}


@dataclass
class Dataset:
    """已加载的数据集"""
    path: Path
    spec: DatasetSpec
    manifest: Dict[str, Any]
    instances: List[GraphInstance]

    @property
    def is_classification(self) -> bool:
        return GraphFamily(self.spec.family) == GraphFamily.HETEROPHILIC

    @property
    def feature_dim(self) -> int:
        return int(self.instances[0].features.shape[1])


def _manifest(spec: DatasetSpec, instances: List[GraphInstance]) -> Dict[str, Any]:
    heterophilic = GraphFamily(spec.family) == GraphFamily.HETEROPHILIC
    return {
        "format_version": DATASET_FORMAT_VERSION,
        "spec": spec.model_dump(mode="json"),
        "constants": {"c1": spec.c1, "c2": spec.c2},
        "feature_model": FEATURE_MODELS["heterophilic" if heterophilic else "regression"],
        "instances": [
            {
                "graph_id": inst.graph_id,
                "file": f"graphs/graph_{inst.graph_id:04d}.json",
                "seed": list(inst.seed),
                "n_nodes": inst.graph.n_nodes,
                "n_edges": inst.graph.n_edges,
            }
            for inst in instances
        ],
    }


class DatasetService:
    """合成数据集的生成与读取"""

    def __init__(self, threads: int = 1):
        self.threads = threads

    def generate(self, spec: Union[DatasetSpec, Dict[str, Any]], out_dir: Union[str, Path]) -> Path:
        """生成数据集并写盘；相同 spec 与种子重复生成得到相同文件"""
        if not isinstance(spec, DatasetSpec):
            spec = validate_config(DatasetSpec, spec)
        out_dir = Path(out_dir)
        try:
            instances = generate_dataset(spec, threads=self.threads)
            (out_dir / "graphs").mkdir(parents=True, exist_ok=True)

            manifest = _manifest(spec, instances)
            for inst, entry in zip(instances, manifest["instances"]):
                payload = graph_to_payload(inst.graph, inst.features, inst.labels)
                (out_dir / entry["file"]).write_bytes(orjson.dumps(payload, option=orjson.OPT_SERIALIZE_NUMPY))

            if TargetKind(spec.target) != TargetKind.NONE and GraphFamily(spec.family) != GraphFamily.HETEROPHILIC:
                frame = pd.DataFrame({
                    "graph_id": [inst.graph_id for inst in instances],
                    "target": [inst.target for inst in instances],
                })
                frame.to_csv(out_dir / TARGETS, index=False, float_format="%.17g")

            (out_dir / MANIFEST).write_bytes(orjson.dumps(manifest, option=orjson.OPT_INDENT_2))
            logger.info(f"数据集已写入: {out_dir} ({len(instances)} 个图)")
            return out_dir

        except (GraphError, DatasetError) as e:
            logger.error(f"生成数据集失败: {str(e)}")
            raise

    def load(self, path: Union[str, Path]) -> Dataset:
        """读取数据集目录"""
        path = Path(path)
        manifest_path = path / MANIFEST
        if not manifest_path.is_file():
            raise DatasetError(f"数据集不存在或缺少 {MANIFEST}: {path}")

        try:
            manifest = orjson.loads(manifest_path.read_bytes())
            if manifest.get("format_version") != DATASET_FORMAT_VERSION:
                raise DatasetError(f"不支持的数据集版本: {manifest.get('format_version')}")
            spec = validate_config(DatasetSpec, manifest["spec"])

            targets: Dict[int, float] = {}
            if (path / TARGETS).is_file():
                frame = pd.read_csv(path / TARGETS, float_precision="round_trip")
                targets = dict(zip(frame["graph_id"].astype(int), frame["target"].astype(float)))

            instances = []
            for entry in manifest["instances"]:
                payload = orjson.loads((path / entry["file"]).read_bytes())
                g, features, labels = graph_from_payload(payload)
                if features is None:
                    raise DatasetError(f"{entry['file']} 缺少特征")
                instances.append(GraphInstance(
                    graph_id=int(entry["graph_id"]),
                    graph=g,
                    features=features,
                    labels=labels,
                    target=targets.get(int(entry["graph_id"])),
                    seed=tuple(entry["seed"]),
                ))
        except (OSError, KeyError, orjson.JSONDecodeError) as e:
            raise DatasetError(f"数据集损坏: {path}: {e}") from e

        if not instances:
            raise DatasetError(f"数据集为空: {path}")
        logger.debug(f"读取数据集: {path} ({len(instances)} 个图)")
        return Dataset(path, spec, manifest, instances)

    @staticmethod
    def summary(dataset: Dataset) -> Dict[str, Any]:
        nodes = np.array([inst.graph.n_nodes for inst in dataset.instances])
        edges = np.array([inst.graph.n_edges for inst in dataset.instances])
        return {
            "path": str(dataset.path),
            "family": dataset.spec.family.value,
            "count": len(dataset.instances),
            "mean_nodes": float(nodes.mean()),
            "mean_edges": float(edges.mean()),
            "feature_dim": dataset.feature_dim,
        }
