"""
训练与评估服务
"""

import platform
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numba
import numpy as np
import orjson
import pandas as pd

from app.core.errors import CheckpointError, ConfigError, DatasetError, TrainingDivergedError
from app.core.logging import logger
from app.engine.analysis import EnergyTrace, dirichlet_energy, energy_bound, per_order_energy
from app.engine.checkpoint import load_checkpoint, save_checkpoint
from app.engine.curvature import CurvatureMap, balanced_forman
from app.engine.model import (
    GraphOperators,
    ModelState,
    build_operators,
    init_state,
    model_backward,
    model_forward,
)
from app.engine.optim import Adam, accuracy, cross_entropy_loss, mse_loss
from app.engine.synthgen import GraphInstance
from app.schemas import (
    ModelConfig,
    ModelKind,
    RunConfig,
    RunRecord,
    RunStatus,
    TaskKind,
    baseline_config,
    validate_config,
)
from app.services.dataset_service import Dataset, DatasetService
from app.services.run_service import RunService, RunTracker, tracked_run

METRICS_CSV = "metrics.csv"
TIMINGS_CSV = "timings.csv"
RUN_RECORD = "run_record.json"
CHECKPOINT = "checkpoint.json"
BEST_CHECKPOINT = "best_checkpoint.json"
LAST_GOOD_CHECKPOINT = "last_good_checkpoint.json"


@dataclass
class PreparedGraph:
    """一个图实例及其预计算的曲率与算子"""
    instance: GraphInstance
    curvature: CurvatureMap
    operators: GraphOperators
    train_mask: Optional[np.ndarray] = None
    test_mask: Optional[np.ndarray] = None


def environment_fingerprint(threads: int) -> Dict[str, Any]:
    return {
        "threads": threads,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "platform": platform.platform(),
    }


def write_csv(rows: List[Dict[str, Any]], path: Path):
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.17g")


def resolve_model(model: ModelConfig, dataset: Dataset) -> ModelConfig:
    """按数据集确定任务类型与输入输出维度"""
    if dataset.is_classification:
        update = {"task": TaskKind.NODE_CLASSIFICATION, "in_dim": dataset.feature_dim,
                  "out_dim": dataset.spec.n_classes}
    else:
        update = {"task": TaskKind.GRAPH_REGRESSION, "in_dim": dataset.feature_dim, "out_dim": 1}
    changed = {k: v for k, v in update.items() if getattr(model, k) != v}
    if changed:
        logger.info(f"按数据集调整模型配置: {changed}")
    return validate_config(ModelConfig, {**model.model_dump(mode="json"), **update})


class TrainingService:
    """训练、回放与评估"""

    def __init__(self, registry: Optional[RunService] = None, threads: int = 1):
        self.registry = registry
        self.threads = threads

    # ---------------------------------------------------------------- 准备

    def load_dataset(self, config: RunConfig, run_dir: Path) -> Tuple[Dataset, RunConfig]:
        """读取或生成数据集，返回不含空值的完整配置"""
        datasets = DatasetService(threads=self.threads)
        if config.dataset_path:
            dataset = datasets.load(config.dataset_path)
        else:
            path = datasets.generate(config.dataset, run_dir / "dataset")
            dataset = datasets.load(path)
        model = resolve_model(config.model, dataset)
        resolved = config.model_copy(update={
            "dataset_path": str(dataset.path),
            "dataset": dataset.spec,
            "model": model,
            "threads": self.threads,
        })
        return dataset, resolved

    def prepare(self, dataset: Dataset, config: RunConfig) -> Tuple[List[PreparedGraph], List[int], List[int]]:
        """预计算曲率和算子，并按种子划分训练/测试"""
        prepared = []
        for inst in dataset.instances:
            cm = balanced_forman(inst.graph)
            ops = build_operators(inst.graph, cm, config.model, threads=self.threads)
            prepared.append(PreparedGraph(inst, cm, ops))

        if dataset.is_classification:
            for p in prepared:
                n = p.instance.graph.n_nodes
                perm = np.random.default_rng([config.seed, 2, p.instance.graph_id]).permutation(n)
                n_train = int(round(config.train_fraction * n))
                p.train_mask = np.zeros(n, dtype=bool)
                p.train_mask[perm[:n_train]] = True
                p.test_mask = ~p.train_mask
            indices = list(range(len(prepared)))
            return prepared, indices, indices

        if len(prepared) < 2:
            raise DatasetError("图回归至少需要 2 个图才能划分训练集和测试集")
        if any(p.instance.target is None for p in prepared):
            raise DatasetError("回归数据集缺少目标值")
        perm = np.random.default_rng([config.seed, 2]).permutation(len(prepared))
        n_train = min(len(prepared) - 1, max(1, int(round(config.train_fraction * len(prepared)))))
        return prepared, sorted(perm[:n_train].tolist()), sorted(perm[n_train:].tolist())

    # ---------------------------------------------------------------- 损失

    @staticmethod
    def _loss(p: PreparedGraph, state: ModelState, model: ModelConfig, mask: Optional[np.ndarray] = None):
        out, cache = model_forward(p.instance.graph, p.curvature, p.instance.features, state, model, p.operators)
        if TaskKind(model.task) == TaskKind.NODE_CLASSIFICATION:
            loss, grad = cross_entropy_loss(out, p.instance.labels, mask)
        else:
            loss, grad = mse_loss(out, [[p.instance.target]])
        return loss, grad, out, cache

    def _evaluate(self, prepared: Sequence[PreparedGraph], indices: Sequence[int], state: ModelState,
                  model: ModelConfig, train: bool, averaging) -> Dict[str, Any]:
        """在给定图上计算损失、指标、能量和上界"""
        classification = TaskKind(model.task) == TaskKind.NODE_CLASSIFICATION
        losses, energies, correct, total = [], [], 0.0, 0
        per_order: Dict[int, List[float]] = {}
        bound_ok = True
        for idx in indices:
            p = prepared[idx]
            mask = None
            if classification:
                mask = p.train_mask if train else p.test_mask
            loss, _, out, cache = self._loss(p, state, model, mask)
            losses.append(loss)
            energies.append(dirichlet_energy(p.instance.graph, cache.hidden[-1]))
            for k, value in per_order_energy(cache, p.instance.graph, averaging).items():
                per_order.setdefault(k, []).append(value)
            report = energy_bound(p.instance.graph, p.curvature, model, state, p.instance.features, cache=cache)
            bound_ok = bound_ok and report.satisfied
            if classification:
                count = int(mask.sum()) if mask is not None else p.instance.graph.n_nodes
                correct += accuracy(out, p.instance.labels, mask) * count
                total += count

        metric = (correct / total if total else 0.0) if classification else float(np.mean(losses))
        return {
            "loss": float(np.mean(losses)),
            "metric": metric,
            "energy": float(np.mean(energies)),
            "per_order": {k: float(np.mean(v)) for k, v in per_order.items()},
            "bound_ok": bound_ok,
        }

    # ---------------------------------------------------------------- 训练

    def train(self, config: RunConfig, run_id: Optional[str] = None) -> RunRecord:
        """Adam 训练；每个 epoch 结束后记录指标，在最佳测试 epoch 和结束时保存检查点"""
        with tracked_run("train", config.out_dir, config.seed, run_id, self.registry,
                         config=config.model_dump(mode="json")) as tracker:
            dataset, resolved = self.load_dataset(config, tracker.run_dir)
            record = self._train(resolved, dataset, tracker)
            tracker.summary = {
                "final_test_metric": record.metrics[-1]["test_metric"],
                "final_train_loss": record.metrics[-1]["train_loss"],
                "bound_satisfied": record.bound.get("satisfied", False),
                "checkpoint": record.checkpoint_path,
            }
            return record

    def _train(self, config: RunConfig, dataset: Dataset, tracker: RunTracker) -> RunRecord:
        model = config.model
        run_dir = tracker.run_dir
        prepared, train_idx, test_idx = self.prepare(dataset, config)
        classification = TaskKind(model.task) == TaskKind.NODE_CLASSIFICATION

        record = RunRecord(
            run_id=tracker.run_id,
            command="train",
            status=RunStatus.RUNNING,
            resolved_config=config.model_dump(mode="json"),
            seeds={"run": config.seed, "model": model.rng_seed, "dataset": dataset.spec.seed},
            environment=environment_fingerprint(self.threads),
        )
        tracker.event(f"训练开始: {len(train_idx)} 个训练图, {len(test_idx)} 个测试图, "
                      f"ν={model.nu}, t={model.layers}, d={model.hidden_dim}")

        state = init_state(model)
        optimizer = Adam(config.optimizer)
        trace = EnergyTrace(model.nu)
        best_metric: Optional[float] = None

        for epoch in range(1, config.epochs + 1):
            start = time.perf_counter_ns()
            last_good = state.copy()
            order = np.random.default_rng([config.seed, 3, epoch]).permutation(train_idx).tolist()

            for b in range(0, len(order), config.batch_size):
                batch = order[b: b + config.batch_size]
                state.zero_grad()
                for idx in batch:
                    p = prepared[idx]
                    loss, grad, _, cache = self._loss(p, state, model, p.train_mask if classification else None)
                    if not np.isfinite(loss):
                        self._diverged(tracker, last_good, model, epoch)
                    model_backward(cache, grad / len(batch), accumulate=True)
                optimizer.step(state.params, state.grads)

            if not state.all_finite():
                self._diverged(tracker, last_good, model, epoch)
            train_eval = self._evaluate(prepared, train_idx, state, model, True, config.energy_averaging)
            test_eval = self._evaluate(prepared, test_idx, state, model, False, config.energy_averaging)
            if not np.isfinite(train_eval["loss"]):
                self._diverged(tracker, last_good, model, epoch)

            all_idx = sorted(set(train_idx) | set(test_idx))
            n_train, n_test = len(train_idx), len(test_idx)
            if classification:
                energy = train_eval["energy"]
                per_order = train_eval["per_order"]
            else:
                # 训练集与测试集按图数加权
                energy = (train_eval["energy"] * n_train + test_eval["energy"] * n_test) / len(all_idx)
                per_order = {
                    k: (train_eval["per_order"][k] * n_train + test_eval["per_order"][k] * n_test) / len(all_idx)
                    for k in train_eval["per_order"]
                }
            trace.append(epoch, energy, per_order)
            row = {"epoch": epoch, "train_loss": train_eval["loss"], "test_metric": test_eval["metric"]}
            row.update({k: v for k, v in trace.rows[-1].items() if k != "epoch"})
            row["bound_satisfied"] = int(train_eval["bound_ok"] and test_eval["bound_ok"])
            record.metrics.append(row)
            record.timings.append({"epoch": epoch, "wall_ms": (time.perf_counter_ns() - start) / 1e6})

            improved = best_metric is None or (
                test_eval["metric"] > best_metric if classification else test_eval["metric"] < best_metric
            )
            if improved:
                best_metric = test_eval["metric"]
                record.best_checkpoint_path = str(save_checkpoint(run_dir / BEST_CHECKPOINT, model, state))

            write_csv(record.metrics, run_dir / METRICS_CSV)
            tracker.event(
                f"epoch {epoch}: train_loss={row['train_loss']:.6g}, test_metric={row['test_metric']:.6g}, "
                f"energy={energy:.6g}", epoch=epoch,
            )

        record.checkpoint_path = str(save_checkpoint(run_dir / CHECKPOINT, model, state))
        record.bound = {
            "satisfied": all(r["bound_satisfied"] == 1 for r in record.metrics),
            "epochs_checked": len(record.metrics),
        }
        record.status = RunStatus.COMPLETED
        write_csv(record.timings, run_dir / TIMINGS_CSV)
        tracker.write_json(RUN_RECORD, record.model_dump(mode="json"))
        return record

    def _diverged(self, tracker: RunTracker, last_good: ModelState, model: ModelConfig, epoch: int):
        path = save_checkpoint(tracker.run_dir / LAST_GOOD_CHECKPOINT, model, last_good)
        tracker.event(f"epoch {epoch} 出现非有限损失，已保存最后的有效检查点: {path}", level="ERROR", epoch=epoch)
        raise TrainingDivergedError(f"训练在 epoch {epoch} 发散（NaN/inf）", last_good_checkpoint=str(path))

    # ---------------------------------------------------------------- 回放与多种子

    def replay(self, record_path: Union[str, Path], run_id: Optional[str] = None) -> Tuple[RunRecord, bool]:
        """按 RunRecord 中的完整配置重跑，返回新记录以及 metrics.csv 是否逐字节一致"""
        record_path = Path(record_path)
        if record_path.is_dir():
            record_path = record_path / RUN_RECORD
        if not record_path.is_file():
            raise DatasetError(f"运行记录不存在: {record_path}")
        old = RunRecord.model_validate(orjson.loads(record_path.read_bytes()))
        config = validate_config(RunConfig, old.resolved_config)
        self.threads = config.threads

        new = self.train(config, run_id=run_id)
        old_csv = (record_path.parent / METRICS_CSV).read_bytes()
        new_csv = (Path(new.checkpoint_path).parent / METRICS_CSV).read_bytes()
        identical = old_csv == new_csv
        logger.info(f"回放 {old.run_id} -> {new.run_id}: metrics.csv {'一致' if identical else '不一致'}")
        return new, identical

    def train_seeds(self, config: RunConfig, seeds: Sequence[int],
                    baseline_dir: Optional[Union[str, Path]] = None,
                    baseline_models: Sequence[ModelKind] = ()) -> Tuple[List[RunRecord], Dict[str, Optional[float]]]:
        """多种子重复训练，按种子与基线比较最终测试指标并返回各基线的胜率

        基线来自已有运行目录（键 "baseline"）或在同一数据与种子上现训的 chebnet / gcn。
        """
        records = [self.train(with_seed(config, seed)) for seed in seeds]

        baselines: Dict[str, Dict[int, float]] = {}
        if baseline_dir is not None:
            baselines["baseline"] = load_baseline_metrics(baseline_dir)
        for kind in map(ModelKind, baseline_models):
            if kind == ModelKind.MANY_BODY:
                raise ConfigError("基线模型只能是 chebnet 或 gcn", field_path="baseline_models")
            kind_config = config.model_copy(update={
                "out_dir": str(Path(config.out_dir) / kind.value),
                "model": baseline_config(config.model, kind),
            })
            baselines[kind.value] = {
                r.seeds["run"]: r.metrics[-1]["test_metric"]
                for r in (self.train(with_seed(kind_config, seed)) for seed in seeds)
            }
        return records, {name: win_rate(records, metrics, name) for name, metrics in baselines.items()}

    # ---------------------------------------------------------------- 评估

    def evaluate(self, checkpoint_path: Union[str, Path], dataset_path: Union[str, Path],
                 nu: Optional[int] = None, averaging=None) -> Dict[str, Any]:
        """在整个数据集上评估检查点；检查点中的 ν 优先于传入值"""
        model, state = load_checkpoint(checkpoint_path)
        if nu is not None and nu != model.nu:
            logger.warning(f"检查点 ν={model.nu} 与参数 ν={nu} 不一致，以检查点为准")

        dataset = DatasetService(threads=self.threads).load(dataset_path)
        if dataset.feature_dim != model.in_dim:
            raise CheckpointError(f"数据集特征维度 {dataset.feature_dim} 与检查点 in_dim={model.in_dim} 不匹配")
        classification = TaskKind(model.task) == TaskKind.NODE_CLASSIFICATION
        if classification != dataset.is_classification:
            raise CheckpointError(f"检查点任务 {model.task.value} 与数据集不匹配")
        if classification and dataset.spec.n_classes > model.out_dim:
            raise CheckpointError(f"数据集类别数 {dataset.spec.n_classes} 超过检查点 out_dim={model.out_dim}")

        prepared = []
        for inst in dataset.instances:
            cm = balanced_forman(inst.graph)
            prepared.append(PreparedGraph(inst, cm, build_operators(inst.graph, cm, model, threads=self.threads)))
        if not classification and any(p.instance.target is None for p in prepared):
            raise DatasetError("回归数据集缺少目标值")
        result = self._evaluate(prepared, range(len(prepared)), state, model, False,
                                averaging or RunConfig.model_fields["energy_averaging"].default)
        metrics = {
            "metric_name": "accuracy" if classification else "mse",
            "test_metric": result["metric"],
            "loss": result["loss"],
            "dirichlet_energy": result["energy"],
            "bound_satisfied": result["bound_ok"],
            "nu": model.nu,
            "n_graphs": len(prepared),
        }
        for k, value in sorted(result["per_order"].items()):
            metrics[f"energy_k{k}"] = value
        logger.info(f"评估完成: {metrics['metric_name']}={metrics['test_metric']:.6g}")
        return metrics


def load_baseline_metrics(baseline_dir: Union[str, Path]) -> Dict[int, float]:
    """读取基线目录下各运行的最终测试指标，按运行种子索引"""
    result = {}
    for path in sorted(Path(baseline_dir).glob(f"*/{RUN_RECORD}")):
        record = RunRecord.model_validate(orjson.loads(path.read_bytes()))
        if record.metrics:
            result[record.seeds["run"]] = record.metrics[-1]["test_metric"]
    return result


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    """运行种子与模型初始化种子一起替换"""
    return config.model_copy(update={
        "seed": seed,
        "model": config.model.model_copy(update={"rng_seed": seed}),
    })


def win_rate(records: Sequence[RunRecord], baseline: Dict[int, float], name: str) -> Optional[float]:
    """按种子配对比较最终测试指标；分类取高者胜，回归取低者胜"""
    wins, compared = 0, 0
    for record in records:
        seed = record.seeds["run"]
        if seed not in baseline:
            logger.warning(f"基线 {name} 中没有种子 {seed} 的运行")
            continue
        ours = record.metrics[-1]["test_metric"]
        classification = record.resolved_config["model"]["task"] == TaskKind.NODE_CLASSIFICATION.value
        wins += int(ours >= baseline[seed] if classification else ours <= baseline[seed])
        compared += 1
    rate = wins / compared if compared else None
    logger.info(f"与基线 {name} 比较: {wins}/{compared} 胜, 胜率 {rate}")
    return rate
