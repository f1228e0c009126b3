"""
分析服务：曲率表、运行时基准、敏感度探针与超参数扫描
"""

from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson

from app.core.errors import ConfigError, GraphError
from app.core.logging import logger
from app.engine.analysis import (
    benchmark,
    bound_factor_rows,
    dirichlet_energy,
    dirichlet_energy_trace,
    linear_fit_r2,
    mixing_profile,
    mixing_profile_summary,
    runtime_ratio,
)
from app.engine.checkpoint import load_checkpoint
from app.engine.curvature import balanced_forman, curvature_rows
from app.engine.graph import Graph, graph_from_payload, shortest_path_lengths, UNREACHABLE
from app.engine.model import (
    ModelState,
    build_operators,
    init_state,
    jacobian_probe,
    probe_features,
    reach_hops,
)
from app.engine.synthgen import gen_erdos_renyi, gen_fixed_shape
from app.schemas import GraphFamily, GraphPayload, ModelConfig, ModelKind, RunConfig, baseline_config
from app.services.dataset_service import DatasetService
from app.services.run_service import RunService, tracked_run
from app.services.training_service import TrainingService, write_csv

DEFAULT_SWEEP_GRID = {
    "layers": [1, 2, 4, 8],
    "nu": [2, 3, 4, 5],
    "hidden_dim": [8, 16],
}

DEFAULT_BENCH_LAYERS = [5, 10, 15, 20]


def load_graph(source: Union[str, Path, Dict[str, Any], GraphPayload]) -> Tuple[Graph, Optional[np.ndarray]]:
    """从 JSON 文件、字典或 GraphPayload 读取图"""
    if isinstance(source, GraphPayload):
        payload = source.model_dump()
    elif isinstance(source, dict):
        payload = source
    else:
        path = Path(source)
        if not path.is_file():
            raise GraphError(f"图文件不存在: {path}")
        payload = orjson.loads(path.read_bytes())
    g, features, _ = graph_from_payload(payload)
    return g, features


def named_graph(name: str, n: int = 8, seed: int = 0, spine_length: int = 8, spine_leaves: int = 3) -> Graph:
    """命令行使用的内置图：ring / crossed-ring / clique-path / spine / erdos-renyi"""
    family = GraphFamily(name)
    if family == GraphFamily.ERDOS_RENYI:
        return gen_erdos_renyi(n, 0.2, seed)
    return gen_fixed_shape(family, n=n, spine_length=spine_length, spine_leaves=spine_leaves)


class AnalysisService:
    """analysis 模块的 CSV 封装"""

    def __init__(self, registry: Optional[RunService] = None, threads: int = 1):
        self.registry = registry
        self.threads = threads

    def curvature(self, g: Graph, out_root: Optional[str] = None, seed: int = 0) -> List[dict]:
        """全图曲率表 edge_id,u,v,ricci,rounded"""
        rows = curvature_rows(balanced_forman(g))
        if out_root:
            with tracked_run("curvature", out_root, seed, registry=self.registry) as tracker:
                write_csv(rows, tracker.run_dir / "curvature.csv")
                tracker.summary = {"n_edges": len(rows)}
        return rows

    @staticmethod
    def energy(g: Graph, features: Optional[np.ndarray]) -> Dict[str, float]:
        if features is None:
            raise GraphError("计算能量需要特征")
        return {"edge_sum": dirichlet_energy(g, features), "trace_form": dirichlet_energy_trace(g, features)}

    @staticmethod
    def bound_factors(d_max: int, nu_max: int) -> List[dict]:
        return bound_factor_rows(d_max, nu_max)

    def bench(self, g: Graph, config: ModelConfig, layer_counts: Sequence[int] = DEFAULT_BENCH_LAYERS,
              reps: int = 30, out_root: Optional[str] = None, seed: int = 0) -> Dict[str, Any]:
        """many-body 与同宽同深的 chebnet / gcn 基线在各层数下的运行时间"""
        if config.kind != ModelKind.MANY_BODY:
            raise ConfigError("基准以 many-body 配置为起点", field_path="kind")
        cm = balanced_forman(g)
        models = {kind.value: baseline_config(config, kind) for kind in ModelKind}
        rows = benchmark(g, cm, models, layer_counts, reps=reps, threads=self.threads)
        r2 = {
            name: linear_fit_r2([r["layers"] for r in rows if r["model"] == name],
                                [r["mean_ms"] for r in rows if r["model"] == name])
            for name in models
        }
        max_layers = max(layer_counts)
        ratio = {
            name: runtime_ratio(rows, ModelKind.MANY_BODY.value, name, max_layers)
            for name in models if name != ModelKind.MANY_BODY.value
        }
        logger.info(f"基准完成: R²={r2}, {max_layers} 层时间比 {ratio}")
        result = {"rows": rows, "r2": r2, "ratio_at_max_layers": ratio}
        if out_root:
            with tracked_run("bench", out_root, seed, registry=self.registry) as tracker:
                write_csv(rows, tracker.run_dir / "bench.csv")
                tracker.summary = {"r2": r2, "ratio_at_max_layers": ratio}
                tracker.write_json("run_record.json", {"command": "bench", "config": config.model_dump(mode="json"),
                                                       "layer_counts": list(layer_counts), "reps": reps,
                                                       **tracker.summary})
        return result

    @staticmethod
    def sensitivity_models(config: ModelConfig, checkpoints: Sequence[Union[str, Path]] = (),
                     seeds: int = 1) -> List[Tuple[ModelConfig, ModelState]]:
        """检查点中的训练后参数（配置以检查点为准），或 seeds 个初始化种子的随机参数"""
        if checkpoints:
            models = [load_checkpoint(path) for path in checkpoints]
            logger.info(f"探针使用 {len(models)} 个检查点, ν={[m.nu for m, _ in models]}")
            return models
        if seeds < 1:
            raise ConfigError("至少需要 1 个初始化种子", field_path="profile_seeds")
        configs = [config.model_copy(update={"rng_seed": config.rng_seed + s}) for s in range(seeds)]
        return [(c, init_state(c)) for c in configs]

    def probe(self, g: Graph, config: ModelConfig, source: int = 0, targets: Optional[Sequence[int]] = None,
              radii: Optional[Sequence[int]] = None, out_root: Optional[str] = None, seed: int = 0,
              profile_spine: Optional[int] = None, checkpoints: Sequence[Union[str, Path]] = (),
              profile_seeds: int = 1) -> Dict[str, Any]:
        """对 source 与各 target 在各半径 r 下计算 jacobian_probe

        敏感度表来自第一个模型；混合度剖面对全部模型（检查点或初始化种子）汇总均值和标准差。
        """
        if not 0 <= source < g.n_nodes:
            raise GraphError(f"source={source} 越界")
        models = self.sensitivity_models(config, checkpoints, profile_seeds)
        cm = balanced_forman(g)
        operators = [build_operators(g, cm, c, threads=self.threads) for c, _ in models]
        config, state = models[0]
        ops = operators[0]
        x = probe_features(g, config)
        dist = shortest_path_lengths(g)
        targets = list(range(g.n_nodes)) if targets is None else list(targets)
        radii = list(range(config.layers + 1)) if radii is None else list(radii)
        reach = reach_hops(config)

        rows = []
        for r in radii:
            for v in targets:
                d = int(dist[source, v])
                rows.append({
                    "u": source,
                    "v": v,
                    "r": r,
                    "distance": d,
                    "outside_reach": int(d == UNREACHABLE or d > r * reach),
                    "sensitivity": jacobian_probe(g, cm, state, config, source, v, r, x=x, operators=ops),
                })

        profile = []
        if profile_spine:
            profile = mixing_profile_summary([
                mixing_profile(g, cm, s, c, profile_spine, operators=o)
                for (c, s), o in zip(models, operators)
            ])
        if out_root:
            with tracked_run("probe", out_root, seed, registry=self.registry) as tracker:
                write_csv(rows, tracker.run_dir / "probe.csv")
                if profile:
                    write_csv(profile, tracker.run_dir / "mixing.csv")
                tracker.summary = {"rows": len(rows), "reach_per_layer": reach, "n_models": len(models),
                                   "checkpoints": [str(p) for p in checkpoints]}
        return {"rows": rows, "profile": profile, "reach_per_layer": reach, "n_models": len(models)}

    def sweep(self, config: RunConfig, grid: Optional[Dict[str, Sequence[int]]] = None,
              out_root: Optional[str] = None, models: Sequence[ModelKind] = tuple(ModelKind)) -> List[dict]:
        """在 (模型, layers, ν, hidden_dim) 网格上训练，写出 sweep.csv

        基线模型固定 ν=2，重复的网格点只训练一次。
        """
        grid = grid or DEFAULT_SWEEP_GRID
        unknown = set(grid) - set(DEFAULT_SWEEP_GRID)
        if unknown:
            raise ConfigError(f"未知的扫描维度: {sorted(unknown)}", field_path="grid")
        out_root = out_root or config.out_dir
        trainer = TrainingService(self.registry, self.threads)

        rows = []
        seen = set()
        with tracked_run("sweep", out_root, config.seed, registry=self.registry) as tracker:
            update = {"out_dir": str(tracker.run_dir)}
            if config.dataset_path is None:
                # 所有网格点共用同一份数据集
                update["dataset_path"] = str(DatasetService(self.threads).generate(config.dataset, tracker.run_dir / "dataset"))
            sub_config = config.model_copy(update=update)
            keys = list(DEFAULT_SWEEP_GRID)
            for kind in map(ModelKind, models):
                for values in product(*(grid.get(k, [getattr(config.model, k)]) for k in keys)):
                    model = baseline_config(config.model.model_copy(update=dict(zip(keys, values))), kind)
                    point = (kind.value, *(getattr(model, k) for k in keys))
                    if point in seen:
                        continue
                    seen.add(point)
                    record = trainer.train(sub_config.model_copy(update={"model": model}))
                    last = record.metrics[-1]
                    rows.append({
                        **dict(zip(("model", *keys), point)),
                        "seed": config.seed,
                        "test_metric": last["test_metric"],
                        "final_energy": last["dirichlet_energy"],
                        "run_id": record.run_id,
                    })
                    write_csv(rows, tracker.run_dir / "sweep.csv")
            tracker.summary = {"configurations": len(rows)}
        return rows
