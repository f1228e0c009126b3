"""
命令行入口：gen, train, eval, bench, curvature, probe, sweep

所有输出写入 --out/<run-id>/；实验配置只来自配置文件和命令行参数。
"""

from dataclasses import dataclass
from functools import wraps
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import orjson
from click.core import ParameterSource

from app.core.config import settings
from app.core.database import SessionLocal, create_tables
from app.core.errors import ConfigError, ManyBodyError, TrainingDivergedError
from app.core.logging import logger, setup_logging
from app.schemas import DatasetSpec, GraphFamily, ModelConfig, ModelKind, RunConfig, WeightMode, validate_config
from app.services.analysis_service import AnalysisService, load_graph, named_graph
from app.services.dataset_service import DatasetService
from app.services.run_service import RunService, tracked_run
from app.services.training_service import TrainingService


@dataclass
class CliContext:
    seed: int
    seed_given: bool
    threads: int
    out: str
    registry: Optional[RunService]


def _int_list(value: Optional[str]) -> Optional[List[int]]:
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"需要逗号分隔的整数: {value}")


def _kind_list(value: Optional[str], allowed: List[ModelKind]) -> List[ModelKind]:
    if not value:
        return []
    names = [v.strip() for v in value.split(",") if v.strip()]
    unknown = [v for v in names if v not in {k.value for k in allowed}]
    if unknown:
        raise click.BadParameter(f"未知的模型: {unknown}，可选 {[k.value for k in allowed]}")
    return [ModelKind(v) for v in names]


def _read_json(path: str) -> Dict[str, Any]:
    try:
        return orjson.loads(Path(path).read_bytes())
    except orjson.JSONDecodeError as e:
        raise ConfigError(f"配置文件不是合法 JSON: {e}", field_path=path) from e


def _handle_errors(fn):
    """把引擎异常转换为非零退出码和诊断信息"""
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TrainingDivergedError as e:
            raise click.ClickException(f"{e}；最后的有效检查点: {e.last_good_checkpoint}")
        except ManyBodyError as e:
            raise click.ClickException(str(e))
    return wrapper


def _model_options(fn):
    for option in reversed([
        click.option("--nu", type=int, default=3, show_default=True, help="最大关联阶数 ν"),
        click.option("--layers", type=int, default=2, show_default=True, help="层数"),
        click.option("--hidden", type=int, default=16, show_default=True, help="隐藏维度"),
        click.option("--cheb-order", type=int, default=2, show_default=True, help="两体 Chebyshev 阶数"),
        click.option("--weight-mode", type=click.Choice([m.value for m in WeightMode]),
                     default=WeightMode.SHIFTED_POSITIVE.value, show_default=True),
        click.option("--cap", type=int, default=64, show_default=True, help="motif 枚举上限，0 为穷举"),
    ]):
        fn = option(fn)
    return fn


def _model_config(ctx: CliContext, nu, layers, hidden, cheb_order, weight_mode, cap, in_dim=1) -> ModelConfig:
    return validate_config(ModelConfig, {
        "nu": nu, "layers": layers, "hidden_dim": hidden, "cheb_order_2body": cheb_order,
        "weight_mode": weight_mode, "enumeration_cap": cap, "rng_seed": ctx.seed, "in_dim": in_dim,
    })


def _graph(graph: Optional[str], graph_file: Optional[str], n: int, seed: int,
           spine_length: int = 8, spine_leaves: int = 3):
    if graph_file:
        return load_graph(graph_file)
    return named_graph(graph, n=n, seed=seed, spine_length=spine_length, spine_leaves=spine_leaves), None


_graph_choice = click.Choice([f.value for f in GraphFamily if f != GraphFamily.HETEROPHILIC])


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="全局随机种子")
@click.option("--threads", type=int, default=settings.DEFAULT_THREADS, show_default=True, help="线程数")
@click.option("--out", default=settings.RUNS_DIR, show_default=True, help="输出根目录")
@click.option("--no-registry", is_flag=True, help="不写入运行登记数据库")
@click.pass_context
def main(ctx: click.Context, seed: int, threads: int, out: str, no_registry: bool):
    """many-body MPNN 实验工具"""
    setup_logging()
    if seed < 0 or threads < 1:
        raise click.BadParameter("--seed 不能为负，--threads 至少为 1")
    registry = None
    if not no_registry:
        create_tables()
        registry = RunService(SessionLocal())
    ctx.obj = CliContext(seed, ctx.get_parameter_source("seed") == ParameterSource.COMMANDLINE,
                         threads, out, registry)


@main.command()
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--dest", default=None, help="数据集目录（默认 --out/<run-id>/dataset）")
@click.pass_obj
@_handle_errors
def gen(obj: CliContext, spec_file: str, dest: Optional[str]):
    """按 DatasetSpec JSON 生成合成数据集"""
    data = _read_json(spec_file)
    if obj.seed_given:
        data["seed"] = obj.seed
    spec = validate_config(DatasetSpec, data)
    with tracked_run("gen", obj.out, spec.seed, registry=obj.registry) as tracker:
        path = DatasetService(obj.threads).generate(spec, dest or tracker.run_dir / "dataset")
        tracker.summary = {"dataset": str(path), "count": spec.count}
    click.echo(str(path))


def _run_config(obj: CliContext, config_file: str, overrides: Dict[str, Any]) -> RunConfig:
    data = _read_json(config_file)
    data["out_dir"] = obj.out
    data["threads"] = obj.threads
    model = dict(data.get("model", {}))
    if obj.seed_given:
        data["seed"] = obj.seed
        model["rng_seed"] = obj.seed
    model.update({k: v for k, v in overrides.items() if k != "epochs" and v is not None})
    data["model"] = model
    if overrides.get("epochs") is not None:
        data["epochs"] = overrides["epochs"]
    return validate_config(RunConfig, data)


@main.command()
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--epochs", type=int, default=None)
@click.option("--nu", type=int, default=None)
@click.option("--layers", type=int, default=None)
@click.option("--seeds", default=None, help="逗号分隔的多个种子")
@click.option("--baseline", type=click.Path(exists=True, file_okay=False), default=None,
              help="基线运行目录（按种子比较胜率）")
@click.option("--baseline-models", default=None,
              help="逗号分隔的同数据同种子基线模型：chebnet,gcn")
@click.option("--replay", "replay_path", type=click.Path(exists=True), default=None,
              help="按已有 run_record.json 回放")
@click.pass_obj
@_handle_errors
def train(obj: CliContext, config_file: Optional[str], epochs, nu, layers, seeds, baseline, baseline_models,
          replay_path):
    """训练模型，写出 metrics.csv、检查点和 run_record.json"""
    service = TrainingService(obj.registry, obj.threads)
    if replay_path:
        record, identical = service.replay(replay_path)
        click.echo(f"{record.run_id} metrics_identical={identical}")
        if not identical:
            raise click.ClickException("回放结果与原运行不一致")
        return
    if not config_file:
        raise click.UsageError("需要 CONFIG_FILE 或 --replay")

    config = _run_config(obj, config_file, {"epochs": epochs, "nu": nu, "layers": layers})
    seed_list = _int_list(seeds)
    if seed_list:
        kinds = _kind_list(baseline_models, [ModelKind.CHEBNET, ModelKind.GCN])
        records, win_rates = service.train_seeds(config, seed_list, baseline, kinds)
        for record in records:
            click.echo(f"{record.run_id} seed={record.seeds['run']} test_metric={record.metrics[-1]['test_metric']:.6g}")
        for name, rate in win_rates.items():
            click.echo(f"win_rate[{name}]={'n/a' if rate is None else f'{rate:.3f}'}")
        return
    record = service.train(config)
    click.echo(f"{record.run_id} test_metric={record.metrics[-1]['test_metric']:.6g}")


@main.command(name="eval")
@click.option("--checkpoint", required=True, type=click.Path(), help="检查点文件")
@click.option("--dataset", required=True, type=click.Path(), help="数据集目录")
@click.option("--nu", type=int, default=None, help="与检查点不一致时以检查点为准")
@click.pass_obj
@_handle_errors
def evaluate(obj: CliContext, checkpoint: str, dataset: str, nu: Optional[int]):
    """在数据集上评估检查点"""
    with tracked_run("eval", obj.out, obj.seed, registry=obj.registry) as tracker:
        metrics = TrainingService(obj.registry, obj.threads).evaluate(checkpoint, dataset, nu=nu)
        tracker.write_json("eval.json", {"checkpoint": checkpoint, "dataset": dataset, **metrics})
        tracker.summary = metrics
    click.echo(orjson.dumps(metrics).decode())


@main.command()
@click.option("--graph", type=_graph_choice, default=GraphFamily.ERDOS_RENYI.value, show_default=True)
@click.option("--graph-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--n", type=int, default=100, show_default=True, help="内置图的节点数")
@click.option("--layer-counts", default="5,10,15,20", show_default=True)
@click.option("--reps", type=int, default=30, show_default=True)
@_model_options
@click.pass_obj
@_handle_errors
def bench(obj: CliContext, graph, graph_file, n, layer_counts, reps, **model_kw):
    """many-body 与 chebnet / gcn 基线的运行时间对比，写出 bench.csv"""
    g, _ = _graph(graph, graph_file, n, obj.seed)
    config = _model_config(obj, **model_kw)
    result = AnalysisService(obj.registry, obj.threads).bench(
        g, config, _int_list(layer_counts), reps=reps, out_root=obj.out, seed=obj.seed
    )
    for name, r2 in result["r2"].items():
        click.echo(f"{name}: R²={r2:.4f}")
    for name, ratio in result["ratio_at_max_layers"].items():
        click.echo(f"ratio_at_max_layers[{name}]={ratio}")


@main.command()
@click.option("--graph", type=_graph_choice, default=GraphFamily.RING.value, show_default=True)
@click.option("--graph-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--n", type=int, default=6, show_default=True)
@click.pass_obj
@_handle_errors
def curvature(obj: CliContext, graph, graph_file, n):
    """每条边的 Balanced Forman 曲率，写出 curvature.csv"""
    g, _ = _graph(graph, graph_file, n, obj.seed)
    rows = AnalysisService(obj.registry, obj.threads).curvature(g, out_root=obj.out, seed=obj.seed)
    click.echo(f"{len(rows)} edges")


@main.command()
@click.option("--graph", type=_graph_choice, default=GraphFamily.SPINE.value, show_default=True)
@click.option("--graph-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--n", type=int, default=8, show_default=True)
@click.option("--spine-length", type=int, default=8, show_default=True)
@click.option("--spine-leaves", type=int, default=3, show_default=True)
@click.option("--source", type=int, default=0, show_default=True)
@click.option("--targets", default=None, help="逗号分隔的目标节点（默认全部）")
@click.option("--radii", default=None, help="逗号分隔的 r（默认 0..layers）")
@click.option("--profile", is_flag=True, help="同时写出脊柱混合度剖面 mixing.csv")
@click.option("--checkpoint", "checkpoints", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="训练后的检查点，可重复；给出时模型参数以检查点为准")
@click.option("--profile-seeds", type=int, default=1, show_default=True,
              help="无检查点时参与剖面汇总的初始化种子数")
@_model_options
@click.pass_obj
@_handle_errors
def probe(obj: CliContext, graph, graph_file, n, spine_length, spine_leaves, source, targets, radii,
          profile, checkpoints, profile_seeds, **model_kw):
    """敏感度探针 max|∂h_u^(r)/∂x_v|，写出 probe.csv"""
    g, _ = _graph(graph, graph_file, n, obj.seed, spine_length, spine_leaves)
    config = _model_config(obj, **model_kw)
    spine_nodes = spine_length if profile and graph == GraphFamily.SPINE.value and not graph_file else None
    if profile and spine_nodes is None:
        raise ConfigError("--profile 只适用于内置 spine 图", field_path="profile")
    result = AnalysisService(obj.registry, obj.threads).probe(
        g, config, source=source, targets=_int_list(targets), radii=_int_list(radii),
        out_root=obj.out, seed=obj.seed, profile_spine=spine_nodes,
        checkpoints=checkpoints, profile_seeds=profile_seeds,
    )
    zero_outside = all(r["sensitivity"] == 0.0 for r in result["rows"] if r["outside_reach"])
    click.echo(f"{len(result['rows'])} rows, zero outside reach: {zero_outside}")


@main.command()
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--layers", "layer_grid", default=None, help="逗号分隔的层数网格")
@click.option("--nu", "nu_grid", default=None, help="逗号分隔的 ν 网格")
@click.option("--hidden", "hidden_grid", default=None, help="逗号分隔的隐藏维度网格")
@click.option("--models", default=None, help="逗号分隔的模型族（默认 many-body,chebnet,gcn）")
@click.pass_obj
@_handle_errors
def sweep(obj: CliContext, config_file: str, layer_grid, nu_grid, hidden_grid, models):
    """在 (模型, layers, ν, hidden_dim) 网格上训练，写出 sweep.csv"""
    config = _run_config(obj, config_file, {})
    grid = {k: v for k, v in {
        "layers": _int_list(layer_grid), "nu": _int_list(nu_grid), "hidden_dim": _int_list(hidden_grid),
    }.items() if v}
    kinds = _kind_list(models, list(ModelKind)) or list(ModelKind)
    rows = AnalysisService(obj.registry, obj.threads).sweep(config, grid or None, out_root=obj.out, models=kinds)
    click.echo(f"{len(rows)} configurations")


if __name__ == "__main__":
    main()
