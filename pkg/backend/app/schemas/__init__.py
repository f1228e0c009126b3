"""
Pydantic数据验证模式
"""

from pydantic import BaseModel, Field, ValidationError, model_validator
from typing import Optional, List, Dict, Any, Type, TypeVar
from enum import Enum

from app.core.config import settings
from app.core.errors import ConfigError


class LaplacianKind(str, Enum):
    """拉普拉斯矩阵类型"""
    UNNORMALIZED = "unnormalized"
    SYMMETRIC_NORMALIZED = "symmetric-normalized"
    NORMALIZED_ADJACENCY = "symmetric-normalized-adjacency"


class WeightMode(str, Enum):
    """motif 边权模式"""
    LITERAL = "literal"
    SHIFTED_POSITIVE = "shifted-positive"
    SIGN_ROUNDED = "sign-rounded"
    UNWEIGHTED_LEARNABLE = "unweighted-learnable"


class ModelKind(str, Enum):
    """模型族：many-body 与两个 ν=2 基线"""
    MANY_BODY = "many-body"
    CHEBNET = "chebnet"
    GCN = "gcn"


class BasisConvention(str, Enum):
    """U 的约定：analysis-rows 表示 U 的行是特征向量（U = Vᵀ）"""
    ANALYSIS_ROWS = "analysis-rows"
    SYNTHESIS_COLUMNS = "synthesis-columns"


class TaskKind(str, Enum):
    """训练任务类型"""
    GRAPH_REGRESSION = "graph-regression"
    NODE_CLASSIFICATION = "node-classification"


class GraphFamily(str, Enum):
    """合成图族"""
    ERDOS_RENYI = "erdos-renyi"
    RING = "ring"
    CROSSED_RING = "crossed-ring"
    CLIQUE_PATH = "clique-path"
    SPINE = "spine"
    HETEROPHILIC = "heterophilic"


class TargetKind(str, Enum):
    """图能量回归目标"""
    DIST_EMPH = "dist-emph"
    CLUST_EMPH = "clust-emph"
    SPECTRAL_DIST = "spectral-dist"
    SPECTRAL_ADJ = "spectral-adj"
    NONE = "none"


class EnergyAveraging(str, Enum):
    """分阶能量在层之间的平均方式"""
    MEAN_OF_LAYERS = "mean-of-layers"
    ENERGY_OF_MEAN = "energy-of-mean"


class RunStatus(str, Enum):
    """运行状态枚举"""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


# 模型与数据集配置
class ModelConfig(BaseModel):
    """many-body MPNN 模型配置"""
    nu: int = Field(3, ge=2, description="最大关联阶数 ν")
    layers: int = Field(2, ge=1, description="层数 t")
    hidden_dim: int = Field(16, ge=1, description="隐藏维度 d")
    cheb_order_2body: int = Field(2, ge=0, description="两体 Chebyshev 多项式阶数，系数 k'=0..K")
    weight_mode: WeightMode = Field(WeightMode.SHIFTED_POSITIVE, description="motif 边权模式")
    enumeration_cap: int = Field(64, ge=0, description="每节点每阶最多枚举的子集数，0 表示穷举")
    rng_seed: int = Field(0, ge=0, description="参数初始化与采样种子")
    basis_convention: BasisConvention = Field(BasisConvention.ANALYSIS_ROWS)
    task: TaskKind = Field(TaskKind.GRAPH_REGRESSION)
    in_dim: int = Field(1, ge=1, description="输入特征维度")
    out_dim: int = Field(1, ge=1, description="输出维度（类别数或 1）")
    init_scale: float = Field(1.0, gt=0, description="初始化缩放")
    kind: ModelKind = Field(ModelKind.MANY_BODY, description="many-body 或 chebnet / gcn 基线")

    @model_validator(mode="after")
    def check_kind(self):
        if self.kind != ModelKind.MANY_BODY and self.nu != 2:
            raise ValueError(f"基线模型 {self.kind.value} 要求 nu=2")
        if self.kind == ModelKind.GCN and self.cheb_order_2body != 1:
            raise ValueError("gcn 只做一跳传播，要求 cheb_order_2body=1")
        return self


def baseline_config(config: ModelConfig, kind: ModelKind) -> ModelConfig:
    """由 many-body 配置派生同宽同深的基线配置"""
    kind = ModelKind(kind)
    if kind == ModelKind.MANY_BODY:
        return config
    update = {"kind": kind, "nu": 2}
    if kind == ModelKind.GCN:
        update["cheb_order_2body"] = 1
    return config.model_copy(update=update)


class DatasetSpec(BaseModel):
    """合成数据集描述"""
    family: GraphFamily = Field(GraphFamily.ERDOS_RENYI)
    count: int = Field(20, ge=1)
    n_nodes_min: int = Field(100, ge=2)
    n_nodes_max: int = Field(150, ge=2)
    edge_prob_min: float = Field(0.15, ge=0, le=1)
    edge_prob_max: float = Field(0.3, ge=0, le=1)
    n_classes: int = Field(7, ge=2)
    feature_dim: int = Field(16, ge=2)
    avg_degree: float = Field(10.0, gt=0)
    p_hetero: float = Field(0.8, ge=0, le=1)
    class_sep: float = Field(1.0, ge=0)
    target: TargetKind = Field(TargetKind.DIST_EMPH)
    # 固定形状图的尺寸参数
    spine_length: int = Field(8, ge=2)
    spine_leaves: int = Field(3, ge=0)
    clique_size: int = Field(4, ge=2)
    path_length: int = Field(3, ge=0)
    chord_offset: int = Field(1, ge=0)
    # 目标函数常数（论文只给出函数族）
    c1: float = Field(2.0, gt=0)
    c2: float = Field(10.0, gt=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_ranges(self):
        if self.n_nodes_min > self.n_nodes_max:
            raise ValueError("n_nodes_min 必须不大于 n_nodes_max")
        if self.edge_prob_min > self.edge_prob_max:
            raise ValueError("edge_prob_min 必须不大于 edge_prob_max")
        return self


class AdamConfig(BaseModel):
    """Adam 优化器配置"""
    lr: float = Field(0.01, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)


class RunConfig(BaseModel):
    """训练运行配置"""
    dataset_path: Optional[str] = Field(None, description="已有数据集目录")
    dataset: Optional[DatasetSpec] = Field(None, description="未给出路径时按此生成")
    model: ModelConfig = Field(default_factory=ModelConfig)
    optimizer: AdamConfig = Field(default_factory=AdamConfig)
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(4, ge=1)
    train_fraction: float = Field(0.8, gt=0, lt=1)
    energy_averaging: EnergyAveraging = Field(EnergyAveraging.MEAN_OF_LAYERS)
    out_dir: str = Field(default_factory=lambda: settings.RUNS_DIR)
    seed: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)

    @model_validator(mode="after")
    def check_dataset(self):
        if self.dataset_path is None and self.dataset is None:
            raise ValueError("dataset_path 与 dataset 至少给出一个")
        return self


class RunRecord(BaseModel):
    """运行记录（可回放）"""
    run_id: str
    command: str
    status: RunStatus = RunStatus.PENDING
    resolved_config: Dict[str, Any]
    seeds: Dict[str, int]
    metrics: List[Dict[str, float]] = Field(default_factory=list)
    timings: List[Dict[str, float]] = Field(default_factory=list, description="逐 epoch 耗时，不参与回放比较")
    bound: Dict[str, Any] = Field(default_factory=dict)
    checkpoint_path: str = ""
    best_checkpoint_path: str = ""
    environment: Dict[str, Any] = Field(default_factory=dict)


# API 相关模式
class GraphPayload(BaseModel):
    """图 JSON 格式"""
    n_nodes: int = Field(..., ge=0)
    edges: List[List[int]] = Field(default_factory=list)
    features: Optional[List[float]] = Field(None, description="按行展开的特征")
    dim: Optional[int] = Field(None, ge=1)
    labels: Optional[List[int]] = None


class CurvatureRow(BaseModel):
    """曲率输出行"""
    edge_id: int
    u: int
    v: int
    ricci: float
    rounded: int


class EnergyResponse(BaseModel):
    """Dirichlet 能量"""
    edge_sum: float
    trace_form: float


class BoundFactorRequest(BaseModel):
    """界因子请求"""
    d_max: int = Field(..., ge=1)
    nu_max: int = Field(5, ge=2)


class BoundFactorRow(BaseModel):
    """界因子输出行"""
    nu: int
    order_factor: float
    cumulative_factor: float
    lemma_factor: float


class RunResponse(BaseModel):
    """运行响应模式"""
    run_id: str
    command: str
    status: RunStatus
    seed: int
    out_dir: Optional[str]
    summary: Optional[Dict[str, Any]]
    error_message: Optional[str]

    class Config:
        from_attributes = True


class EvalRequest(BaseModel):
    """评估请求"""
    dataset_path: Optional[str] = None
    nu: Optional[int] = Field(None, ge=2)


_M = TypeVar("_M", bound=BaseModel)


def validate_config(model_cls: Type[_M], data: Dict[str, Any]) -> _M:
    """校验配置，失败时抛出带字段路径的 ConfigError"""
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        path = ".".join(str(p) for p in first.get("loc", ())) or None
        raise ConfigError(first.get("msg", str(e)), field_path=path) from e
