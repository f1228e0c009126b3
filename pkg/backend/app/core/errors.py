"""
异常定义
"""

from typing import Optional


class ManyBodyError(Exception):
    """引擎异常基类"""


class GraphError(ManyBodyError, ValueError):
    """图结构不合法：节点越界、自环、形状不匹配"""


class SpectralError(ManyBodyError, ValueError):
    """谱分解或滤波输入不合法"""


class ConfigError(ManyBodyError, ValueError):
    """配置校验失败，field_path 指向出错字段"""

    def __init__(self, message: str, field_path: Optional[str] = None):
        self.field_path = field_path
        if field_path:
            message = f"{field_path}: {message}"
        super().__init__(message)


class DatasetError(ManyBodyError):
    """数据集缺失或损坏"""


class CheckpointError(ManyBodyError):
    """检查点缺失、损坏或维度不匹配"""


class MissingCacheError(ManyBodyError):
    """反向传播前没有前向缓存"""


class TrainingDivergedError(ManyBodyError):
    """训练损失出现 NaN/inf"""

    def __init__(self, message: str, last_good_checkpoint: Optional[str] = None):
        self.last_good_checkpoint = last_good_checkpoint
        super().__init__(message)
