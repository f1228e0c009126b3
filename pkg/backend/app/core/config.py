"""
配置管理模块
"""

from pydantic_settings import BaseSettings
from typing import List


class Settings(BaseSettings):
    """服务级配置（实验参数不从环境变量读取）"""

    # 服务配置
    HOST: str = "0.0.0.0"
    PORT: int = 8000
    DEBUG: bool = False

    # CORS配置
    ALLOWED_ORIGINS: List[str] = ["http://localhost:3000", "http://localhost:8080"]

    # 运行记录数据库
    DATABASE_URL: str = "sqlite:///./manybody_runs.db"

    # 日志配置
    LOG_DIR: str = "./logs"
    LOG_LEVEL: str = "INFO"

    # 实验输出
    RUNS_DIR: str = "./runs"
    DEFAULT_THREADS: int = 1
    MAX_CONCURRENT_RUNS: int = 2

    # 数值配置
    JACOBI_MAX_DIM: int = 64
    DEGENERATE_EPS: float = 1e-12

    class Config:
        env_file = ".env"
        case_sensitive = True


# 全局配置实例
settings = Settings()
