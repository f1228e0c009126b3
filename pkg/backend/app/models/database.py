"""
运行记录数据模型定义
"""

from sqlalchemy import Column, Integer, String, Text, DateTime, JSON
from sqlalchemy.orm import declarative_base
from sqlalchemy.sql import func

Base = declarative_base()


class Run(Base):
    """实验运行模型"""
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, unique=True, index=True, nullable=False)
    command = Column(String, nullable=False)  # gen, train, eval, bench, curvature, probe, sweep

    # 运行状态
    status = Column(String, default="pending")  # pending, running, completed, failed
    seed = Column(Integer, default=0)
    out_dir = Column(String, nullable=True)

    # 解析后的完整配置与结果摘要
    config = Column(JSON, nullable=True)
    summary = Column(JSON, nullable=True)
    error_message = Column(Text, nullable=True)

    # 时间戳
    created_at = Column(DateTime, default=func.now())
    started_at = Column(DateTime, nullable=True)
    completed_at = Column(DateTime, nullable=True)


class RunEvent(Base):
    """运行事件日志模型"""
    __tablename__ = "run_events"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, nullable=False, index=True)

    level = Column(String, default="INFO")  # DEBUG, INFO, WARNING, ERROR
    message = Column(Text, nullable=False)
    epoch = Column(Integer, nullable=True)

    timestamp = Column(DateTime, default=func.now())
