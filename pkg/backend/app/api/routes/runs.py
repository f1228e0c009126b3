"""
运行管理API路由
"""

import threading
from pathlib import Path
from typing import List, Optional

from fastapi import APIRouter, BackgroundTasks, Depends, HTTPException, Query
from sqlalchemy.orm import Session

from app.core.config import settings
from app.core.database import get_db, session_scope
from app.core.errors import CheckpointError, DatasetError, ManyBodyError
from app.core.logging import logger
from app.schemas import EvalRequest, RunConfig, RunResponse, RunStatus, validate_config
from app.services.run_service import RunService, new_run_id
from app.services.training_service import CHECKPOINT, TrainingService

router = APIRouter()

# 同时在后台训练的运行数上限
run_slots = threading.BoundedSemaphore(settings.MAX_CONCURRENT_RUNS)


def _train_in_background(run_id: str, config_data: dict):
    """后台训练使用独立的数据库会话，结束后归还运行槽位"""
    try:
        with session_scope() as db:
            config = validate_config(RunConfig, config_data)
            TrainingService(RunService(db), threads=config.threads).train(config, run_id=run_id)
    except ManyBodyError as e:
        logger.error(f"后台训练失败 ({run_id}): {str(e)}")
    finally:
        run_slots.release()


@router.post("/runs", response_model=RunResponse)
def create_run(config: RunConfig, background_tasks: BackgroundTasks, db: Session = Depends(get_db)):
    """登记训练运行并在后台执行；后台运行数达到上限时返回 429"""
    if not run_slots.acquire(blocking=False):
        raise HTTPException(status_code=429, detail=f"后台训练已达上限 {settings.MAX_CONCURRENT_RUNS}，请稍后重试")
    try:
        service = RunService(db)
        run_id = new_run_id("train")
        data = config.model_dump(mode="json")
        run = service.create_run(run_id, "train", config.seed, str(Path(config.out_dir) / run_id), data)
    except ManyBodyError as e:
        run_slots.release()
        raise HTTPException(status_code=400, detail=str(e))
    except Exception:
        run_slots.release()
        raise
    background_tasks.add_task(_train_in_background, run_id, data)
    return run


@router.get("/runs", response_model=List[RunResponse])
def get_runs(
    skip: int = Query(0, ge=0),
    limit: int = Query(100, ge=1, le=1000),
    status: Optional[RunStatus] = None,
    command: Optional[str] = None,
    db: Session = Depends(get_db)
):
    """获取运行列表"""
    try:
        return RunService(db).list_runs(skip=skip, limit=limit, status=status, command=command)
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))


@router.get("/runs/{run_id}", response_model=RunResponse)
def get_run(run_id: str, db: Session = Depends(get_db)):
    """获取运行详情"""
    run = RunService(db).get_run(run_id)
    if not run:
        raise HTTPException(status_code=404, detail="运行未找到")
    return run


@router.post("/runs/{run_id}/eval")
def evaluate_run(run_id: str, request: EvalRequest, db: Session = Depends(get_db)):
    """用运行的最终检查点评估数据集"""
    service = RunService(db)
    run = service.get_run(run_id)
    if not run:
        raise HTTPException(status_code=404, detail="运行未找到")

    config = service.get_run_config(run_id) or {}
    dataset_path = request.dataset_path or config.get("dataset_path")
    if not dataset_path:
        raise HTTPException(status_code=400, detail="未指定数据集")
    try:
        return TrainingService(threads=settings.DEFAULT_THREADS).evaluate(
            Path(run.out_dir) / CHECKPOINT, dataset_path, nu=request.nu
        )
    except (CheckpointError, DatasetError) as e:
        raise HTTPException(status_code=404, detail=str(e))
    except ManyBodyError as e:
        raise HTTPException(status_code=400, detail=str(e))
