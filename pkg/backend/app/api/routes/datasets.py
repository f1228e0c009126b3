"""
数据集API路由
"""

from pathlib import Path

from fastapi import APIRouter, HTTPException

from app.core.config import settings
from app.core.errors import ManyBodyError
from app.schemas import DatasetSpec
from app.services.dataset_service import DatasetService
from app.services.run_service import new_run_id

router = APIRouter()


@router.post("/datasets")
def create_dataset(spec: DatasetSpec):
    """生成合成数据集，返回摘要"""
    try:
        service = DatasetService(threads=settings.DEFAULT_THREADS)
        path = service.generate(spec, Path(settings.RUNS_DIR) / new_run_id("gen") / "dataset")
        return service.summary(service.load(path))
    except ManyBodyError as e:
        raise HTTPException(status_code=400, detail=str(e))
