"""
manybody-mpnn 主应用
many-body MPNN 数值引擎的 HTTP 接口
"""

from contextlib import asynccontextmanager

import uvicorn
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from loguru import logger

from app.api.routes.analysis import router as analysis_router
from app.api.routes.datasets import router as datasets_router
from app.api.routes.runs import router as runs_router
from app.core.config import settings
from app.core.database import create_tables
from app.core.logging import setup_logging


@asynccontextmanager
async def lifespan(app: FastAPI):
    """应用生命周期管理"""
    # 启动时初始化
    setup_logging()
    create_tables()
    logger.info("manybody-mpnn 服务启动")
    yield
    logger.info("manybody-mpnn 服务关闭")


# 创建FastAPI应用
app = FastAPI(
    title="manybody-mpnn",
    description="曲率加权 motif 谱滤波的 many-body 消息传递网络：训练、评估与分析",
    version="1.0.0",
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan
)

# 添加CORS中间件
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# 包含API路由
app.include_router(datasets_router, prefix="/api/v1", tags=["datasets"])
app.include_router(runs_router, prefix="/api/v1", tags=["runs"])
app.include_router(analysis_router, prefix="/api/v1", tags=["analysis"])


@app.get("/health")
async def health():
    return {"status": "ok"}


if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host=settings.HOST,
        port=settings.PORT,
        reload=settings.DEBUG,
        log_level="info"
    )
