"""
分析API路由
"""

from typing import List

from fastapi import APIRouter, HTTPException

from app.core.errors import ManyBodyError
from app.schemas import BoundFactorRequest, BoundFactorRow, CurvatureRow, EnergyResponse, GraphPayload
from app.services.analysis_service import AnalysisService, load_graph

router = APIRouter()


@router.post("/analysis/curvature", response_model=List[CurvatureRow])
def curvature(payload: GraphPayload):
    """计算每条边的 Balanced Forman 曲率"""
    try:
        g, _ = load_graph(payload)
        return AnalysisService().curvature(g)
    except ManyBodyError as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/analysis/energy", response_model=EnergyResponse)
def energy(payload: GraphPayload):
    """Dirichlet 能量（边求和与迹两种形式）"""
    try:
        g, features = load_graph(payload)
        return AnalysisService.energy(g, features)
    except ManyBodyError as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/analysis/bound-factors", response_model=List[BoundFactorRow])
def bound_factors(request: BoundFactorRequest):
    """能量上界中各阶的组合因子"""
    return AnalysisService.bound_factors(request.d_max, request.nu_max)
