"""
Guidance router - queries the served feedback network.
"""
from fastapi import APIRouter, Depends
import time

import numpy as np

from app.dependencies import get_guidance_model
from app.models.guidance import ControlRequest, ControlResponse
from app.services.mlp import MlpModel, infer

router = APIRouter(prefix="/guidance", tags=["guidance"])


@router.post("/control", response_model=ControlResponse)
def query_control(request: ControlRequest, model: MlpModel = Depends(get_guidance_model)):
    """Evaluate the network at ``(t_g, x)``."""
    started = time.perf_counter()
    u = infer(model, request.t_g, np.asarray(request.x, dtype=float))
    elapsed = time.perf_counter() - started
    return ControlResponse(u=u.tolist(), latency_ms=elapsed * 1e3)
