"""
FastAPI application entry point.
"""
from fastapi import FastAPI, HTTPException, status
from fastapi.responses import JSONResponse
import logging

from app import __version__
from app.config import settings
from app.exceptions import MecpError
from app.routers import extremals, guidance, problems

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

# Create FastAPI app
app = FastAPI(
    title="Extremal Guidance API",
    description="Minimum-effort extremals, conjugate-time scans and neural feedback guidance",
    version=__version__
)

# Include routers
app.include_router(problems.router)
app.include_router(extremals.router)
app.include_router(guidance.router)


# Health check endpoint
@app.get("/health")
async def health_check():
    """Basic service health check."""
    return {
        "status": "healthy",
        "service": "Extremal Guidance API",
        "model_configured": bool(settings.model_path),
    }


# Root endpoint
@app.get("/")
async def root():
    """Root endpoint."""
    return {
        "message": "Extremal Guidance API",
        "version": __version__,
        "docs": "/docs"
    }


# Error category -> HTTP status
CATEGORY_STATUS = {
    "input": status.HTTP_422_UNPROCESSABLE_ENTITY,
    "numerical": status.HTTP_409_CONFLICT,
    "missing": status.HTTP_404_NOT_FOUND,
}


# Exception handlers
@app.exception_handler(HTTPException)
async def http_exception_handler(request, exc: HTTPException):
    """Handle HTTP exceptions."""
    return JSONResponse(
        status_code=exc.status_code,
        content={
            "detail": exc.detail,
            "status_code": exc.status_code
        }
    )


@app.exception_handler(MecpError)
async def toolkit_exception_handler(request, exc: MecpError):
    """Map toolkit errors to HTTP statuses by category."""
    status_code = CATEGORY_STATUS.get(exc.category, status.HTTP_500_INTERNAL_SERVER_ERROR)
    if status_code >= 500:
        logger.error(f"Unhandled {type(exc).__name__}: {exc.message}")
    return JSONResponse(
        status_code=status_code,
        content={
            "detail": exc.message,
            "error": type(exc).__name__,
            "status_code": status_code
        }
    )


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(
        "app.main:app",
        host="0.0.0.0",
        port=8000,
        reload=True
    )
