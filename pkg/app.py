import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from api.routes import router as api_router
from config import get_settings
from logging_config import setup_logging

settings = get_settings()
setup_logging(settings.log_level, plain=settings.log_plain)
logger = logging.getLogger(__name__)

SERVICE_NAME = "Scene Fitting Service"
SERVICE_VERSION = "1.0.0"


@asynccontextmanager
async def lifespan(_: FastAPI):
    logger.info(
        f"{SERVICE_NAME} {SERVICE_VERSION}: data dir {settings.data_dir}, "
        f"{settings.worker_count} worker(s), SDF resolution {settings.sdf_resolution}"
    )
    yield


app = FastAPI(
    title=SERVICE_NAME,
    description="Jointly refine a 3D human body and an indoor scene from initial estimates and 2D evidence",
    version=SERVICE_VERSION,
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"], # For production, restrict this to specific origins
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(api_router, prefix="/api/v1")


@app.get("/")
async def root():
    """Root endpoint with service information."""
    return {
        "service": SERVICE_NAME,
        "version": SERVICE_VERSION,
        "docs_url": "/docs",
    }
