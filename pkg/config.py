"""Configuration for the scene fitting engine."""
import json
import os
from functools import lru_cache
from pathlib import Path

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from services.exceptions import IoError, SchemaError


class Settings(BaseSettings):
    """Process-wide settings loaded from environment variables (prefix SCENEFIT_)."""

    model_config = SettingsConfigDict(env_prefix="SCENEFIT_", env_file=".env", extra="ignore")

    # 0 means one worker per CPU
    threads: int = Field(0, ge=0)
    log_level: str = "INFO"
    # Timestamped text logs instead of rich console output
    log_plain: bool = False
    # Base directory for relative paths in uploaded scene documents
    data_dir: str = "."
    sdf_resolution: int = Field(32, ge=2)

    @property
    def worker_count(self) -> int:
        return self.threads or os.cpu_count() or 1


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Return cached application settings."""
    return Settings()


class LossWeights(BaseModel):
    """Weights of the total loss and of the within-body loss, plus robustifier scales."""

    model_config = {"extra": "forbid"}

    scene_reprojection: float = Field(1.0, ge=0.0)
    scene_collision: float = Field(0.1, ge=0.0)
    obj_ground: float = Field(10.0, ge=0.0)
    body_ground: float = Field(20.0, ge=0.0)
    contact: float = Field(1e3, ge=0.0)
    body_penetration: float = Field(1e2, ge=0.0)

    w_keypoint: float = Field(1.0, ge=0.0)
    w_pose_prior: float = Field(4.78, ge=0.0)
    w_bend: float = Field(1.0, ge=0.0)
    w_selfpen: float = Field(1.0, ge=0.0)

    sigma_keypoint: float = Field(100.0, gt=0.0, description="pixels")
    sigma_contact: float = Field(0.05, gt=0.0, description="meters")
    smooth_l1_beta: float = Field(1.0, gt=0.0, description="pixels")


class ScheduleConfig(BaseModel):
    """Iteration counts and learning rates of the two-stage schedule."""

    model_config = {"extra": "forbid"}

    stage1_body_translation_iters: int = Field(20, ge=0)
    stage1_body_full_iters: int = Field(80, ge=0)
    stage1_scene_iters: int = Field(150, ge=0)
    stage2_alternations: int = Field(20, ge=0)
    stage2_body_inner_iters: int = Field(1, ge=0)
    stage2_scene_inner_iters: int = Field(1, ge=0)
    stage2_update_scene: bool = True

    lr_body_stage1: float = Field(1e-3, gt=0.0)
    lr_scene_stage1: float = Field(1e-4, gt=0.0)
    weight_decay_scene: float = Field(1e-4, ge=0.0)
    lr_body_stage2: float = Field(1e-4, gt=0.0)
    lr_scene_stage2: float = Field(5e-5, gt=0.0)

    sdf_rebuild_every: int = Field(1, ge=1)
    lbfgs_history: int = Field(10, ge=1)
    lbfgs_max_line_search: int = Field(20, ge=1)
    # Adam moves lengths by about lr * scene_step_scale meters per step and
    # angles by about lr * scene_angle_step_scale radians.
    scene_step_scale: float = Field(500.0, gt=0.0)
    scene_angle_step_scale: float = Field(50.0, gt=0.0)


class SynthSpec(BaseModel):
    """Parameters of a generated test scene."""

    model_config = {"extra": "forbid"}

    room_width: tuple[float, float] = (5.0, 7.0)
    room_depth: tuple[float, float] = (6.0, 8.0)
    room_height: tuple[float, float] = (2.6, 3.2)
    camera_height: float = Field(1.5, gt=0.0)
    camera_pitch: float = -0.15
    object_count: int = Field(3, ge=1)
    object_size: tuple[float, float] = (0.5, 1.0)
    human: bool = True
    mesh_kind: str = Field("box", pattern="^(box|icosphere)$")
    centroid_sigma: float = Field(0.0, ge=0.0)
    size_sigma: float = Field(0.0, ge=0.0)
    yaw_sigma: float = Field(0.0, ge=0.0)
    body_translation_sigma: float = Field(0.0, ge=0.0)
    fx: float = Field(500.0, gt=0.0)
    fy: float = Field(500.0, gt=0.0)
    width: int = Field(640, gt=0)
    height: int = Field(480, gt=0)

    @field_validator("room_width", "room_depth", "room_height", "object_size")
    @classmethod
    def _ordered(cls, value: tuple[float, float]) -> tuple[float, float]:
        if not 0.0 < value[0] <= value[1]:
            raise ValueError(f"range must satisfy 0 < low <= high, got {value}")
        return value


class RunConfig(BaseModel):
    """Everything one optimization run needs besides the scene itself."""

    model_config = {"extra": "forbid"}

    weights: LossWeights = Field(default_factory=LossWeights)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    sdf_resolution: int = Field(default_factory=lambda: get_settings().sdf_resolution, ge=2)
    log_path: str | None = None
    export_dir: str | None = None
    seed: int = 0
    disabled_terms: list[str] = []

    @model_validator(mode="after")
    def _known_terms(self) -> "RunConfig":
        from losses.total import TERM_NAMES

        unknown = sorted(set(self.disabled_terms) - set(TERM_NAMES))
        if unknown:
            raise ValueError(f"unknown loss terms {unknown}; expected a subset of {list(TERM_NAMES)}")
        return self


def schema_error(error: ValidationError, prefix: str = "") -> SchemaError:
    """Turn the first pydantic error into a SchemaError with a dotted field path."""
    first = error.errors()[0]
    path = ".".join(str(part) for part in first["loc"])
    if prefix:
        path = f"{prefix}.{path}" if path else prefix
    return SchemaError(path or "<root>", first["msg"])


def parse_run_config(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise schema_error(e, "config") from e


def load_run_config(path: str | Path | None = None) -> RunConfig:
    """Load a RunConfig from JSON; no path means all defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IoError(str(path), e) from e
    except json.JSONDecodeError as e:
        raise SchemaError("config", f"invalid JSON in {path} ({e})") from e
    return parse_run_config(raw)


def load_synth_spec(path: str | Path | None = None) -> SynthSpec:
    if path is None:
        return SynthSpec()
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        return SynthSpec.model_validate(raw)
    except OSError as e:
        raise IoError(str(path), e) from e
    except json.JSONDecodeError as e:
        raise SchemaError("spec", f"invalid JSON in {path} ({e})") from e
    except ValidationError as e:
        raise schema_error(e, "spec") from e
