"""
Configuration for the Lighthouse desk pipeline

Two layers live here: environment settings read through python-dotenv, and the
JSON run configuration validated with pydantic before any stage runs.
"""

import hashlib
import json
import logging
import math
import os
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import AfterValidator, BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

# Load environment variables
load_dotenv()

# Logging Configuration
LOG_LEVEL = os.getenv("LIGHTHOUSE_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("LIGHTHOUSE_LOG_FILE", "lighthouse.log")

# Pipeline version recorded in stage manifests
PIPELINE_VERSION = "1.0.0"

# Runtime Configuration
THREADS = int(os.getenv("LIGHTHOUSE_THREADS", "0"))
DATA_DIR = os.getenv("LIGHTHOUSE_DATA_DIR", "runs")

Vec3 = Tuple[float, float, float]


class ConfigError(ValueError):
    """Raised when a run configuration cannot be loaded or fails validation"""


def validate_config():
    """Validate environment configuration values"""
    errors = []

    if not isinstance(logging.getLevelName(LOG_LEVEL.upper()), int):
        errors.append(f"LIGHTHOUSE_LOG_LEVEL '{LOG_LEVEL}' is not a logging level")

    if THREADS < 0:
        errors.append("LIGHTHOUSE_THREADS must be >= 0")

    if errors:
        raise ValueError(f"Configuration errors: {'; '.join(errors)}")


class StrictModel(BaseModel):
    """Base for every run-config section: unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid")


def _check_rgb(value: Tuple[float, float, float]) -> Tuple[float, float, float]:
    if any(c < 0.0 or c > 1.0 for c in value):
        raise ValueError("RGB components must lie in [0, 1]")
    return value


def _check_range(value: Tuple[float, float]) -> Tuple[float, float]:
    if value[0] > value[1]:
        raise ValueError("range low bound must not exceed the high bound")
    return value


RGB = Annotated[Tuple[float, float, float], AfterValidator(_check_rgb)]
Range = Annotated[Tuple[float, float], AfterValidator(_check_range)]


# --- Scene description ---

class TextureSpec(StrictModel):
    kind: Literal["solid", "checker", "stripes"] = Field(default="solid", description="Albedo pattern")
    color_a: RGB = Field(default=(0.7, 0.7, 0.7), description="Primary albedo")
    color_b: Optional[RGB] = Field(default=None, description="Secondary albedo for checker/stripes")
    cell_size: float = Field(default=0.25, gt=0, description="Pattern period in meters")


class PlaneSpec(StrictModel):
    corner: Vec3 = Field(..., description="Parallelogram corner (m)")
    edge_u: Vec3 = Field(..., description="First edge vector (m)")
    edge_v: Vec3 = Field(..., description="Second edge vector (m)")
    texture: TextureSpec = Field(default_factory=TextureSpec)

    @model_validator(mode="after")
    def validate_edges(self):
        u, v = self.edge_u, self.edge_v
        cross = (u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0])
        if math.sqrt(sum(c * c for c in cross)) < 1e-9:
            raise ValueError("edge vectors must be linearly independent")
        return self


class BoxSpec(StrictModel):
    min_corner: Vec3 = Field(..., description="Axis-aligned lower corner (m)")
    max_corner: Vec3 = Field(..., description="Axis-aligned upper corner (m)")
    face_colors: List[RGB] = Field(
        default_factory=lambda: [(0.6, 0.5, 0.4)] * 6,
        description="Albedo per face in the order -x, +x, -y, +y, -z, +z",
    )

    @field_validator("face_colors")
    @classmethod
    def validate_face_colors(cls, v):
        if len(v) != 6:
            raise ValueError("a box needs exactly 6 face colors")
        return v

    @model_validator(mode="after")
    def validate_extent(self):
        if any(lo >= hi for lo, hi in zip(self.min_corner, self.max_corner)):
            raise ValueError("box min corner must be below max corner componentwise")
        return self


class LightSpec(StrictModel):
    direction: Vec3 = Field(default=(0.3, 0.2, 0.93), description="Direction toward the light")
    intensity: RGB = Field(default=(0.6, 0.6, 0.6), description="Directional light RGB intensity")
    ambient: RGB = Field(default=(0.4, 0.4, 0.4), description="Ambient RGB intensity")

    @field_validator("direction")
    @classmethod
    def normalize_direction(cls, v):
        norm = math.sqrt(sum(c * c for c in v))
        if norm < 1e-12:
            raise ValueError("light direction must be nonzero")
        return tuple(c / norm for c in v)


def default_room() -> List[PlaneSpec]:
    """A 2.4 m box room, floor at z = 0, each surface textured differently"""
    h = 1.2
    top = 2.4
    return [
        PlaneSpec(corner=(-h, -h, 0.0), edge_u=(2 * h, 0.0, 0.0), edge_v=(0.0, 2 * h, 0.0),
                  texture=TextureSpec(kind="checker", color_a=(0.75, 0.7, 0.6), color_b=(0.35, 0.3, 0.25), cell_size=0.3)),
        PlaneSpec(corner=(-h, -h, top), edge_u=(0.0, 2 * h, 0.0), edge_v=(2 * h, 0.0, 0.0),
                  texture=TextureSpec(kind="solid", color_a=(0.9, 0.9, 0.88))),
        PlaneSpec(corner=(h, -h, 0.0), edge_u=(0.0, 2 * h, 0.0), edge_v=(0.0, 0.0, top),
                  texture=TextureSpec(kind="stripes", color_a=(0.8, 0.45, 0.4), color_b=(0.95, 0.85, 0.8), cell_size=0.2)),
        PlaneSpec(corner=(-h, -h, 0.0), edge_u=(0.0, 0.0, top), edge_v=(0.0, 2 * h, 0.0),
                  texture=TextureSpec(kind="checker", color_a=(0.4, 0.55, 0.8), color_b=(0.85, 0.9, 0.95), cell_size=0.25)),
        PlaneSpec(corner=(-h, h, 0.0), edge_u=(2 * h, 0.0, 0.0), edge_v=(0.0, 0.0, top),
                  texture=TextureSpec(kind="solid", color_a=(0.55, 0.75, 0.5))),
        PlaneSpec(corner=(-h, -h, 0.0), edge_u=(0.0, 0.0, top), edge_v=(2 * h, 0.0, 0.0),
                  texture=TextureSpec(kind="stripes", color_a=(0.85, 0.8, 0.45), color_b=(0.45, 0.4, 0.3), cell_size=0.15)),
    ]


def default_boxes() -> List[BoxSpec]:
    return [
        BoxSpec(min_corner=(0.5, 0.3, 0.0), max_corner=(1.1, 1.1, 0.75),
                face_colors=[(0.6, 0.4, 0.25), (0.55, 0.35, 0.2), (0.65, 0.45, 0.3),
                             (0.5, 0.3, 0.2), (0.3, 0.2, 0.1), (0.8, 0.65, 0.45)]),
        BoxSpec(min_corner=(-1.1, -1.0, 0.0), max_corner=(-0.6, -0.4, 1.2),
                face_colors=[(0.3, 0.35, 0.5), (0.35, 0.4, 0.55), (0.25, 0.3, 0.45),
                             (0.4, 0.45, 0.6), (0.2, 0.2, 0.3), (0.5, 0.55, 0.7)]),
    ]


class SceneSpec(StrictModel):
    planes: List[PlaneSpec] = Field(default_factory=default_room)
    boxes: List[BoxSpec] = Field(default_factory=default_boxes)
    light: LightSpec = Field(default_factory=LightSpec)


class TrajectorySpec(StrictModel):
    center: Vec3 = Field(default=(0.0, 0.0, 1.2), description="Sphere center (m)")
    arm_radius: float = Field(default=0.2, ge=0, description="Sphere radius (m)")
    yaw_range: float = Field(default=2 * math.pi, ge=0, description="Yaw sweep per row (rad)")
    pitch_rows: List[float] = Field(default_factory=lambda: [-math.pi / 6, 0.0, math.pi / 6])
    frames_per_row: int = Field(default=8, ge=1)

    @field_validator("pitch_rows")
    @classmethod
    def validate_pitch_rows(cls, v):
        if not v:
            raise ValueError("at least one pitch row is required")
        if any(abs(p) >= math.pi / 2 for p in v):
            raise ValueError("pitch must lie strictly inside (-pi/2, pi/2)")
        return v

    @model_validator(mode="after")
    def validate_frame_count(self):
        if self.frame_count < 2:
            raise ValueError("trajectory must contain at least 2 frames")
        return self

    @property
    def frame_count(self) -> int:
        return len(self.pitch_rows) * self.frames_per_row


class NoiseSpec(StrictModel):
    rotation_drift_std: float = Field(default=math.radians(0.05), ge=0, description="Per-frame drift (rad)")
    translation_drift_std: float = Field(default=5e-4, ge=0, description="Per-frame drift (m)")
    gain_range: Range = Field(default=(0.85, 1.15), description="Per-channel exposure gain")
    bias_range: Range = Field(default=(-0.03, 0.03), description="Per-channel exposure bias")
    depth_scale_range: Range = Field(default=(0.8, 1.25))
    depth_shift_range: Range = Field(default=(-0.1, 0.1), description="meters")
    plane_scale_jitter: float = Field(default=0.0, ge=0)
    plane_shift_jitter: float = Field(default=0.0, ge=0, description="meters")
    normal_noise_std: float = Field(default=math.radians(2.0), ge=0, description="rad")
    reference_frame_clean: bool = Field(default=True, description="Keep frame 0 depth and pose uncorrupted")

    @field_validator("gain_range", "depth_scale_range")
    @classmethod
    def validate_positive_range(cls, v):
        if v[0] <= 0:
            raise ValueError("range must exclude 0 (low bound > 0)")
        return v

    @classmethod
    def identity(cls) -> "NoiseSpec":
        return cls(rotation_drift_std=0.0, translation_drift_std=0.0, gain_range=(1.0, 1.0),
                   bias_range=(0.0, 0.0), depth_scale_range=(1.0, 1.0), depth_shift_range=(0.0, 0.0),
                   normal_noise_std=0.0)


# --- Stage hyperparameters ---

class ScaffoldConfig(StrictModel):
    bandwidth_angle_deg: float = Field(default=10.0, gt=0, lt=90)
    bandwidth_offset: float = Field(default=0.05, gt=0, description="meters")
    anchor_stride: int = Field(default=4, ge=1)
    max_anchors: int = Field(default=2048, ge=16)
    mean_shift_iters: int = Field(default=30, ge=1)
    min_plane_fraction: float = Field(default=0.0025, ge=0, lt=1)
    overlap_tolerance: float = Field(default=0.1, gt=0)
    min_overlap_pixels: int = Field(default=100, ge=1)
    fit_steps: int = Field(default=200, ge=0)
    fit_lr: float = Field(default=0.05, gt=0)
    huber_delta: float = Field(default=0.01, gt=0, description="meters")
    voxel_size: float = Field(default=0.02, gt=0, description="meters")


class InitConfig(StrictModel):
    k_neighbors: int = Field(default=3, ge=1)
    flatten_eps: float = Field(default=0.01, gt=0, le=1)
    initial_opacity: float = Field(default=0.1, gt=0, lt=1)
    sh_degree: Literal[0, 1] = 1


class RasterSettings(StrictModel):
    tile_size: int = Field(default=16, ge=1)
    near: float = Field(default=0.05, gt=0)
    alpha_max: float = Field(default=0.99, gt=0, lt=1)
    transmittance_min: float = Field(default=1e-4, ge=0)
    dilation: float = Field(default=0.3, ge=0)
    support_sigma: float = Field(default=3.0, gt=0)
    background: RGB = (0.0, 0.0, 0.0)


class DensifyConfig(StrictModel):
    grad_threshold: float = Field(default=0.0008, gt=0)
    densify_interval: int = Field(default=100, ge=1)
    densify_until: int = Field(default=1500, ge=0)
    total_iters: int = Field(default=3000, ge=0)
    percent_dense: float = Field(default=0.01, gt=0)
    size_threshold_world: Optional[float] = Field(default=None, gt=0, description="meters; None = 10% of extent")
    size_threshold_screen: float = Field(default=20.0, gt=0, description="pixels")
    opacity_prune_floor: float = Field(default=0.005, ge=0, lt=1)
    stable_opacity_threshold: float = Field(default=0.5, gt=0, lt=1)
    opacity_reset_interval: int = Field(default=1000, ge=1)
    opacity_reset_value: float = Field(default=0.01, gt=0, lt=1)

    @model_validator(mode="after")
    def validate_schedule(self):
        if self.densify_until > self.total_iters:
            raise ValueError("densify_until must not exceed total_iters")
        return self


class LossWeights(StrictModel):
    lambda_l1: float = Field(default=0.8, ge=0)
    lambda_dssim: float = Field(default=0.2, ge=0)
    lambda_normal: float = Field(default=0.05, ge=0)
    lambda_d2n: float = Field(default=0.2, ge=0)
    lambda_cos: Optional[float] = Field(default=None, ge=0, description="Overrides lambda_normal for L_cos")
    lambda_flat: Optional[float] = Field(default=None, ge=0)
    lambda_smooth: Optional[float] = Field(default=None, ge=0)

    def normal_weights(self) -> Dict[str, float]:
        """Per-term weights of the normal group, falling back to the joint weight"""
        return {
            "cos": self.lambda_normal if self.lambda_cos is None else self.lambda_cos,
            "flat": self.lambda_normal if self.lambda_flat is None else self.lambda_flat,
            "smooth": self.lambda_normal if self.lambda_smooth is None else self.lambda_smooth,
        }


class LearningRates(StrictModel):
    position_init: float = Field(default=1.6e-4, gt=0, description="scaled by scene extent")
    position_final: float = Field(default=1.6e-6, gt=0)
    sh: float = Field(default=2.5e-3, gt=0)
    sh_rest_factor: float = Field(default=0.05, gt=0, description="higher-order SH lr = sh * factor")
    opacity: float = Field(default=0.05, gt=0)
    scaling: float = Field(default=5e-3, gt=0)
    rotation: float = Field(default=1e-3, gt=0)
    pose_rotation: float = Field(default=1e-4, gt=0)
    pose_translation: float = Field(default=1e-4, gt=0, description="scaled by scene extent")
    tone: float = Field(default=1e-3, gt=0)


class SplitConfig(StrictModel):
    test_every: int = Field(default=8, ge=2)
    test_offset: int = Field(default=4, ge=0)

    @model_validator(mode="after")
    def validate_offset(self):
        if self.test_offset >= self.test_every:
            raise ValueError("test_offset must be smaller than test_every")
        return self

    def split(self, frame_count: int) -> Tuple[List[int], List[int]]:
        test = [i for i in range(frame_count) if i % self.test_every == self.test_offset]
        train = [i for i in range(frame_count) if i % self.test_every != self.test_offset]
        return train, test


class AblationFlags(StrictModel):
    pose: bool = Field(default=True, description="Residual pose refinement")
    color: bool = Field(default=True, description="Per-view tone correction")
    stable: bool = Field(default=True, description="Stable pruning and opacity-reset exemption")
    geometry: bool = Field(default=True, description="Plane-guided geometric losses")
    local_alignment: bool = Field(default=True, description="Plane-wise affine refinement in assembly")
    flatten: bool = Field(default=True, description="Flattened plane-guided initialization")


ABLATION_VARIANTS: Dict[str, AblationFlags] = {
    "full": AblationFlags(),
    "no_pose": AblationFlags(pose=False),
    "no_color": AblationFlags(color=False),
    "no_stable": AblationFlags(stable=False, geometry=False),
    "baseline": AblationFlags(pose=False, color=False, stable=False, geometry=False, flatten=False),
    "global_only": AblationFlags(local_alignment=False),
    "isotropic": AblationFlags(flatten=False),
}

MODULE_ABLATION = ["full", "no_pose", "no_color", "no_stable"]
INIT_ABLATION = ["global_only", "isotropic"]


class TrainConfig(StrictModel):
    report_interval: int = Field(default=100, ge=1)
    checkpoint_interval: int = Field(default=1000, ge=0, description="0 disables checkpoints")
    refine_iters: int = Field(default=200, ge=0, description="Test-view refinement iterations per view")


class RunConfig(StrictModel):
    scene: SceneSpec = Field(default_factory=SceneSpec)
    trajectory: TrajectorySpec = Field(default_factory=TrajectorySpec)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    resolution: Tuple[int, int] = Field(default=(128, 128), description="(width, height) in pixels")
    fov_deg: float = Field(default=75.0, gt=1, lt=179, description="Horizontal field of view")
    scaffold: ScaffoldConfig = Field(default_factory=ScaffoldConfig)
    init: InitConfig = Field(default_factory=InitConfig)
    raster: RasterSettings = Field(default_factory=RasterSettings)
    densify: DensifyConfig = Field(default_factory=DensifyConfig)
    weights: LossWeights = Field(default_factory=LossWeights)
    lr: LearningRates = Field(default_factory=LearningRates)
    split: SplitConfig = Field(default_factory=SplitConfig)
    ablation: AblationFlags = Field(default_factory=AblationFlags)
    train: TrainConfig = Field(default_factory=TrainConfig)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    output_dir: str = Field(default=DATA_DIR)

    @field_validator("resolution")
    @classmethod
    def validate_resolution(cls, v):
        if v[0] < 8 or v[1] < 8:
            raise ValueError("resolution must be at least 8x8")
        return v

    @model_validator(mode="after")
    def validate_room_shell(self):
        if len(self.scene.planes) < 4:
            raise ValueError("scene.planes: a room shell needs at least 4 planes")
        return self

    def with_overrides(self, **changes) -> "RunConfig":
        """Return a validated copy with top-level fields replaced"""
        data = self.model_dump()
        for key, value in changes.items():
            if value is not None:
                data[key] = value.model_dump() if isinstance(value, BaseModel) else value
        return build_run_config(data)


def format_validation_error(error: ValidationError) -> str:
    """Render pydantic errors as 'dotted.path: message' lines"""
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{path}: {item['msg']}")
    return "; ".join(lines)


def build_run_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {format_validation_error(e)}") from e


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load and validate a JSON run configuration; no path means defaults"""
    if path is None:
        return RunConfig()

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")

    return build_run_config(data)


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# Validate on import
try:
    validate_config()
except ValueError as e:
    print(f"Warning: {e}")
