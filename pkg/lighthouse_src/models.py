"""
Data models for the Lighthouse desk pipeline
"""

import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import NoiseSpec, SceneSpec, TrajectorySpec


# --- Errors ---

class LighthouseError(RuntimeError):
    """Base class for pipeline failures"""


class AlignmentError(LighthouseError):
    """Depth alignment of a frame against the scaffold is impossible"""

    def __init__(self, message: str, frame_index: int):
        super().__init__(f"frame {frame_index}: {message}")
        self.frame_index = frame_index


class RenderError(LighthouseError):
    """A Gaussian carries parameters the rasterizer cannot use"""

    def __init__(self, message: str, gaussian_index: int):
        super().__init__(f"Gaussian {gaussian_index}: {message}")
        self.gaussian_index = gaussian_index


class RenderContractError(LighthouseError):
    """backward() was called without a usable forward cache"""


class TrainingError(LighthouseError):
    """The optimization produced a non-finite loss"""

    def __init__(self, iteration: int, term: str):
        super().__init__(f"non-finite loss term '{term}' at iteration {iteration}")
        self.iteration = iteration
        self.term = term


class ArtifactError(LighthouseError):
    """A stage input is missing or does not match its manifest"""


# --- Cameras and captures ---

class Intrinsics(BaseModel):
    """Pinhole intrinsics; pixel (row i, col j) has its center at u = j, v = i"""
    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0)
    fy: float = Field(..., gt=0)
    cx: float
    cy: float
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "Intrinsics":
        focal = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
        return cls(fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0, width=width, height=height)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def _as_float_array(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class CaptureFrame(BaseModel):
    """One view: image, prior depth and normals (camera frame), world-to-camera pose"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    index: int = Field(..., ge=0)
    image: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    pose: np.ndarray
    intrinsics: Intrinsics
    surface_ids: Optional[np.ndarray] = None

    @field_validator("image", "depth", "normal", "pose", mode="before")
    @classmethod
    def coerce_float(cls, v):
        return _as_float_array(v)

    @field_validator("surface_ids", mode="before")
    @classmethod
    def coerce_ids(cls, v):
        return None if v is None else np.asarray(v, dtype=np.int32)

    @model_validator(mode="after")
    def validate_maps(self):
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.image.shape != (h, w, 3):
            raise ValueError(f"image shape {self.image.shape} does not match intrinsics {(h, w, 3)}")
        if self.depth.shape != (h, w) or self.normal.shape != (h, w, 3):
            raise ValueError("depth/normal maps must match the image resolution")
        if self.surface_ids is not None and self.surface_ids.shape != (h, w):
            raise ValueError("surface id map must match the image resolution")
        if not np.all(np.isfinite(self.image)) or self.image.min(initial=0.0) < 0 or self.image.max(initial=0.0) > 1:
            raise ValueError("image values must be finite and lie in [0, 1]")
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise ValueError("depth must be finite and non-negative (0 marks invalid)")
        valid = self.depth > 0
        norms = np.linalg.norm(self.normal[valid], axis=-1)
        if norms.size and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValueError("normals must be unit length on valid pixels")
        if self.pose.shape != (4, 4):
            raise ValueError("pose must be a 4x4 world-to-camera matrix")
        rot = self.pose[:3, :3]
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-6:
            raise ValueError("pose rotation must be orthonormal")
        return self

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depth > 0

    @property
    def camera_center(self) -> np.ndarray:
        return -self.pose[:3, :3].T @ self.pose[:3, 3]


class CorruptionRecord(BaseModel):
    """Parameters planted by corrupt_bundle, kept so recovery can be checked"""
    gains: List[List[float]] = Field(default_factory=list, description="per-frame RGB gain")
    biases: List[List[float]] = Field(default_factory=list, description="per-frame RGB bias")
    depth_scales: List[float] = Field(default_factory=list)
    depth_shifts: List[float] = Field(default_factory=list)
    plane_jitter: Dict[str, Dict[str, List[float]]] = Field(
        default_factory=dict, description="frame -> surface id -> [scale, shift]")


class CaptureBundle(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    frames: List[CaptureFrame]
    ground_truth: List[CaptureFrame]
    scene: Optional[SceneSpec] = None
    trajectory: Optional[TrajectorySpec] = None
    noise: Optional[NoiseSpec] = None
    seed: int = 0
    corruption: CorruptionRecord = Field(default_factory=CorruptionRecord)

    @model_validator(mode="after")
    def validate_parallel_lists(self):
        if not self.frames:
            raise ValueError("bundle must hold at least one frame")
        if len(self.frames) != len(self.ground_truth):
            raise ValueError("corrupted and ground-truth frame lists differ in length")
        reference = self.frames[0].intrinsics
        for frame in list(self.frames) + list(self.ground_truth):
            if frame.intrinsics != reference:
                raise ValueError(f"frame {frame.index} intrinsics differ from frame 0")
        return self

    @property
    def intrinsics(self) -> Intrinsics:
        return self.frames[0].intrinsics

    def frame_by_index(self, index: int) -> CaptureFrame:
        for frame in self.frames:
            if frame.index == index:
                return frame
        raise KeyError(f"no frame with index {index}")


# --- Plane scaffold ---

class PlaneSegmentation(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    labels: np.ndarray = Field(..., description="HxW plane ids, -1 unassigned")
    normals: np.ndarray = Field(..., description="Px3 unit normals, camera frame")
    offsets: np.ndarray = Field(..., description="P plane offsets d = n.x (m)")
    pixel_counts: np.ndarray

    @field_validator("labels", "pixel_counts", mode="before")
    @classmethod
    def coerce_int(cls, v):
        return np.asarray(v, dtype=np.int64)

    @field_validator("normals", "offsets", mode="before")
    @classmethod
    def coerce_float(cls, v):
        return _as_float_array(v)

    @model_validator(mode="after")
    def validate_planes(self):
        count = len(self.pixel_counts)
        if self.normals.shape != (count, 3) or self.offsets.shape != (count,):
            raise ValueError("plane tables must have one row per plane")
        if self.labels.size and (self.labels.max() >= count or self.labels.min() < -1):
            raise ValueError("labels must index the plane table or be -1")
        if count and np.max(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0)) > 1e-6:
            raise ValueError("plane normals must be unit length")
        return self

    @property
    def plane_count(self) -> int:
        return len(self.pixel_counts)

    def mask(self, plane_id: int) -> np.ndarray:
        return self.labels == plane_id


class AffineDepthParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(..., gt=0, description="global scale")
    beta: float = Field(..., description="global shift (m)")
    per_plane: Dict[int, Tuple[float, float]] = Field(default_factory=dict)

    @field_validator("per_plane")
    @classmethod
    def validate_per_plane(cls, v):
        for plane_id, (gamma, _) in v.items():
            if gamma <= 0:
                raise ValueError(f"plane {plane_id} scale must be positive")
        return v

    def for_plane(self, plane_id: int) -> Tuple[float, float]:
        return self.per_plane.get(plane_id, (self.alpha, self.beta))


UNASSIGNED_PLANE = 65535


class PlaneScaffold(BaseModel):
    """World-frame scaffold points with unit plane normals and their source pixels"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    points: np.ndarray
    normals: np.ndarray
    frame_ids: np.ndarray
    plane_ids: np.ndarray

    @field_validator("points", "normals", mode="before")
    @classmethod
    def coerce_float(cls, v):
        return _as_float_array(v).reshape(-1, 3)

    @field_validator("frame_ids", "plane_ids", mode="before")
    @classmethod
    def coerce_ids(cls, v):
        return np.asarray(v, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def validate_lengths(self):
        n = len(self.points)
        if len(self.normals) != n or len(self.frame_ids) != n or len(self.plane_ids) != n:
            raise ValueError("points, normals and sources must have equal length")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("scaffold points must be finite")
        if n and np.max(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0)) > 1e-6:
            raise ValueError("scaffold normals must be unit length")
        return self

    @classmethod
    def empty(cls) -> "PlaneScaffold":
        return cls(points=np.zeros((0, 3)), normals=np.zeros((0, 3)),
                   frame_ids=np.zeros(0, dtype=np.int64), plane_ids=np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.points)

    def concat(self, other: "PlaneScaffold") -> "PlaneScaffold":
        return PlaneScaffold(
            points=np.concatenate([self.points, other.points]),
            normals=np.concatenate([self.normals, other.normals]),
            frame_ids=np.concatenate([self.frame_ids, other.frame_ids]),
            plane_ids=np.concatenate([self.plane_ids, other.plane_ids]),
        )

    def subset(self, index: np.ndarray) -> "PlaneScaffold":
        return PlaneScaffold(points=self.points[index], normals=self.normals[index],
                             frame_ids=self.frame_ids[index], plane_ids=self.plane_ids[index])


# --- Rendering ---

class RenderOutput(BaseModel):
    """Rendered images plus per-Gaussian screen statistics; tensors stay in the autograd graph"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    color: Any = Field(..., description="HxWx3 toned color")
    depth: Any = Field(..., description="HxW alpha-blended view-space z")
    normal: Any = Field(..., description="HxWx3 blended world normals")
    alpha: Any = Field(..., description="HxW accumulated opacity")
    radii: Any = Field(..., description="N max screen radius (px), 0 when culled")
    visible: Any = Field(..., description="N bool")
    contrib_count: Any = Field(..., description="N contributing-pixel counts")
    cache: Optional[Dict[str, Any]] = Field(default=None, exclude=True)


class Gradients(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    means: Any
    quats: Any
    log_scales: Any
    opacity_logits: Any
    sh: Any
    residual_rotation: Any
    residual_translation: Any
    tone_gain: Any
    tone_bias: Any
    abs_viewspace: Any = Field(..., description="N accumulated |d loss / d mean2d| norm, NDC units")


# --- Reports ---

class DensifyReport(BaseModel):
    iteration: int
    count_before: int
    count_after: int
    cloned: int = 0
    split: int = 0
    pruned_transparent: List[int] = Field(default_factory=list)
    pruned_oversized: List[int] = Field(default_factory=list)
    retained_confident: List[int] = Field(default_factory=list)
    opacity_reset: bool = False
    reset_exempt: List[int] = Field(default_factory=list)


class TrainCheckpoint(BaseModel):
    iteration: int
    frame_index: int
    total: float
    terms: Dict[str, float]
    gaussian_count: int
    train_psnr: float
    pose_error_deg: Optional[float] = None
    elapsed_sec: float


class TrainReport(BaseModel):
    ablation: str = "full"
    checkpoints: List[TrainCheckpoint] = Field(default_factory=list)
    densify_events: List[DensifyReport] = Field(default_factory=list)
    final_count: int = 0
    scene_extent: float = 0.0
    wall_time_sec: float = 0.0

    @model_validator(mode="after")
    def validate_monotone(self):
        its = [c.iteration for c in self.checkpoints]
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValueError("checkpoint iterations must be strictly increasing")
        return self


class ViewMetrics(BaseModel):
    frame_index: int
    psnr: float
    ssim: float


class EvalReport(BaseModel):
    ablation: str
    views: List[ViewMetrics] = Field(default_factory=list)
    mean_psnr: float
    mean_ssim: float
    lpips: Optional[float] = Field(default=None, description="absent: no perceptual metric is computed")
    gaussian_count: int
    runtime_sec: float

    @model_validator(mode="after")
    def validate_metrics(self):
        for view in self.views:
            if not math.isfinite(view.psnr):
                raise ValueError(f"PSNR of frame {view.frame_index} is not finite")
            if view.ssim < -1.0 or view.ssim > 1.0:
                raise ValueError(f"SSIM of frame {view.frame_index} lies outside [-1, 1]")
        return self
