"""
Gaussian primitives and plane-guided initialization
"""

import logging
import math
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import faiss
import numpy as np
import torch
from plyfile import PlyData, PlyElement

from models import CaptureFrame, PlaneScaffold
from utils import normalize, quat_to_rotmat, quat_to_rotmat_np, rotmat_to_quat_np, tensor_checksum, world_to_camera

logger = logging.getLogger(__name__)

SH_C0 = 0.28209479177387814
MIN_SIGMA = math.sqrt(1e-7)
PARAM_NAMES = ("means", "quats", "log_scales", "opacity_logits", "sh_dc", "sh_rest")


def rgb_to_sh(rgb):
    return (rgb - 0.5) / SH_C0


def inverse_sigmoid(x: float) -> float:
    return math.log(x / (1.0 - x))


def covariance_from_qs(q, s):
    """Sigma = R S S^T R^T for quaternions (..., 4) and log-scales (..., 3)

    Accepts numpy arrays or torch tensors and returns the same kind.
    """
    if isinstance(q, torch.Tensor):
        m = quat_to_rotmat(q) * torch.exp(s)[..., None, :]
        return m @ m.transpose(-1, -2)
    m = quat_to_rotmat_np(np.asarray(q, dtype=np.float64)) * np.exp(np.asarray(s, dtype=np.float64))[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def knn_mean_distance(points: np.ndarray, k: int = 3) -> np.ndarray:
    """Mean Euclidean distance from each point to its k nearest other points

    Candidates come from an exact faiss L2 index over-fetched in float32; the final
    distances are recomputed in float64 so the result matches a brute-force search.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k + 1:
        raise ValueError(f"knn_mean_distance needs at least k+1={k + 1} points, got {n}")

    fetch = min(n, k + 1 + 16)
    index = faiss.IndexFlatL2(3)
    index.add(np.ascontiguousarray(points, dtype=np.float32))
    _, candidates = index.search(np.ascontiguousarray(points, dtype=np.float32), fetch)

    result = np.empty(n)
    for i in range(n):
        cand = candidates[i]
        cand = cand[(cand >= 0) & (cand != i)]
        dist = np.sqrt(((points[cand] - points[i]) ** 2).sum(-1))
        result[i] = np.sort(dist)[:k].mean()
    return result


def plane_rotations(normals: np.ndarray) -> np.ndarray:
    """Rotation matrices whose local z-axis is the normal and x-axis follows world x projected on the plane"""
    z = normalize(np.asarray(normals, dtype=np.float64).reshape(-1, 3))
    world_x = np.array([1.0, 0.0, 0.0])
    world_y = np.array([0.0, 1.0, 0.0])
    x = world_x - (z @ world_x)[:, None] * z
    degenerate = np.linalg.norm(x, axis=1) < 1e-6
    if degenerate.any():
        x[degenerate] = world_y - (z[degenerate] @ world_y)[:, None] * z[degenerate]
    x = normalize(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=-1)


def _as_tensor(value) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value.detach().to(torch.float64)
    return torch.as_tensor(np.asarray(value, dtype=np.float64))


def _as_param(value: torch.Tensor) -> torch.nn.Parameter:
    return torch.nn.Parameter(value.clone().contiguous())


class GaussianCloud:
    """Contiguous float64 parameter tensors, one row per Gaussian

    quats are (w, x, y, z); log_scales and opacity_logits follow the log and
    pre-sigmoid conventions of the common 3DGS checkpoint format.
    """

    def __init__(self, means, quats, log_scales, opacity_logits, sh_dc, sh_rest=None):
        means = _as_tensor(means).reshape(-1, 3)
        n = means.shape[0]
        if sh_rest is None:
            sh_rest = torch.zeros((n, 0, 3), dtype=torch.float64)
        self.means = _as_param(means)
        self.quats = _as_param(_as_tensor(quats).reshape(n, 4))
        self.log_scales = _as_param(_as_tensor(log_scales).reshape(n, 3))
        self.opacity_logits = _as_param(_as_tensor(opacity_logits).reshape(n))
        self.sh_dc = _as_param(_as_tensor(sh_dc).reshape(n, 1, 3))
        self.sh_rest = _as_param(_as_tensor(sh_rest).reshape(n, -1, 3))
        self.validate()

    # --- construction ---

    @classmethod
    def empty(cls, sh_degree: int = 1) -> "GaussianCloud":
        rest = (sh_degree + 1) ** 2 - 1
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0),
                   np.zeros((0, 1, 3)), np.zeros((0, rest, 3)))

    def validate(self) -> None:
        n = self.count
        for name in PARAM_NAMES:
            tensor = getattr(self, name)
            if tensor.shape[0] != n:
                raise ValueError(f"{name} has {tensor.shape[0]} rows, expected {n}")
            if not torch.all(torch.isfinite(tensor)):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def count(self) -> int:
        return int(self.means.shape[0])

    def __len__(self) -> int:
        return self.count

    @property
    def sh_degree(self) -> int:
        return int(round(math.sqrt(self.sh_rest.shape[1] + 1))) - 1

    # --- activated views ---

    @property
    def sh(self) -> torch.Tensor:
        return torch.cat([self.sh_dc, self.sh_rest], dim=1)

    @property
    def opacity(self) -> torch.Tensor:
        return torch.sigmoid(self.opacity_logits)

    @property
    def scales(self) -> torch.Tensor:
        return torch.exp(self.log_scales)

    def covariances(self) -> torch.Tensor:
        return covariance_from_qs(self.quats, self.log_scales)

    def parameters(self) -> Dict[str, torch.nn.Parameter]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def set_parameter(self, name: str, value: torch.Tensor) -> None:
        if name not in PARAM_NAMES:
            raise KeyError(f"unknown Gaussian parameter {name}")
        setattr(self, name, value if isinstance(value, torch.nn.Parameter) else torch.nn.Parameter(value))

    def normalize_quats(self) -> None:
        with torch.no_grad():
            self.quats.div_(torch.linalg.norm(self.quats, dim=1, keepdim=True))

    def detached_copy(self) -> "GaussianCloud":
        return GaussianCloud(*(getattr(self, name).detach() for name in PARAM_NAMES))

    def checksum(self) -> str:
        return tensor_checksum(getattr(self, name) for name in PARAM_NAMES)

    def min_scale_axes(self) -> np.ndarray:
        """World direction of each Gaussian's smallest-scale axis"""
        with torch.no_grad():
            rot = quat_to_rotmat(self.quats)
            axis = torch.argmin(self.log_scales, dim=1)
            picked = rot[torch.arange(self.count), :, axis]
        return picked.numpy()

    # --- checkpoint PLY ---

    def _attribute_names(self):
        names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        names += [f"f_rest_{i}" for i in range(self.sh_rest.shape[1] * 3)]
        names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
        return names

    def save_ply(self, path: Union[str, Path]) -> None:
        """3DGS-style PLY in float64 so save/load is bit-exact"""
        n = self.count
        with torch.no_grad():
            f_dc = self.sh_dc.transpose(1, 2).reshape(n, -1).numpy()
            f_rest = self.sh_rest.transpose(1, 2).reshape(n, -1).numpy()
            columns = np.concatenate([
                self.means.numpy(), np.zeros((n, 3)), f_dc, f_rest,
                self.opacity_logits.numpy()[:, None], self.log_scales.numpy(), self.quats.numpy(),
            ], axis=1)
        names = self._attribute_names()
        elements = np.empty(n, dtype=[(name, "f8") for name in names])
        for i, name in enumerate(names):
            elements[name] = columns[:, i]
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        PlyData([PlyElement.describe(elements, "vertex")], byte_order="<").write(str(path))
        logger.info(f"Saved {n} Gaussians to {path}")

    @classmethod
    def load_ply(cls, path: Union[str, Path]) -> "GaussianCloud":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Checkpoint not found: {path}")
        vertex = PlyData.read(str(path))["vertex"]
        names = [p.name for p in vertex.properties]

        def column(name):
            return np.asarray(vertex[name], dtype=np.float64)

        n = len(vertex.data)
        rest_names = sorted((p for p in names if p.startswith("f_rest_")), key=lambda p: int(p.split("_")[-1]))
        if len(rest_names) % 3:
            raise ValueError(f"{path}: f_rest field count {len(rest_names)} is not a multiple of 3")
        means = np.stack([column("x"), column("y"), column("z")], axis=1)
        sh_dc = np.stack([column(f"f_dc_{i}") for i in range(3)], axis=1).reshape(n, 3, 1).transpose(0, 2, 1)
        if rest_names:
            rest = np.stack([column(p) for p in rest_names], axis=1).reshape(n, 3, -1).transpose(0, 2, 1)
        else:
            rest = np.zeros((n, 0, 3))
        log_scales = np.stack([column(f"scale_{i}") for i in range(3)], axis=1)
        quats = np.stack([column(f"rot_{i}") for i in range(4)], axis=1)
        cloud = cls(torch.as_tensor(means), torch.as_tensor(quats), torch.as_tensor(log_scales),
                    torch.as_tensor(column("opacity")), torch.as_tensor(np.ascontiguousarray(sh_dc)),
                    torch.as_tensor(np.ascontiguousarray(rest)))
        logger.info(f"Loaded {n} Gaussians from {path}")
        return cloud


def _source_colors(scaffold: PlaneScaffold, frames: Optional[Sequence[CaptureFrame]]) -> np.ndarray:
    """RGB of the pixel each scaffold point was back-projected from, mid-gray when unavailable"""
    colors = np.full((len(scaffold), 3), 0.5)
    if not frames:
        return colors

    by_index = {frame.index: frame for frame in frames}
    missing = 0
    for frame_id in np.unique(scaffold.frame_ids):
        member = np.flatnonzero(scaffold.frame_ids == frame_id)
        frame = by_index.get(int(frame_id))
        if frame is None:
            missing += len(member)
            continue
        intr = frame.intrinsics
        cam = world_to_camera(scaffold.points[member], frame.pose)
        z = np.maximum(cam[:, 2], 1e-9)
        col = np.clip(np.rint(intr.fx * cam[:, 0] / z + intr.cx), 0, intr.width - 1).astype(np.int64)
        row = np.clip(np.rint(intr.fy * cam[:, 1] / z + intr.cy), 0, intr.height - 1).astype(np.int64)
        colors[member] = frame.image[row, col]
    if missing:
        logger.warning(f"{missing} scaffold points have no source frame; initialized mid-gray")
    return colors


def init_from_scaffold(scaffold: PlaneScaffold, k: int = 3, flatten_eps: float = 0.01,
                       frames: Optional[Sequence[CaptureFrame]] = None, initial_opacity: float = 0.1,
                       sh_degree: int = 1) -> GaussianCloud:
    """Flattened Gaussians on scaffold points, thin axis along the plane normal

    Base scale is the kNN mean distance; scales become (sigma, sigma, eps * sigma).
    flatten_eps = 1 reproduces the isotropic identity-rotation initialization.
    """
    if len(scaffold) == 0:
        raise ValueError("init_from_scaffold needs a nonempty scaffold")
    if not 0 < flatten_eps <= 1:
        raise ValueError(f"flatten_eps must lie in (0, 1], got {flatten_eps}")

    n = len(scaffold)
    sigma = np.maximum(knn_mean_distance(scaffold.points, k), MIN_SIGMA)
    log_scales = np.log(np.stack([sigma, sigma, flatten_eps * sigma], axis=1))
    if flatten_eps == 1.0:
        quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    else:
        quats = rotmat_to_quat_np(plane_rotations(scaffold.normals))

    rest = (sh_degree + 1) ** 2 - 1
    sh_dc = rgb_to_sh(_source_colors(scaffold, frames))[:, None, :]
    opacity_logits = np.full(n, inverse_sigmoid(float(initial_opacity)))

    cloud = GaussianCloud(torch.as_tensor(scaffold.points), torch.as_tensor(quats), torch.as_tensor(log_scales),
                          torch.as_tensor(opacity_logits), torch.as_tensor(sh_dc),
                          torch.zeros((n, rest, 3), dtype=torch.float64))
    logger.info(f"Initialized {n} Gaussians (k={k}, flatten_eps={flatten_eps}, "
                f"median sigma={np.median(sigma):.4f} m)")
    return cloud
