"""
Utility functions for the Lighthouse desk pipeline: rotations, poses, pixel grids, threading
"""

import hashlib
import logging
from typing import Iterable

import numpy as np
import torch

from models import Intrinsics

logger = logging.getLogger(__name__)


def normalize(v: np.ndarray, axis: int = -1, eps: float = 1e-12) -> np.ndarray:
    """Normalize vectors along an axis; zero vectors stay zero"""
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.maximum(norm, eps)


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues map from axis-angle vectors (..., 3) to rotation matrices (..., 3, 3)"""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega, axis=-1, keepdims=True)[..., None]
    k = np.zeros(omega.shape[:-1] + (3, 3))
    k[..., 0, 1], k[..., 0, 2] = -omega[..., 2], omega[..., 1]
    k[..., 1, 0], k[..., 1, 2] = omega[..., 2], -omega[..., 0]
    k[..., 2, 0], k[..., 2, 1] = -omega[..., 1], omega[..., 0]
    small = theta < 1e-12
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a * k + b * (k @ k)


def rotate_vectors(omega: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (..., 3) by per-vector axis-angle omega (..., 3)"""
    theta = np.linalg.norm(omega, axis=-1, keepdims=True)
    axis = omega / np.maximum(theta, 1e-300)
    cos, sin = np.cos(theta), np.sin(theta)
    cross = np.cross(axis, v)
    dot = np.sum(axis * v, axis=-1, keepdims=True)
    return v * cos + cross * sin + axis * dot * (1.0 - cos)


def quat_to_rotmat_np(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (w, x, y, z), shape (..., 4), to rotation matrices"""
    q = normalize(np.asarray(q, dtype=np.float64))
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return rot.reshape(q.shape[:-1] + (3, 3))


def rotmat_to_quat_np(rot: np.ndarray) -> np.ndarray:
    """Rotation matrices (N, 3, 3) to unit quaternions (w, x, y, z) with w >= 0 (Shepperd)"""
    rot = np.asarray(rot, dtype=np.float64).reshape(-1, 3, 3)
    n = len(rot)
    m00, m11, m22 = rot[:, 0, 0], rot[:, 1, 1], rot[:, 2, 2]
    trace = m00 + m11 + m22
    cand = np.stack([trace, m00, m11, m22], axis=1)
    choice = np.argmax(cand, axis=1)
    q = np.zeros((n, 4))

    sel = choice == 0
    s = np.sqrt(1.0 + trace[sel]) * 2
    q[sel] = np.stack([0.25 * s, (rot[sel, 2, 1] - rot[sel, 1, 2]) / s,
                       (rot[sel, 0, 2] - rot[sel, 2, 0]) / s, (rot[sel, 1, 0] - rot[sel, 0, 1]) / s], axis=1)
    sel = choice == 1
    s = np.sqrt(1.0 + m00[sel] - m11[sel] - m22[sel]) * 2
    q[sel] = np.stack([(rot[sel, 2, 1] - rot[sel, 1, 2]) / s, 0.25 * s,
                       (rot[sel, 0, 1] + rot[sel, 1, 0]) / s, (rot[sel, 0, 2] + rot[sel, 2, 0]) / s], axis=1)
    sel = choice == 2
    s = np.sqrt(1.0 + m11[sel] - m00[sel] - m22[sel]) * 2
    q[sel] = np.stack([(rot[sel, 0, 2] - rot[sel, 2, 0]) / s, (rot[sel, 0, 1] + rot[sel, 1, 0]) / s,
                       0.25 * s, (rot[sel, 1, 2] + rot[sel, 2, 1]) / s], axis=1)
    sel = choice == 3
    s = np.sqrt(1.0 + m22[sel] - m00[sel] - m11[sel]) * 2
    q[sel] = np.stack([(rot[sel, 1, 0] - rot[sel, 0, 1]) / s, (rot[sel, 0, 2] + rot[sel, 2, 0]) / s,
                       (rot[sel, 1, 2] + rot[sel, 2, 1]) / s, 0.25 * s], axis=1)

    q[q[:, 0] < 0] *= -1
    return normalize(q)


def quat_to_rotmat(q: torch.Tensor) -> torch.Tensor:
    """Differentiable quaternion (..., 4) to rotation (..., 3, 3); quaternions are normalized first"""
    q = q / torch.linalg.norm(q, dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    rot = torch.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], dim=-1)
    return rot.reshape(q.shape[:-1] + (3, 3))


# --- Poses (world -> camera, x_cam = R x_world + t) ---

def make_pose(rot: np.ndarray, trans: np.ndarray) -> np.ndarray:
    pose = np.eye(4)
    pose[:3, :3] = rot
    pose[:3, 3] = trans
    return pose


def camera_center(pose: np.ndarray) -> np.ndarray:
    return -pose[:3, :3].T @ pose[:3, 3]


def world_to_camera(points: np.ndarray, pose: np.ndarray) -> np.ndarray:
    return points @ pose[:3, :3].T + pose[:3, 3]


def camera_to_world(points: np.ndarray, pose: np.ndarray) -> np.ndarray:
    return (points - pose[:3, 3]) @ pose[:3, :3]


def rotation_angle(rot_a: np.ndarray, rot_b: np.ndarray) -> float:
    """Geodesic angle (rad) between two rotation matrices"""
    cos = (np.trace(rot_a @ rot_b.T) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def pixel_rays(intrinsics: Intrinsics) -> np.ndarray:
    """Camera-frame ray directions with z = 1 through every pixel center, shape (H, W, 3)"""
    rows, cols = np.meshgrid(np.arange(intrinsics.height, dtype=np.float64),
                             np.arange(intrinsics.width, dtype=np.float64), indexing="ij")
    x = (cols - intrinsics.cx) / intrinsics.fx
    y = (rows - intrinsics.cy) / intrinsics.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def configure_threads(threads: int) -> None:
    """Cap torch/faiss parallelism and request deterministic kernels"""
    if threads <= 0:
        return
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)
    try:
        import faiss
        faiss.omp_set_num_threads(threads)
    except (ImportError, AttributeError) as e:
        logger.warning(f"Could not cap faiss threads: {e}")
    logger.info(f"Thread count capped at {threads}")


def tensor_checksum(tensors: Iterable[torch.Tensor]) -> str:
    digest = hashlib.sha256()
    for tensor in tensors:
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
