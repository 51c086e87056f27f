"""
Training objectives: photometric L1 + D-SSIM and the plane-guided geometric terms

Each loss returns its scalar value, the per-term breakdown and gradients with
respect to the rendered images (and log-scales for the flatten term), so the
renderer's backward pass can take them as loss-gradient images.
"""

import logging
from typing import Any, Dict, Optional

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from config import LossWeights
from metrics_eval import ssim_torch
from models import Intrinsics
from utils import pixel_rays

logger = logging.getLogger(__name__)


class LossResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    value: float = Field(..., description="Weighted total")
    terms: Dict[str, float] = Field(default_factory=dict, description="Unweighted components")
    grads: Dict[str, Any] = Field(default_factory=dict, description="Gradient tensors keyed by input name")


def _leaf(value) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value.detach().to(torch.float64).clone().requires_grad_(True)
    return torch.as_tensor(np.asarray(value, dtype=np.float64)).requires_grad_(True)


def _const(value) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value.detach().to(torch.float64)
    return torch.as_tensor(np.asarray(value, dtype=np.float64))


def color_terms(image: torch.Tensor, target: torch.Tensor, weights: LossWeights):
    l1 = torch.mean(torch.abs(image - target))
    dssim = 1.0 - ssim_torch(image, target)
    return weights.lambda_l1 * l1 + weights.lambda_dssim * dssim, {"l1": l1, "dssim": dssim}


def loss_color(image, target, weights: Optional[LossWeights] = None) -> LossResult:
    """lambda_l1 * L1 + lambda_dssim * (1 - SSIM) with its gradient wrt the toned render"""
    weights = weights or LossWeights()
    if tuple(image.shape) != tuple(target.shape):
        raise ValueError(f"loss_color: image {tuple(image.shape)} and target {tuple(target.shape)} differ")
    leaf = _leaf(image)
    total, terms = color_terms(leaf, _const(target), weights)
    (grad,) = torch.autograd.grad(total, leaf)
    return LossResult(value=float(total), terms={k: float(v) for k, v in terms.items()}, grads={"color": grad})


def camera_points(depth: torch.Tensor, intrinsics: Intrinsics) -> torch.Tensor:
    rays = torch.as_tensor(pixel_rays(intrinsics))
    return rays * depth[..., None]


def geometric_terms(normal: torch.Tensor, depth: torch.Tensor, prior_normal: torch.Tensor,
                    intrinsics: Intrinsics, rotation: Optional[torch.Tensor] = None,
                    log_scales: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
    """Unweighted cos, flat, smooth and d2n terms as differentiable scalars"""
    height, width = depth.shape
    pixels = float(height * width)
    valid = torch.linalg.norm(prior_normal, dim=-1) > 0.5

    if bool(valid.any()):
        cos = F.cosine_similarity(normal[valid], prior_normal[valid], dim=-1, eps=1e-8)
        cos_term = torch.mean(1.0 - cos)
    else:
        cos_term = normal.sum() * 0.0

    if log_scales is not None and log_scales.shape[0] > 0:
        flat_term = torch.mean(torch.min(torch.exp(log_scales), dim=1).values)
    else:
        flat_term = torch.zeros((), dtype=torch.float64)

    smooth_term = (torch.abs(normal[:, 1:] - normal[:, :-1]).sum()
                   + torch.abs(normal[1:, :] - normal[:-1, :]).sum()) / pixels

    prior_cam = prior_normal if rotation is None else prior_normal @ rotation.T
    points = camera_points(depth, intrinsics)
    grad_x = points[:, 1:] - points[:, :-1]
    grad_y = points[1:, :] - points[:-1, :]
    pair_x = valid[:, 1:] & valid[:, :-1]
    pair_y = valid[1:, :] & valid[:-1, :]
    d2n_x = torch.abs(torch.sum(grad_x * prior_cam[:, :-1], dim=-1)) * pair_x
    d2n_y = torch.abs(torch.sum(grad_y * prior_cam[:-1, :], dim=-1)) * pair_y
    d2n_term = (d2n_x.sum() + d2n_y.sum()) / pixels

    return {"cos": cos_term, "flat": flat_term, "smooth": smooth_term, "d2n": d2n_term}


def weighted_geometric(terms: Dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    normal_w = weights.normal_weights()
    return (normal_w["cos"] * terms["cos"] + normal_w["flat"] * terms["flat"]
            + normal_w["smooth"] * terms["smooth"] + weights.lambda_d2n * terms["d2n"])


def loss_geometric(normal, depth, prior_normal, intrinsics: Intrinsics, weights: Optional[LossWeights] = None,
                   rotation=None, log_scales=None) -> LossResult:
    """Angular, flatten, normal-smoothness and depth-to-normal terms

    prior_normal is the world-frame prior (zero vectors mark invalid pixels);
    rotation is the world-to-camera rotation used to express it in the frame of
    the back-projected rendered depth.
    """
    weights = weights or LossWeights()
    if tuple(normal.shape) != tuple(prior_normal.shape) or tuple(normal.shape[:2]) != tuple(depth.shape):
        raise ValueError("loss_geometric: normal, prior and depth maps must share one resolution")

    normal_leaf = _leaf(normal)
    depth_leaf = _leaf(depth)
    scale_leaf = _leaf(log_scales) if log_scales is not None else None
    terms = geometric_terms(normal_leaf, depth_leaf, _const(prior_normal), intrinsics,
                            rotation=None if rotation is None else _const(rotation), log_scales=scale_leaf)
    total = weighted_geometric(terms, weights)

    inputs = [normal_leaf, depth_leaf] + ([scale_leaf] if scale_leaf is not None else [])
    grads = torch.autograd.grad(total, inputs, allow_unused=True)
    grads = [torch.zeros_like(inp) if g is None else g for g, inp in zip(grads, inputs)]
    result = {"normal": grads[0], "depth": grads[1]}
    if scale_leaf is not None:
        result["log_scales"] = grads[2]
    return LossResult(value=float(total), terms={k: float(v) for k, v in terms.items()}, grads=result)
