"""
Differentiable tile rasterizer for Gaussian clouds

Forward: EWA projection, one stable depth sort per view, front-to-back alpha
blending of color, view-space depth, world normals and opacity over 16x16 pixel
tiles. Backward runs reverse-mode autograd through the cached forward graph and
also accumulates the absolute per-pixel view-space gradient used for
densification.
"""

import logging
import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from config import RasterSettings
from gaussian_cloud import PARAM_NAMES, GaussianCloud
from models import Gradients, Intrinsics, RenderContractError, RenderError, RenderOutput
from utils import quat_to_rotmat

logger = logging.getLogger(__name__)

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199

Residual = Tuple[torch.Tensor, torch.Tensor]
Tone = Tuple[torch.Tensor, torch.Tensor]


def _as_tensor(value) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value.to(torch.float64)
    return torch.as_tensor(np.asarray(value, dtype=np.float64))


def compose_pose(pose, residual: Optional[Residual] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Adjusted world-to-camera pose as (R, t): R = dR R0, t = dR t0 + dt"""
    pose = _as_tensor(pose)
    rot, trans = pose[:3, :3], pose[:3, 3]
    if residual is None:
        return rot, trans
    d_quat, d_trans = residual
    d_rot = quat_to_rotmat(d_quat)
    return d_rot @ rot, d_rot @ trans + d_trans


def eval_sh(sh: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Degree <= 1 spherical-harmonics color, offset by 0.5 and clamped at 0"""
    result = SH_C0 * sh[:, 0]
    if sh.shape[1] > 1:
        x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        result = result - SH_C1 * y * sh[:, 1] + SH_C1 * z * sh[:, 2] - SH_C1 * x * sh[:, 3]
    return torch.clamp_min(result + 0.5, 0.0)


def _project(means, cov3d, rot, trans, intrinsics: Intrinsics, settings: RasterSettings):
    cam = means @ rot.T + trans
    z = cam[:, 2]
    behind = (z < settings.near).detach()
    z_safe = torch.where(behind, torch.ones_like(z), z)
    x, y = cam[:, 0], cam[:, 1]
    fx, fy = intrinsics.fx, intrinsics.fy
    mean2d = torch.stack([fx * x / z_safe + intrinsics.cx, fy * y / z_safe + intrinsics.cy], dim=-1)

    zeros = torch.zeros_like(z)
    jac = torch.stack([
        torch.stack([fx / z_safe, zeros, -fx * x / (z_safe * z_safe)], dim=-1),
        torch.stack([zeros, fy / z_safe, -fy * y / (z_safe * z_safe)], dim=-1),
    ], dim=-2)
    m = jac @ rot
    cov2d = m @ cov3d @ m.transpose(-1, -2) + settings.dilation * torch.eye(2, dtype=cov3d.dtype)
    return z, mean2d, cov2d, behind


def _screen_extent(cov2d: torch.Tensor) -> torch.Tensor:
    """Largest eigenvalue of each 2D covariance, 3DGS style"""
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    det = a * c - b * b
    return mid + torch.sqrt(torch.clamp_min(mid * mid - det, 0.1))


def _cull(mean2d, reach, behind, width: int, height: int) -> torch.Tensor:
    mx, my = mean2d[:, 0].detach(), mean2d[:, 1].detach()
    off = (mx + reach < -0.5) | (mx - reach > width - 0.5) | (my + reach < -0.5) | (my - reach > height - 0.5)
    return behind | off


def project_gaussian(mean, covariance, pose, intrinsics: Intrinsics,
                     settings: Optional[RasterSettings] = None) -> Tuple[np.ndarray, np.ndarray, float, bool]:
    """Single-Gaussian EWA projection: (2D mean px, 2x2 screen covariance, view depth, culled)"""
    settings = settings or RasterSettings()
    with torch.no_grad():
        rot, trans = compose_pose(pose)
        means = _as_tensor(mean).reshape(1, 3)
        cov3d = _as_tensor(covariance).reshape(1, 3, 3)
        z, mean2d, cov2d, behind = _project(means, cov3d, rot, trans, intrinsics, settings)
        reach = settings.support_sigma * torch.sqrt(_screen_extent(cov2d))
        culled = _cull(mean2d, reach, behind, intrinsics.width, intrinsics.height)
    return mean2d[0].numpy(), cov2d[0].numpy(), float(z[0]), bool(culled[0])


def gaussian_normals(cloud: GaussianCloud, center: torch.Tensor) -> torch.Tensor:
    """World minimal-scale axis per Gaussian, flipped to face the camera center"""
    rot = quat_to_rotmat(cloud.quats)
    axis = torch.argmin(cloud.log_scales.detach(), dim=1)
    normals = rot[torch.arange(cloud.count), :, axis]
    facing = torch.sum(normals.detach() * (center - cloud.means.detach()), dim=1)
    side = torch.where(facing < 0, -torch.ones_like(facing), torch.ones_like(facing))
    return normals * side[:, None]


def _check_finite(cloud: GaussianCloud) -> None:
    for name in PARAM_NAMES:
        tensor = getattr(cloud, name).detach()
        if tensor.numel() == 0:
            continue
        bad = ~torch.isfinite(tensor.reshape(cloud.count, -1)).all(dim=1)
        if bool(bad.any()):
            index = int(torch.nonzero(bad)[0, 0])
            raise RenderError(f"non-finite {name}", index)


def _background_output(n: int, width: int, height: int, settings: RasterSettings, tone: Optional[Tone]) -> RenderOutput:
    color = torch.tensor(settings.background, dtype=torch.float64).expand(height, width, 3).clone()
    if tone is not None:
        color = color * tone[0] + tone[1]
    return RenderOutput(
        color=color, depth=torch.zeros((height, width), dtype=torch.float64),
        normal=torch.zeros((height, width, 3), dtype=torch.float64),
        alpha=torch.zeros((height, width), dtype=torch.float64),
        radii=torch.zeros(n, dtype=torch.float64), visible=torch.zeros(n, dtype=torch.bool),
        contrib_count=torch.zeros(n, dtype=torch.int64), cache=None,
    )


def render(cloud: GaussianCloud, pose, intrinsics: Intrinsics, resolution: Optional[Tuple[int, int]] = None,
           tone: Optional[Tone] = None, residual: Optional[Residual] = None,
           settings: Optional[RasterSettings] = None) -> RenderOutput:
    """Render color, depth, normal and alpha images of a cloud from an (adjusted) pose

    tone = (w, b) maps the blended color to w * C + b after blending, unclamped.
    With grad enabled the output carries the cache consumed by backward().
    """
    settings = settings or RasterSettings()
    width, height = intrinsics.width, intrinsics.height
    if resolution is not None and tuple(resolution) != (width, height):
        raise ValueError(f"resolution {tuple(resolution)} does not match intrinsics {(width, height)}")
    _check_finite(cloud)

    n = cloud.count
    if n == 0:
        return _background_output(0, width, height, settings, tone)

    rot, trans = compose_pose(pose, residual)
    center = -rot.T @ trans
    z, mean2d, cov2d, behind = _project(cloud.means, cloud.covariances(), rot, trans, intrinsics, settings)
    extent = _screen_extent(cov2d)
    reach = settings.support_sigma * torch.sqrt(extent.detach())
    culled = _cull(mean2d, reach, behind, width, height)
    visible = ~culled
    radii = torch.where(visible, torch.ceil(3.0 * torch.sqrt(extent.detach())), torch.zeros_like(extent.detach()))

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 0, 1]
    conic_a = cov2d[:, 1, 1] / det
    conic_b = -cov2d[:, 0, 1] / det
    conic_c = cov2d[:, 0, 0] / det
    opacity = cloud.opacity
    dirs = cloud.means - center
    colors = eval_sh(cloud.sh, dirs / torch.linalg.norm(dirs, dim=1, keepdim=True).clamp_min(1e-12))
    normals = gaussian_normals(cloud, center)

    vis_idx = torch.nonzero(visible).reshape(-1)
    order = vis_idx[torch.sort(z.detach()[vis_idx], stable=True).indices]
    mx, my = mean2d[:, 0].detach(), mean2d[:, 1].detach()
    ox, oy, oreach = mx[order], my[order], reach[order]

    track = torch.is_grad_enabled()
    bg = torch.tensor(settings.background, dtype=torch.float64)
    contrib = torch.zeros(n, dtype=torch.int64)
    pixel_ids, color_parts, depth_parts, normal_parts, alpha_parts = [], [], [], [], []
    offsets = []
    tile = settings.tile_size

    for r0 in range(0, height, tile):
        r1 = min(r0 + tile, height)
        for c0 in range(0, width, tile):
            c1 = min(c0 + tile, width)
            rows, cols = torch.meshgrid(torch.arange(r0, r1, dtype=torch.float64),
                                        torch.arange(c0, c1, dtype=torch.float64), indexing="ij")
            pv, pu = rows.reshape(-1), cols.reshape(-1)
            pixel_ids.append((rows.long() * width + cols.long()).reshape(-1))

            hits = (ox + oreach >= c0) & (ox - oreach <= c1 - 1) & (oy + oreach >= r0) & (oy - oreach <= r1 - 1)
            idx = order[hits]
            if len(idx) == 0:
                count = len(pu)
                color_parts.append(bg.expand(count, 3))
                depth_parts.append(torch.zeros(count, dtype=torch.float64))
                normal_parts.append(torch.zeros((count, 3), dtype=torch.float64))
                alpha_parts.append(torch.zeros(count, dtype=torch.float64))
                continue

            offset = torch.zeros((len(pu), len(idx), 2), dtype=torch.float64, requires_grad=track)
            if track:
                offsets.append((offset, idx))
            dx = pu[:, None] - mean2d[idx, 0][None, :] - offset[..., 0]
            dy = pv[:, None] - mean2d[idx, 1][None, :] - offset[..., 1]
            cover = ((pu[:, None] - mx[idx][None, :]).abs() <= reach[idx][None, :]) & \
                    ((pv[:, None] - my[idx][None, :]).abs() <= reach[idx][None, :])
            power = -0.5 * (conic_a[idx] * dx * dx + conic_c[idx] * dy * dy) - conic_b[idx] * dx * dy
            alpha = torch.clamp(opacity[idx] * torch.exp(power), max=settings.alpha_max) * cover
            survive = torch.cumprod(1.0 - alpha, dim=1)
            transmittance = torch.cat([torch.ones_like(survive[:, :1]), survive[:, :-1]], dim=1)
            live = transmittance.detach() >= settings.transmittance_min
            weight = alpha * transmittance * live
            acc = weight.sum(dim=1)

            color_parts.append(weight @ colors[idx] + (1.0 - acc)[:, None] * bg)
            depth_parts.append(weight @ z[idx])
            normal_parts.append(weight @ normals[idx])
            alpha_parts.append(acc)
            contrib.index_add_(0, idx, (weight.detach() > 0).sum(dim=0))

    pixels = torch.cat(pixel_ids)
    total = height * width

    def stitch(parts, channels):
        values = torch.cat(parts)
        shape = (total, channels) if channels else (total,)
        return torch.zeros(shape, dtype=torch.float64).index_copy(0, pixels, values)

    color = stitch(color_parts, 3).reshape(height, width, 3)
    depth = stitch(depth_parts, 0).reshape(height, width)
    normal = stitch(normal_parts, 3).reshape(height, width, 3)
    alpha = stitch(alpha_parts, 0).reshape(height, width)
    if tone is not None:
        color = color * tone[0] + tone[1]

    cache = None
    if track:
        leaves = {name: getattr(cloud, name) for name in PARAM_NAMES}
        if residual is not None:
            leaves["residual_rotation"], leaves["residual_translation"] = residual
        if tone is not None:
            leaves["tone_gain"], leaves["tone_bias"] = tone
        cache = {"leaves": leaves, "offsets": offsets, "count": n, "size": (width, height), "consumed": False}

    logger.debug(f"Rendered {int(visible.sum())}/{n} visible Gaussians at {width}x{height}")
    return RenderOutput(color=color, depth=depth, normal=normal, alpha=alpha, radii=radii,
                        visible=visible, contrib_count=contrib, cache=cache)


def backward(output: RenderOutput, grad_color=None, grad_depth=None, grad_normal=None,
             grad_alpha=None) -> Gradients:
    """Gradients of a scalar loss given its gradient images wrt the rendered maps

    Consumes the forward cache; calling twice on one output raises RenderContractError.
    """
    cache = output.cache
    if cache is None:
        raise RenderContractError("render output carries no forward cache (rendered without grad?)")
    if cache["consumed"]:
        raise RenderContractError("forward cache already consumed by a previous backward call")
    cache["consumed"] = True

    outputs, grad_outputs = [], []
    for tensor, grad in ((output.color, grad_color), (output.depth, grad_depth),
                         (output.normal, grad_normal), (output.alpha, grad_alpha)):
        if grad is not None and tensor.requires_grad:
            grad = _as_tensor(grad).detach()
            if grad.shape != tensor.shape:
                raise ValueError(f"gradient image shape {tuple(grad.shape)} != output shape {tuple(tensor.shape)}")
            outputs.append(tensor)
            grad_outputs.append(grad)

    leaves = {name: leaf for name, leaf in cache["leaves"].items() if leaf.requires_grad}
    names = list(leaves)
    inputs = [leaves[name] for name in names] + [offset for offset, _ in cache["offsets"]]
    if outputs:
        raw = torch.autograd.grad(outputs, inputs, grad_outputs=grad_outputs, allow_unused=True)
    else:
        raw = [None] * len(inputs)
    filled = [torch.zeros_like(inp) if g is None else g for g, inp in zip(raw, inputs)]
    named = dict(zip(names, filled[:len(names)]))

    n = cache["count"]
    width, height = cache["size"]
    absolute = torch.zeros((n, 2), dtype=torch.float64)
    for (_, idx), grad in zip(cache["offsets"], filled[len(names):]):
        absolute.index_add_(0, idx, grad.abs().sum(dim=0))
    abs_viewspace = torch.linalg.norm(absolute * torch.tensor([0.5 * width, 0.5 * height], dtype=torch.float64), dim=1)

    def pick(name, shape_like):
        if name in named:
            return named[name]
        ref = cache["leaves"].get(name)
        if ref is not None:
            return torch.zeros_like(ref)
        return torch.zeros(shape_like, dtype=torch.float64)

    sh = torch.cat([pick("sh_dc", None), pick("sh_rest", None)], dim=1)
    return Gradients(
        means=pick("means", None), quats=pick("quats", None), log_scales=pick("log_scales", None),
        opacity_logits=pick("opacity_logits", None), sh=sh,
        residual_rotation=pick("residual_rotation", (4,)), residual_translation=pick("residual_translation", (3,)),
        tone_gain=pick("tone_gain", (3,)), tone_bias=pick("tone_bias", (3,)),
        abs_viewspace=abs_viewspace,
    )


# --- Panorama ---

CUBE_FACES = (
    ((1.0, 0.0, 0.0), (0.0, 0.0, -1.0)),
    ((-1.0, 0.0, 0.0), (0.0, 0.0, -1.0)),
    ((0.0, 1.0, 0.0), (0.0, 0.0, -1.0)),
    ((0.0, -1.0, 0.0), (0.0, 0.0, -1.0)),
    ((0.0, 0.0, 1.0), (1.0, 0.0, 0.0)),
    ((0.0, 0.0, -1.0), (-1.0, 0.0, 0.0)),
)


def face_rotation(forward: Sequence[float], down: Sequence[float]) -> np.ndarray:
    """World-to-camera rotation with rows (right, down, forward)"""
    forward = np.asarray(forward, dtype=np.float64)
    down = np.asarray(down, dtype=np.float64)
    return np.stack([np.cross(down, forward), down, forward])


def panorama_directions(face_resolution: int) -> np.ndarray:
    """World unit directions of an equirectangular (2F, 4F) grid; longitude 0 (+x) sits at column W/2"""
    height, width = 2 * face_resolution, 4 * face_resolution
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    lon = 2.0 * math.pi * (cols - width / 2.0) / width
    lat = 0.5 * math.pi - math.pi * (rows + 0.5) / height
    lat, lon = np.meshgrid(lat, lon, indexing="ij")
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def render_panorama(cloud: GaussianCloud, center: Union[Sequence[float], np.ndarray], face_resolution: int = 64,
                    settings: Optional[RasterSettings] = None) -> np.ndarray:
    """Equirectangular panorama (2F x 4F x 3) stitched from six 90-degree cube faces"""
    if face_resolution < 2:
        raise ValueError("face_resolution must be at least 2")
    center = np.asarray(center, dtype=np.float64).reshape(-1)
    if center.shape == (16,):
        pose = center.reshape(4, 4)
        center = -pose[:3, :3].T @ pose[:3, 3]
    size = face_resolution
    focal = size / 2.0
    principal = (size - 1) / 2.0
    intrinsics = Intrinsics(fx=focal, fy=focal, cx=principal, cy=principal, width=size, height=size)

    dirs = panorama_directions(size)
    flat = dirs.reshape(-1, 3)
    rotations = [face_rotation(f, d) for f, d in CUBE_FACES]
    facing = np.stack([flat @ rot[2] for rot in rotations], axis=1)
    choice = np.argmax(facing, axis=1)

    pano = np.zeros((len(flat), 3))
    with torch.no_grad():
        for face, rot in enumerate(rotations):
            member = np.flatnonzero(choice == face)
            if len(member) == 0:
                continue
            pose = np.eye(4)
            pose[:3, :3] = rot
            pose[:3, 3] = -rot @ center
            image = render(cloud, pose, intrinsics, settings=settings).color
            cam = flat[member] @ rot.T
            u = focal * cam[:, 0] / cam[:, 2] + principal
            v = focal * cam[:, 1] / cam[:, 2] + principal
            grid = torch.as_tensor(np.stack([u / (size - 1) * 2.0 - 1.0, v / (size - 1) * 2.0 - 1.0], axis=-1))
            sampled = F.grid_sample(image.permute(2, 0, 1)[None], grid[None, None], mode="bilinear",
                                    padding_mode="border", align_corners=True)
            pano[member] = sampled[0, :, 0].T.numpy()
    logger.info(f"Rendered {4 * size}x{2 * size} panorama at {np.round(center, 3).tolist()}")
    return np.clip(pano.reshape(2 * size, 4 * size, 3), 0.0, 1.0)
