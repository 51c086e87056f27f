"""
Plane scaffold assembly

Consecutive prior depth maps are aligned to the growing scaffold, first with one
affine (scale, shift) per view and then with one affine per mean-shift plane
segment, and their non-overlapping pixels are merged into a world-frame point set
carrying plane normals.
"""

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from plyfile import PlyData, PlyElement

from config import ScaffoldConfig
from models import (UNASSIGNED_PLANE, AffineDepthParams, AlignmentError, CaptureFrame, Intrinsics,
                    PlaneScaffold, PlaneSegmentation)
from utils import camera_center, camera_to_world, normalize, pixel_rays, world_to_camera

logger = logging.getLogger(__name__)


# --- Projection ---

def project_points(points: np.ndarray, pose: np.ndarray, intrinsics: Intrinsics,
                   normals: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Z-buffer world points into a sparse depth image

    Each pixel keeps the point with the smallest camera depth. When normals are
    given, the kept point's tangent plane is intersected with the ray through the
    pixel center, so planar surfaces project to their exact per-pixel depth.
    Returns (depth, hit); depth is 0 where nothing projects.
    """
    h, w = intrinsics.height, intrinsics.width
    depth = np.zeros((h, w))
    hit = np.zeros((h, w), dtype=bool)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return depth, hit

    cam = world_to_camera(points, pose)
    z = cam[:, 2]
    front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    col = np.rint(np.where(front, u, -1.0))
    row = np.rint(np.where(front, v, -1.0))
    inside = front & (col >= 0) & (col < w) & (row >= 0) & (row < h)
    if not np.any(inside):
        return depth, hit

    idx = np.flatnonzero(inside)
    flat = row[idx].astype(np.int64) * w + col[idx].astype(np.int64)
    order = np.lexsort((idx, z[idx], flat))
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat[order][1:] != flat[order][:-1]
    winners = idx[order[first]]
    pixels = flat[order[first]]
    values = z[winners]

    if normals is not None:
        n_cam = np.asarray(normals, dtype=np.float64).reshape(-1, 3)[winners] @ pose[:3, :3].T
        rays = pixel_rays(intrinsics).reshape(-1, 3)[pixels]
        denom = np.sum(n_cam * rays, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            planar = np.sum(n_cam * cam[winners], axis=1) / denom
        ok = np.isfinite(planar) & (np.abs(denom) > 1e-6) & (np.abs(planar - values) <= 0.1 * values)
        values = np.where(ok, planar, values)

    depth.reshape(-1)[pixels] = values
    hit.reshape(-1)[pixels] = True
    return depth, hit


def back_project(depth: np.ndarray, mask: np.ndarray, pose: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    """World points for masked pixels, row-major: x_world = R^T (x_cam - t)"""
    mask = np.asarray(mask, dtype=bool)
    values = np.asarray(depth, dtype=np.float64)[mask]
    if np.any(values <= 0):
        raise ValueError(f"back_project: {int(np.sum(values <= 0))} masked pixels have non-positive depth")
    cam = pixel_rays(intrinsics)[mask] * values[:, None]
    return camera_to_world(cam, np.asarray(pose, dtype=np.float64))


def consistent_overlap(adjusted: np.ndarray, projected: np.ndarray, hit: np.ndarray, tolerance: float) -> np.ndarray:
    """Overlap mask: scaffold projects here and the adjusted depth agrees within a relative tolerance"""
    ok = hit & (adjusted > 0) & (projected > 0)
    rel = np.zeros_like(adjusted)
    rel[ok] = np.abs(adjusted[ok] - projected[ok]) / projected[ok]
    return ok & (rel < tolerance)


# --- Affine fits ---

def masked_l1(depth: np.ndarray, target: np.ndarray, mask: np.ndarray, alpha: float, beta: float) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    return float(np.mean(np.abs(alpha * depth[mask] + beta - target[mask])))


def _least_squares_affine(d: np.ndarray, p: np.ndarray) -> Tuple[float, float]:
    design = np.stack([d, np.ones_like(d)], axis=1)
    (alpha, beta), *_ = np.linalg.lstsq(design, p, rcond=None)
    if not np.isfinite(alpha) or alpha <= 1e-6:
        return 1.0, float(np.median(p - d))
    return float(alpha), float(beta)


def _descend_affine(d: np.ndarray, p: np.ndarray, init: Tuple[float, float], config: ScaffoldConfig) -> Tuple[float, float]:
    """Adam on (log alpha, beta) over a Huber-smoothed L1, cosine learning-rate decay"""
    d_t = torch.as_tensor(d, dtype=torch.float64)
    p_t = torch.as_tensor(p, dtype=torch.float64)
    log_alpha = torch.tensor(math.log(init[0]), dtype=torch.float64, requires_grad=True)
    beta = torch.tensor(init[1], dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.Adam([log_alpha, beta], lr=config.fit_lr)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=max(config.fit_steps, 1))
    for _ in range(config.fit_steps):
        optimizer.zero_grad()
        loss = F.huber_loss(torch.exp(log_alpha) * d_t + beta, p_t, delta=config.huber_delta)
        loss.backward()
        optimizer.step()
        scheduler.step()
    return float(torch.exp(log_alpha).item()), float(beta.item())


def _best_candidate(d: np.ndarray, p: np.ndarray, candidates: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    scores = [float(np.mean(np.abs(a * d + b - p))) for a, b in candidates]
    return candidates[int(np.argmin(scores))]


def fit_global_affine(depth: np.ndarray, projected: np.ndarray, mask: np.ndarray,
                      config: Optional[ScaffoldConfig] = None, frame_index: int = -1) -> Tuple[float, float]:
    """Per-view (alpha, beta) minimizing the masked L1 between alpha*D + beta and the projected scaffold"""
    config = config or ScaffoldConfig()
    mask = np.asarray(mask, dtype=bool) & (depth > 0)
    if mask.sum() < config.min_overlap_pixels:
        raise AlignmentError(f"only {int(mask.sum())} overlap pixels (need {config.min_overlap_pixels})", frame_index)

    d, p = depth[mask], projected[mask]
    warm = _least_squares_affine(d, p)
    descended = _descend_affine(d, p, warm, config)
    return _best_candidate(d, p, [(1.0, 0.0), warm, descended])


def fit_plane_affine(depth: np.ndarray, segmentation: PlaneSegmentation, global_params: Tuple[float, float],
                     projected: np.ndarray, mask: np.ndarray,
                     config: Optional[ScaffoldConfig] = None) -> AffineDepthParams:
    """Per-plane (gamma, delta) started from the global fit; planes without overlap keep it"""
    config = config or ScaffoldConfig()
    alpha, beta = global_params
    per_plane = {}
    for plane_id in range(segmentation.plane_count):
        member = np.asarray(mask, dtype=bool) & segmentation.mask(plane_id) & (depth > 0)
        if member.sum() < config.min_overlap_pixels:
            per_plane[plane_id] = (alpha, beta)
            continue
        d, p = depth[member], projected[member]
        descended = _descend_affine(d, p, (alpha, beta), config)
        per_plane[plane_id] = _best_candidate(d, p, [(alpha, beta), descended, _least_squares_affine(d, p)])
    return AffineDepthParams(alpha=alpha, beta=beta, per_plane=per_plane)


def apply_affine(depth: np.ndarray, segmentation: Optional[PlaneSegmentation], params: AffineDepthParams) -> np.ndarray:
    """gamma_p * D + delta_p on plane pixels, alpha * D + beta elsewhere; invalid stays 0"""
    scale = np.full(depth.shape, params.alpha)
    shift = np.full(depth.shape, params.beta)
    if segmentation is not None:
        for plane_id, (gamma, delta) in params.per_plane.items():
            member = segmentation.labels == plane_id
            scale[member] = gamma
            shift[member] = delta
    adjusted = np.where(depth > 0, scale * depth + shift, 0.0)
    return np.where(adjusted > 0, adjusted, 0.0)


# --- Plane segmentation ---

def _mean_shift(normals: np.ndarray, offsets: np.ndarray, cos_bw: float, bw_d: float, iters: int):
    """Flat-kernel mean shift of every anchor over the anchor set"""
    mode_n = normals.copy()
    mode_d = offsets.copy()
    for _ in range(iters):
        inside = (mode_n @ normals.T >= cos_bw) & (np.abs(mode_d[:, None] - offsets[None, :]) <= bw_d)
        weights = inside.astype(np.float64)
        count = weights.sum(axis=1)
        moved = count > 0
        new_n = np.where(moved[:, None], normalize(weights @ normals), mode_n)
        new_d = np.where(moved, (weights @ offsets) / np.maximum(count, 1.0), mode_d)
        shift = np.max(np.abs(new_n - mode_n)) + np.max(np.abs(new_d - mode_d)) / bw_d
        mode_n, mode_d = new_n, new_d
        if shift < 1e-9:
            break
    inside = (mode_n @ normals.T >= cos_bw) & (np.abs(mode_d[:, None] - offsets[None, :]) <= bw_d)
    return mode_n, mode_d, inside.sum(axis=1)


def _merge_modes(mode_n, mode_d, support, cos_bw, bw_d):
    """Greedy merge: strongest modes first, drop modes inside an accepted mode's kernel"""
    order = np.lexsort((np.arange(len(support)), -support))
    kept_n, kept_d = [], []
    for i in order:
        if kept_n:
            close = (np.asarray(kept_n) @ mode_n[i] >= cos_bw) & (np.abs(np.asarray(kept_d) - mode_d[i]) <= bw_d)
            if close.any():
                continue
        kept_n.append(mode_n[i])
        kept_d.append(mode_d[i])
    return np.asarray(kept_n).reshape(-1, 3), np.asarray(kept_d)


def refit_plane_parameters(points: np.ndarray, normals: np.ndarray, labels: np.ndarray,
                           plane_count: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least-squares (SVD) plane per label, normals oriented toward the camera at the origin"""
    plane_n = np.zeros((plane_count, 3))
    plane_d = np.zeros(plane_count)
    counts = np.zeros(plane_count, dtype=np.int64)
    for p in range(plane_count):
        member = labels == p
        counts[p] = int(member.sum())
        pts = points[member]
        centroid = pts.mean(axis=0)
        if len(pts) >= 3:
            _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
            n = vt[-1]
        else:
            n = normalize(normals[member].mean(axis=0))
        if n @ centroid > 0:
            n = -n
        plane_n[p] = n / np.linalg.norm(n)
        plane_d[p] = plane_n[p] @ centroid
    return plane_n, plane_d, counts


def _camera_points(depth: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    return pixel_rays(intrinsics) * depth[..., None]


def segment_planes(depth: np.ndarray, normal: np.ndarray, intrinsics: Intrinsics,
                   config: Optional[ScaffoldConfig] = None, seed: int = 0) -> PlaneSegmentation:
    """Mean-shift plane clustering on (unit normal, offset d = n.x) pixel embeddings

    Modes come from an anchor grid (every anchor_stride-th pixel, capped at
    max_anchors by a seeded subsample); every valid pixel joins the nearest mode
    within both bandwidths. Small clusters are dropped and the survivors are
    relabelled by decreasing size.
    """
    config = config or ScaffoldConfig()
    h, w = depth.shape
    labels = np.full((h, w), -1, dtype=np.int64)
    valid = (depth > 0) & (np.linalg.norm(normal, axis=-1) > 0.5)
    points = _camera_points(np.where(valid, depth, 0.0), intrinsics)
    n = normalize(normal)
    facing_away = np.sum(n * points, axis=-1) > 0
    n[facing_away] *= -1.0
    offset = np.sum(n * points, axis=-1)

    empty = PlaneSegmentation(labels=labels, normals=np.zeros((0, 3)), offsets=np.zeros(0),
                              pixel_counts=np.zeros(0, dtype=np.int64))
    if not valid.any():
        return empty

    grid = np.zeros((h, w), dtype=bool)
    grid[::config.anchor_stride, ::config.anchor_stride] = True
    anchors = np.flatnonzero(valid & grid)
    if len(anchors) == 0:
        anchors = np.flatnonzero(valid)
    if len(anchors) > config.max_anchors:
        rng = np.random.default_rng(seed)
        anchors = np.sort(rng.choice(anchors, size=config.max_anchors, replace=False))

    cos_bw = math.cos(math.radians(config.bandwidth_angle_deg))
    bw_d = config.bandwidth_offset
    flat_n = n.reshape(-1, 3)
    flat_d = offset.reshape(-1)
    mode_n, mode_d, support = _mean_shift(flat_n[anchors], flat_d[anchors], cos_bw, bw_d, config.mean_shift_iters)
    center_n, center_d = _merge_modes(mode_n, mode_d, support, cos_bw, bw_d)

    pixels = np.flatnonzero(valid)
    cos = np.clip(flat_n[pixels] @ center_n.T, -1.0, 1.0)
    gap = np.abs(flat_d[pixels][:, None] - center_d[None, :])
    score = np.arccos(cos) / math.radians(config.bandwidth_angle_deg) + gap / bw_d
    score[(cos < cos_bw) | (gap > bw_d)] = np.inf
    best = np.argmin(score, axis=1)
    assigned = np.isfinite(score[np.arange(len(pixels)), best])
    raw = np.where(assigned, best, -1)

    sizes = np.bincount(raw[raw >= 0], minlength=len(center_d))
    min_pixels = max(1, int(math.ceil(config.min_plane_fraction * h * w)))
    survivors = sorted(np.flatnonzero(sizes >= min_pixels), key=lambda k: (-sizes[k], k))
    remap = np.full(len(center_d), -1, dtype=np.int64)
    remap[survivors] = np.arange(len(survivors))
    labels.reshape(-1)[pixels] = np.where(raw >= 0, remap[np.maximum(raw, 0)], -1)

    plane_n, plane_d, counts = refit_plane_parameters(points, n, labels, len(survivors))
    logger.debug(f"Segmented {len(survivors)} planes from {len(anchors)} anchors "
                 f"({int((labels >= 0).sum())}/{len(pixels)} pixels assigned)")
    return PlaneSegmentation(labels=labels, normals=plane_n, offsets=plane_d, pixel_counts=counts)


def refit_segmentation(depth: np.ndarray, normal: np.ndarray, segmentation: PlaneSegmentation,
                       intrinsics: Intrinsics) -> PlaneSegmentation:
    """Same labels, plane parameters refit on a re-aligned depth map"""
    if segmentation.plane_count == 0:
        return segmentation
    labels = np.where(depth > 0, segmentation.labels, -1)
    plane_n, plane_d, counts = refit_plane_parameters(_camera_points(depth, intrinsics), normalize(normal),
                                                      labels, segmentation.plane_count)
    keep = counts > 0
    if not keep.all():
        remap = np.full(segmentation.plane_count, -1, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        labels = np.where(labels >= 0, remap[np.maximum(labels, 0)], -1)
        plane_n, plane_d, counts = plane_n[keep], plane_d[keep], counts[keep]
    return PlaneSegmentation(labels=labels, normals=plane_n, offsets=plane_d, pixel_counts=counts)


# --- Merge and assembly ---

def merge_frame(scaffold: PlaneScaffold, adjusted_depth: np.ndarray, segmentation: PlaneSegmentation,
                pose: np.ndarray, intrinsics: Intrinsics, overlap: np.ndarray, frame_index: int,
                prior_normal: Optional[np.ndarray] = None, include_unassigned: bool = False) -> PlaneScaffold:
    """Append the non-overlapping plane pixels of one frame to the scaffold

    Points carry their plane's refit normal rotated to world and oriented toward
    the camera. With include_unassigned, pixels outside every plane are added too
    using the prior normal and plane id 65535.
    """
    labels = segmentation.labels
    usable = (adjusted_depth > 0) & ~np.asarray(overlap, dtype=bool)
    take = usable & (labels >= 0)
    if include_unassigned:
        if prior_normal is None:
            raise ValueError("merge_frame needs prior normals to add unassigned pixels")
        take = usable & ((labels >= 0) | (np.linalg.norm(prior_normal, axis=-1) > 0.5))
    if not take.any():
        return scaffold

    points = back_project(adjusted_depth, take, pose, intrinsics)
    label = labels[take]
    if segmentation.plane_count:
        cam_normals = segmentation.normals[np.maximum(label, 0)]
    else:
        cam_normals = np.zeros((len(label), 3))
    if include_unassigned:
        cam_normals = np.where((label >= 0)[:, None], cam_normals, normalize(prior_normal[take]))

    world_normals = normalize(cam_normals @ pose[:3, :3])
    toward = np.sum(world_normals * (camera_center(pose) - points), axis=1) < 0
    world_normals[toward] *= -1.0

    added = PlaneScaffold(points=points, normals=world_normals,
                          frame_ids=np.full(len(points), frame_index, dtype=np.int64),
                          plane_ids=np.where(label >= 0, label, UNASSIGNED_PLANE))
    return scaffold.concat(added)


def _align_global(frame: CaptureFrame, projected: np.ndarray, overlap_hit: np.ndarray,
                  config: ScaffoldConfig) -> Tuple[Tuple[float, float], np.ndarray]:
    if overlap_hit.sum() < config.min_overlap_pixels:
        raise AlignmentError(f"only {int(overlap_hit.sum())} pixels see the scaffold", frame.index)
    warm = _least_squares_affine(frame.depth[overlap_hit], projected[overlap_hit])
    mask = consistent_overlap(np.where(frame.depth > 0, warm[0] * frame.depth + warm[1], 0.0),
                              projected, overlap_hit, config.overlap_tolerance)
    return fit_global_affine(frame.depth, projected, mask, config, frame.index), mask


def assemble_with_params(frames: Sequence[CaptureFrame], config: Optional[ScaffoldConfig] = None,
                         align: bool = True, local_alignment: bool = True
                         ) -> Tuple[PlaneScaffold, List[AffineDepthParams]]:
    """Sequential global-to-local alignment; returns the scaffold and the per-frame affines"""
    if not frames:
        raise ValueError("assemble needs at least one frame")
    config = config or ScaffoldConfig()

    first = frames[0]
    seg = segment_planes(first.depth, first.normal, first.intrinsics, config, seed=first.index)
    scaffold = merge_frame(PlaneScaffold.empty(), first.depth, seg, first.pose, first.intrinsics,
                           np.zeros(first.depth.shape, dtype=bool), first.index,
                           prior_normal=first.normal, include_unassigned=True)
    params = [AffineDepthParams(alpha=1.0, beta=0.0)]
    logger.info(f"Scaffold initialized from frame {first.index} with {len(scaffold)} points")

    for position, frame in enumerate(frames[1:], start=1):
        projected, hit = project_points(scaffold.points, frame.pose, frame.intrinsics, scaffold.normals)
        overlap_hit = hit & (frame.depth > 0)

        if align:
            try:
                (alpha, beta), mask = _align_global(frame, projected, overlap_hit, config)
            except AlignmentError:
                if position == 1:
                    raise
                alpha, beta = params[-1].alpha, params[-1].beta
                logger.warning(f"Frame {frame.index}: insufficient overlap, reusing previous affine "
                               f"({alpha:.4f}, {beta:.4f})")
                mask = consistent_overlap(apply_affine(frame.depth, None, params[-1]), projected,
                                          overlap_hit, config.overlap_tolerance)
        else:
            alpha, beta = 1.0, 0.0
            mask = consistent_overlap(frame.depth, projected, overlap_hit, config.overlap_tolerance)

        global_params = AffineDepthParams(alpha=alpha, beta=beta)
        seg = segment_planes(apply_affine(frame.depth, None, global_params), frame.normal,
                             frame.intrinsics, config, seed=frame.index)
        if align and local_alignment:
            frame_params = fit_plane_affine(frame.depth, seg, (alpha, beta), projected, mask, config)
        else:
            frame_params = global_params

        adjusted = apply_affine(frame.depth, seg, frame_params)
        seg = refit_segmentation(adjusted, frame.normal, seg, frame.intrinsics)
        merge_mask = consistent_overlap(adjusted, projected, overlap_hit, config.overlap_tolerance)
        before = len(scaffold)
        scaffold = merge_frame(scaffold, adjusted, seg, frame.pose, frame.intrinsics, merge_mask, frame.index)
        params.append(frame_params)
        logger.info(f"Frame {frame.index}: alpha={alpha:.4f} beta={beta:.4f}, {seg.plane_count} planes, "
                    f"{int(mask.sum())} overlap px, +{len(scaffold) - before} points")

    return scaffold, params


def assemble(frames: Sequence[CaptureFrame], config: Optional[ScaffoldConfig] = None,
             align: bool = True, local_alignment: bool = True) -> PlaneScaffold:
    scaffold, _ = assemble_with_params(frames, config, align=align, local_alignment=local_alignment)
    return scaffold


def downsample_scaffold(scaffold: PlaneScaffold, voxel_size: float) -> PlaneScaffold:
    """One representative per occupied voxel: the member nearest the voxel centroid (lowest index on ties)"""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if len(scaffold) == 0:
        return scaffold

    keys = np.floor(scaffold.points / voxel_size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, scaffold.points)
    centroids = sums / counts[:, None]
    dist = np.sum((scaffold.points - centroids[inverse]) ** 2, axis=1)
    index = np.arange(len(scaffold))
    order = np.lexsort((index, dist, inverse))
    first = np.ones(len(order), dtype=bool)
    first[1:] = inverse[order][1:] != inverse[order][:-1]
    keep = np.sort(order[first])
    logger.info(f"Downsampled scaffold {len(scaffold)} -> {len(keep)} points (voxel {voxel_size} m)")
    return scaffold.subset(keep)


# --- PLY ---

def save_scaffold_ply(scaffold: PlaneScaffold, path) -> None:
    """Binary little-endian PLY: x,y,z,nx,ny,nz (float) + frame, plane (uint16)"""
    if len(scaffold) and (scaffold.frame_ids.max() > 65535 or scaffold.frame_ids.min() < 0):
        raise ValueError("frame ids must fit in uint16")
    dtype = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
             ("frame", "<u2"), ("plane", "<u2")]
    vertices = np.empty(len(scaffold), dtype=dtype)
    for i, name in enumerate(("x", "y", "z")):
        vertices[name] = scaffold.points[:, i]
    for i, name in enumerate(("nx", "ny", "nz")):
        vertices[name] = scaffold.normals[:, i]
    vertices["frame"] = scaffold.frame_ids
    vertices["plane"] = np.where(scaffold.plane_ids >= 0, scaffold.plane_ids, UNASSIGNED_PLANE)
    PlyData([PlyElement.describe(vertices, "vertex")], text=False, byte_order="<").write(str(path))
    logger.info(f"Saved scaffold with {len(scaffold)} points to {path}")


def load_scaffold_ply(path) -> PlaneScaffold:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Scaffold file not found: {path}")
    vertex = PlyData.read(str(path))["vertex"]
    points = np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=1).astype(np.float64)
    normals = normalize(np.stack([vertex["nx"], vertex["ny"], vertex["nz"]], axis=1).astype(np.float64))
    return PlaneScaffold(points=points, normals=normals,
                         frame_ids=np.asarray(vertex["frame"], dtype=np.int64),
                         plane_ids=np.asarray(vertex["plane"], dtype=np.int64))
