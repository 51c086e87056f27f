"""
Synthetic panorama-style capture generator

Analytic box rooms (textured parallelograms plus axis-aligned boxes) are ray-cast
into exact color, depth, normal and surface-id maps along a sphere-shaped camera
sweep; the bundle is then corrupted with pose drift, exposure changes, affine
depth ambiguity and normal noise. All randomness flows from one seed.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from config import NoiseSpec, RunConfig, SceneSpec, TrajectorySpec
from io_utils import (read_json, read_pfm, read_png, read_png16, write_json, write_pfm, write_png,
                      write_png16)
from models import CaptureBundle, CaptureFrame, CorruptionRecord, Intrinsics
from utils import camera_center, make_pose, normalize, pixel_rays, rotate_vectors, so3_exp

logger = logging.getLogger(__name__)

MISS_ID = 65535
BUNDLE_FORMAT_VERSION = 1


class Surface(NamedTuple):
    """A parallelogram of the scene: corner + s*edge_u + t*edge_v, s, t in [0, 1]"""
    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    surface_id: int
    is_plane: bool


def sample_trajectory(spec: TrajectorySpec) -> List[np.ndarray]:
    """World-to-camera poses on the capture sphere, ordered row-major by (pitch, yaw)

    The optical axis of every frame points outward from the sphere center and the
    image y-axis points away from world +z (z-up world, OpenCV camera frame).
    """
    center = np.asarray(spec.center, dtype=np.float64)
    up = np.array([0.0, 0.0, 1.0])
    poses = []
    for pitch in spec.pitch_rows:
        for k in range(spec.frames_per_row):
            yaw = k * spec.yaw_range / spec.frames_per_row
            forward = np.array([math.cos(pitch) * math.cos(yaw),
                                math.cos(pitch) * math.sin(yaw),
                                math.sin(pitch)])
            down = -normalize(up - np.dot(up, forward) * forward)
            right = np.cross(down, forward)
            rot = np.stack([right, down, forward])
            position = center + spec.arm_radius * forward
            poses.append(make_pose(rot, -rot @ position))
    return poses


def box_faces(box, first_id: int) -> List[Surface]:
    lo = np.asarray(box.min_corner, dtype=np.float64)
    hi = np.asarray(box.max_corner, dtype=np.float64)
    size = hi - lo
    faces = []
    for axis in range(3):
        a, b = [i for i in range(3) if i != axis]
        eu = np.zeros(3)
        ev = np.zeros(3)
        eu[a] = size[a]
        ev[b] = size[b]
        for side, base in enumerate((lo, hi)):
            corner = lo.copy()
            corner[axis] = base[axis]
            faces.append(Surface(corner, eu, ev, first_id + 2 * axis + side, False))
    return faces


def scene_surfaces(scene: SceneSpec) -> List[Surface]:
    """Every parallelogram of the scene with its surface id (planes first, then 6 faces per box)"""
    surfaces = [Surface(np.asarray(p.corner, dtype=np.float64), np.asarray(p.edge_u, dtype=np.float64),
                        np.asarray(p.edge_v, dtype=np.float64), i, True)
                for i, p in enumerate(scene.planes)]
    first = len(scene.planes)
    for b, box in enumerate(scene.boxes):
        surfaces.extend(box_faces(box, first + 6 * b))
    return surfaces


def _parallelogram_coords(surface: Surface, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u, v = surface.edge_u, surface.edge_v
    rel = points - surface.corner
    gram = np.array([[u @ u, u @ v], [u @ v, v @ v]])
    rhs = np.stack([rel @ u, rel @ v], axis=-1)
    st = np.linalg.solve(gram, rhs.T).T
    return st[:, 0], st[:, 1]


def _intersect_parallelogram(surface: Surface, origin: np.ndarray, dirs: np.ndarray):
    normal = np.cross(surface.edge_u, surface.edge_v)
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((surface.corner - origin) @ normal) / denom
    ok = (np.abs(denom) > 1e-12) & (t > 1e-9)
    t = np.where(ok, t, np.inf)
    hit_points = origin + np.where(ok, t, 0.0)[:, None] * dirs
    s, r = _parallelogram_coords(surface, hit_points)
    inside = ok & (s >= 0) & (s <= 1) & (r >= 0) & (r <= 1)
    return np.where(inside, t, np.inf), s, r


def _texture_albedo(texture, s: np.ndarray, r: np.ndarray, len_u: float, len_v: float) -> np.ndarray:
    color_a = np.asarray(texture.color_a, dtype=np.float64)
    color_b = np.asarray(texture.color_b if texture.color_b is not None else texture.color_a, dtype=np.float64)
    if texture.kind == "solid":
        return np.broadcast_to(color_a, (len(s), 3))
    iu = np.floor(s * len_u / texture.cell_size).astype(np.int64)
    if texture.kind == "stripes":
        pick = iu % 2 == 1
    else:
        iv = np.floor(r * len_v / texture.cell_size).astype(np.int64)
        pick = (iu + iv) % 2 == 1
    return np.where(pick[:, None], color_b, color_a)


def render_ground_truth(scene: SceneSpec, pose: np.ndarray, intrinsics: Intrinsics, index: int = 0) -> CaptureFrame:
    """Ray-cast the analytic scene at the intrinsics' resolution

    Depth is camera z (rays are built with z = 1 so the ray parameter is the
    depth); normals are rotated to the camera frame and face the camera; misses
    keep depth 0, black color, zero normal and surface id -1.
    """
    pose = np.asarray(pose, dtype=np.float64)
    rot = pose[:3, :3]
    origin = camera_center(pose)
    h, w = intrinsics.height, intrinsics.width
    dirs = pixel_rays(intrinsics).reshape(-1, 3) @ rot
    n = len(dirs)

    depth = np.full(n, np.inf)
    normal_w = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    ids = np.full(n, -1, dtype=np.int32)

    for surface in scene_surfaces(scene):
        if not surface.is_plane:
            continue
        plane = scene.planes[surface.surface_id]
        t, s, r = _intersect_parallelogram(surface, origin, dirs)
        closer = t < depth
        if not np.any(closer):
            continue
        depth[closer] = t[closer]
        normal_w[closer] = normalize(np.cross(surface.edge_u, surface.edge_v))
        albedo[closer] = _texture_albedo(plane.texture, s[closer], r[closer],
                                         np.linalg.norm(surface.edge_u), np.linalg.norm(surface.edge_v))
        ids[closer] = surface.surface_id

    first = len(scene.planes)
    safe_dirs = np.where(np.abs(dirs) < 1e-15, 1e-15, dirs)
    for b, box in enumerate(scene.boxes):
        lo = np.asarray(box.min_corner, dtype=np.float64)
        hi = np.asarray(box.max_corner, dtype=np.float64)
        t1 = (lo - origin) / safe_dirs
        t2 = (hi - origin) / safe_dirs
        t_enter = np.minimum(t1, t2)
        t_near = t_enter.max(axis=1)
        t_far = np.maximum(t1, t2).min(axis=1)
        hit = (t_near <= t_far) & (t_near > 1e-9)
        closer = hit & (t_near < depth)
        if not np.any(closer):
            continue
        axis = np.argmax(t_enter, axis=1)
        positive_dir = dirs[np.arange(n), axis] > 0
        face = 2 * axis + np.where(positive_dir, 0, 1)
        face_normal = np.zeros((n, 3))
        face_normal[np.arange(n), axis] = np.where(positive_dir, -1.0, 1.0)
        colors = np.asarray(box.face_colors, dtype=np.float64)
        depth[closer] = t_near[closer]
        normal_w[closer] = face_normal[closer]
        albedo[closer] = colors[face[closer]]
        ids[closer] = first + 6 * b + face[closer]

    valid = np.isfinite(depth)
    facing = np.sum(normal_w * dirs, axis=1) > 0
    normal_w[facing] *= -1.0

    light = scene.light
    lambert = np.maximum(0.0, normal_w @ normalize(np.asarray(light.direction, dtype=np.float64)))
    shade = np.asarray(light.ambient) + lambert[:, None] * np.asarray(light.intensity)
    color = np.clip(albedo * shade, 0.0, 1.0)

    color[~valid] = 0.0
    normal_cam = normal_w @ rot.T
    normal_cam[~valid] = 0.0
    depth[~valid] = 0.0

    return CaptureFrame(
        index=index,
        image=color.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        normal=normal_cam.reshape(h, w, 3),
        pose=pose,
        intrinsics=intrinsics,
        surface_ids=ids.reshape(h, w),
    )


def nearest_surface(points: np.ndarray, scene: SceneSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distance, unit normal and id of the closest analytic surface for every point"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    best = np.full(len(points), np.inf)
    best_normal = np.zeros((len(points), 3))
    best_id = np.full(len(points), -1, dtype=np.int64)
    for surface in scene_surfaces(scene):
        s, r = _parallelogram_coords(surface, points)
        s, r = np.clip(s, 0.0, 1.0), np.clip(r, 0.0, 1.0)
        closest = surface.corner + s[:, None] * surface.edge_u + r[:, None] * surface.edge_v
        dist = np.linalg.norm(points - closest, axis=1)
        closer = dist < best
        best[closer] = dist[closer]
        best_normal[closer] = normalize(np.cross(surface.edge_u, surface.edge_v))
        best_id[closer] = surface.surface_id
    return best, best_normal, best_id


def _with_maps(frame: CaptureFrame, **maps) -> CaptureFrame:
    fields = dict(index=frame.index, image=frame.image, depth=frame.depth, normal=frame.normal,
                  pose=frame.pose, intrinsics=frame.intrinsics, surface_ids=frame.surface_ids)
    fields.update(maps)
    return CaptureFrame(**fields)


def corrupt_bundle(gt_frames: Sequence[CaptureFrame], noise: NoiseSpec, seed: int,
                   scene: Optional[SceneSpec] = None, trajectory: Optional[TrajectorySpec] = None) -> CaptureBundle:
    """Corrupt ground-truth frames into a capture bundle

    Draw order is fixed (drift, exposure, depth affine, plane jitter, normal noise)
    so equal seeds give equal bundles. Depth becomes (D - shift) / scale so that an
    affine fit against the truth recovers (scale, shift).
    """
    if not gt_frames:
        raise ValueError("corrupt_bundle needs at least one frame")

    rng = np.random.default_rng(seed)
    count = len(gt_frames)
    clean_ref = noise.reference_frame_clean

    # pose drift: D_0 = I (clean reference), D_t = D_{t-1} Exp(xi_t)
    rot_steps = rng.normal(0.0, 1.0, (count, 3)) * noise.rotation_drift_std
    trans_steps = rng.normal(0.0, 1.0, (count, 3)) * noise.translation_drift_std
    drift_enabled = noise.rotation_drift_std > 0 or noise.translation_drift_std > 0
    drift = np.eye(4)
    poses = []
    for t, frame in enumerate(gt_frames):
        if drift_enabled and not (t == 0 and clean_ref):
            drift = drift @ make_pose(so3_exp(rot_steps[t]), trans_steps[t])
        poses.append(drift @ frame.pose if drift_enabled else frame.pose)

    gains = rng.uniform(noise.gain_range[0], noise.gain_range[1], (count, 3))
    biases = rng.uniform(noise.bias_range[0], noise.bias_range[1], (count, 3))
    scales = rng.uniform(noise.depth_scale_range[0], noise.depth_scale_range[1], count)
    shifts = rng.uniform(noise.depth_shift_range[0], noise.depth_shift_range[1], count)
    if clean_ref:
        scales[0], shifts[0] = 1.0, 0.0
    exposure_enabled = noise.gain_range != (1.0, 1.0) or noise.bias_range != (0.0, 0.0)
    affine_enabled = np.any(scales != 1.0) or np.any(shifts != 0.0)
    jitter_enabled = noise.plane_scale_jitter > 0 or noise.plane_shift_jitter > 0

    record = CorruptionRecord(gains=gains.tolist(), biases=biases.tolist(),
                              depth_scales=scales.tolist(), depth_shifts=shifts.tolist())
    frames = []
    for t, frame in enumerate(gt_frames):
        image = frame.image
        if exposure_enabled:
            image = np.clip(image * gains[t] + biases[t], 0.0, 1.0)

        depth = frame.depth
        if affine_enabled or jitter_enabled:
            scale_map = np.full(depth.shape, scales[t])
            shift_map = np.full(depth.shape, shifts[t])
            if jitter_enabled and frame.surface_ids is not None and not (t == 0 and clean_ref):
                jitter = {}
                for sid in np.unique(frame.surface_ids[frame.surface_ids >= 0]):
                    js = rng.normal(0.0, noise.plane_scale_jitter) if noise.plane_scale_jitter > 0 else 0.0
                    jd = rng.normal(0.0, noise.plane_shift_jitter) if noise.plane_shift_jitter > 0 else 0.0
                    member = frame.surface_ids == sid
                    scale_map[member] = scales[t] * (1.0 + js)
                    shift_map[member] = shifts[t] + jd
                    jitter[str(int(sid))] = [float(scales[t] * (1.0 + js)), float(shifts[t] + jd)]
                record.plane_jitter[str(t)] = jitter
            valid = frame.depth > 0
            adjusted = np.where(valid, (depth - shift_map) / np.where(scale_map > 0, scale_map, 1.0), 0.0)
            depth = np.where(adjusted > 0, adjusted, 0.0)

        normal = frame.normal
        if noise.normal_noise_std > 0:
            omega = rng.normal(0.0, noise.normal_noise_std, normal.shape)
            valid = np.linalg.norm(normal, axis=-1) > 0.5
            rotated = normalize(rotate_vectors(omega, normal))
            normal = np.where(valid[..., None], rotated, normal)

        frames.append(_with_maps(frame, image=image, depth=depth, normal=normal, pose=poses[t]))

    logger.info(f"Corrupted {count} frames (seed {seed}, drift={drift_enabled}, "
                f"exposure={exposure_enabled}, depth_affine={bool(affine_enabled)})")
    return CaptureBundle(frames=frames, ground_truth=list(gt_frames), scene=scene, trajectory=trajectory,
                         noise=noise, seed=seed, corruption=record)


def generate_bundle(cfg: RunConfig) -> CaptureBundle:
    """Render the configured scene along the configured sweep and corrupt it"""
    width, height = cfg.resolution
    intrinsics = Intrinsics.from_fov(width, height, cfg.fov_deg)
    poses = sample_trajectory(cfg.trajectory)
    logger.info(f"Ray-casting {len(poses)} frames at {width}x{height}")
    gt_frames = [render_ground_truth(cfg.scene, pose, intrinsics, index=i) for i, pose in enumerate(poses)]
    return corrupt_bundle(gt_frames, cfg.noise, cfg.seed, scene=cfg.scene, trajectory=cfg.trajectory)


# --- Bundle directory format ---

def _frame_files(root: Path, prefix: str, frame: CaptureFrame) -> None:
    name = f"{frame.index:04d}"
    write_png(root / prefix / "frames" / f"{name}.png", frame.image)
    write_pfm(root / prefix / "depth" / f"{name}.pfm", frame.depth)
    write_pfm(root / prefix / "normal" / f"{name}.pfm", frame.normal)


def save_bundle(bundle: CaptureBundle, out_dir) -> Path:
    """Write frames/, depth/, normal/, ids/, gt/ plus poses.json and bundle.json"""
    root = Path(out_dir)
    for sub in ("frames", "depth", "normal", "ids", "gt/frames", "gt/depth", "gt/normal"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    for frame, truth in zip(bundle.frames, bundle.ground_truth):
        _frame_files(root, "", frame)
        _frame_files(root, "gt", truth)
        if truth.surface_ids is not None:
            ids = np.where(truth.surface_ids >= 0, truth.surface_ids, MISS_ID)
            write_png16(root / "ids" / f"{frame.index:04d}.png", ids)

    intr = bundle.intrinsics
    write_json(root / "poses.json", {
        "intrinsics": intr.model_dump(),
        "frames": [{"index": f.index,
                    "world_to_camera": f.pose.reshape(-1).tolist(),
                    "gt_world_to_camera": g.pose.reshape(-1).tolist()}
                   for f, g in zip(bundle.frames, bundle.ground_truth)],
    })
    write_json(root / "bundle.json", {
        "format_version": BUNDLE_FORMAT_VERSION,
        "seed": bundle.seed,
        "resolution": [intr.width, intr.height],
        "scene": bundle.scene.model_dump(mode="json") if bundle.scene else None,
        "trajectory": bundle.trajectory.model_dump(mode="json") if bundle.trajectory else None,
        "noise": bundle.noise.model_dump(mode="json") if bundle.noise else None,
        "corruption": bundle.corruption.model_dump(mode="json"),
    })
    logger.info(f"Saved bundle with {len(bundle.frames)} frames to {root}")
    return root


def _load_normals(path: Path, depth: np.ndarray) -> np.ndarray:
    normal = read_pfm(path)
    valid = (depth > 0) & (np.linalg.norm(normal, axis=-1) > 0.5)
    return np.where(valid[..., None], normalize(normal), 0.0)


def load_bundle(bundle_dir) -> CaptureBundle:
    """Read a bundle directory; gt/ and ids/ are optional so real captures can be imported"""
    root = Path(bundle_dir)
    poses = read_json(root / "poses.json")
    meta = read_json(root / "bundle.json") if (root / "bundle.json").exists() else {}
    intrinsics = Intrinsics(**poses["intrinsics"])

    frames, truths = [], []
    for entry in poses["frames"]:
        index = entry["index"]
        name = f"{index:04d}"
        ids_path = root / "ids" / f"{name}.png"
        surface_ids = None
        if ids_path.exists():
            raw = read_png16(ids_path)
            surface_ids = np.where(raw == MISS_ID, -1, raw)

        depth = read_pfm(root / "depth" / f"{name}.pfm")
        frames.append(CaptureFrame(
            index=index, image=read_png(root / "frames" / f"{name}.png"), depth=depth,
            normal=_load_normals(root / "normal" / f"{name}.pfm", depth),
            pose=np.asarray(entry["world_to_camera"]).reshape(4, 4), intrinsics=intrinsics,
            surface_ids=surface_ids))

        gt_root = root / "gt"
        gt_pose = np.asarray(entry.get("gt_world_to_camera", entry["world_to_camera"])).reshape(4, 4)
        if (gt_root / "frames" / f"{name}.png").exists():
            gt_depth = read_pfm(gt_root / "depth" / f"{name}.pfm")
            truths.append(CaptureFrame(
                index=index, image=read_png(gt_root / "frames" / f"{name}.png"), depth=gt_depth,
                normal=_load_normals(gt_root / "normal" / f"{name}.pfm", gt_depth),
                pose=gt_pose, intrinsics=intrinsics, surface_ids=surface_ids))
        else:
            truths.append(_with_maps(frames[-1], pose=gt_pose))

    return CaptureBundle(
        frames=frames, ground_truth=truths,
        scene=SceneSpec.model_validate(meta["scene"]) if meta.get("scene") else None,
        trajectory=TrajectorySpec.model_validate(meta["trajectory"]) if meta.get("trajectory") else None,
        noise=NoiseSpec.model_validate(meta["noise"]) if meta.get("noise") else None,
        seed=int(meta.get("seed", 0)),
        corruption=CorruptionRecord.model_validate(meta.get("corruption", {})),
    )
