"""
Gaussian optimization: objective, density control, pose and tone corrections

CloudOptimizer owns the Adam state of a GaussianCloud and performs the
clone/split/prune surgery; CorrectionState holds the per-frame residual poses
and tone parameters. train() runs the full loop and refine_test_views() fits
held-out corrections against a frozen cloud.
"""

import logging
import math
import time
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import torch
from torch import nn

from config import AblationFlags, DensifyConfig, LearningRates, LossWeights, RunConfig
from gaussian_cloud import PARAM_NAMES, GaussianCloud, init_from_scaffold
from io_utils import JsonLinesWriter, write_json
from losses import loss_color, loss_geometric
from metrics_eval import psnr
from models import (CaptureBundle, CaptureFrame, DensifyReport, PlaneScaffold, TrainCheckpoint, TrainingError,
                    TrainReport)
from splat_render import backward, compose_pose, render
from utils import quat_to_rotmat, rotation_angle

logger = logging.getLogger(__name__)


def get_expon_lr_func(lr_init: float, lr_final: float, max_steps: int) -> Callable[[int], float]:
    """Log-linear interpolation from lr_init at step 0 to lr_final at max_steps"""

    def helper(step: int) -> float:
        if max_steps <= 0:
            return lr_init
        t = float(np.clip(step / max_steps, 0.0, 1.0))
        return float(np.exp(np.log(lr_init) * (1 - t) + np.log(lr_final) * t))

    return helper


def scene_extent(scaffold: PlaneScaffold, frames: Sequence[CaptureFrame]) -> float:
    """1.1 x the farthest scaffold point from the mean camera center"""
    centers = np.stack([frame.camera_center for frame in frames])
    centroid = centers.mean(axis=0)
    if len(scaffold) == 0:
        return 1.0
    return 1.1 * float(np.max(np.linalg.norm(scaffold.points - centroid, axis=1)))


# --- Corrections ---

class CorrectionState:
    """Per-frame residual pose (quaternion, translation) and tone (gain w, bias b)

    Frozen frames and disabled corrections report None, i.e. the identity.
    """

    def __init__(self, frame_ids: Iterable[int], frozen: Iterable[int] = (), pose: bool = True, tone: bool = True):
        self.frame_ids = [int(i) for i in frame_ids]
        self.frozen: Set[int] = {int(i) for i in frozen}
        self.pose_enabled = pose
        self.tone_enabled = tone
        self.quats: Dict[int, nn.Parameter] = {}
        self.trans: Dict[int, nn.Parameter] = {}
        self.gains: Dict[int, nn.Parameter] = {}
        self.biases: Dict[int, nn.Parameter] = {}
        for i in self.frame_ids:
            self.quats[i] = nn.Parameter(torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64))
            self.trans[i] = nn.Parameter(torch.zeros(3, dtype=torch.float64))
            self.gains[i] = nn.Parameter(torch.ones(3, dtype=torch.float64))
            self.biases[i] = nn.Parameter(torch.zeros(3, dtype=torch.float64))

    def _active(self, index: int) -> bool:
        return index in self.quats and index not in self.frozen

    def residual(self, index: int) -> Optional[Tuple[torch.Tensor, torch.Tensor]]:
        if not self.pose_enabled or not self._active(index):
            return None
        return self.quats[index], self.trans[index]

    def tone(self, index: int) -> Optional[Tuple[torch.Tensor, torch.Tensor]]:
        if not self.tone_enabled or not self._active(index):
            return None
        return self.gains[index], self.biases[index]

    def param_groups(self, lr: LearningRates, extent: float = 1.0) -> List[dict]:
        """One Adam group per frame and parameter so unvisited frames keep their moments untouched"""
        groups = []
        for i in self.frame_ids:
            if not self._active(i):
                continue
            if self.pose_enabled:
                groups.append({"params": [self.quats[i]], "lr": lr.pose_rotation, "name": f"pose_q_{i}"})
                groups.append({"params": [self.trans[i]], "lr": lr.pose_translation * extent, "name": f"pose_t_{i}"})
            if self.tone_enabled:
                groups.append({"params": [self.gains[i]], "lr": lr.tone, "name": f"tone_w_{i}"})
                groups.append({"params": [self.biases[i]], "lr": lr.tone, "name": f"tone_b_{i}"})
        return groups

    def normalize(self) -> None:
        with torch.no_grad():
            for q in self.quats.values():
                q.div_(torch.linalg.norm(q))

    def adjusted_pose(self, index: int, pose: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            rot, trans = compose_pose(pose, self.residual(index))
        out = np.eye(4)
        out[:3, :3] = rot.numpy()
        out[:3, 3] = trans.numpy()
        return out

    def rotation_deg(self, index: int) -> float:
        """Angle of the residual rotation of one frame, degrees"""
        with torch.no_grad():
            rot = quat_to_rotmat(self.quats[index]).numpy()
        return math.degrees(rotation_angle(rot, np.eye(3)))

    def to_json(self) -> dict:
        frames = {}
        for i in self.frame_ids:
            frames[str(i)] = {
                "quaternion": self.quats[i].detach().tolist(),
                "translation": self.trans[i].detach().tolist(),
                "gain": self.gains[i].detach().tolist(),
                "bias": self.biases[i].detach().tolist(),
            }
        return {"frames": frames, "frozen": sorted(self.frozen), "pose": self.pose_enabled, "tone": self.tone_enabled}

    @classmethod
    def from_json(cls, payload: dict) -> "CorrectionState":
        frames = payload.get("frames", {})
        state = cls(sorted(int(k) for k in frames), frozen=payload.get("frozen", []),
                    pose=payload.get("pose", True), tone=payload.get("tone", True))
        with torch.no_grad():
            for key, entry in frames.items():
                i = int(key)
                state.quats[i].copy_(torch.tensor(entry["quaternion"], dtype=torch.float64))
                state.trans[i].copy_(torch.tensor(entry["translation"], dtype=torch.float64))
                state.gains[i].copy_(torch.tensor(entry["gain"], dtype=torch.float64))
                state.biases[i].copy_(torch.tensor(entry["bias"], dtype=torch.float64))
        return state


# --- Cloud optimizer and density control ---

class CloudOptimizer:
    """Adam over the cloud's parameter groups plus densification statistics"""

    def __init__(self, cloud: GaussianCloud, lr: Optional[LearningRates] = None,
                 densify: Optional[DensifyConfig] = None, extent: float = 1.0,
                 generator: Optional[torch.Generator] = None):
        self.cloud = cloud
        self.lr = lr or LearningRates()
        self.config = densify or DensifyConfig()
        self.extent = extent
        self.generator = generator or torch.Generator().manual_seed(0)
        self.size_threshold_world = self.config.size_threshold_world or 0.1 * extent

        rates = {
            "means": self.lr.position_init * extent,
            "quats": self.lr.rotation,
            "log_scales": self.lr.scaling,
            "opacity_logits": self.lr.opacity,
            "sh_dc": self.lr.sh,
            "sh_rest": self.lr.sh * self.lr.sh_rest_factor,
        }
        groups = [{"params": [getattr(cloud, name)], "lr": rates[name], "name": name} for name in PARAM_NAMES]
        self.optimizer = torch.optim.Adam(groups, lr=0.0, eps=1e-15)
        self.position_scheduler = get_expon_lr_func(self.lr.position_init * extent, self.lr.position_final * extent,
                                                    self.config.total_iters)
        self._reset_stats()

    def _reset_stats(self) -> None:
        n = self.cloud.count
        self.abs_grad_accum = torch.zeros(n, dtype=torch.float64)
        self.denom = torch.zeros(n, dtype=torch.float64)
        self.max_radii = torch.zeros(n, dtype=torch.float64)

    def update_learning_rate(self, iteration: int) -> float:
        for group in self.optimizer.param_groups:
            if group["name"] == "means":
                group["lr"] = self.position_scheduler(iteration)
                return group["lr"]
        return 0.0

    def step(self) -> None:
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        self.cloud.normalize_quats()

    def add_densification_stats(self, abs_viewspace: torch.Tensor, radii: torch.Tensor, visible: torch.Tensor) -> None:
        visible = visible.bool()
        self.abs_grad_accum[visible] += abs_viewspace.detach()[visible]
        self.denom[visible] += 1
        self.max_radii[visible] = torch.maximum(self.max_radii[visible], radii.detach().to(torch.float64)[visible])

    # optimizer surgery, mirrored on the cloud

    def _sync(self, tensors: Dict[str, nn.Parameter]) -> None:
        for name, tensor in tensors.items():
            self.cloud.set_parameter(name, tensor)

    def replace_tensor_to_optimizer(self, tensor: torch.Tensor, name: str) -> nn.Parameter:
        for group in self.optimizer.param_groups:
            if group["name"] != name:
                continue
            stored_state = self.optimizer.state.get(group["params"][0], None)
            new_param = nn.Parameter(tensor.detach().clone())
            if stored_state is not None:
                stored_state["exp_avg"] = torch.zeros_like(tensor)
                stored_state["exp_avg_sq"] = torch.zeros_like(tensor)
                del self.optimizer.state[group["params"][0]]
                self.optimizer.state[new_param] = stored_state
            group["params"][0] = new_param
            self.cloud.set_parameter(name, new_param)
            return new_param
        raise KeyError(f"no optimizer group named {name}")

    def _prune_optimizer(self, keep: torch.Tensor) -> Dict[str, nn.Parameter]:
        tensors = {}
        for group in self.optimizer.param_groups:
            old = group["params"][0]
            new_param = nn.Parameter(old.detach()[keep].clone())
            stored_state = self.optimizer.state.get(old, None)
            if stored_state is not None:
                stored_state["exp_avg"] = stored_state["exp_avg"][keep]
                stored_state["exp_avg_sq"] = stored_state["exp_avg_sq"][keep]
                del self.optimizer.state[old]
                self.optimizer.state[new_param] = stored_state
            group["params"][0] = new_param
            tensors[group["name"]] = new_param
        return tensors

    def cat_tensors_to_optimizer(self, extension: Dict[str, torch.Tensor]) -> Dict[str, nn.Parameter]:
        tensors = {}
        for group in self.optimizer.param_groups:
            old = group["params"][0]
            ext = extension[group["name"]].detach()
            new_param = nn.Parameter(torch.cat([old.detach(), ext], dim=0))
            stored_state = self.optimizer.state.get(old, None)
            if stored_state is not None:
                stored_state["exp_avg"] = torch.cat([stored_state["exp_avg"], torch.zeros_like(ext)], dim=0)
                stored_state["exp_avg_sq"] = torch.cat([stored_state["exp_avg_sq"], torch.zeros_like(ext)], dim=0)
                del self.optimizer.state[old]
                self.optimizer.state[new_param] = stored_state
            group["params"][0] = new_param
            tensors[group["name"]] = new_param
        return tensors

    def prune(self, remove: torch.Tensor) -> None:
        keep = ~remove
        self._sync(self._prune_optimizer(keep))
        self.abs_grad_accum = self.abs_grad_accum[keep]
        self.denom = self.denom[keep]
        self.max_radii = self.max_radii[keep]

    def _append(self, extension: Dict[str, torch.Tensor]) -> None:
        added = extension["means"].shape[0]
        self._sync(self.cat_tensors_to_optimizer(extension))
        pad = torch.zeros(added, dtype=torch.float64)
        self.abs_grad_accum = torch.cat([self.abs_grad_accum, pad])
        self.denom = torch.cat([self.denom, pad])
        self.max_radii = torch.cat([self.max_radii, pad])

    def _rows(self, mask: torch.Tensor) -> Dict[str, torch.Tensor]:
        return {name: getattr(self.cloud, name).detach()[mask] for name in PARAM_NAMES}

    def densify_and_clone(self, grads: torch.Tensor, threshold: float) -> int:
        scales = self.cloud.scales.detach()
        selected = (grads > threshold) & (scales.max(dim=1).values <= self.config.percent_dense * self.extent)
        if bool(selected.any()):
            self._append(self._rows(selected))
        return int(selected.sum())

    def densify_and_split(self, grads: torch.Tensor, threshold: float, children: int = 2) -> int:
        n = self.cloud.count
        padded = torch.zeros(n, dtype=torch.float64)
        padded[:grads.shape[0]] = grads
        scales = self.cloud.scales.detach()
        selected = (padded > threshold) & (scales.max(dim=1).values > self.config.percent_dense * self.extent)
        count = int(selected.sum())
        if count == 0:
            return 0

        rows = self._rows(selected)
        stds = scales[selected].repeat(children, 1)
        samples = torch.normal(torch.zeros_like(stds), stds, generator=self.generator)
        rots = quat_to_rotmat(rows["quats"]).repeat(children, 1, 1)
        extension = {name: rows[name].repeat(children, *([1] * (rows[name].dim() - 1))) for name in PARAM_NAMES}
        extension["means"] = torch.bmm(rots, samples.unsqueeze(-1)).squeeze(-1) + extension["means"]
        extension["log_scales"] = torch.log(stds / (0.8 * children))
        self._append(extension)
        self.prune(torch.cat([selected, torch.zeros(children * count, dtype=torch.bool)]))
        return count

    def densify_and_prune(self, iteration: int, stable: bool = True, densify: bool = True) -> DensifyReport:
        """One density-control cycle: grow, prune transparent and oversized, maybe reset opacity

        With stable pruning an oversized Gaussian is removed only when its opacity
        is at most stable_opacity_threshold; the others are kept and also skip the
        opacity reset of this cycle.

        Pruning indices refer to the cloud after growth; reset_exempt indexes the
        pruned cloud.
        """
        cfg = self.config
        before = self.cloud.count
        cloned = split = 0
        if densify:
            grads = torch.nan_to_num(self.abs_grad_accum / self.denom, nan=0.0, posinf=0.0)
            cloned = self.densify_and_clone(grads, cfg.grad_threshold)
            split = self.densify_and_split(grads, cfg.grad_threshold)

        opacity = self.cloud.opacity.detach()
        transparent = opacity < cfg.opacity_prune_floor
        oversized = (self.cloud.scales.detach().max(dim=1).values > self.size_threshold_world) | \
                    (self.max_radii > cfg.size_threshold_screen)
        if stable:
            confident = oversized & (opacity > cfg.stable_opacity_threshold)
            pruned_oversized = oversized & ~confident
        else:
            confident = torch.zeros_like(oversized)
            pruned_oversized = oversized
        remove = transparent | pruned_oversized

        report = DensifyReport(
            iteration=iteration, count_before=before, count_after=before, cloned=cloned, split=split,
            pruned_transparent=torch.nonzero(transparent).reshape(-1).tolist(),
            pruned_oversized=torch.nonzero(pruned_oversized & ~transparent).reshape(-1).tolist(),
            retained_confident=torch.nonzero(confident & ~transparent).reshape(-1).tolist(),
        )
        exempt = confident & ~transparent
        if bool(remove.any()):
            self.prune(remove)
            exempt = exempt[~remove]

        if iteration % cfg.opacity_reset_interval == 0:
            current = self.cloud.opacity.detach()
            reset = torch.minimum(current, torch.full_like(current, cfg.opacity_reset_value))
            new_opacity = torch.where(exempt, current, reset)
            self.replace_tensor_to_optimizer(torch.log(new_opacity / (1 - new_opacity)), "opacity_logits")
            report.opacity_reset = True
            report.reset_exempt = torch.nonzero(exempt).reshape(-1).tolist()

        self._reset_stats()
        report.count_after = self.cloud.count
        logger.info(f"Densify @ {iteration}: {before} -> {report.count_after} (clone {cloned}, split {split}, "
                    f"pruned {len(report.pruned_transparent)} transparent / {len(report.pruned_oversized)} oversized, "
                    f"kept {len(report.retained_confident)} confident)")
        return report


# --- Training loop ---

def training_schedule(frame_ids: Sequence[int], total: int, seed: int) -> List[int]:
    """Concatenated seeded permutations of the training frames"""
    rng = np.random.default_rng(seed)
    order: List[int] = []
    while len(order) < total:
        order.extend(int(i) for i in rng.permutation(np.asarray(frame_ids)))
    return order[:total]


def effective_weights(weights: LossWeights, flags: AblationFlags) -> LossWeights:
    if flags.geometry:
        return weights
    return weights.model_copy(update={"lambda_normal": 0.0, "lambda_d2n": 0.0, "lambda_cos": None,
                                      "lambda_flat": None, "lambda_smooth": None})


def _geometry_active(weights: LossWeights) -> bool:
    return weights.lambda_d2n > 0 or any(w > 0 for w in weights.normal_weights().values())


def _assign_grad(param: torch.Tensor, grad: Optional[torch.Tensor]) -> None:
    if grad is None:
        return
    param.grad = grad.detach().clone() if param.grad is None else param.grad + grad.detach()


def _check_terms(iteration: int, terms: Dict[str, float]) -> None:
    for name, value in terms.items():
        if not math.isfinite(value):
            raise TrainingError(iteration, name)


def mean_pose_error_deg(bundle: CaptureBundle, corrections: CorrectionState, frame_ids: Sequence[int]) -> float:
    errors = []
    for i in frame_ids:
        frame = bundle.frames[i]
        adjusted = corrections.adjusted_pose(frame.index, frame.pose)
        errors.append(math.degrees(rotation_angle(adjusted[:3, :3], bundle.ground_truth[i].pose[:3, :3])))
    return float(np.mean(errors)) if errors else 0.0


def _step_frame(cloud: GaussianCloud, frame: CaptureFrame, corrections: CorrectionState, config: RunConfig,
                weights: LossWeights, geometry: bool, iteration: int):
    """Render one frame, evaluate L_color + L_geo and write gradients into the parameters"""
    residual = corrections.residual(frame.index)
    tone = corrections.tone(frame.index)
    out = render(cloud, frame.pose, frame.intrinsics, tone=tone, residual=residual, settings=config.raster)

    color = loss_color(out.color, frame.image, weights)
    terms = {"l1": color.terms["l1"], "dssim": color.terms["dssim"], "color": color.value}
    grad_depth = grad_normal = None
    geo_value = 0.0
    scale_grad = None
    if geometry:
        with torch.no_grad():
            rot, _ = compose_pose(frame.pose, residual)
        prior_world = torch.as_tensor(frame.normal) @ rot
        geo = loss_geometric(out.normal, out.depth, prior_world, frame.intrinsics, weights,
                             rotation=rot, log_scales=cloud.log_scales)
        terms.update(geo.terms)
        geo_value = geo.value
        grad_depth, grad_normal = geo.grads["depth"], geo.grads["normal"]
        scale_grad = geo.grads["log_scales"]
    terms["geo"] = geo_value
    terms["total"] = color.value + geo_value
    _check_terms(iteration, terms)

    grads = backward(out, grad_color=color.grads["color"], grad_depth=grad_depth, grad_normal=grad_normal)
    _assign_grad(cloud.means, grads.means)
    _assign_grad(cloud.quats, grads.quats)
    _assign_grad(cloud.log_scales, grads.log_scales)
    _assign_grad(cloud.log_scales, scale_grad)
    _assign_grad(cloud.opacity_logits, grads.opacity_logits)
    _assign_grad(cloud.sh_dc, grads.sh[:, :1])
    _assign_grad(cloud.sh_rest, grads.sh[:, 1:])
    if residual is not None:
        _assign_grad(residual[0], grads.residual_rotation)
        _assign_grad(residual[1], grads.residual_translation)
    if tone is not None:
        _assign_grad(tone[0], grads.tone_gain)
        _assign_grad(tone[1], grads.tone_bias)

    with torch.no_grad():
        train_psnr = psnr(torch.clamp(out.color.detach(), 0.0, 1.0).numpy(), frame.image)
    return out, grads, terms, train_psnr


def train(bundle: CaptureBundle, scaffold: PlaneScaffold, config: RunConfig,
          weights: Optional[LossWeights] = None, ablation: str = "full",
          log_path: Optional[Path] = None, checkpoint_dir: Optional[Path] = None,
          callback: Optional[Callable[[int, GaussianCloud, CorrectionState, Dict[str, float]], None]] = None
          ) -> Tuple[GaussianCloud, CorrectionState, TrainReport]:
    """Optimize a cloud initialized on the scaffold against the bundle's training frames"""
    start = time.perf_counter()
    flags = config.ablation
    weights = effective_weights(weights or config.weights, flags)
    geometry = _geometry_active(weights)
    train_ids, _ = config.split.split(len(bundle.frames))
    frames = [bundle.frames[i] for i in train_ids]

    cloud = init_from_scaffold(scaffold, k=config.init.k_neighbors,
                               flatten_eps=config.init.flatten_eps if flags.flatten else 1.0,
                               frames=frames, initial_opacity=config.init.initial_opacity,
                               sh_degree=config.init.sh_degree)
    extent = scene_extent(scaffold, frames)
    generator = torch.Generator().manual_seed(config.seed)
    optimizer = CloudOptimizer(cloud, config.lr, config.densify, extent, generator)
    corrections = CorrectionState([f.index for f in frames], frozen=[frames[0].index],
                                  pose=flags.pose, tone=flags.color)
    correction_groups = corrections.param_groups(config.lr, extent)
    correction_optimizer = torch.optim.Adam(correction_groups, eps=1e-15) if correction_groups else None

    report = TrainReport(ablation=ablation, scene_extent=extent)
    log = JsonLinesWriter(log_path)
    total = config.densify.total_iters
    schedule = training_schedule(list(range(len(frames))), total, config.seed)
    logger.info(f"Training [{ablation}] on {len(frames)} frames for {total} iterations "
                f"({cloud.count} Gaussians, extent {extent:.3f} m, geometry {'on' if geometry else 'off'})")

    for iteration in range(1, total + 1):
        optimizer.update_learning_rate(iteration)
        frame = frames[schedule[iteration - 1]]
        out, grads, terms, train_psnr = _step_frame(optimizer.cloud, frame, corrections, config, weights,
                                                    geometry, iteration)
        optimizer.step()
        if correction_optimizer is not None:
            correction_optimizer.step()
            correction_optimizer.zero_grad(set_to_none=True)
            corrections.normalize()

        if iteration < config.densify.densify_until:
            optimizer.add_densification_stats(grads.abs_viewspace, out.radii, out.visible)
            if iteration % config.densify.densify_interval == 0:
                report.densify_events.append(optimizer.densify_and_prune(iteration, stable=flags.stable))

        if iteration % config.train.report_interval == 0 or iteration == total:
            checkpoint = TrainCheckpoint(
                iteration=iteration, frame_index=frame.index, total=terms["total"], terms=terms,
                gaussian_count=optimizer.cloud.count, train_psnr=train_psnr,
                pose_error_deg=mean_pose_error_deg(bundle, corrections, train_ids),
                elapsed_sec=time.perf_counter() - start,
            )
            report.checkpoints.append(checkpoint)
            log.write(checkpoint.model_dump(mode="json"))
            logger.info(f"[{ablation}] iter {iteration}: loss {terms['total']:.5f}, PSNR {train_psnr:.2f} dB, "
                        f"{optimizer.cloud.count} Gaussians, pose err {checkpoint.pose_error_deg:.4f} deg")
        else:
            logger.debug(f"iter {iteration} frame {frame.index}: loss {terms['total']:.6f}")

        interval = config.train.checkpoint_interval
        if checkpoint_dir is not None and interval and iteration % interval == 0:
            checkpoint_dir = Path(checkpoint_dir)
            optimizer.cloud.save_ply(checkpoint_dir / f"cloud_{iteration:05d}.ply")
            write_json(checkpoint_dir / f"corrections_{iteration:05d}.json", corrections.to_json())

        if callback is not None:
            callback(iteration, optimizer.cloud, corrections, terms)

    report.final_count = optimizer.cloud.count
    report.wall_time_sec = time.perf_counter() - start
    logger.info(f"Training [{ablation}] finished: {report.final_count} Gaussians in {report.wall_time_sec:.1f}s")
    return optimizer.cloud, corrections, report


def refine_test_views(cloud: GaussianCloud, test_frames: Sequence[CaptureFrame], iters: int,
                      config: Optional[RunConfig] = None, extent: float = 1.0) -> CorrectionState:
    """Fit residual pose and tone of held-out views against a frozen copy of the cloud"""
    config = config or RunConfig()
    flags = config.ablation
    frozen_cloud = cloud.detached_copy()
    for name in PARAM_NAMES:
        getattr(frozen_cloud, name).requires_grad_(False)

    corrections = CorrectionState([f.index for f in test_frames], pose=flags.pose, tone=flags.color)
    groups = corrections.param_groups(config.lr, extent)
    if not groups or iters <= 0:
        return corrections

    optimizer = torch.optim.Adam(groups, eps=1e-15)
    for frame in test_frames:
        residual = corrections.residual(frame.index)
        tone = corrections.tone(frame.index)
        for _ in range(iters):
            out = render(frozen_cloud, frame.pose, frame.intrinsics, tone=tone, residual=residual,
                         settings=config.raster)
            color = loss_color(out.color, frame.image, config.weights)
            grads = backward(out, grad_color=color.grads["color"])
            if residual is not None:
                _assign_grad(residual[0], grads.residual_rotation)
                _assign_grad(residual[1], grads.residual_translation)
            if tone is not None:
                _assign_grad(tone[0], grads.tone_gain)
                _assign_grad(tone[1], grads.tone_bias)
            optimizer.step()
            optimizer.zero_grad(set_to_none=True)
            corrections.normalize()
        logger.info(f"Refined test view {frame.index}: loss {color.value:.5f}")
    return corrections
