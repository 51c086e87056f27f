"""
Image-quality metrics and held-out evaluation
"""

import logging
import math
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from config import RasterSettings, SceneSpec
from gaussian_cloud import GaussianCloud
from io_utils import write_json
from models import CaptureFrame, EvalReport, ViewMetrics
from scene_forge import nearest_surface
from splat_render import render

logger = logging.getLogger(__name__)

PSNR_SENTINEL = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_shapes(a, b) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size // 2)
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_torch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM of two HxWxC images (zero-padded 11x11 Gaussian window), differentiable"""
    _check_shapes(a, b)
    if a.dim() == 2:
        a, b = a[..., None], b[..., None]
    channels = a.shape[-1]
    x = a.permute(2, 0, 1)[None].to(torch.float64)
    y = b.permute(2, 0, 1)[None].to(torch.float64)
    window = gaussian_window().expand(channels, 1, SSIM_WINDOW, SSIM_WINDOW).contiguous()
    pad = SSIM_WINDOW // 2

    def blur(img):
        return F.conv2d(img, window, padding=pad, groups=channels)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    sigma_x = blur(x * x) - mu_xx
    sigma_y = blur(y * y) - mu_yy
    sigma_xy = blur(x * y) - mu_xy
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    ssim_map = ((2 * mu_xy + c1) * (2 * sigma_xy + c2)) / ((mu_xx + mu_yy + c1) * (sigma_x + sigma_y + c2))
    return ssim_map.mean()


def ssim(a, b) -> float:
    a_t = torch.as_tensor(np.asarray(a, dtype=np.float64))
    b_t = torch.as_tensor(np.asarray(b, dtype=np.float64))
    with torch.no_grad():
        return float(ssim_torch(a_t, b_t))


def psnr(a, b) -> float:
    """10 log10(1 / MSE) over all channels; identical images give the 99 dB sentinel"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return 10.0 * math.log10(1.0 / mse)


def evaluate(cloud: GaussianCloud, test_frames: Sequence[CaptureFrame], corrections=None,
             ablation: str = "full", settings: Optional[RasterSettings] = None) -> EvalReport:
    """Render each held-out view with its refined pose and tone and score it

    corrections needs residual(index) and tone(index), each returning None when
    the view has no correction (CorrectionState provides both).
    """
    start = time.perf_counter()
    views: List[ViewMetrics] = []
    with torch.no_grad():
        for frame in test_frames:
            residual = corrections.residual(frame.index) if corrections is not None else None
            tone = corrections.tone(frame.index) if corrections is not None else None
            out = render(cloud, frame.pose, frame.intrinsics, tone=tone, residual=residual, settings=settings)
            image = torch.clamp(out.color, 0.0, 1.0).numpy()
            views.append(ViewMetrics(frame_index=frame.index, psnr=psnr(image, frame.image),
                                     ssim=ssim(image, frame.image)))
            logger.debug(f"View {frame.index}: PSNR {views[-1].psnr:.3f} dB, SSIM {views[-1].ssim:.4f}")

    mean_psnr = float(np.mean([v.psnr for v in views])) if views else 0.0
    mean_ssim = float(np.mean([v.ssim for v in views])) if views else 0.0
    report = EvalReport(ablation=ablation, views=views, mean_psnr=mean_psnr, mean_ssim=mean_ssim,
                        gaussian_count=cloud.count, runtime_sec=time.perf_counter() - start)
    logger.info(f"[{ablation}] {len(views)} views: PSNR {mean_psnr:.3f} dB, SSIM {mean_ssim:.4f}")
    return report


def normal_accuracy(cloud: GaussianCloud, scene: SceneSpec, max_angle_deg: float = 10.0,
                    surface_ids: Optional[Sequence[int]] = None) -> float:
    """Fraction of Gaussians whose thin axis lies within max_angle_deg of the nearest surface normal

    surface_ids restricts the count to Gaussians nearest to those surfaces (e.g.
    the room shell planes for wall-region accuracy).
    """
    if cloud.count == 0:
        return 0.0
    axes = cloud.min_scale_axes()
    with torch.no_grad():
        means = cloud.means.numpy()
    _, normals, ids = nearest_surface(means, scene)
    keep = np.ones(len(ids), dtype=bool) if surface_ids is None else np.isin(ids, list(surface_ids))
    if not keep.any():
        return 0.0
    cos = np.abs(np.sum(axes[keep] * normals[keep], axis=1))
    angles = np.degrees(np.arccos(np.clip(cos, 0.0, 1.0)))
    return float(np.mean(angles <= max_angle_deg))


# --- Reports ---

def format_table(reports: Sequence[EvalReport]) -> str:
    """Aligned-column text table, one row per report"""
    header = ("ablation", "PSNR(dB)", "SSIM", "LPIPS", "#Gaussians", "runtime(s)")
    rows = [header] + [
        (r.ablation, f"{r.mean_psnr:.3f}", f"{r.mean_ssim:.4f}", "n/a" if r.lpips is None else f"{r.lpips:.4f}",
         str(r.gaussian_count), f"{r.runtime_sec:.1f}")
        for r in reports
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row))
             for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def format_view_table(report: EvalReport) -> str:
    rows = [("frame", "PSNR(dB)", "SSIM")] + [(str(v.frame_index), f"{v.psnr:.3f}", f"{v.ssim:.4f}")
                                              for v in report.views]
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    return "\n".join("  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row)) for row in rows) + "\n"


def write_eval_report(report: EvalReport, out_dir, stem: str = "eval") -> Tuple[Path, Path]:
    """Write <stem>.json and <stem>.txt; returns both paths"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    text_path = out_dir / f"{stem}.txt"
    write_json(json_path, report.model_dump(mode="json"))
    text_path.write_text(format_table([report]) + "\n" + format_view_table(report), encoding="utf-8")
    logger.info(f"Wrote evaluation report to {json_path}")
    return json_path, text_path


def ordering_table(reports: Dict[str, EvalReport]) -> str:
    """Ablation comparison sorted by mean PSNR, best first"""
    ranked = sorted(reports.values(), key=lambda r: -r.mean_psnr)
    return format_table(ranked)
