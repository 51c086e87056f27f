#!/usr/bin/env python3
"""
Tests for the tile rasterizer: per-pixel reference, gradients and the backward contract
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
import torch

from config import RasterSettings
from gaussian_cloud import GaussianCloud, covariance_from_qs
from models import Intrinsics, RenderContractError, RenderError
from splat_render import SH_C0, backward, project_gaussian, render, render_panorama
from utils import make_pose

INTR = Intrinsics(fx=18.0, fy=18.0, cx=10.0, cy=7.0, width=20, height=14)
POSE = make_pose(np.eye(3), np.zeros(3))


def small_cloud(seed: int = 0, behind: bool = True) -> GaussianCloud:
    """A handful of Gaussians in front of an identity camera, plus one behind it"""
    rng = np.random.default_rng(seed)
    n = 6
    means = np.column_stack([rng.uniform(-0.4, 0.4, n), rng.uniform(-0.3, 0.3, n), rng.uniform(1.0, 3.0, n)])
    if behind:
        means = np.vstack([means, [0.0, 0.0, -1.0]])
        n += 1
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    log_scales = np.log(rng.uniform(0.05, 0.2, (n, 3)))
    opacity = rng.uniform(0.3, 0.8, n)
    opacity_logits = np.log(opacity / (1.0 - opacity))
    sh_dc = rng.normal(scale=0.5, size=(n, 1, 3))
    return GaussianCloud(means, quats, log_scales, opacity_logits, sh_dc, np.zeros((n, 0, 3)))


def naive_render(cloud: GaussianCloud, settings: RasterSettings):
    """Per-pixel front-to-back blend with the same support and transmittance rules"""
    with torch.no_grad():
        means = cloud.means.numpy()
        covs = covariance_from_qs(cloud.quats.numpy(), cloud.log_scales.numpy())
        opacity = torch.sigmoid(cloud.opacity_logits).numpy()
        colors = np.maximum(SH_C0 * cloud.sh_dc.numpy()[:, 0] + 0.5, 0.0)

    entries = []
    for i in range(cloud.count):
        mean2d, cov2d, z, culled = project_gaussian(means[i], covs[i], POSE, INTR, settings)
        if culled:
            continue
        mid = 0.5 * (cov2d[0, 0] + cov2d[1, 1])
        det = np.linalg.det(cov2d)
        extent = mid + np.sqrt(max(mid * mid - det, 0.1))
        entries.append((z, i, mean2d, np.linalg.inv(cov2d), settings.support_sigma * np.sqrt(extent)))
    entries.sort(key=lambda e: (e[0], e[1]))

    bg = np.asarray(settings.background)
    color = np.zeros((INTR.height, INTR.width, 3))
    depth = np.zeros((INTR.height, INTR.width))
    alpha_map = np.zeros((INTR.height, INTR.width))
    for row in range(INTR.height):
        for col in range(INTR.width):
            t, acc, c, d = 1.0, 0.0, np.zeros(3), 0.0
            for z, i, mean2d, conic, reach in entries:
                delta = np.array([col - mean2d[0], row - mean2d[1]])
                if abs(delta[0]) > reach or abs(delta[1]) > reach:
                    continue
                if t < settings.transmittance_min:
                    break
                a = min(opacity[i] * np.exp(-0.5 * delta @ conic @ delta), settings.alpha_max)
                w = a * t
                c += w * colors[i]
                d += w * z
                acc += w
                t *= 1.0 - a
            color[row, col] = c + (1.0 - acc) * bg
            depth[row, col] = d
            alpha_map[row, col] = acc
    return color, depth, alpha_map


def test_matches_naive_reference():
    """Tiled rasterization equals a per-pixel loop"""
    print("Testing render against a per-pixel reference")
    print("=" * 60)

    settings = RasterSettings(tile_size=8, background=(0.1, 0.2, 0.3))
    cloud = small_cloud()
    with torch.no_grad():
        out = render(cloud, POSE, INTR, settings=settings)
    color, depth, alpha = naive_render(cloud, settings)
    assert np.abs(out.color.numpy() - color).max() < 1e-12
    assert np.abs(out.depth.numpy() - depth).max() < 1e-12
    assert np.abs(out.alpha.numpy() - alpha).max() < 1e-12
    print("✅ Color, depth and alpha match to 1e-12")

    assert not bool(out.visible[-1]) and float(out.radii[-1]) == 0.0
    assert bool(out.visible[:-1].any())
    print("✅ Gaussian behind the camera is culled with radius 0")

    gain = torch.tensor([1.2, 0.9, 1.0], dtype=torch.float64)
    bias = torch.tensor([0.01, -0.02, 0.0], dtype=torch.float64)
    with torch.no_grad():
        toned = render(cloud, POSE, INTR, tone=(gain, bias), settings=settings)
    assert torch.allclose(toned.color, out.color * gain + bias, atol=1e-14)
    print("✅ Tone applied after blending")


def test_gradients_match_finite_differences():
    """Analytic gradients agree with central differences"""
    print("Testing backward against finite differences")
    print("=" * 60)

    settings = RasterSettings(tile_size=8, support_sigma=10.0, transmittance_min=0.0)
    cloud = small_cloud(seed=2, behind=False)
    rng = np.random.default_rng(9)
    w_color = torch.as_tensor(rng.normal(size=(INTR.height, INTR.width, 3)))
    w_depth = torch.as_tensor(rng.normal(size=(INTR.height, INTR.width)))
    w_alpha = torch.as_tensor(rng.normal(size=(INTR.height, INTR.width)))

    d_quat = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64, requires_grad=True)
    d_trans = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    gain = torch.tensor([1.1, 0.95, 1.0], dtype=torch.float64, requires_grad=True)
    bias = torch.tensor([0.02, 0.0, -0.01], dtype=torch.float64, requires_grad=True)

    out = render(cloud, POSE, INTR, tone=(gain, bias), residual=(d_quat, d_trans), settings=settings)
    grads = backward(out, grad_color=w_color, grad_depth=w_depth, grad_alpha=w_alpha)

    def objective():
        with torch.no_grad():
            o = render(cloud, POSE, INTR, tone=(gain, bias), residual=(d_quat, d_trans), settings=settings)
            return float((o.color * w_color).sum() + (o.depth * w_depth).sum() + (o.alpha * w_alpha).sum())

    def central(tensor, index):
        with torch.no_grad():
            original = tensor[index].item()
            h = 1e-4 * max(1.0, abs(original))
            tensor[index] = original + h
            up = objective()
            tensor[index] = original - h
            down = objective()
            tensor[index] = original
        return (up - down) / (2 * h)

    checks = [
        ("means", cloud.means, grads.means, [(0, 0), (1, 2), (3, 1)]),
        ("log_scales", cloud.log_scales, grads.log_scales, [(0, 1), (2, 0)]),
        ("opacity_logits", cloud.opacity_logits, grads.opacity_logits, [(1,), (4,)]),
        ("sh_dc", cloud.sh_dc, grads.sh[:, :1], [(2, 0, 0), (5, 0, 2)]),
        ("quats", cloud.quats, grads.quats, [(0, 1), (3, 3)]),
        ("residual_translation", d_trans, grads.residual_translation, [(0,), (2,)]),
        ("residual_rotation", d_quat, grads.residual_rotation, [(1,), (3,)]),
        ("tone_gain", gain, grads.tone_gain, [(0,), (2,)]),
        ("tone_bias", bias, grads.tone_bias, [(1,)]),
    ]
    for name, tensor, analytic, indices in checks:
        for index in indices:
            numeric = central(tensor, index)
            got = float(analytic[index])
            assert abs(got - numeric) <= 1e-4 * max(1.0, abs(numeric)), (name, index, got, numeric)
        print(f"✅ {name}: analytic matches numeric")

    assert grads.abs_viewspace.shape == (cloud.count,)
    assert torch.all(grads.abs_viewspace >= 0) and float(grads.abs_viewspace.max()) > 0
    print("✅ View-space gradient magnitudes accumulated")


def test_backward_contract():
    print("Testing backward contract and error paths")
    print("=" * 60)

    cloud = small_cloud(seed=4)
    out = render(cloud, POSE, INTR)
    grad = torch.ones_like(out.color)
    first = backward(out, grad_color=grad)
    assert float(first.abs_viewspace[-1]) == 0.0, "culled Gaussians receive no view-space gradient"
    with pytest.raises(RenderContractError):
        backward(out, grad_color=grad)
    print("✅ Second backward on one forward raises")

    with torch.no_grad():
        frozen = render(cloud, POSE, INTR)
    with pytest.raises(RenderContractError):
        backward(frozen, grad_color=grad)
    print("✅ Backward without a forward cache raises")

    with torch.no_grad():
        cloud.means[2, 1] = float("nan")
    with pytest.raises(RenderError) as info:
        render(cloud, POSE, INTR)
    assert info.value.gaussian_index == 2
    print("✅ Non-finite parameters raise RenderError with the Gaussian index")

    with pytest.raises(ValueError):
        render(small_cloud(), POSE, INTR, resolution=(10, 10))


def test_empty_cloud_and_panorama():
    settings = RasterSettings(background=(0.25, 0.5, 0.75))
    empty = GaussianCloud.empty()
    out = render(empty, POSE, INTR, settings=settings)
    assert out.color.shape == (INTR.height, INTR.width, 3)
    assert torch.allclose(out.color, torch.tensor([0.25, 0.5, 0.75], dtype=torch.float64).expand_as(out.color))
    assert float(out.alpha.abs().max()) == 0.0 and out.radii.shape == (0,)
    print("✅ Empty cloud renders the background")

    pano = render_panorama(empty, [0.0, 0.0, 0.0], face_resolution=4, settings=settings)
    assert pano.shape == (8, 16, 3)
    assert np.allclose(pano, [0.25, 0.5, 0.75])
    pano = render_panorama(small_cloud(), POSE.reshape(-1), face_resolution=6)
    assert pano.shape == (12, 24, 3) and pano.min() >= 0.0 and pano.max() <= 1.0
    print("✅ Panorama is 2F x 4F x 3")

    with pytest.raises(ValueError):
        render_panorama(empty, [0.0, 0.0, 0.0], face_resolution=1)


def single_gaussian(mean, scale: float, opacity: float, color: float, n_rest: int = 0) -> GaussianCloud:
    dc = np.full((1, 1, 3), (color - 0.5) / SH_C0)
    return GaussianCloud(np.asarray(mean, dtype=np.float64).reshape(1, 3), [[1.0, 0.0, 0.0, 0.0]],
                         np.full((1, 3), np.log(scale)), [np.log(opacity / (1.0 - opacity))], dc,
                         np.zeros((1, n_rest, 3)))


def test_panorama_direction_mapping():
    """A Gaussian due +x of the center lands on the longitude-0 column"""
    print("Testing panorama longitude mapping")
    print("=" * 60)

    settings = RasterSettings(background=(0.0, 0.0, 0.0))
    cloud = single_gaussian([2.0, 0.0, 0.0], scale=0.2, opacity=0.9, color=0.8)
    pano = render_panorama(cloud, [0.0, 0.0, 0.0], face_resolution=8, settings=settings)
    height, width = pano.shape[:2]
    energy = pano.sum(axis=(0, 2))
    peak = int(np.argmax(energy))
    assert peak == width // 2, (peak, energy.round(4).tolist())
    assert energy[peak] > energy[peak - 1] and energy[peak] > energy[peak + 1]
    assert np.isclose(energy[peak - 1], energy[peak + 1], rtol=1e-6, atol=1e-9)
    print(f"✅ Energy peak at column {peak} of {width}")

    rows = pano.sum(axis=(1, 2))
    assert set(np.argsort(rows)[-2:].tolist()) == {height // 2 - 1, height // 2}
    assert energy[:width // 4].sum() < 1e-6 and energy[3 * width // 4:].sum() < 1e-6
    print("✅ Rows straddle the equator, nothing in the -x half")


def test_panorama_constant_sphere():
    """A closed shell of same-colored Gaussians renders a constant panorama, seams included"""
    print("Testing panorama seams on a constant sphere")
    print("=" * 60)

    n = 800
    k = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * k / n)
    azimuth = np.pi * (1.0 + 5.0 ** 0.5) * k
    center = np.array([0.1, -0.2, 1.2])
    means = center + 2.0 * np.column_stack([np.sin(polar) * np.cos(azimuth), np.sin(polar) * np.sin(azimuth),
                                            np.cos(polar)])
    color = 0.6
    cloud = GaussianCloud(means, np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)), np.full((n, 3), np.log(0.3)),
                          np.full(n, np.log(0.95 / 0.05)), np.full((n, 1, 3), (color - 0.5) / SH_C0))
    pano = render_panorama(cloud, center, face_resolution=16, settings=RasterSettings(background=(0.0, 0.0, 0.0)))
    assert pano.shape == (32, 64, 3)
    spread = np.abs(pano / color - 1.0).max()
    assert spread < 0.01, spread
    print(f"✅ Panorama within {spread:.3%} of the shell color")


def test_gaussian_at_camera_center():
    """A Gaussian sitting on the camera center keeps colors and gradients finite"""
    print("Testing a Gaussian at the camera center")
    print("=" * 60)

    rng = np.random.default_rng(3)
    means = np.array([[0.0, 0.0, 0.0], [0.1, -0.1, 2.0]])
    cloud = GaussianCloud(means, np.tile([1.0, 0.0, 0.0, 0.0], (2, 1)), np.log(np.full((2, 3), 0.2)),
                          np.zeros(2), rng.normal(scale=0.3, size=(2, 1, 3)), rng.normal(scale=0.3, size=(2, 3, 3)))
    d_quat = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64, requires_grad=True)
    d_trans = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    out = render(cloud, POSE, INTR, residual=(d_quat, d_trans))
    assert torch.all(torch.isfinite(out.color))
    grads = backward(out, grad_color=torch.ones_like(out.color), grad_alpha=torch.ones_like(out.alpha))
    for name in ("means", "quats", "log_scales", "opacity_logits", "sh", "residual_rotation",
                 "residual_translation"):
        assert torch.all(torch.isfinite(getattr(grads, name))), name
    assert float(grads.means[1].abs().sum()) > 0
    print("✅ Finite color and gradients")

    pano = render_panorama(cloud, [0.0, 0.0, 0.0], face_resolution=4)
    assert np.all(np.isfinite(pano))
    print("✅ Panorama from inside a Gaussian is finite")
