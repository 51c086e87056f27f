#!/usr/bin/env python3
"""
Tests for plane scaffold assembly: projection, affine depth fits, segmentation and merging
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from config import NoiseSpec, RunConfig, ScaffoldConfig, SceneSpec, TrajectorySpec, default_room
from models import AffineDepthParams, AlignmentError, Intrinsics, PlaneScaffold
from plane_scaffold import (apply_affine, assemble, assemble_with_params, back_project, downsample_scaffold,
                            fit_global_affine, fit_plane_affine, load_scaffold_ply, project_points,
                            save_scaffold_ply, segment_planes)
from scene_forge import corrupt_bundle, nearest_surface, render_ground_truth, sample_trajectory
from utils import make_pose


def corner_frame(width: int = 48, height: int = 36):
    """A camera looking into the corner between two walls (plus floor and ceiling)"""
    scene = SceneSpec(planes=default_room(), boxes=[])
    pose = sample_trajectory(TrajectorySpec(pitch_rows=[0.0], frames_per_row=8))[1]
    intr = Intrinsics.from_fov(width, height, 75.0)
    return scene, render_ground_truth(scene, pose, intr, index=0)


def test_project_points():
    print("Testing project_points")
    print("=" * 60)

    intr = Intrinsics(fx=10.0, fy=10.0, cx=4.0, cy=3.0, width=8, height=6)
    pose = make_pose(np.eye(3), np.zeros(3))
    points = np.array([[0.2, 0.2, 2.0], [0.1, 0.1, 1.0], [0.0, 0.0, -1.0]])
    depth, hit = project_points(points, pose, intr)
    assert hit.sum() == 1
    assert hit[4, 5] and depth[4, 5] == 1.0
    print("✅ Nearest point wins the z-buffer, points behind are dropped")

    scene, frame = corner_frame()
    points = back_project(frame.depth, frame.valid_mask, frame.pose, frame.intrinsics)
    normals = np.asarray(frame.normal[frame.valid_mask]) @ frame.pose[:3, :3]
    depth, hit = project_points(points, frame.pose, frame.intrinsics, normals)
    assert hit.all()
    assert np.abs(depth - frame.depth).max() < 1e-9
    print("✅ Back-project then project reproduces the depth map")

    with pytest.raises(ValueError):
        back_project(np.zeros((2, 2)), np.ones((2, 2), dtype=bool), pose,
                     Intrinsics(fx=1.0, fy=1.0, cx=1.0, cy=1.0, width=2, height=2))


def test_global_affine_recovery():
    """A planted inverse affine is recovered by the per-view fit"""
    print("Testing fit_global_affine")
    print("=" * 60)

    _, frame = corner_frame()
    alpha, beta = 1.17, -0.08
    corrupted = (frame.depth - beta) / alpha
    mask = frame.valid_mask
    fit = fit_global_affine(corrupted, frame.depth, mask)
    assert abs(fit[0] - alpha) < 1e-3 and abs(fit[1] - beta) < 1e-3
    print(f"✅ Recovered alpha={fit[0]:.6f}, beta={fit[1]:.6f}")

    tiny = np.zeros_like(mask)
    tiny[:2, :2] = True
    with pytest.raises(AlignmentError) as info:
        fit_global_affine(corrupted, frame.depth, tiny, frame_index=5)
    assert info.value.frame_index == 5
    print("✅ Too little overlap raises AlignmentError")


def test_plane_affine_recovery():
    print("Testing fit_plane_affine")
    print("=" * 60)

    _, frame = corner_frame()
    seg = segment_planes(frame.depth, frame.normal, frame.intrinsics)
    assert seg.plane_count >= 2

    planted = {0: (1.1, 0.05), 1: (0.9, -0.04)}
    corrupted = frame.depth.copy()
    for plane_id, (gamma, delta) in planted.items():
        member = seg.mask(plane_id)
        corrupted[member] = (frame.depth[member] - delta) / gamma

    params = fit_plane_affine(corrupted, seg, (1.0, 0.0), frame.depth, frame.valid_mask, ScaffoldConfig())
    for plane_id, (gamma, delta) in planted.items():
        got = params.for_plane(plane_id)
        assert abs(got[0] - gamma) < 1e-3 and abs(got[1] - delta) < 1e-3, (plane_id, got)
    adjusted = apply_affine(corrupted, seg, params)
    member = seg.labels >= 0
    assert np.abs(adjusted[member] - frame.depth[member]).max() < 5e-3
    print("✅ Per-plane (gamma, delta) recovered")

    params = AffineDepthParams(alpha=2.0, beta=0.5)
    assert np.array_equal(apply_affine(np.array([[0.0, 1.0]]), None, params), np.array([[0.0, 2.5]]))
    print("✅ Invalid pixels stay 0 under apply_affine")


def test_segmentation_agreement():
    """Mean-shift labels agree with ground-truth surface ids on the corner view"""
    print("Testing segment_planes")
    print("=" * 60)

    _, frame = corner_frame(64, 48)
    seg = segment_planes(frame.depth, frame.normal, frame.intrinsics)
    truth = frame.surface_ids
    agree = 0
    for plane_id in range(seg.plane_count):
        member = seg.mask(plane_id)
        agree += np.bincount(truth[member]).max()
    ratio = agree / frame.valid_mask.sum()
    assert ratio >= 0.95, ratio
    assert np.all(np.diff(seg.pixel_counts) <= 0), "planes are ordered by size"
    print(f"✅ Label agreement {ratio:.3f} over {seg.plane_count} planes")


def test_assemble_exact_on_clean_frames():
    """Noise-free frames fuse onto the analytic surfaces"""
    print("Testing assemble")
    print("=" * 60)

    cfg = RunConfig(resolution=(40, 40), trajectory=TrajectorySpec(pitch_rows=[0.0], frames_per_row=10),
                    scene=SceneSpec(planes=default_room(), boxes=[]))
    intr = Intrinsics.from_fov(40, 40, cfg.fov_deg)
    poses = sample_trajectory(cfg.trajectory)[:4]
    truth = [render_ground_truth(cfg.scene, p, intr, index=i) for i, p in enumerate(poses)]
    bundle = corrupt_bundle(truth, NoiseSpec(rotation_drift_std=0.0, translation_drift_std=0.0,
                                             gain_range=(1.0, 1.0), bias_range=(0.0, 0.0),
                                             normal_noise_std=0.0), seed=1)

    scaffold, params = assemble_with_params(bundle.frames, cfg.scaffold)
    assert len(params) == 4 and params[0].alpha == 1.0
    for t in range(1, 4):
        alpha, beta = params[t].alpha, params[t].beta
        assert abs(alpha - bundle.corruption.depth_scales[t]) < 1e-3
        assert abs(beta - bundle.corruption.depth_shifts[t]) < 1e-3
    dist, _, _ = nearest_surface(scaffold.points, cfg.scene)
    rms = float(np.sqrt(np.mean(dist ** 2)))
    assert rms < 1e-3, rms
    assert set(np.unique(scaffold.frame_ids)) <= {0, 1, 2, 3}
    assert np.allclose(np.linalg.norm(scaffold.normals, axis=1), 1.0)
    print(f"✅ {len(scaffold)} points, RMS distance {rms:.2e} m")

    plain = assemble(bundle.frames[:1], cfg.scaffold)
    assert len(plain) == bundle.frames[0].valid_mask.sum()
    print("✅ The first frame seeds the scaffold with every valid pixel")

    with pytest.raises(ValueError):
        assemble([], cfg.scaffold)


def test_downsample_and_ply(tmp_path):
    print("Testing downsample_scaffold and scaffold PLY")
    print("=" * 60)

    points = np.array([[0.01, 0.01, 0.01], [0.02, 0.02, 0.02], [0.5, 0.5, 0.5], [0.03, 0.01, 0.02]])
    normals = np.tile([0.0, 0.0, 1.0], (4, 1))
    scaffold = PlaneScaffold(points=points, normals=normals, frame_ids=[0, 1, 2, 3], plane_ids=[0, 0, 1, 65535])
    down = downsample_scaffold(scaffold, 0.1)
    assert len(down) == 2
    assert 2 in down.frame_ids.tolist()
    with pytest.raises(ValueError):
        downsample_scaffold(scaffold, 0.0)
    print("✅ One representative per voxel")

    path = tmp_path / "scaffold.ply"
    save_scaffold_ply(scaffold, path)
    loaded = load_scaffold_ply(path)
    assert np.allclose(loaded.points, points, atol=1e-6)
    assert loaded.plane_ids.tolist() == [0, 0, 1, 65535]
    assert loaded.frame_ids.tolist() == [0, 1, 2, 3]
    print("✅ PLY round trip")

    with pytest.raises(FileNotFoundError):
        load_scaffold_ply(tmp_path / "missing.ply")
