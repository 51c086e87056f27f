#!/usr/bin/env python3
"""
Tests for the synthetic capture generator: trajectory, ray caster, corruption and bundle I/O
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from config import NoiseSpec, RunConfig, SceneSpec, TrajectorySpec
from models import Intrinsics
from scene_forge import (corrupt_bundle, generate_bundle, load_bundle, nearest_surface, render_ground_truth,
                         sample_trajectory, save_bundle, scene_surfaces)
from splat_render import CUBE_FACES, face_rotation
from utils import camera_center, camera_to_world, make_pose, pixel_rays


def small_config(**noise) -> RunConfig:
    return RunConfig(resolution=(24, 16), trajectory=TrajectorySpec(pitch_rows=[0.0], frames_per_row=4),
                     noise=NoiseSpec(**noise) if noise else NoiseSpec())


def test_trajectory():
    """Poses lie on the capture sphere and look outward"""
    print("Testing sample_trajectory")
    print("=" * 60)

    spec = TrajectorySpec()
    poses = sample_trajectory(spec)
    assert len(poses) == 24

    center = np.asarray(spec.center)
    for pose in poses:
        rot = pose[:3, :3]
        assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(rot), 1.0)
        position = camera_center(pose)
        assert np.isclose(np.linalg.norm(position - center), spec.arm_radius)
        forward = rot[2]
        assert np.allclose(forward, (position - center) / spec.arm_radius, atol=1e-12)
        assert rot[1] @ np.array([0.0, 0.0, 1.0]) < 0
    print("✅ 24 outward-facing poses on the 0.2 m sphere")

    poses = sample_trajectory(TrajectorySpec(arm_radius=0.0, pitch_rows=[0.0], frames_per_row=2))
    assert all(np.allclose(camera_center(p), [0.0, 0.0, 1.2]) for p in poses)
    print("✅ Zero arm radius gives a pure rotation")


def test_ray_caster_is_exact():
    """Back-projected depth lands on the analytic surfaces with camera-facing normals"""
    print("Testing render_ground_truth")
    print("=" * 60)

    scene = SceneSpec()
    intr = Intrinsics.from_fov(32, 24, 75.0)
    pose = sample_trajectory(TrajectorySpec(pitch_rows=[-0.4], frames_per_row=3))[1]
    frame = render_ground_truth(scene, pose, intr, index=1)

    assert frame.valid_mask.all(), "the closed room must cover every pixel"
    points = camera_to_world(pixel_rays(intr).reshape(-1, 3) * frame.depth.reshape(-1, 1), pose)
    dist, _, ids = nearest_surface(points, scene)
    assert dist.max() < 1e-9
    assert set(np.unique(frame.surface_ids)) <= set(range(len(scene_surfaces(scene))))
    print(f"✅ Max distance to surfaces {dist.max():.2e} m")

    rays = pixel_rays(intr)
    assert np.all(np.sum(frame.normal * rays, axis=-1) < 0)
    assert np.allclose(np.linalg.norm(frame.normal, axis=-1), 1.0)
    assert frame.image.min() >= 0.0 and frame.image.max() <= 1.0
    print("✅ Normals unit length and facing the camera")


def test_every_plane_is_cast():
    """Six cube views from the room center see every wall with its own texture"""
    print("Testing plane surfaces in the ray caster")
    print("=" * 60)

    scene = SceneSpec()
    bare = SceneSpec(boxes=[])
    intr = Intrinsics.from_fov(32, 32, 90.0)
    seen = set()
    for forward, down in CUBE_FACES:
        rot = face_rotation(forward, down)
        pose = make_pose(rot, -rot @ np.array([0.0, 0.0, 1.2]))
        frame = render_ground_truth(scene, pose, intr)
        walls_only = render_ground_truth(bare, pose, intr)
        seen |= set(np.unique(frame.surface_ids).tolist())
        walls = frame.surface_ids < len(scene.planes)
        assert np.array_equal(frame.surface_ids[walls], walls_only.surface_ids[walls])
        assert np.allclose(frame.image[walls], walls_only.image[walls])

    assert set(range(len(scene.planes))) <= seen
    assert any(i >= len(scene.planes) for i in seen)
    print(f"✅ All {len(scene.planes)} planes and the boxes are hit")


def test_corruption_contract():
    print("Testing corrupt_bundle")
    print("=" * 60)

    cfg = small_config()
    first = generate_bundle(cfg)
    second = generate_bundle(cfg)
    for a, b in zip(first.frames, second.frames):
        assert np.array_equal(a.image, b.image) and np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.pose, b.pose)
    print("✅ Same seed, same bundle")

    ref, truth = first.frames[0], first.ground_truth[0]
    assert np.array_equal(ref.depth, truth.depth) and np.array_equal(ref.pose, truth.pose)
    print("✅ Reference frame keeps clean depth and pose")

    record = first.corruption
    for t in range(1, len(first.frames)):
        frame, truth = first.frames[t], first.ground_truth[t]
        valid = frame.depth > 0
        recovered = record.depth_scales[t] * frame.depth[valid] + record.depth_shifts[t]
        assert np.allclose(recovered, truth.depth[valid], atol=1e-9)
        expected = np.clip(truth.image * np.asarray(record.gains[t]) + np.asarray(record.biases[t]), 0.0, 1.0)
        assert np.allclose(frame.image, expected)
    print("✅ Planted depth affine and exposure are recorded exactly")

    clean = corrupt_bundle(first.ground_truth, NoiseSpec.identity(), seed=3)
    for frame, truth in zip(clean.frames, clean.ground_truth):
        assert np.array_equal(frame.image, truth.image) and np.array_equal(frame.depth, truth.depth)
    print("✅ Identity noise leaves frames untouched")

    with pytest.raises(ValueError):
        corrupt_bundle([], NoiseSpec(), seed=0)


def test_plane_jitter_recorded():
    cfg = small_config(plane_scale_jitter=0.05, plane_shift_jitter=0.02)
    bundle = generate_bundle(cfg)
    jitter = bundle.corruption.plane_jitter
    assert "0" not in jitter and "1" in jitter
    frame, truth = bundle.frames[1], bundle.ground_truth[1]
    for sid, (scale, shift) in jitter["1"].items():
        member = (truth.surface_ids == int(sid)) & (frame.depth > 0)
        assert np.allclose(scale * frame.depth[member] + shift, truth.depth[member], atol=1e-9)
    print("✅ Per-surface jitter recorded for non-reference frames")


def test_bundle_round_trip(tmp_path):
    print("Testing save_bundle / load_bundle")
    print("=" * 60)

    bundle = generate_bundle(small_config())
    save_bundle(bundle, tmp_path / "bundle")
    for sub in ("frames/0000.png", "depth/0003.pfm", "normal/0001.pfm", "ids/0002.png", "poses.json", "bundle.json"):
        assert (tmp_path / "bundle" / sub).exists(), sub

    loaded = load_bundle(tmp_path / "bundle")
    assert len(loaded.frames) == 4
    for a, b in zip(bundle.frames, loaded.frames):
        assert np.abs(a.image - b.image).max() <= 0.5 / 255.0 + 1e-12
        assert np.allclose(a.depth, b.depth, rtol=1e-6)
        assert np.array_equal(a.pose, b.pose)
        assert np.array_equal(a.surface_ids, b.surface_ids)
    assert loaded.corruption == bundle.corruption
    assert loaded.scene.planes == bundle.scene.planes
    print("✅ Round trip within PNG quantization and float32 depth")
