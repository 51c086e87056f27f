#!/usr/bin/env python3
"""
Tests for the run configuration: defaults, validation messages, overrides and hashing
"""

import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pytest

from config import (ABLATION_VARIANTS, MODULE_ABLATION, ConfigError, RunConfig, SplitConfig, build_run_config,
                    config_hash, load_run_config)


def test_defaults():
    """Default run config matches the desk-scale setup"""
    print("Testing RunConfig defaults")
    print("=" * 60)

    cfg = load_run_config(None)
    assert cfg.resolution == (128, 128)
    assert cfg.trajectory.frame_count == 24
    assert len(cfg.scene.planes) == 6 and len(cfg.scene.boxes) == 2
    assert cfg.densify.total_iters == 3000 and cfg.densify.densify_until == 1500
    assert cfg.weights.lambda_l1 == 0.8 and cfg.weights.lambda_dssim == 0.2
    assert cfg.weights.normal_weights() == {"cos": 0.05, "flat": 0.05, "smooth": 0.05}
    assert cfg.scaffold.voxel_size == 0.02
    assert cfg.lr.tone == 1e-3
    assert (cfg.lr.position_init, cfg.lr.sh, cfg.lr.opacity, cfg.lr.scaling, cfg.lr.rotation) == \
        (1.6e-4, 2.5e-3, 0.05, 5e-3, 1e-3)
    assert cfg.lr.pose_rotation == cfg.lr.pose_translation == 1e-4
    print("✅ Defaults: PASS")


def test_validation_messages(tmp_path):
    """Errors name the offending field as a dotted path"""
    print("Testing validation error messages")
    print("=" * 60)

    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"trajectory": {"yaw_range": -1.0}}), encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    assert "trajectory.yaw_range" in str(info.value)
    print("✅ Negative yaw_range rejected with a dotted path")

    with pytest.raises(ConfigError) as info:
        build_run_config({"scaffold": {"voxel_size": 0.04, "unknown_knob": 1}})
    assert "scaffold.unknown_knob" in str(info.value)
    print("✅ Unknown nested key rejected")

    with pytest.raises(ConfigError):
        build_run_config({"densify": {"densify_until": 5000, "total_iters": 3000}})
    with pytest.raises(ConfigError):
        build_run_config({"scene": {"planes": [], "boxes": []}})
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")

    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(path)
    print("✅ Schedule, room shell, missing file and malformed JSON rejected")


def test_overrides_and_hash():
    print("Testing overrides and config hash")
    print("=" * 60)

    cfg = RunConfig()
    same = RunConfig()
    assert config_hash(cfg) == config_hash(same)

    seeded = cfg.with_overrides(seed=7, output_dir=None)
    assert seeded.seed == 7 and seeded.output_dir == cfg.output_dir
    assert config_hash(seeded) != config_hash(cfg)

    ablated = cfg.with_overrides(ablation=ABLATION_VARIANTS["no_pose"])
    assert ablated.ablation.pose is False and ablated.ablation.color is True
    print("✅ Overrides and hashing: PASS")


def test_split_and_variants():
    print("Testing split policy and ablation table")
    print("=" * 60)

    train, test = SplitConfig().split(24)
    assert test == [4, 12, 20]
    assert sorted(train + test) == list(range(24))
    assert train[0] == 0

    assert MODULE_ABLATION == ["full", "no_pose", "no_color", "no_stable"]
    baseline = ABLATION_VARIANTS["baseline"]
    assert not (baseline.pose or baseline.color or baseline.stable or baseline.geometry or baseline.flatten)
    assert ABLATION_VARIANTS["global_only"].local_alignment is False
    assert math.isclose(RunConfig().noise.rotation_drift_std, math.radians(0.05))
    print("✅ Split and variants: PASS")
