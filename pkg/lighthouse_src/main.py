"""
Main entry point for the Lighthouse desk pipeline

Stages talk to each other only through files on disk; every stage writes a
<stage>.manifest.json and checks the manifests of its inputs before reading.

    python main.py gen
    python main.py assemble runs/bundle
    python main.py train runs/bundle runs/scaffold.ply
    python main.py eval runs/train
    python main.py render runs/train pano
    python main.py ablate runs/bundle --with-baseline --init-ablation
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from pydantic import ValidationError

from config import (ABLATION_VARIANTS, INIT_ABLATION, LOG_FILE, LOG_LEVEL, MODULE_ABLATION, THREADS, ConfigError,
                    RunConfig, config_hash, format_validation_error, load_run_config)
from gaussian_cloud import GaussianCloud
from io_utils import (MANIFEST_SUFFIX, hash_tree, manifest_digest, read_json, sha256_file, verify_manifest,
                      write_json, write_manifest, write_png)
from metrics_eval import evaluate, format_table, normal_accuracy, ordering_table, write_eval_report
from models import ArtifactError, CaptureBundle, EvalReport, LighthouseError, PlaneScaffold
from optimizer import CorrectionState, refine_test_views, train
from plane_scaffold import assemble_with_params, downsample_scaffold, load_scaffold_ply, save_scaffold_ply
from scene_forge import generate_bundle, load_bundle, save_bundle
from splat_render import render, render_panorama
from utils import configure_threads

# Configure logging
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(LOG_FILE, encoding='utf-8'),
        logging.StreamHandler()
    ]
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3

GEN_MANIFEST = f"gen{MANIFEST_SUFFIX}"
ASSEMBLE_SUFFIX = f".assemble{MANIFEST_SUFFIX}"
TRAIN_MANIFEST = f"train{MANIFEST_SUFFIX}"
EVAL_MANIFEST = f"eval{MANIFEST_SUFFIX}"
ABLATE_MANIFEST = f"ablate{MANIFEST_SUFFIX}"

# Files the train stage owns inside a run directory; eval and render add their own next to them
TRAIN_ARTIFACTS = ["cloud.ply", "corrections.json", "test_corrections.json", "train_report.json", "train_log.jsonl",
                   "config.json"]


# --- Artifact helpers ---

def _assemble_manifest(scaffold_path: Path) -> Path:
    return scaffold_path.with_name(scaffold_path.stem + ASSEMBLE_SUFFIX)


def load_verified_bundle(bundle_dir: Path) -> CaptureBundle:
    verify_manifest(bundle_dir / GEN_MANIFEST)
    try:
        return load_bundle(bundle_dir)
    except (OSError, KeyError) as e:
        raise ArtifactError(f"Bundle {bundle_dir} cannot be read: {e}") from e


def load_verified_scaffold(scaffold_path: Path) -> PlaneScaffold:
    verify_manifest(_assemble_manifest(scaffold_path), scaffold_path.parent)
    return load_scaffold_ply(scaffold_path)


def resolve_config(config_path: Optional[str], seed: Optional[int], fallback_dir: Optional[Path] = None) -> RunConfig:
    """--config wins; otherwise the config stored next to upstream artifacts; otherwise defaults"""
    if config_path:
        cfg = load_run_config(config_path)
    elif fallback_dir is not None and (fallback_dir / "config.json").exists():
        cfg = load_run_config(fallback_dir / "config.json")
    else:
        cfg = RunConfig()
    return cfg.with_overrides(seed=seed)


def _outputs(base: Path, paths: Sequence[Path]) -> Dict[str, str]:
    return {p.relative_to(base).as_posix(): sha256_file(p) for p in paths}


def checkpoint_files(checkpoint_dir: Optional[Path], cfg: RunConfig) -> List[Path]:
    """Checkpoint files this run wrote; stale ones from other schedules are left out"""
    interval = cfg.train.checkpoint_interval
    if checkpoint_dir is None or not interval:
        return []
    files = []
    for iteration in range(interval, cfg.densify.total_iters + 1, interval):
        files += [checkpoint_dir / f"cloud_{iteration:05d}.ply", checkpoint_dir / f"corrections_{iteration:05d}.json"]
    return files


# --- Stages ---

def run_gen(cfg: RunConfig, out_dir: Path) -> Path:
    """Synthesize and corrupt the capture bundle"""
    bundle = generate_bundle(cfg)
    save_bundle(bundle, out_dir)
    write_json(out_dir / "config.json", cfg.model_dump(mode="json"))
    write_manifest(out_dir / GEN_MANIFEST, "gen", config_hash(cfg), inputs={}, outputs=hash_tree(out_dir),
                   extra={"frames": len(bundle.frames), "seed": cfg.seed})
    return out_dir


def build_scaffold(bundle: CaptureBundle, cfg: RunConfig) -> PlaneScaffold:
    train_ids, _ = cfg.split.split(len(bundle.frames))
    frames = [bundle.frames[i] for i in train_ids]
    scaffold, _ = assemble_with_params(frames, cfg.scaffold, local_alignment=cfg.ablation.local_alignment)
    dense = len(scaffold)
    scaffold = downsample_scaffold(scaffold, cfg.scaffold.voxel_size)
    logger.info(f"Scaffold: {dense} points -> {len(scaffold)} after {cfg.scaffold.voxel_size} m voxel grid")
    return scaffold


def run_assemble(bundle_dir: Path, out_ply: Path, cfg: RunConfig) -> Path:
    bundle = load_verified_bundle(bundle_dir)
    scaffold = build_scaffold(bundle, cfg)
    out_ply.parent.mkdir(parents=True, exist_ok=True)
    save_scaffold_ply(scaffold, out_ply)
    write_manifest(_assemble_manifest(out_ply), "assemble", config_hash(cfg),
                   inputs={"bundle": manifest_digest(bundle_dir / GEN_MANIFEST)},
                   outputs=_outputs(out_ply.parent, [out_ply]),
                   extra={"bundle_dir": str(bundle_dir.resolve()), "points": len(scaffold),
                          "local_alignment": cfg.ablation.local_alignment})
    return out_ply


def run_train(bundle_dir: Path, scaffold_path: Path, out_dir: Path, cfg: RunConfig, ablation: str = "full") -> Path:
    """Train, refine the held-out views and write the run directory"""
    bundle = load_verified_bundle(bundle_dir)
    scaffold = load_verified_scaffold(scaffold_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)

    checkpoint_dir = out_dir / "checkpoints" if cfg.train.checkpoint_interval else None
    cloud, corrections, report = train(bundle, scaffold, cfg, ablation=ablation,
                                       log_path=out_dir / "train_log.jsonl", checkpoint_dir=checkpoint_dir)
    _, test_ids = cfg.split.split(len(bundle.frames))
    test_frames = [bundle.frames[i] for i in test_ids]
    test_corrections = refine_test_views(cloud, test_frames, cfg.train.refine_iters, cfg, report.scene_extent)

    cloud.save_ply(out_dir / "cloud.ply")
    write_json(out_dir / "corrections.json", corrections.to_json())
    write_json(out_dir / "test_corrections.json", test_corrections.to_json())
    write_json(out_dir / "train_report.json", report.model_dump(mode="json"))
    write_json(out_dir / "config.json", cfg.model_dump(mode="json"))

    produced = [out_dir / name for name in TRAIN_ARTIFACTS] + checkpoint_files(checkpoint_dir, cfg)
    write_manifest(out_dir / TRAIN_MANIFEST, "train", config_hash(cfg),
                   inputs={"bundle": manifest_digest(bundle_dir / GEN_MANIFEST),
                           "scaffold": sha256_file(scaffold_path)},
                   outputs=_outputs(out_dir, produced),
                   extra={"bundle_dir": str(bundle_dir.resolve()), "scaffold": str(scaffold_path.resolve()),
                          "ablation": ablation, "gaussians": cloud.count})
    return out_dir


class RunArtifacts:
    """Verified contents of a train directory"""

    def __init__(self, run_dir: Path):
        manifest = verify_manifest(run_dir / TRAIN_MANIFEST)
        extra = manifest.get("extra", {})
        self.run_dir = run_dir
        self.ablation = extra.get("ablation", "full")
        self.bundle = load_verified_bundle(Path(extra["bundle_dir"]))
        self.config = load_run_config(run_dir / "config.json")
        self.cloud = GaussianCloud.load_ply(run_dir / "cloud.ply")
        self.corrections = CorrectionState.from_json(read_json(run_dir / "corrections.json"))
        self.test_corrections = CorrectionState.from_json(read_json(run_dir / "test_corrections.json"))
        self.train_digest = manifest_digest(run_dir / TRAIN_MANIFEST)

    def corrections_for(self, index: int) -> CorrectionState:
        return self.test_corrections if index in self.test_corrections.frame_ids else self.corrections


def score_run(run: RunArtifacts) -> EvalReport:
    _, test_ids = run.config.split.split(len(run.bundle.frames))
    test_frames = [run.bundle.frames[i] for i in test_ids]
    return evaluate(run.cloud, test_frames, run.test_corrections, ablation=run.ablation, settings=run.config.raster)


def wall_accuracy(run: RunArtifacts) -> Optional[float]:
    """Normal accuracy on the room shell, None when the bundle carries no analytic scene"""
    if run.bundle.scene is None:
        return None
    return normal_accuracy(run.cloud, run.bundle.scene, surface_ids=range(len(run.bundle.scene.planes)))


def run_eval(run_dir: Path) -> EvalReport:
    run = RunArtifacts(run_dir)
    report = score_run(run)
    json_path, text_path = write_eval_report(report, run_dir)
    accuracy = wall_accuracy(run)
    write_manifest(run_dir / EVAL_MANIFEST, "eval", config_hash(run.config),
                   inputs={"train": run.train_digest}, outputs=_outputs(run_dir, [json_path, text_path]),
                   extra={"wall_normal_accuracy": accuracy})
    print(format_table([report]), end="")
    return report


def parse_center(text: Optional[str]) -> Optional[np.ndarray]:
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--center expects x,y,z, got '{text}'")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as e:
        raise ConfigError(f"--center expects three numbers: {e}") from e


def run_render(run_dir: Path, target: str, out_path: Optional[Path] = None, center: Optional[np.ndarray] = None,
               face_resolution: int = 64) -> Path:
    """Render a frame index or the panorama at the sweep center"""
    run = RunArtifacts(run_dir)
    render_dir = run_dir / "renders"
    if target == "pano":
        if center is None:
            trajectory = run.bundle.trajectory or run.config.trajectory
            center = np.asarray(trajectory.center, dtype=np.float64)
        image = render_panorama(run.cloud, center, face_resolution=face_resolution, settings=run.config.raster)
        out_path = out_path or render_dir / "panorama.png"
    else:
        try:
            frame = run.bundle.frame_by_index(int(target))
        except (ValueError, KeyError) as e:
            raise ConfigError(f"render target must be 'pano' or a frame index: {e}") from e
        corrections = run.corrections_for(frame.index)
        with torch.no_grad():
            out = render(run.cloud, frame.pose, frame.intrinsics, tone=corrections.tone(frame.index),
                         residual=corrections.residual(frame.index), settings=run.config.raster)
        image = torch.clamp(out.color, 0.0, 1.0).numpy()
        out_path = out_path or render_dir / f"{frame.index:04d}.png"

    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_png(out_path, image)
    write_manifest(out_path.with_name(out_path.stem + f".render{MANIFEST_SUFFIX}"), "render",
                   config_hash(run.config), inputs={"train": run.train_digest},
                   outputs=_outputs(out_path.parent, [out_path]), extra={"target": target})
    logger.info(f"Rendered {target} ({image.shape[1]}x{image.shape[0]}) to {out_path}")
    return out_path


def ablation_variants(with_baseline: bool = False, init_ablation: bool = False) -> List[str]:
    names = list(MODULE_ABLATION)
    if init_ablation:
        names += INIT_ABLATION
    if with_baseline:
        names.append("baseline")
    return names


def run_ablate(bundle_dir: Path, out_dir: Path, cfg: RunConfig, variants: Sequence[str]) -> Dict[str, EvalReport]:
    """Train and evaluate one run per ablation variant and write the ordering table"""
    out_dir.mkdir(parents=True, exist_ok=True)
    scaffolds: Dict[bool, Path] = {}
    reports: Dict[str, EvalReport] = {}
    accuracy: Dict[str, Optional[float]] = {}

    for name in variants:
        variant_cfg = cfg.with_overrides(ablation=ABLATION_VARIANTS[name])
        local = variant_cfg.ablation.local_alignment
        if local not in scaffolds:
            stem = "scaffold" if local else "scaffold_global_only"
            scaffolds[local] = run_assemble(bundle_dir, out_dir / f"{stem}.ply", variant_cfg)
        logger.info(f"Ablation variant '{name}': {variant_cfg.ablation.model_dump()}")
        run_dir = run_train(bundle_dir, scaffolds[local], out_dir / name, variant_cfg, ablation=name)
        reports[name] = run_eval(run_dir)
        accuracy[name] = wall_accuracy(RunArtifacts(run_dir))

    table = ordering_table(reports)
    write_json(out_dir / "ablation.json", {
        "reports": {name: report.model_dump(mode="json") for name, report in reports.items()},
        "wall_normal_accuracy": accuracy,
    })
    (out_dir / "ablation.txt").write_text(table, encoding="utf-8")
    write_manifest(out_dir / ABLATE_MANIFEST, "ablate", config_hash(cfg),
                   inputs={"bundle": manifest_digest(bundle_dir / GEN_MANIFEST)},
                   outputs=_outputs(out_dir, [out_dir / "ablation.json", out_dir / "ablation.txt"]),
                   extra={"variants": list(variants)})
    print(table, end="")
    return reports


# --- Command line ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Lighthouse desk pipeline: plane-scaffold Gaussian splatting")
    parser.add_argument("--config", help="JSON run configuration (defaults when omitted)")
    parser.add_argument("--seed", type=int, help="Override the configured seed")
    parser.add_argument("--threads", type=int, default=THREADS, help="Cap torch/faiss threads (0 = library default)")
    parser.add_argument("--out", help="Output root (defaults to the configured output_dir)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Synthesize a corrupted capture bundle")
    gen.add_argument("out_dir", nargs="?", help="Bundle directory (default <out>/bundle)")

    assemble = sub.add_parser("assemble", help="Build the plane scaffold from a bundle")
    assemble.add_argument("bundle_dir")
    assemble.add_argument("out_ply", nargs="?", help="Scaffold PLY (default <out>/scaffold.ply)")

    train_cmd = sub.add_parser("train", help="Optimize Gaussians on a bundle and scaffold")
    train_cmd.add_argument("bundle_dir")
    train_cmd.add_argument("scaffold")
    train_cmd.add_argument("out_dir", nargs="?", help="Run directory (default <out>/train)")

    eval_cmd = sub.add_parser("eval", help="Score held-out views of a trained run")
    eval_cmd.add_argument("run_dir")

    render_cmd = sub.add_parser("render", help="Render a frame index or 'pano'")
    render_cmd.add_argument("run_dir")
    render_cmd.add_argument("target", help="frame index or 'pano'")
    render_cmd.add_argument("--center", help="Panorama viewpoint x,y,z in meters")
    render_cmd.add_argument("--face-resolution", type=int, default=64)
    render_cmd.add_argument("--output", help="PNG path (default <run>/renders/...)")

    ablate = sub.add_parser("ablate", help="Module ablation table")
    ablate.add_argument("bundle_dir")
    ablate.add_argument("--with-baseline", action="store_true", help="Add the no-correction baseline")
    ablate.add_argument("--init-ablation", action="store_true", help="Add global-only and isotropic init variants")
    return parser


def dispatch(args: argparse.Namespace) -> None:
    configure_threads(args.threads or 0)

    if args.command in ("eval", "render"):
        run_dir = Path(args.run_dir)
        if args.command == "eval":
            run_eval(run_dir)
        else:
            run_render(run_dir, args.target, Path(args.output) if args.output else None,
                       parse_center(args.center), args.face_resolution)
        return

    bundle_dir = Path(args.bundle_dir) if hasattr(args, "bundle_dir") else None
    cfg = resolve_config(args.config, args.seed, bundle_dir)
    root = Path(args.out or cfg.output_dir)
    logger.info(f"Stage {args.command}: config {config_hash(cfg)[:12]}, seed {cfg.seed}, output root {root}")

    if args.command == "gen":
        run_gen(cfg, Path(args.out_dir) if args.out_dir else root / "bundle")
    elif args.command == "assemble":
        run_assemble(bundle_dir, Path(args.out_ply) if args.out_ply else root / "scaffold.ply", cfg)
    elif args.command == "train":
        run_train(bundle_dir, Path(args.scaffold), Path(args.out_dir) if args.out_dir else root / "train", cfg)
    elif args.command == "ablate":
        run_ablate(bundle_dir, root / "ablation", cfg, ablation_variants(args.with_baseline, args.init_ablation))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        dispatch(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except ValidationError as e:
        logger.error(f"Validation error: {format_validation_error(e)}")
        return EXIT_CONFIG
    except ArtifactError as e:
        logger.error(f"Artifact error: {e}")
        return EXIT_ARTIFACT
    except LighthouseError as e:
        logger.error(f"Pipeline failure: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Unexpected failure in '{args.command}': {e}", exc_info=True)
        return EXIT_FAILURE
    logger.info(f"Stage {args.command} completed")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
