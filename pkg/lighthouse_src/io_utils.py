"""
File formats shared by the pipeline stages: PNG, PFM, canonical JSON and stage manifests
"""

import hashlib
import json
import logging
import platform
import re
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from PIL import Image

from config import PIPELINE_VERSION
from models import ArtifactError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MANIFEST_SUFFIX = ".manifest.json"


# --- Images ---

def write_png(path: PathLike, image: np.ndarray) -> None:
    """Write an HxWx3 float image in [0, 1] as 8-bit RGB"""
    data = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def read_png(path: PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def write_png16(path: PathLike, values: np.ndarray) -> None:
    Image.fromarray(np.asarray(values, dtype=np.uint16)).save(path, format="PNG")


def read_png16(path: PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.int64)


def write_pfm(path: PathLike, data: np.ndarray) -> None:
    """Little-endian PFM; 'Pf' for single channel, 'PF' for 3 channels"""
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"PFM supports HxW or HxWx3 arrays, got shape {data.shape}")
    height, width = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(np.flipud(data)).tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").strip()
        if header not in ("PF", "Pf"):
            raise ValueError(f"{path} is not a PFM file")
        dims = f.readline().decode("ascii").strip()
        match = re.match(r"^(\d+)\s+(\d+)$", dims)
        if not match:
            raise ValueError(f"{path} has a malformed PFM size line")
        width, height = int(match.group(1)), int(match.group(2))
        scale = float(f.readline().decode("ascii").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if header == "PF" else 1
        data = np.frombuffer(f.read(), dtype=dtype, count=width * height * channels)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float64)


# --- JSON ---

def write_json(path: PathLike, payload: Any) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


class JsonLinesWriter:
    """Append-only JSON-lines log"""

    def __init__(self, path: Optional[PathLike]):
        self.path = Path(path) if path else None
        if self.path:
            self.path.write_text("", encoding="utf-8")

    def write(self, record: Dict[str, Any]) -> None:
        if self.path is None:
            return
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")


# --- Hashing and manifests ---

def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def library_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version(), "numpy": np.__version__}
    for name in ("torch", "faiss", "pydantic", "plyfile", "PIL"):
        try:
            module = __import__(name)
            versions[name] = str(getattr(module, "__version__", "unknown"))
        except ImportError:
            versions[name] = "missing"
    return versions


def hash_tree(root: PathLike) -> Dict[str, str]:
    """SHA-256 of every file below root, keyed by POSIX relative path; manifests excluded"""
    root = Path(root)
    hashes = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and not path.name.endswith(MANIFEST_SUFFIX):
            hashes[path.relative_to(root).as_posix()] = sha256_file(path)
    return hashes


def write_manifest(manifest_path: PathLike, stage: str, config_digest: str,
                   inputs: Dict[str, str], outputs: Dict[str, str], extra: Optional[Dict[str, Any]] = None) -> None:
    """Record input/output hashes of a stage next to its artifacts"""
    payload = {
        "stage": stage,
        "version": PIPELINE_VERSION,
        "libraries": library_versions(),
        "config_hash": config_digest,
        "inputs": inputs,
        "outputs": outputs,
    }
    if extra:
        payload["extra"] = extra
    write_json(manifest_path, payload)
    logger.info(f"Wrote {stage} manifest with {len(outputs)} outputs to {manifest_path}")


def verify_manifest(manifest_path: PathLike, base_dir: Optional[PathLike] = None) -> Dict[str, Any]:
    """Check every recorded output still exists with its recorded hash"""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ArtifactError(f"Missing manifest {manifest_path}; run the upstream stage first")

    manifest = read_json(manifest_path)
    base = Path(base_dir) if base_dir else manifest_path.parent
    for rel, expected in manifest.get("outputs", {}).items():
        path = base / rel
        if not path.exists():
            raise ArtifactError(f"Artifact {path} listed in {manifest_path.name} is missing")
        actual = sha256_file(path)
        if actual != expected:
            raise ArtifactError(f"Artifact {path} hash mismatch: manifest {expected[:12]}, found {actual[:12]}")
    return manifest


def manifest_digest(manifest_path: PathLike) -> str:
    return sha256_file(manifest_path)
