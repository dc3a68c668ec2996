"""
Atomic table/JSON writers and run manifests
"""

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Optional, Union

import pandas as pd

from app.core.config import __version__
from app.models.run import RunConfig, RunManifest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(frame: pd.DataFrame, path: PathLike, sep: str = "\t") -> Path:
    """Delimited text (TSV by default) with full float precision"""
    path = Path(path)
    text = frame.to_csv(sep=sep, index=False, float_format="%.17g", na_rep="nan", lineterminator="\n")
    _atomic_write(path, text.encode("utf-8"))
    logger.debug(f"wrote {len(frame)} rows to {path}")
    return path


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(payload: Any, path: PathLike) -> Path:
    path = Path(path)
    _atomic_write(path, canonical_json(payload).encode("utf-8"))
    return path


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_digest(path: Optional[PathLike]) -> Optional[str]:
    if path is None:
        return None
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(
    output_dir: PathLike,
    command: str,
    config: RunConfig,
    input_path: Optional[PathLike] = None,
    outputs=(),
    kernel: Optional[dict] = None,
    scenario_path: Optional[PathLike] = None,
) -> RunManifest:
    manifest = RunManifest(
        command=command,
        config_hash=config_hash(config),
        seed=config.seed,
        library_version=__version__,
        input_digest=file_digest(input_path),
        scenario_hash=file_digest(scenario_path),
        kernel=kernel,
        outputs=sorted(Path(p).name for p in outputs),
    )
    write_json(manifest.model_dump(mode="json"), Path(output_dir) / "manifest.json")
    return manifest
