"""
File persistence for datasets, models, result tables and run manifests.

Every write goes through a temporary file in the target directory followed by
``os.replace``, so readers never see a half-written artifact.
"""
from pathlib import Path
from typing import Any, Iterable, Sequence, Union
import csv
import io
import json
import logging
import math
import os
import tempfile

from app.exceptions import ArtifactNotFoundError, ConfigError
from app.models.manifest import RunManifest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write ``text`` to ``path`` atomically, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.debug(f"Wrote {path}")
    return path


def read_text(path: PathLike, what: str = "file") -> str:
    """
    Read a UTF-8 text artifact.

    Raises:
        ArtifactNotFoundError: if the file does not exist.
    """
    path = Path(path)
    if not path.is_file():
        raise ArtifactNotFoundError(f"{what} not found: {path}")
    return path.read_text(encoding="utf-8")


def write_json(path: PathLike, payload: Any) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def dumps_exact(payload: Any) -> str:
    """Compact JSON with finite floats written to 17 significant digits."""
    if isinstance(payload, float) and math.isfinite(payload):
        return format(payload, ".17g")
    if isinstance(payload, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps_exact(v)}" for k, v in payload.items()) + "}"
    if isinstance(payload, (list, tuple)):
        return "[" + ", ".join(dumps_exact(v) for v in payload) + "]"
    return json.dumps(payload)


def read_json(path: PathLike, what: str = "file") -> Any:
    """
    Raises:
        ArtifactNotFoundError: if the file does not exist.
        ConfigError: if the file is not UTF-8 encoded JSON.
    """
    try:
        return json.loads(read_text(path, what))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"{what} {path} is not valid JSON: {e}") from e


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a table; floats are written with 17 significant digits."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
    return atomic_write_text(path, buffer.getvalue())


def write_manifest(manifest: RunManifest, out_dir: PathLike) -> Path:
    """Write ``<subcommand>.manifest.json`` next to the outputs of a run."""
    path = Path(out_dir) / f"{manifest.subcommand}.manifest.json"
    return atomic_write_text(path, manifest.model_dump_json(indent=2) + "\n")
