"""
Run manifests.

Every output directory gets one `manifest.json` recording the command, its
arguments, the resolved configuration, the options that live outside the config
(data path, held-out fold, jobs) and a sha256 content hash of the inputs.
The manifest doubles as a config file (`--config <dir>/manifest.json`), so a
run can be repeated from it alone.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from medical_dg.errors import DataError

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
MANIFEST_KIND = "run_manifest"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def hash_path(path: Path) -> str:
    """sha256 over a file's bytes, or over every file (relative path + bytes) under a directory."""
    path = Path(path)
    digest = hashlib.sha256()
    if path.is_file():
        digest.update(path.read_bytes())
    elif path.is_dir():
        for p in sorted(q for q in path.rglob("*") if q.is_file() and q.name != MANIFEST_FILE):
            digest.update(p.relative_to(path).as_posix().encode())
            digest.update(p.read_bytes())
    else:
        raise DataError(f"Cannot hash missing input {path}")
    return digest.hexdigest()


def content_hash(command: str, config: Dict[str, Any], inputs: Dict[str, str], run: Optional[Dict[str, Any]] = None) -> str:
    """Hash of the command, its resolved config, run parameters and the input hashes."""
    normalized = json.dumps({"command": command, "config": config, "inputs": inputs, "run": run or {}}, sort_keys=True)
    return hashlib.sha256(normalized.encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: List[str]
    config: Dict[str, Any]
    inputs: Dict[str, str] = field(default_factory=dict)  # input name -> sha256
    run: Dict[str, Any] = field(default_factory=dict)  # command options outside the config (paths, fold, jobs)
    content_hash: str = ""
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None
    kind: str = MANIFEST_KIND

    @classmethod
    def create(
        cls,
        command: str,
        argv: List[str],
        config: Dict[str, Any],
        inputs: Optional[Dict[str, Path]] = None,
        run: Optional[Dict[str, Any]] = None,
    ) -> "RunManifest":
        hashed = {name: hash_path(p) for name, p in (inputs or {}).items()}
        run = dict(run or {})
        return cls(command=command, argv=list(argv), config=config, inputs=hashed, run=run,
                   content_hash=content_hash(command, config, hashed, run))

    def finish(self) -> "RunManifest":
        self.finished_at = _now()
        return self

    def write(self, directory: Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / MANIFEST_FILE
        path.write_text(json.dumps(asdict(self), indent=2), encoding="utf-8")
        logger.debug(f"Wrote manifest {path}")
        return path


def read_manifest(directory: Path) -> RunManifest:
    path = Path(directory)
    if path.is_dir():
        path = path / MANIFEST_FILE
    if not path.exists():
        raise DataError(f"No run manifest at {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        return RunManifest(**raw)
    except (json.JSONDecodeError, TypeError) as e:
        raise DataError(f"Corrupt run manifest {path}: {e}") from e


def run_parameters(config_path: Optional[Path], command: str) -> Dict[str, Any]:
    """Run options stored in a manifest for `command`; empty for a plain config file."""
    if config_path is None or not Path(config_path).is_file():
        return {}
    try:
        raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return {}
    if not isinstance(raw, dict) or raw.get("kind") != MANIFEST_KIND or raw.get("command") != command:
        return {}
    return dict(raw.get("run") or {})
