"""Run manifests, run history and output bookkeeping for TimefrontRMT."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
import hashlib
from importlib.metadata import PackageNotFoundError, version
import json
import threading
from pathlib import Path
from typing import Dict, List, Optional

from tfrmt import __version__
from tfrmt.utils.logger import get_logger


logger = get_logger(__name__)

MANIFEST_NAME = "manifest.json"
HISTORY_NAME = "runs.jsonl"
_TRACKED_PACKAGES = ("numpy", "scipy", "loguru")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def package_versions() -> Dict[str, str]:
    """Versions of the numerical stack, recorded in every manifest."""
    versions = {"tfrmt": __version__}
    for name in _TRACKED_PACKAGES:
        try:
            versions[name] = version(name)
        except PackageNotFoundError:  # pragma: no cover - partial installs
            versions[name] = "unknown"
    return versions


@dataclass
class RunManifest:
    """Deterministic description of one command's outputs (no timestamps)."""

    command: str
    config_hash: str
    seeds: Dict[str, int] = field(default_factory=dict)
    parameters: Dict[str, object] = field(default_factory=dict)
    outputs: List[Dict[str, object]] = field(default_factory=list)
    versions: Dict[str, str] = field(default_factory=package_versions)

    def add_output(self, path: Path, root: Path) -> None:
        path = Path(path)
        self.outputs.append(
            {
                "path": path.relative_to(root).as_posix(),
                "sha256": sha256_file(path),
                "bytes": path.stat().st_size,
            }
        )

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "seeds": dict(self.seeds),
            "parameters": dict(self.parameters),
            "outputs": sorted(self.outputs, key=lambda item: str(item["path"])),
            "versions": dict(self.versions),
        }

    def write(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


@dataclass(frozen=True)
class RunRecord:
    """One completed or failed command in the run history."""

    timestamp: datetime
    command: str
    config_hash: str
    status: str
    elapsed_s: float

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp.isoformat(),
            "command": self.command,
            "config_hash": self.config_hash,
            "status": self.status,
            "elapsed_s": round(self.elapsed_s, 6),
        }

    @staticmethod
    def from_dict(data: dict) -> Optional["RunRecord"]:
        try:
            timestamp = datetime.fromisoformat(data["timestamp"])
            if timestamp.tzinfo is None:
                timestamp = timestamp.replace(tzinfo=timezone.utc)
            return RunRecord(
                timestamp=timestamp,
                command=str(data["command"]),
                config_hash=str(data["config_hash"]),
                status=str(data.get("status", "ok")),
                elapsed_s=float(data.get("elapsed_s", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            logger.bind(error=str(exc)).warning("Skipping malformed run record: {}", data)
            return None


class RunHistory:
    """Append-only JSONL log of runs in an output directory."""

    def __init__(self, path: Path) -> None:
        self._path = path
        self._lock = threading.Lock()

    def append(
        self,
        command: str,
        config_hash: str,
        status: str,
        elapsed_s: float,
        timestamp: Optional[datetime] = None,
    ) -> RunRecord:
        record = RunRecord(
            timestamp=timestamp or datetime.now(timezone.utc),
            command=command,
            config_hash=config_hash,
            status=status,
            elapsed_s=elapsed_s,
        )
        payload = json.dumps(record.to_dict(), sort_keys=True)
        with self._lock:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            with self._path.open("a", encoding="utf-8") as handle:
                handle.write(payload + "\n")
        return record

    def records(self, limit: Optional[int] = None) -> List[RunRecord]:
        """Records newest first."""
        if not self._path.exists():
            return []
        with self._lock:
            lines = self._path.read_text(encoding="utf-8").splitlines()
        records: List[RunRecord] = []
        for line in reversed(lines):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                logger.bind(error=str(exc)).warning("Skipping corrupt run history line")
                continue
            record = RunRecord.from_dict(data)
            if record:
                records.append(record)
            if limit and len(records) >= limit:
                break
        return records


class OutputSession:
    """Tracks files written by one command and removes them if the command fails."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self._written: List[Path] = []

    def path(self, name: str) -> Path:
        target = self.root / name
        target.parent.mkdir(parents=True, exist_ok=True)
        self._written.append(target)
        return target

    @property
    def written(self) -> List[Path]:
        return [p for p in self._written if p.exists()]

    def discard(self) -> None:
        for target in reversed(self._written):
            try:
                target.unlink(missing_ok=True)
            except OSError as exc:  # pragma: no cover - filesystem races
                logger.bind(error=str(exc)).warning("Could not remove partial output {}", target)
        self._written.clear()

    def __enter__(self) -> "OutputSession":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is not None:
            logger.bind(error=str(exc)).warning("Removing {} partial outputs", len(self.written))
            self.discard()
        return False


