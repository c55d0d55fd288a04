"""Content-hash memoised stages with provenance records."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .config import config_hash

log = logging.getLogger(__name__)

WORKSPACE_DIRS = ("corpus", "augment", "features", "rirs", "models", "embeddings", "scores", "reports", "provenance")


class StageError(RuntimeError):
    """A stage failed; the message names the stage."""


class ArtifactHashError(StageError):
    """An artifact no longer matches the hash recorded when it was written."""


class MissingArtifactError(StageError):
    pass


def hash_path(path: Path) -> str:
    """sha256 of a file, or of a directory's relative names and file contents."""
    h = hashlib.sha256()
    path = Path(path)
    if path.is_dir():
        for f in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(str(f.relative_to(path)).encode("utf-8") + b"\0")
            h.update(hash_path(f).encode("ascii"))
        return h.hexdigest()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class Workspace:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def init(self) -> "Workspace":
        for d in WORKSPACE_DIRS:
            (self.root / d).mkdir(parents=True, exist_ok=True)
        return self

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    def provenance_path(self, stage: str) -> Path:
        return self.root / "provenance" / f"{stage.replace(':', '_')}.json"

    def rel(self, p: Path) -> str:
        p = Path(p)
        try:
            return str(p.relative_to(self.root))
        except ValueError:
            return str(p)


def run_stage(
    ws: Workspace,
    name: str,
    config_section,
    inputs: Sequence[Path],
    outputs: Sequence[Path],
    fn: Callable[[], None],
    seed: int,
    force: bool = False,
) -> bool:
    """Run ``fn`` unless a matching provenance record says its outputs are current.

    Returns True when the stage ran. Recorded outputs whose content changed
    since they were written raise ArtifactHashError (rerun with force to
    rebuild them).
    """
    for p in inputs:
        if not Path(p).exists():
            raise MissingArtifactError(f"stage {name}: missing upstream artifact {ws.rel(p)}; run the upstream stage first")
    input_hashes = {ws.rel(p): hash_path(p) for p in inputs}
    chash = config_hash(config_section)
    prov_path = ws.provenance_path(name)
    if not force and prov_path.is_file():
        prov = json.loads(prov_path.read_text())
        same_inputs = prov.get("config_hash") == chash and prov.get("inputs") == input_hashes and prov.get("seed") == seed
        if same_inputs and all(Path(p).exists() for p in outputs):
            for rel, recorded in prov.get("outputs", {}).items():
                if hash_path(ws.root / rel) != recorded:
                    raise ArtifactHashError(
                        f"stage {name}: {rel} does not match its recorded hash; the file was modified or corrupted"
                    )
            log.info("stage %s is up to date", name)
            return False
    start = time.perf_counter()
    log.info("running stage %s", name)
    try:
        fn()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(f"stage {name} failed: {type(exc).__name__}: {exc}") from exc
    for p in outputs:
        if not Path(p).exists():
            raise StageError(f"stage {name} did not produce {ws.rel(p)}")
    prov = {
        "stage": name,
        "seed": seed,
        "config_hash": chash,
        "inputs": input_hashes,
        "outputs": {ws.rel(p): hash_path(p) for p in outputs},
        "wall_time_s": round(time.perf_counter() - start, 3),
    }
    prov_path.parent.mkdir(parents=True, exist_ok=True)
    prov_path.write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
    return True
