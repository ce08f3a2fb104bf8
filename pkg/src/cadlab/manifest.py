"""Run manifest: an append-only log of what each command wrote.

``manifest.json`` holds the config snapshot, seed, code version, dataset
digest and one entry per command with the sha256 of every file it produced.
Timestamps live only in the manifest, never in the artifacts, so re-running
a command reproduces the recorded digests.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .config import ExperimentConfig, dump_config

MANIFEST = "manifest.json"
FORMAT = 1


class RunError(RuntimeError):
    pass


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class Entry:
    command: str
    started: str
    finished: str
    files: dict[str, str]
    info: dict = field(default_factory=dict)
    config: str | None = None
    argv: list[str] = field(default_factory=list)


@dataclass
class Manifest:
    root: Path
    format: int
    version: str
    seed: int
    created: str
    config: str
    dataset_digest: str | None = None
    entries: list[Entry] = field(default_factory=list)

    @classmethod
    def create(cls, run: str | Path, cfg: ExperimentConfig, version: str) -> "Manifest":
        run = Path(run)
        if (run / MANIFEST).exists():
            raise RunError(f"{run} already has a manifest")
        m = cls(run, FORMAT, version, cfg.run.seed, timestamp(), dump_config(cfg))
        m.save()
        return m

    @classmethod
    def load(cls, run: str | Path) -> "Manifest":
        run = Path(run)
        path = run / MANIFEST
        if not path.exists():
            raise RunError(f"{run} is not a run directory (no {MANIFEST}); run simulate first")
        raw = json.loads(path.read_text())
        entries = [Entry(**e) for e in raw.pop("entries")]
        return cls(run, entries=entries, **raw)

    def save(self) -> None:
        d = asdict(self)
        d.pop("root")
        tmp = self.root / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
        tmp.replace(self.root / MANIFEST)

    def record(
        self,
        command: str,
        outputs: list[str],
        info: dict | None = None,
        config: str | None = None,
        started: str | None = None,
        argv: list[str] | None = None,
    ) -> Entry:
        """Digest every declared output and append an entry; a missing output is an error."""
        started = started or timestamp()
        files = {}
        for rel in outputs:
            path = self.root / rel
            if not path.is_file():
                raise RunError(f"{command}: declared output {rel} was not written")
            if rel in self.files():
                raise RunError(f"{command}: {rel} is already recorded")
            files[rel] = sha256_file(path)
        entry = Entry(command, started, timestamp(), files, info or {}, config, list(argv or []))
        self.entries.append(entry)
        self.save()
        return entry

    def files(self) -> dict[str, str]:
        out = {}
        for e in self.entries:
            out.update(e.files)
        return out

    def verify(self) -> list[str]:
        """Paths whose content no longer matches, or files on disk the manifest does not know."""
        bad = [rel for rel, dig in self.files().items() if not (self.root / rel).is_file() or sha256_file(self.root / rel) != dig]
        known = set(self.files()) | {MANIFEST}
        for p in sorted(self.root.rglob("*")):
            if p.is_file() and p.relative_to(self.root).as_posix() not in known:
                bad.append(p.relative_to(self.root).as_posix())
        return bad
