"""Line-oriented JSON dataset manifests.

One JSON object per line::

    {"metadata": {"name": "bsds500-test", "dims_policy": "strict"}}
    {"id": "2018", "pred": "pred/2018.png", "gt": ["gt/2018_1.png", "gt/2018_2.png"]}

The metadata line is optional. Relative paths resolve against the
manifest's directory. Blank lines and lines starting with ``#`` are skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    pred: Path
    gt: tuple[Path, ...]

    def paths(self) -> list[Path]:
        return [self.pred, *self.gt]


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def missing_paths(self) -> list[Path]:
        return [p for e in self.entries for p in e.paths() if not p.is_file()]


def parse_manifest(text: str, base: Path = Path(".")) -> DatasetManifest:
    entries = []
    metadata: dict = {}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise ManifestError(f"line {lineno}: expected a JSON object")
        if "metadata" in obj:
            metadata.update(obj["metadata"])
            continue
        try:
            ident = str(obj["id"])
            pred = obj["pred"]
            gt = obj["gt"]
        except KeyError as exc:
            raise ManifestError(f"line {lineno}: missing field {exc.args[0]!r}") from None
        if isinstance(gt, str):
            gt = [gt]
        if not gt:
            raise ManifestError(f"line {lineno}: entry {ident!r} has no ground-truth paths")
        if ident in seen:
            raise ManifestError(f"line {lineno}: duplicate id {ident!r}")
        seen.add(ident)
        entries.append(ManifestEntry(ident, base / pred, tuple(base / g for g in gt)))
    return DatasetManifest(tuple(entries), metadata)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    return parse_manifest(path.read_text(), path.parent)


def dump_manifest(entries, metadata: dict | None = None) -> str:
    """Serialize ``(id, pred, [gt...])`` triples; paths are written as given."""
    lines = []
    if metadata:
        lines.append(json.dumps({"metadata": metadata}, sort_keys=True))
    for ident, pred, gts in entries:
        lines.append(json.dumps({"id": str(ident), "pred": str(pred), "gt": [str(g) for g in gts]}))
    return "\n".join(lines) + "\n"
