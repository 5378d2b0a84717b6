"""Tab-separated dataset manifests with a fine-tune/eval leakage guard."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

SPLITS = ("train", "val", "eval", "finetune")
TAGS = ("kidney", "skin", "toy")
HEADER = ("id", "image", "mask", "split", "tag")


@dataclass(frozen=True)
class Record:
    id: str
    image: Path
    mask: Path | None
    split: str
    tag: str


@dataclass
class Manifest:
    records: list[Record]
    path: Path | None = None

    def __post_init__(self):
        validate(self.records)

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def ids(self, split: str | None = None) -> list[str]:
        return [r.id for r in self.records if split is None or r.split == split]

    def by_id(self) -> dict[str, Record]:
        return {r.id: r for r in self.records}


def validate(records) -> None:
    seen = set()
    for r in records:
        if r.id in seen:
            raise ValueError(f"duplicate sample id {r.id!r}")
        seen.add(r.id)
        if r.split not in SPLITS:
            raise ValueError(f"{r.id}: unknown split {r.split!r}")
        if r.tag not in TAGS:
            raise ValueError(f"{r.id}: unknown dataset tag {r.tag!r}")
    ft = {r.image.resolve() for r in records if r.split == "finetune"}
    ev = {r.image.resolve() for r in records if r.split == "eval"}
    shared = ft & ev
    if shared:
        raise ValueError(f"fine-tune and eval splits share images: {sorted(map(str, shared))[:3]}")


def read_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    """Load a manifest; paths are relative to the manifest's directory."""
    path = Path(path)
    base = path.parent
    lines = [l for l in path.read_text().splitlines() if l.strip() and not l.startswith("#")]
    if not lines or tuple(lines[0].split("\t")) != HEADER:
        raise ValueError(f"{path}: header must be {' '.join(HEADER)} (tab separated)")
    records = []
    for n, line in enumerate(lines[1:], 2):
        parts = line.split("\t")
        if len(parts) != len(HEADER):
            raise ValueError(f"{path}:{n}: expected {len(HEADER)} fields, got {len(parts)}")
        sid, img, mask, split, tag = parts
        rec = Record(sid, base / img, None if mask == "-" else base / mask, split, tag)
        if check_files:
            for p in (rec.image, rec.mask):
                if p is not None and not p.exists():
                    raise FileNotFoundError(f"{path}:{n}: {p} does not exist")
        records.append(rec)
    return Manifest(records, path)


def write_manifest(path: str | Path, records) -> Manifest:
    path = Path(path)
    validate(records)
    base = path.parent.resolve()

    def rel(p):
        if p is None:
            return "-"
        p = Path(p).resolve()
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    rows = ["\t".join(HEADER)]
    rows += ["\t".join((r.id, rel(r.image), rel(r.mask), r.split, r.tag)) for r in records]
    path.write_text("\n".join(rows) + "\n")
    return Manifest(list(records), path)
