"""Normalized JSON-lines dataset manifests.

One manifest file describes one split. The first line is a header record
carrying the schema version; every following line is one example record with
its image path (relative to the manifest's directory), original image size,
garment class, landmark annotations in original pixel coordinates, and the
derived garment bounding box.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ..geometry import Box, Point, derive_garment_box
from . import taxonomy

SCHEMA_NAME = "garmnet-manifest"
SCHEMA_VERSION = 1


@dataclass
class LandmarkAnnotation:
    class_id: int
    point: Point

    def __post_init__(self):
        if not 0 <= self.class_id < taxonomy.N_LANDMARK_CLASSES:
            raise ValueError(f"landmark class id {self.class_id} out of range")


@dataclass
class ExampleRecord:
    """One annotated image in original (un-resized) pixel coordinates."""

    image_path: str
    width: int
    height: int
    garment_class_id: int
    landmarks: list[LandmarkAnnotation]
    garment_box: Box

    def to_json(self) -> dict:
        return {
            "image": self.image_path,
            "width": self.width,
            "height": self.height,
            "garment_class": taxonomy.garment_name(self.garment_class_id),
            "garment_class_id": self.garment_class_id,
            "landmarks": [
                {
                    "class": taxonomy.landmark_name(lm.class_id),
                    "class_id": lm.class_id,
                    "x": lm.point.x,
                    "y": lm.point.y,
                }
                for lm in self.landmarks
            ],
            "garment_box": list(self.garment_box),
        }

    @staticmethod
    def from_json(obj: dict) -> "ExampleRecord":
        return ExampleRecord(
            image_path=obj["image"],
            width=int(obj["width"]),
            height=int(obj["height"]),
            garment_class_id=int(obj["garment_class_id"]),
            landmarks=[
                LandmarkAnnotation(int(lm["class_id"]), Point(float(lm["x"]), float(lm["y"])))
                for lm in obj["landmarks"]
            ],
            garment_box=Box(*obj["garment_box"]),
        )


def record_from_landmarks(
    image_path: str,
    width: int,
    height: int,
    garment_class_id: int,
    landmarks: Iterable[LandmarkAnnotation],
) -> ExampleRecord:
    """Build a record, deriving the garment box from the landmark extrema."""
    landmarks = list(landmarks)
    box = derive_garment_box([lm.point for lm in landmarks])
    return ExampleRecord(image_path, width, height, garment_class_id, landmarks, box)


@dataclass
class DatasetManifest:
    records: list[ExampleRecord]
    root: Path = field(default_factory=Path)
    split: str | None = None

    def __len__(self) -> int:
        return len(self.records)

    def class_counts(self) -> Counter:
        return Counter(r.garment_class_id for r in self.records)

    def resolve_image(self, record: ExampleRecord) -> Path:
        return self.root / record.image_path


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    path = Path(path)
    header = {"schema": SCHEMA_NAME, "version": SCHEMA_VERSION, "n_examples": len(manifest)}
    if manifest.split is not None:
        header["split"] = manifest.split
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header) + "\n")
        for record in manifest.records:
            f.write(json.dumps(record.to_json()) + "\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        lines = [line for line in f if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("schema") != SCHEMA_NAME:
        raise ValueError(f"{path}: missing or unknown manifest header")
    if header.get("version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {header.get('version')}")
    records = [ExampleRecord.from_json(json.loads(line)) for line in lines[1:]]
    return DatasetManifest(records=records, root=path.parent, split=header.get("split"))


def split_dataset(
    manifest: DatasetManifest, val_count: int = 300, seed: int = 0
) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic disjoint train/validation split preserving record order."""
    import numpy as np

    n = len(manifest)
    if not 0 <= val_count < n:
        raise ValueError(f"val_count must be in [0, {n}), got {val_count}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    val_idx = set(perm[:val_count].tolist())
    train_records = [r for i, r in enumerate(manifest.records) if i not in val_idx]
    val_records = [r for i, r in enumerate(manifest.records) if i in val_idx]
    train = DatasetManifest(train_records, root=manifest.root, split="train")
    val = DatasetManifest(val_records, root=manifest.root, split="validation")
    return train, val


def balance_classes(
    manifest: DatasetManifest, n_classes: int = taxonomy.N_GARMENT_CLASSES
) -> DatasetManifest:
    """Repeat examples of less numerous garment classes until all counts match.

    Repetition is cyclic over each class's examples in their original order;
    nothing is ever removed. Every class must be represented.
    """
    counts = manifest.class_counts()
    missing = [c for c in range(n_classes) if counts.get(c, 0) == 0]
    if missing:
        names = ", ".join(taxonomy.garment_name(c) for c in missing if c < taxonomy.N_GARMENT_CLASSES)
        raise ValueError(f"cannot balance: classes with zero examples: {names or missing}")
    target = max(counts.values())
    by_class: dict[int, list[ExampleRecord]] = {c: [] for c in range(n_classes)}
    for record in manifest.records:
        by_class[record.garment_class_id].append(record)
    records = list(manifest.records)
    for c in range(n_classes):
        pool = by_class[c]
        extra = target - len(pool)
        records.extend(pool[i % len(pool)] for i in range(extra))
    return DatasetManifest(records, root=manifest.root, split=manifest.split)
