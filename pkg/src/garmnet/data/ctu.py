"""Loader for CTU-style spread-garment datasets.

The source tree holds one or more group directories (typically the
flat-and-wrinkled group and the folded group); each example is an image file
plus a JSON annotation sidecar sharing the same stem:

    root/
      flat_and_wrinkled/
        img_0001.png
        img_0001.json      {"garment": "<label>", "landmarks": [["<label>", a, b], ...]}
      folded/
        ...

Only the color image is read; disparity/depth channels are ignored. Source
label strings and coordinate axis order vary between exports, so both are
configurable: labels through a mapping file, axis order through a flag
(``"xy"`` reads annotation pairs as (x, y), ``"ij"`` as (row, col)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from ..geometry import Point
from . import taxonomy
from .manifest import DatasetManifest, LandmarkAnnotation, record_from_landmarks

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class LabelMapping:
    """Maps source annotation labels onto the package taxonomies."""

    garment_labels: dict[str, str] = field(default_factory=dict)
    landmark_labels: dict[str, str] = field(default_factory=dict)
    groups: list[str] | None = None  # restrict to these group directories

    @staticmethod
    def load(path: str | Path) -> "LabelMapping":
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
        return LabelMapping(
            garment_labels=obj.get("garment_labels", {}),
            landmark_labels=obj.get("landmark_labels", {}),
            groups=obj.get("groups"),
        )

    def garment_id(self, label: str) -> int:
        name = self.garment_labels.get(label, label)
        if name not in taxonomy.GARMENT_IDS:
            raise KeyError(f"unknown garment label {label!r}")
        return taxonomy.GARMENT_IDS[name]

    def landmark_id(self, label: str) -> int:
        name = self.landmark_labels.get(label, label)
        if name not in taxonomy.LANDMARK_IDS:
            raise KeyError(f"unknown landmark label {label!r}")
        return taxonomy.LANDMARK_IDS[name]


@dataclass
class LoadError:
    path: str
    reason: str


def _find_annotation(image_path: Path) -> Path:
    return image_path.with_suffix(".json")


def _parse_example(image_path: Path, root: Path, mapping: LabelMapping, axis_order: str):
    ann_path = _find_annotation(image_path)
    if not ann_path.exists():
        raise FileNotFoundError(f"missing annotation file {ann_path.name}")
    with open(ann_path, encoding="utf-8") as f:
        ann = json.load(f)
    garment_id = mapping.garment_id(str(ann["garment"]))
    landmarks = []
    for entry in ann["landmarks"]:
        label, a, b = entry[0], float(entry[1]), float(entry[2])
        class_id = mapping.landmark_id(str(label))
        point = Point(a, b) if axis_order == "xy" else Point(b, a)
        landmarks.append(LandmarkAnnotation(class_id, point))
    if not landmarks:
        raise ValueError("annotation has no landmarks")
    with Image.open(image_path) as img:
        width, height = img.size
    return record_from_landmarks(
        image_path=str(image_path.relative_to(root)),
        width=width,
        height=height,
        garment_class_id=garment_id,
        landmarks=landmarks,
    )


def load_ctu_dataset(
    root: str | Path,
    axis_order: str = "xy",
    mapping: LabelMapping | None = None,
) -> tuple[DatasetManifest, list[LoadError]]:
    """Merge every group directory under ``root`` into one manifest.

    Returns the manifest plus per-example load errors (missing annotations,
    unknown labels); raises only when not a single example parses.
    """
    if axis_order not in ("xy", "ij"):
        raise ValueError(f"axis_order must be 'xy' or 'ij', got {axis_order!r}")
    root = Path(root)
    mapping = mapping or LabelMapping()
    groups = (
        [root / g for g in mapping.groups]
        if mapping.groups
        else sorted(p for p in root.iterdir() if p.is_dir())
        if root.is_dir()
        else []
    )
    records, errors = [], []
    for group in groups:
        if not group.is_dir():
            errors.append(LoadError(str(group), "group directory not found"))
            continue
        for image_path in sorted(group.iterdir()):
            if image_path.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                records.append(_parse_example(image_path, root, mapping, axis_order))
            except (KeyError, ValueError, OSError, FileNotFoundError) as exc:
                errors.append(LoadError(str(image_path), str(exc)))
    if not records:
        raise ValueError(f"no examples parsed under {root} ({len(errors)} errors)")
    return DatasetManifest(records=records, root=root), errors
