"""In-memory training examples: image loading, resizing and annotation rescale."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..geometry import Box, Point, derive_garment_box
from . import taxonomy
from .manifest import DatasetManifest, ExampleRecord, LandmarkAnnotation


@dataclass
class Example:
    """One resized image with annotations in resized pixel coordinates."""

    image: np.ndarray  # (input_size, input_size, 3) uint8 RGB
    garment_class: int
    landmarks: list[LandmarkAnnotation]
    garment_box: Box


def rescale_point(p: Point, fx: float, fy: float) -> Point:
    return Point(p.x * fx, p.y * fy)


def rescale_box(box: Box, fx: float, fy: float) -> Box:
    return Box(box.x_min * fx, box.y_min * fy, box.x_max * fx, box.y_max * fy)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    if image.shape[0] == size and image.shape[1] == size:
        return image
    resized = Image.fromarray(image).resize((size, size), Image.BILINEAR)
    return np.asarray(resized)


def example_from_record(
    record: ExampleRecord, root: Path, input_size: int
) -> Example:
    """Load the record's image, resize it, and rescale annotations to match."""
    image = load_image(root / record.image_path)
    h, w = image.shape[:2]
    if (w, h) != (record.width, record.height):
        raise ValueError(
            f"{record.image_path}: manifest says {record.width}x{record.height}, "
            f"file is {w}x{h}"
        )
    fx = input_size / w
    fy = input_size / h
    landmarks = [
        LandmarkAnnotation(lm.class_id, rescale_point(lm.point, fx, fy))
        for lm in record.landmarks
    ]
    return Example(
        image=resize_image(image, input_size),
        garment_class=record.garment_class_id,
        landmarks=landmarks,
        garment_box=rescale_box(record.garment_box, fx, fy),
    )


def load_examples(manifest: DatasetManifest, input_size: int) -> list[Example]:
    return [example_from_record(r, manifest.root, input_size) for r in manifest.records]


def validate_example(example: Example, input_size: int, atol: float = 1e-6) -> None:
    """Raise if the example violates its structural invariants."""
    if example.image.shape != (input_size, input_size, 3):
        raise ValueError(f"image shape {example.image.shape} != ({input_size}, {input_size}, 3)")
    if example.image.dtype != np.uint8:
        raise ValueError(f"image dtype {example.image.dtype} != uint8")
    if not 0 <= example.garment_class < taxonomy.N_GARMENT_CLASSES:
        raise ValueError(f"garment class {example.garment_class} out of range")
    seen = set()
    for lm in example.landmarks:
        if lm.class_id in seen:
            raise ValueError(f"duplicate landmark class {lm.class_id}")
        seen.add(lm.class_id)
        if not (0 <= lm.point.x < input_size and 0 <= lm.point.y < input_size):
            raise ValueError(f"landmark {lm.class_id} at {lm.point} outside image")
    derived = derive_garment_box([lm.point for lm in example.landmarks])
    if not np.allclose(list(derived), list(example.garment_box), atol=atol):
        raise ValueError(f"garment box {example.garment_box} != derived {derived}")
