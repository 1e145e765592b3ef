"""Synthetic garment scenes for desk-scale training and verification.

Each scene is a filled garment polygon, deformed by a seeded
rotation/scale/translation plus per-vertex jitter, rendered onto a textured
background. Landmark ground truth is the deformed position of the template's
landmark layout, so annotations are exact by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ..geometry import Point
from . import taxonomy
from .manifest import (
    DatasetManifest,
    ExampleRecord,
    LandmarkAnnotation,
    record_from_landmarks,
)


@dataclass(frozen=True)
class GarmentTemplate:
    """Canonical garment silhouette in [0, 1]^2 with its landmark layout.

    ``landmarks`` maps a landmark class name either to an outline vertex
    index (the landmark rides that vertex, jitter included) or to a
    freestanding canonical point for interior landmarks.
    """

    name: str
    outline: tuple[tuple[float, float], ...]
    landmarks: tuple[tuple[str, int | tuple[float, float]], ...]
    color: tuple[int, int, int]

    def landmark_canonical(self, spec: int | tuple[float, float]) -> tuple[float, float]:
        if isinstance(spec, int):
            return self.outline[spec]
        return spec


TEMPLATES: dict[str, GarmentTemplate] = {
    t.name: t
    for t in [
        GarmentTemplate(
            name="towel",
            outline=((0.08, 0.15), (0.92, 0.15), (0.92, 0.85), (0.08, 0.85)),
            landmarks=(
                ("top-left", 0),
                ("top-right", 1),
                ("bottom-right", 2),
                ("bottom-left", 3),
            ),
            color=(200, 60, 60),
        ),
        GarmentTemplate(
            name="pants",
            outline=(
                (0.30, 0.06), (0.70, 0.06), (0.84, 0.30), (0.82, 0.94),
                (0.60, 0.94), (0.50, 0.45), (0.40, 0.94), (0.18, 0.94),
                (0.16, 0.30),
            ),
            landmarks=(
                ("top-left", 0),
                ("top-right", 1),
                ("right-leg-outer", 3),
                ("right-leg-inner", 4),
                ("crotch", 5),
                ("left-leg-inner", 6),
                ("left-leg-outer", 7),
            ),
            color=(50, 70, 160),
        ),
        GarmentTemplate(
            name="shorts",
            outline=(
                (0.24, 0.20), (0.76, 0.20), (0.86, 0.72), (0.60, 0.74),
                (0.50, 0.48), (0.40, 0.74), (0.14, 0.72),
            ),
            landmarks=(
                ("top-left", 0),
                ("top-right", 1),
                ("right-leg-outer", 2),
                ("right-leg-inner", 3),
                ("crotch", 4),
                ("left-leg-inner", 5),
                ("left-leg-outer", 6),
            ),
            color=(60, 160, 170),
        ),
        GarmentTemplate(
            name="skirt",
            outline=(
                (0.32, 0.12), (0.68, 0.12), (0.88, 0.88), (0.50, 0.92), (0.12, 0.88),
            ),
            landmarks=(
                ("top-left", 0),
                ("top-right", 1),
                ("bottom-right", 2),
                ("bottom-middle", 3),
                ("bottom-left", 4),
            ),
            color=(170, 60, 150),
        ),
        GarmentTemplate(
            name="tshirt",
            outline=(
                (0.22, 0.20), (0.40, 0.10), (0.50, 0.20), (0.60, 0.10),
                (0.78, 0.20), (0.97, 0.48), (0.75, 0.60), (0.66, 0.40),
                (0.72, 0.93), (0.28, 0.93), (0.34, 0.40), (0.25, 0.60),
                (0.03, 0.48),
            ),
            landmarks=(
                ("left-shoulder", 0),
                ("neckline-left", 1),
                ("neckline-right", 3),
                ("right-shoulder", 4),
                ("right-sleeve-outer", 5),
                ("right-sleeve-inner", 6),
                ("right-armpit", 7),
                ("bottom-right", 8),
                ("bottom-left", 9),
                ("left-armpit", 10),
                ("left-sleeve-inner", 11),
                ("left-sleeve-outer", 12),
            ),
            color=(235, 235, 235),
        ),
        GarmentTemplate(
            name="tshirt-long",
            outline=(
                (0.24, 0.18), (0.41, 0.09), (0.50, 0.18), (0.59, 0.09),
                (0.76, 0.18), (0.94, 0.56), (0.82, 0.78), (0.67, 0.38),
                (0.66, 0.94), (0.34, 0.94), (0.33, 0.38), (0.18, 0.78),
                (0.06, 0.56),
            ),
            landmarks=(
                ("left-shoulder", 0),
                ("neckline-left", 1),
                ("neckline-right", 3),
                ("right-shoulder", 4),
                ("right-sleeve-outer", 5),
                ("right-sleeve-inner", 6),
                ("right-armpit", 7),
                ("bottom-right", 8),
                ("bottom-left", 9),
                ("left-armpit", 10),
                ("left-sleeve-inner", 11),
                ("left-sleeve-outer", 12),
            ),
            color=(60, 60, 75),
        ),
        GarmentTemplate(
            name="polo",
            outline=(
                (0.18, 0.26), (0.33, 0.18), (0.40, 0.05), (0.60, 0.05),
                (0.67, 0.18), (0.82, 0.26), (0.96, 0.52), (0.70, 0.46),
                (0.72, 0.94), (0.28, 0.94), (0.30, 0.46), (0.04, 0.52),
            ),
            landmarks=(
                ("left-shoulder", 0),
                ("collar-left", 2),
                ("collar-right", 3),
                ("right-shoulder", 5),
                ("right-sleeve-outer", 6),
                ("right-armpit", 7),
                ("bottom-right", 8),
                ("bottom-left", 9),
                ("left-armpit", 10),
                ("left-sleeve-outer", 11),
            ),
            color=(240, 180, 50),
        ),
        GarmentTemplate(
            name="hoody",
            outline=(
                (0.16, 0.28), (0.34, 0.14), (0.50, 0.02), (0.66, 0.14),
                (0.84, 0.28), (0.97, 0.54), (0.76, 0.66), (0.68, 0.46),
                (0.71, 0.94), (0.29, 0.94), (0.32, 0.46), (0.24, 0.66),
                (0.03, 0.54),
            ),
            landmarks=(
                ("left-shoulder", 0),
                ("hood-left", 1),
                ("hood-top", 2),
                ("hood-right", 3),
                ("right-shoulder", 4),
                ("right-sleeve-outer", 5),
                ("right-sleeve-inner", 6),
                ("bottom-right", 8),
                ("bottom-left", 9),
                ("left-sleeve-inner", 11),
                ("left-sleeve-outer", 12),
            ),
            color=(70, 140, 60),
        ),
        GarmentTemplate(
            name="blouse",
            outline=(
                (0.22, 0.16), (0.40, 0.06), (0.50, 0.16), (0.60, 0.06),
                (0.78, 0.16), (0.92, 0.34), (0.72, 0.44), (0.78, 0.92),
                (0.22, 0.92), (0.28, 0.44), (0.08, 0.34),
            ),
            landmarks=(
                ("left-shoulder", 0),
                ("neckline-left", 1),
                ("neckline-right", 3),
                ("right-shoulder", 4),
                ("right-armpit", 6),
                ("bottom-right", 7),
                ("bottom-left", 8),
                ("left-armpit", 9),
                ("fold-1", (0.50, 0.58)),
                ("fold-2", (0.50, 0.80)),
            ),
            color=(245, 150, 170),
        ),
    ]
}


@dataclass
class SyntheticSceneConfig:
    n_examples: int
    image_size: int = 128
    classes: tuple[str, ...] = tuple(taxonomy.GARMENT_CLASSES)
    rotation_range: float = 25.0          # degrees, symmetric
    scale_range: tuple[float, float] = (0.9, 1.15)
    jitter: float = 2.5                   # px, per-vertex uniform
    translation_range: float | None = None  # px from image center; None = whatever fits
    base_fraction: float = 0.62           # canonical unit -> fraction of image at scale 1
    background_base: tuple[int, int, int] = (168, 126, 88)
    background_noise: float = 6.0
    seed: int = 0

    def __post_init__(self):
        unknown = [c for c in self.classes if c not in TEMPLATES]
        if unknown:
            raise ValueError(f"unknown garment template(s): {', '.join(unknown)}")
        if self.n_examples < 0:
            raise ValueError("n_examples must be >= 0")
        for name in self.classes:
            if len(TEMPLATES[name].landmarks) < 4:
                raise ValueError(f"template {name} has fewer than 4 landmarks")


def template_canonical_points(
    template: GarmentTemplate, image_size: int, base_fraction: float = 0.62
) -> dict[str, tuple[float, float]]:
    """Landmark positions of the undeformed template, centered in the image."""
    c = image_size / 2.0
    s = base_fraction * image_size
    out = {}
    for name, spec in template.landmarks:
        u, v = template.landmark_canonical(spec)
        out[name] = (c + s * (u - 0.5), c + s * (v - 0.5))
    return out


def _wood_background(rng: np.random.Generator, size: int, base, noise_std) -> np.ndarray:
    y = np.arange(size, dtype=float)[:, None]
    phase = rng.uniform(0, 2 * math.pi)
    planks = 10.0 * np.sin(2 * math.pi * y / rng.uniform(14, 22) + phase)
    img = np.array(base, dtype=float)[None, None, :] + planks[..., None]
    if noise_std > 0:
        img = img + rng.normal(0, noise_std, size=(size, size, 3))
    return np.clip(img, 0, 255).astype(np.uint8)


def _render_scene(
    config: SyntheticSceneConfig, template: GarmentTemplate, rng: np.random.Generator
) -> tuple[np.ndarray, list[LandmarkAnnotation]]:
    size = config.image_size
    rotation = math.radians(rng.uniform(-config.rotation_range, config.rotation_range))
    scale = rng.uniform(*config.scale_range) * config.base_fraction * size
    cos_t, sin_t = math.cos(rotation), math.sin(rotation)
    rot = np.array([[cos_t, -sin_t], [sin_t, cos_t]])

    outline = np.asarray(template.outline, dtype=float) - 0.5
    free = np.array(
        [template.landmark_canonical(spec) for _, spec in template.landmarks
         if not isinstance(spec, int)],
        dtype=float,
    ).reshape(-1, 2) - 0.5
    all_canonical = np.concatenate([outline, free]) if free.size else outline
    rotated = all_canonical @ rot.T * scale

    margin = config.jitter + 2.0
    half = np.abs(rotated).max(axis=0)
    lo = half + margin
    hi = size - 1 - half - margin
    if config.translation_range is not None:
        lo = np.maximum(lo, size / 2.0 - config.translation_range)
        hi = np.minimum(hi, size / 2.0 + config.translation_range)
    center = np.where(lo <= hi, rng.uniform(lo, np.maximum(lo, hi)), size / 2.0)

    placed = rotated + center
    jitter = rng.uniform(-config.jitter, config.jitter, size=placed.shape)
    placed = placed + jitter
    vertices = placed[: len(outline)]
    free_points = placed[len(outline):]

    landmarks = []
    free_cursor = 0
    for name, spec in template.landmarks:
        if isinstance(spec, int):
            x, y = vertices[spec]
        else:
            x, y = free_points[free_cursor]
            free_cursor += 1
        landmarks.append(LandmarkAnnotation(taxonomy.LANDMARK_IDS[name], Point(float(x), float(y))))

    background = _wood_background(rng, size, config.background_base, config.background_noise)
    img = Image.fromarray(background)
    draw = ImageDraw.Draw(img)
    brightness = rng.uniform(0.85, 1.15)
    fill = tuple(int(np.clip(c * brightness, 0, 255)) for c in template.color)
    outline_color = tuple(int(c * 0.6) for c in fill)
    draw.polygon([tuple(v) for v in vertices], fill=fill, outline=outline_color)
    return np.asarray(img), landmarks


def generate_synthetic(config: SyntheticSceneConfig, out_dir: str | Path) -> DatasetManifest:
    """Render ``config.n_examples`` scenes into ``out_dir`` as PNG files.

    Garment classes cycle through ``config.classes`` so small datasets still
    cover every class. Fully deterministic for a fixed config.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[ExampleRecord] = []
    for index in range(config.n_examples):
        class_name = config.classes[index % len(config.classes)]
        template = TEMPLATES[class_name]
        rng = np.random.default_rng([config.seed, index])
        image, landmarks = _render_scene(config, template, rng)
        filename = f"synth_{index:05d}.png"
        Image.fromarray(image).save(out_dir / filename)
        records.append(
            record_from_landmarks(
                image_path=filename,
                width=config.image_size,
                height=config.image_size,
                garment_class_id=taxonomy.GARMENT_IDS[class_name],
                landmarks=landmarks,
            )
        )
    return DatasetManifest(records=records, root=out_dir)
