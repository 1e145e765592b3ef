"""Photometric augmentation: hue rotation plus pixel-wise Gaussian noise.

Annotations are never touched; both perturbations are purely photometric.
"""

from __future__ import annotations

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .images import Example

DEFAULT_GAUSSIAN_SIGMA = 8.0        # on the 0..255 scale
DEFAULT_HUE_DELTA_RANGE = (-18.0, 18.0)  # degrees


def _rotate_hue(image: np.ndarray, degrees: float) -> np.ndarray:
    hsv = rgb_to_hsv(image.astype(np.float64) / 255.0)
    hsv[..., 0] = (hsv[..., 0] + degrees / 360.0) % 1.0
    return hsv_to_rgb(hsv) * 255.0


def augment(
    example: Example,
    seed: int | list[int],
    gaussian_sigma: float = DEFAULT_GAUSSIAN_SIGMA,
    hue_delta_range: tuple[float, float] = DEFAULT_HUE_DELTA_RANGE,
) -> Example:
    """Return a noised copy of ``example``; deterministic for a given seed.

    The hue shift is drawn uniformly from ``hue_delta_range`` (degrees) and
    applied in HSV space, then Gaussian noise with std ``gaussian_sigma`` is
    added per pixel and the result clipped back to the valid range. With a
    zero sigma and a zero-width hue range the image is returned bit-identical.
    """
    if gaussian_sigma < 0:
        raise ValueError("gaussian_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    hue_delta = rng.uniform(hue_delta_range[0], hue_delta_range[1])

    image = example.image.astype(np.float64)
    if hue_delta != 0.0:
        image = _rotate_hue(example.image, hue_delta)
    if gaussian_sigma > 0:
        image = image + rng.normal(0.0, gaussian_sigma, size=image.shape)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return Example(
        image=image,
        garment_class=example.garment_class,
        landmarks=example.landmarks,
        garment_box=example.garment_box,
    )
