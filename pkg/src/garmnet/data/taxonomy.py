"""Default class taxonomies: 27 landmark categories and 9 garment categories.

These are the package defaults; external annotation sources are mapped onto
them through a label-mapping file (see :mod:`garmnet.data.ctu`), so nothing
here is assumed about any particular source's label strings.
"""

from __future__ import annotations

LANDMARK_CLASSES = [
    "left-leg-outer",
    "left-leg-inner",
    "crotch",
    "right-leg-inner",
    "right-leg-outer",
    "top-right",
    "top-left",
    "right-sleeve-inner",
    "right-sleeve-outer",
    "left-sleeve-inner",
    "left-sleeve-outer",
    "hood-right",
    "hood-top",
    "hood-left",
    "bottom-left",
    "bottom-middle",
    "bottom-right",
    "right-armpit",
    "right-shoulder",
    "neckline-right",
    "collar-right",
    "collar-left",
    "neckline-left",
    "left-shoulder",
    "left-armpit",
    "fold-1",
    "fold-2",
]

GARMENT_CLASSES = [
    "towel",
    "pants",
    "shorts",
    "skirt",
    "tshirt",
    "tshirt-long",
    "polo",
    "hoody",
    "blouse",
]

N_LANDMARK_CLASSES = len(LANDMARK_CLASSES)
N_GARMENT_CLASSES = len(GARMENT_CLASSES)

LANDMARK_IDS = {name: i for i, name in enumerate(LANDMARK_CLASSES)}
GARMENT_IDS = {name: i for i, name in enumerate(GARMENT_CLASSES)}


def landmark_name(class_id: int) -> str:
    return LANDMARK_CLASSES[class_id]


def garment_name(class_id: int) -> str:
    return GARMENT_CLASSES[class_id]
