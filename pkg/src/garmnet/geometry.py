"""Anchor-grid geometry: coordinates, boxes, IoU, anchor assignment and the
offset codec.

Everything here is pure numpy and deterministic; randomness enters only
through explicit seeds. Coordinate convention throughout the package:
x runs along columns (rightward), y along rows (downward). Grid cell (i, j)
means row i, column j, and its anchor point sits at (stride * j, stride * i).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

# Cell labels in an AnchorAssignment, alongside landmark class ids >= 0.
BACKGROUND = -1
IGNORE = -2


class Point(NamedTuple):
    x: float
    y: float


class Box(NamedTuple):
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class AnchorGrid:
    """Regular lattice of anchor points with a fixed square side per anchor."""

    grid_h: int
    grid_w: int
    stride: float
    box_side: float
    anchor_points: np.ndarray  # (grid_h, grid_w, 2), [..., 0] = x, [..., 1] = y

    @property
    def n_cells(self) -> int:
        return self.grid_h * self.grid_w

    def anchor_point(self, i: int, j: int) -> Point:
        x, y = self.anchor_points[i, j]
        return Point(float(x), float(y))


@dataclass
class AnchorAssignment:
    """Per-cell supervision targets produced by :func:`assign_anchors`.

    ``label`` holds a landmark class id for positive cells, BACKGROUND or
    IGNORE otherwise. ``target_points`` / ``target_offsets`` are zero at
    non-positive cells.
    """

    label: np.ndarray           # (grid_h, grid_w) int
    target_points: np.ndarray   # (grid_h, grid_w, 2) float
    target_offsets: np.ndarray  # (grid_h, grid_w, 2) float, point - anchor

    @property
    def positive_mask(self) -> np.ndarray:
        return self.label >= 0

    @property
    def background_mask(self) -> np.ndarray:
        return self.label == BACKGROUND

    @property
    def n_positive(self) -> int:
        return int(self.positive_mask.sum())


@dataclass
class LossMask:
    """Binary selector over grid cells entering the landmark losses."""

    active: np.ndarray  # (grid_h, grid_w) bool


def _anchor_lattice(grid_h: int, grid_w: int, stride: float) -> np.ndarray:
    jj, ii = np.meshgrid(np.arange(grid_w), np.arange(grid_h))
    return np.stack([stride * jj, stride * ii], axis=-1).astype(float)


def make_anchor_grid(input_size: float, stride: float, box_side: float) -> AnchorGrid:
    """Build the anchor lattice that fits an ``input_size`` square image.

    The cell count per side is ``floor((input_size - box_side) / stride) + 1``
    so the last anchor's square never overshoots the image by more than half
    a side.
    """
    if input_size <= 0 or stride <= 0 or box_side <= 0:
        raise ValueError("input_size, stride and box_side must be positive")
    if input_size < box_side:
        raise ValueError("input_size must be at least box_side")
    n = int(np.floor((input_size - box_side) / stride)) + 1
    return AnchorGrid(
        grid_h=n,
        grid_w=n,
        stride=float(stride),
        box_side=float(box_side),
        anchor_points=_anchor_lattice(n, n, float(stride)),
    )


def grid_for_feature_map(grid_size: int, input_size: float, box_side: float) -> AnchorGrid:
    """Anchor grid matching a backbone's square feature map.

    The stride is derived as ``input_size / grid_size`` so head and anchor
    shapes agree by construction.
    """
    if grid_size <= 0 or input_size <= 0 or box_side <= 0:
        raise ValueError("grid_size, input_size and box_side must be positive")
    stride = float(input_size) / grid_size
    return AnchorGrid(
        grid_h=grid_size,
        grid_w=grid_size,
        stride=stride,
        box_side=float(box_side),
        anchor_points=_anchor_lattice(grid_size, grid_size, stride),
    )


def landmark_to_box(p: Point | Sequence[float], box_side: float) -> Box:
    """Square of side ``box_side`` centered at ``p``; never clipped."""
    if box_side <= 0:
        raise ValueError("box_side must be positive")
    x, y = p
    half = box_side / 2.0
    return Box(x - half, y - half, x + half, y + half)


def iou(a: Box | Sequence[float], b: Box | Sequence[float]) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint or both degenerate."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def derive_garment_box(landmarks: Sequence[Point] | np.ndarray) -> Box:
    """Tightest axis-aligned box containing every landmark point."""
    pts = np.asarray(landmarks, dtype=float)
    if pts.size == 0:
        raise ValueError("cannot derive a garment box from zero landmarks")
    pts = pts.reshape(-1, 2)
    return Box(
        float(pts[:, 0].min()),
        float(pts[:, 1].min()),
        float(pts[:, 0].max()),
        float(pts[:, 1].max()),
    )


def _pairwise_iou_same_side(anchors: np.ndarray, points: np.ndarray, side: float) -> np.ndarray:
    """IoU between equal-side squares centered at ``anchors`` and ``points``.

    anchors: (N, 2), points: (L, 2) -> (N, L).
    """
    dx = np.abs(anchors[:, None, 0] - points[None, :, 0])
    dy = np.abs(anchors[:, None, 1] - points[None, :, 1])
    ox = np.clip(side - dx, 0.0, None)
    oy = np.clip(side - dy, 0.0, None)
    inter = ox * oy
    union = 2.0 * side * side - inter
    return inter / union


def assign_anchors(
    grid: AnchorGrid,
    landmarks: Sequence[tuple[int, Point | Sequence[float]]],
    pos_thresh: float = 0.7,
    bg_thresh: float = 0.3,
) -> AnchorAssignment:
    """Label every grid cell against the landmark squares.

    A cell is positive for the landmark whose square overlaps its anchor
    square with IoU strictly above ``pos_thresh`` (ties by lowest class id,
    then input order); background when its best IoU falls strictly below
    ``bg_thresh``; ignored otherwise. Offsets are target point minus anchor
    point, in raw pixels.
    """
    if not (0 < bg_thresh < 1 and 0 < pos_thresh < 1):
        raise ValueError("thresholds must lie in (0, 1)")
    if pos_thresh < bg_thresh:
        raise ValueError("pos_thresh must be >= bg_thresh")

    h, w = grid.grid_h, grid.grid_w
    label = np.full((h, w), BACKGROUND, dtype=int)
    target_points = np.zeros((h, w, 2), dtype=float)
    target_offsets = np.zeros((h, w, 2), dtype=float)
    if len(landmarks) == 0:
        return AnchorAssignment(label, target_points, target_offsets)

    class_ids = np.array([int(c) for c, _ in landmarks])
    points = np.array([[float(p[0]), float(p[1])] for _, p in landmarks])
    anchors = grid.anchor_points.reshape(-1, 2)
    ious = _pairwise_iou_same_side(anchors, points, grid.box_side)  # (cells, L)

    best = ious.max(axis=1)
    for cell in range(anchors.shape[0]):
        i, j = divmod(cell, w)
        if best[cell] > pos_thresh:
            tied = np.flatnonzero(ious[cell] == best[cell])
            winner = tied[np.argmin(class_ids[tied])] if tied.size > 1 else tied[0]
            label[i, j] = class_ids[winner]
            target_points[i, j] = points[winner]
            target_offsets[i, j] = points[winner] - anchors[cell]
        elif best[cell] < bg_thresh:
            label[i, j] = BACKGROUND
        else:
            label[i, j] = IGNORE
    return AnchorAssignment(label, target_points, target_offsets)


def build_loss_mask(
    assignment: AnchorAssignment,
    n_background: int = 10,
    seed: int | Sequence[int] = 0,
) -> LossMask:
    """Select all positive cells plus up to ``n_background`` random background cells."""
    if n_background < 0:
        raise ValueError("n_background must be >= 0")
    active = assignment.positive_mask.copy()
    bg_cells = np.flatnonzero(assignment.background_mask.ravel())
    k = min(n_background, bg_cells.size)
    if k > 0:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(bg_cells, size=k, replace=False)
        flat = active.ravel()
        flat[chosen] = True
        active = flat.reshape(active.shape)
    return LossMask(active=active)


def decode_landmarks(grid: AnchorGrid, offsets: np.ndarray) -> np.ndarray:
    """Per-cell landmark locations: anchor point plus predicted offset."""
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape != (grid.grid_h, grid.grid_w, 2):
        raise ValueError(
            f"offsets shape {offsets.shape} does not match grid "
            f"({grid.grid_h}, {grid.grid_w}, 2)"
        )
    return grid.anchor_points + offsets
