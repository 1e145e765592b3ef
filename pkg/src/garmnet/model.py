"""Network definition: shared feature extractor, landmark detector head,
garment localizer head, and the bridge variant that feeds the landmark
classifier's output map into the garment localizer.

Tensor layout: backbones consume channel-first images ``(B, 3, H, W)``;
head outputs are exposed channel-last ``(B, S, S, C)`` to line up with the
grid-indexed numpy targets. Offset channel 0 is dx (columns), channel 1 dy
(rows).
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import taxonomy
from .geometry import AnchorGrid, Box, Point, grid_for_feature_map

CHECKPOINT_FORMAT = "garmnet-checkpoint"
CHECKPOINT_VERSION = 1

BACKBONE_KINDS = ("tiny", "resnet50-conv4x")
VARIANTS = ("garmnet", "garmnet-b")

# both backbones downsample by 2^4
SPATIAL_REDUCTION = 16


@dataclass
class BackboneConfig:
    kind: str = "resnet50-conv4x"
    input_size: int = 224
    pretrained_weights: str | None = None

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.input_size % SPATIAL_REDUCTION != 0:
            raise ValueError(
                f"input_size must be a multiple of {SPATIAL_REDUCTION}, got {self.input_size}"
            )


@dataclass
class ModelConfig:
    """Self-describing architecture config, stored verbatim in checkpoints."""

    variant: str = "garmnet"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    n_landmark_classes: int = taxonomy.N_LANDMARK_CLASSES
    n_garment_classes: int = taxonomy.N_GARMENT_CLASSES
    box_side: float = 26.0
    spatial_constraint: bool = False
    normalize_offsets: bool = False
    # box codec: raw head values are (x_center, y_center, width, height) / input_size
    box_codec: str = "cxcywh-normalized"
    landmark_class_names: list[str] = field(default_factory=lambda: list(taxonomy.LANDMARK_CLASSES))
    garment_class_names: list[str] = field(default_factory=lambda: list(taxonomy.GARMENT_CLASSES))

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)

    @property
    def grid_size(self) -> int:
        return self.backbone.input_size // SPATIAL_REDUCTION

    def anchor_grid(self) -> AnchorGrid:
        return grid_for_feature_map(self.grid_size, self.backbone.input_size, self.box_side)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(obj: dict) -> "ModelConfig":
        obj = dict(obj)
        obj["backbone"] = BackboneConfig(**obj["backbone"])
        return ModelConfig(**obj)


class TinyBackbone(nn.Module):
    """Four stride-2 conv stages, normalization-free, trained from scratch.

    Small enough for CPU test runs; 224 input still yields the same 14x14
    grid as the large backbone.
    """

    out_channels = 64

    def __init__(self):
        super().__init__()
        channels = [3, 16, 32, 48, 64]
        layers = []
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            layers += [nn.Conv2d(c_in, c_out, 3, stride=2, padding=1), nn.ReLU(inplace=True)]
        self.stages = nn.Sequential(*layers)

    def forward(self, x):
        return self.stages(x)


class ResNet50Conv4x(nn.Module):
    """torchvision ResNet-50 truncated after the conv4_x block (14x14 at 224)."""

    out_channels = 1024

    def __init__(self):
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        self.body = nn.Sequential(
            OrderedDict(
                [
                    ("conv1", net.conv1),
                    ("bn1", net.bn1),
                    ("relu", net.relu),
                    ("maxpool", net.maxpool),
                    ("layer1", net.layer1),
                    ("layer2", net.layer2),
                    ("layer3", net.layer3),
                ]
            )
        )

    def forward(self, x):
        return self.body(x)


def load_backbone_weights(backbone: nn.Module, path: str | Path) -> None:
    """Overwrite backbone parameters from an external state-dict file.

    Accepts either a bare state dict or a container with a ``state_dict``
    entry (a full ResNet-50 dict works; unused keys are ignored). Every
    backbone parameter must be covered and shape-compatible.
    """
    state = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state and not any(
        torch.is_tensor(v) for v in state.values()
    ):
        state = state["state_dict"]
    own = backbone.state_dict()
    prefix = "body." if any(k.startswith("body.") for k in own) else ""
    filtered = {}
    for key in own:
        source_key = key[len(prefix):] if prefix and key.startswith(prefix) else key
        if source_key not in state and key not in state:
            raise ValueError(f"pretrained weights missing parameter {source_key!r}")
        tensor = state.get(source_key, state.get(key))
        if tuple(tensor.shape) != tuple(own[key].shape):
            raise ValueError(
                f"pretrained weight {source_key!r} has shape {tuple(tensor.shape)}, "
                f"model expects {tuple(own[key].shape)}"
            )
        filtered[key] = tensor
    backbone.load_state_dict(filtered)


def build_backbone(config: BackboneConfig) -> nn.Module:
    backbone = TinyBackbone() if config.kind == "tiny" else ResNet50Conv4x()
    if config.pretrained_weights:
        load_backbone_weights(backbone, config.pretrained_weights)
    return backbone


class LandmarkHead(nn.Module):
    """3x3 sliding network with sibling classifier and offset-regressor 1x1 convs."""

    def __init__(self, in_channels: int, n_classes: int, hidden: int = 256):
        super().__init__()
        self.intermediate = nn.Conv2d(in_channels, hidden, 3, padding=1)
        self.relu = nn.ReLU(inplace=True)
        self.classifier = nn.Conv2d(hidden, n_classes + 1, 1)
        self.regressor = nn.Conv2d(hidden, 2, 1)

    def forward(self, features):
        h = self.relu(self.intermediate(features))
        return self.classifier(h), self.regressor(h)


class GarmentHead(nn.Module):
    """Three-layer fully connected localizer: 512-d hidden, class + box heads."""

    def __init__(self, in_features: int, n_classes: int, hidden: int = 512):
        super().__init__()
        self.intermediate = nn.Linear(in_features, hidden)
        self.relu = nn.ReLU(inplace=True)
        self.classifier = nn.Linear(hidden, n_classes)
        self.regressor = nn.Linear(hidden, 4)

    def forward(self, flat):
        h = self.relu(self.intermediate(flat))
        return self.classifier(h), self.regressor(h)


@dataclass
class HeadOutputs:
    """Channel-last head outputs for one forward pass."""

    landmark_class_logits: torch.Tensor  # (B, S, S, n+1)
    landmark_class_probs: torch.Tensor   # depth-wise softmax of the logits
    landmark_spatial_probs: torch.Tensor  # per-class-plane softmax over the grid
    landmark_offsets: torch.Tensor       # (B, S, S, 2), raw head units
    garment_class_logits: torch.Tensor   # (B, n_garment)
    garment_class_probs: torch.Tensor
    garment_box_raw: torch.Tensor        # (B, 4) codec values


@dataclass
class LandmarkPrediction:
    class_id: int
    point: Point
    confidence: float
    cell: tuple[int, int]


@dataclass
class GarmentPrediction:
    class_id: int
    probs: np.ndarray
    box: Box


@dataclass
class PredictionSet:
    landmarks: list[LandmarkPrediction]
    garment: GarmentPrediction


def spatial_softmax(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the grid cells, independently per class plane."""
    b, s1, s2, c = logits.shape
    flat = logits.reshape(b, s1 * s2, c)
    return torch.softmax(flat, dim=1).reshape(b, s1, s2, c)


class GarmNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.backbone = build_backbone(config.backbone)
        s = config.grid_size
        d = self.backbone.out_channels
        self.landmark_head = LandmarkHead(d, config.n_landmark_classes)
        garment_in = s * s * d
        if config.variant == "garmnet-b":
            garment_in += s * s * (config.n_landmark_classes + 1)
        self.garment_head = GarmentHead(garment_in, config.n_garment_classes)

    def forward(self, images: torch.Tensor) -> HeadOutputs:
        size = self.config.backbone.input_size
        if images.dim() != 4 or images.shape[1] != 3 or images.shape[2:] != (size, size):
            raise ValueError(
                f"expected preprocessed images of shape (B, 3, {size}, {size}), "
                f"got {tuple(images.shape)}"
            )
        features = self.backbone(images)
        cls_logits, offsets = self.landmark_head(features)
        cls_logits = cls_logits.permute(0, 2, 3, 1)  # -> (B, S, S, n+1)
        offsets = offsets.permute(0, 2, 3, 1)
        depth_probs = torch.softmax(cls_logits, dim=-1)

        flat = features.flatten(1)
        if self.config.variant == "garmnet-b":
            # one-way feed: the garment branch reads the landmark classifier's
            # softmax map without sending gradients back into it
            flat = torch.cat([flat, depth_probs.detach().flatten(1)], dim=1)
        garment_logits, box_raw = self.garment_head(flat)

        return HeadOutputs(
            landmark_class_logits=cls_logits,
            landmark_class_probs=depth_probs,
            landmark_spatial_probs=spatial_softmax(cls_logits),
            landmark_offsets=offsets,
            garment_class_logits=garment_logits,
            garment_class_probs=torch.softmax(garment_logits, dim=-1),
            garment_box_raw=box_raw,
        )

    @torch.no_grad()
    def predict(self, images: torch.Tensor) -> list[PredictionSet]:
        outputs = self.forward(images)
        return decode_predictions(outputs, self.config)


def encode_box(box: Box, input_size: float) -> np.ndarray:
    cx = (box.x_min + box.x_max) / 2.0
    cy = (box.y_min + box.y_max) / 2.0
    return np.array(
        [cx / input_size, cy / input_size, box.width / input_size, box.height / input_size],
        dtype=np.float64,
    )


def decode_box(raw, input_size: float) -> Box:
    cx, cy, w, h = (float(v) * input_size for v in raw)
    w, h = max(w, 0.0), max(h, 0.0)
    return Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def decode_predictions(
    outputs: HeadOutputs, config: ModelConfig, conf_thresh: float = 0.5
) -> list[PredictionSet]:
    """Turn head outputs into per-example prediction sets.

    Per-cell confidence is the average of the depth-wise and spatial softmax
    when the spatial constraint is enabled, the depth-wise softmax alone
    otherwise. A landmark is retained when the confidence argmax at its cell
    is a non-background class at or above ``conf_thresh``; its location is
    the anchor point plus the predicted offset.
    """
    grid = config.anchor_grid()
    if config.spatial_constraint:
        conf = 0.5 * (outputs.landmark_class_probs + outputs.landmark_spatial_probs)
    else:
        conf = outputs.landmark_class_probs
    conf = conf.detach().cpu().numpy()
    offsets = outputs.landmark_offsets.detach().cpu().numpy()
    if config.normalize_offsets:
        offsets = offsets * grid.stride
    garment_probs = outputs.garment_class_probs.detach().cpu().numpy()
    boxes_raw = outputs.garment_box_raw.detach().cpu().numpy()

    background = config.n_landmark_classes
    results = []
    for b in range(conf.shape[0]):
        landmarks = []
        best = conf[b].argmax(axis=-1)
        for i in range(grid.grid_h):
            for j in range(grid.grid_w):
                cls = int(best[i, j])
                score = float(conf[b, i, j, cls])
                if cls == background or score < conf_thresh:
                    continue
                ax, ay = grid.anchor_points[i, j]
                dx, dy = offsets[b, i, j]
                landmarks.append(
                    LandmarkPrediction(
                        class_id=cls,
                        point=Point(float(ax + dx), float(ay + dy)),
                        confidence=score,
                        cell=(i, j),
                    )
                )
        garment = GarmentPrediction(
            class_id=int(garment_probs[b].argmax()),
            probs=garment_probs[b],
            box=decode_box(boxes_raw[b], config.backbone.input_size),
        )
        results.append(PredictionSet(landmarks=landmarks, garment=garment))
    return results


def images_to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """uint8 HxWx3 arrays -> (B, 3, H, W) float tensor scaled to [0, 1]."""
    arr = np.stack([np.asarray(img) for img in images])
    tensor = torch.from_numpy(arr).to(dtype) / 255.0
    return tensor.permute(0, 3, 1, 2).contiguous()


def build_model(config: ModelConfig) -> GarmNet:
    return GarmNet(config)


def save_checkpoint(path: str | Path, model: GarmNet, meta: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "config_json": json.dumps(model.config.to_dict()),
        "meta_json": json.dumps(meta or {}),
        "state_dict": model.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[GarmNet, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('format_version')}")
    config = ModelConfig.from_dict(json.loads(payload["config_json"]))
    model = build_model(config)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise ValueError(f"{path}: checkpoint incompatible with its declared config: {exc}") from exc
    meta = json.loads(payload.get("meta_json", "{}"))
    return model, meta
