"""Training orchestration: parameter init, the epoch loop, checkpointing,
history logging, and a finite-difference gradient sanity check.

Anchor assignments and loss masks are built per batch on the fly, so the
background sampling is re-drawn every epoch. All randomness flows from the
three seeds in the config (data order, parameter init, per-example sampling),
making runs reproducible; strict mode additionally pins the math to a single
thread for bit-stable trajectories.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .data import taxonomy
from .data.augment import augment
from .data.images import Example, load_examples
from .data.manifest import DatasetManifest, balance_classes
from .geometry import AnchorGrid, assign_anchors, build_loss_mask
from .losses import (
    LossBundle,
    SpatialMask,
    classification_targets,
    garment_losses,
    landmark_classification_loss,
    landmark_regression_loss,
    spatial_constraint_loss,
    total_loss,
)
from .model import (
    BackboneConfig,
    GarmNet,
    ModelConfig,
    build_model,
    encode_box,
    load_backbone_weights,
    save_checkpoint,
)


class NumericalError(RuntimeError):
    """Raised when the total loss turns non-finite; carries the batch's examples."""

    def __init__(self, message: str, example_ids: list[str]):
        super().__init__(message)
        self.example_ids = example_ids


@dataclass
class TrainConfig:
    variant: str = "garmnet"
    backbone: str = "resnet50-conv4x"
    input_size: int = 224
    pretrained_weights: str | None = None
    finetune_backbone: bool = True
    # anchor supervision
    box_side: float = 26.0
    pos_thresh: float = 0.7
    bg_thresh: float = 0.3
    n_background: int = 10
    normalize_offsets: bool = False
    spatial_constraint: bool = False
    # losses: (landmark_reg, landmark_cls, garment_cls, garment_reg)
    loss_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    # optimizer
    learning_rate: float = 1.0
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-7
    batch_size: int = 30
    epochs: int = 40
    # initialization
    kernel_std: float = 0.01
    bias_init: float = 1.0
    # data handling
    balance: bool = False
    augment: bool = False
    gaussian_sigma: float = 8.0
    hue_delta: float = 18.0
    # seeds
    data_seed: int = 0
    init_seed: int = 0
    sampling_seed: int = 0
    strict_determinism: bool = True
    device: str = "cpu"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if len(self.loss_weights) != 4:
            raise ValueError("loss_weights must have 4 entries")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            variant=self.variant,
            backbone=BackboneConfig(
                kind=self.backbone,
                input_size=self.input_size,
                pretrained_weights=self.pretrained_weights,
            ),
            box_side=self.box_side,
            spatial_constraint=self.spatial_constraint,
            normalize_offsets=self.normalize_offsets,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return TrainConfig(**obj)


@dataclass
class EpochStats:
    epoch: int
    train: dict[str, float]
    val: dict[str, float]
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def write(self, history_path: str | Path, timing_path: str | Path | None = None) -> None:
        """History rows are fully seed-determined; wall-clock goes to a
        separate timing file so the history itself is reproducible."""
        with open(history_path, "w", encoding="utf-8") as f:
            for e in self.epochs:
                f.write(json.dumps({"epoch": e.epoch, "train": e.train, "val": e.val}) + "\n")
        if timing_path is not None:
            with open(timing_path, "w", encoding="utf-8") as f:
                for e in self.epochs:
                    f.write(json.dumps({"epoch": e.epoch, "seconds": e.seconds}) + "\n")


@dataclass
class Batch:
    images: torch.Tensor              # (B, 3, S, S)
    landmark_targets: torch.Tensor    # (B, S, S, n+1) one-hot
    offset_targets: torch.Tensor      # (B, S, S, 2)
    positive_mask: torch.Tensor       # (B, S, S) bool
    active_mask: torch.Tensor         # (B, S, S) bool
    class_active: torch.Tensor        # (B, n) bool
    garment_targets: torch.Tensor     # (B, n_garment) one-hot
    garment_boxes: torch.Tensor       # (B, 4) codec values
    example_ids: list[str]


def init_parameters(
    model: torch.nn.Module,
    seed: int,
    kernel_std: float = 0.01,
    bias_value: float = 1.0,
) -> torch.nn.Module:
    """Draw every conv/linear kernel from N(0, kernel_std^2), set biases to
    ``bias_value`` exactly. Bit-identical for a fixed seed."""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (torch.nn.Conv2d, torch.nn.Linear)):
                module.weight.normal_(0.0, kernel_std, generator=generator)
                if module.bias is not None:
                    module.bias.fill_(bias_value)
    return model


def prepare_example(
    example: Example,
    example_id: str,
    grid: AnchorGrid,
    config: TrainConfig,
    mask_seed,
):
    """Assignment, masks and targets for one example, as numpy arrays."""
    landmarks = [(lm.class_id, lm.point) for lm in example.landmarks]
    assignment = assign_anchors(grid, landmarks, config.pos_thresh, config.bg_thresh)
    loss_mask = build_loss_mask(assignment, config.n_background, seed=mask_seed)
    n = taxonomy.N_LANDMARK_CLASSES
    onehot = classification_targets(assignment.label, n)
    class_active = SpatialMask.from_labels(assignment.label, n).active_classes
    offsets = assignment.target_offsets
    if config.normalize_offsets:
        offsets = offsets / grid.stride
    garment_onehot = np.zeros(taxonomy.N_GARMENT_CLASSES, dtype=np.float32)
    garment_onehot[example.garment_class] = 1.0
    return {
        "image": example.image,
        "landmark_targets": onehot,
        "offset_targets": offsets.astype(np.float32),
        "positive_mask": assignment.positive_mask,
        "active_mask": loss_mask.active,
        "class_active": class_active,
        "garment_targets": garment_onehot,
        "garment_box": encode_box(example.garment_box, config.input_size).astype(np.float32),
        "example_id": example_id,
    }


def collate(prepared: list[dict], device="cpu", dtype=torch.float32) -> Batch:
    def stack(key, out_dtype):
        return torch.as_tensor(
            np.stack([p[key] for p in prepared]), device=device
        ).to(out_dtype)

    images = torch.as_tensor(
        np.stack([p["image"] for p in prepared]).astype(np.float32) / 255.0, device=device
    ).to(dtype).permute(0, 3, 1, 2).contiguous()
    return Batch(
        images=images,
        landmark_targets=stack("landmark_targets", dtype),
        offset_targets=stack("offset_targets", dtype),
        positive_mask=stack("positive_mask", torch.bool),
        active_mask=stack("active_mask", torch.bool),
        class_active=stack("class_active", torch.bool),
        garment_targets=stack("garment_targets", dtype),
        garment_boxes=stack("garment_box", dtype),
        example_ids=[p["example_id"] for p in prepared],
    )


def compute_losses(model_outputs, batch: Batch, config: TrainConfig) -> LossBundle:
    reg = landmark_regression_loss(
        model_outputs.landmark_offsets, batch.offset_targets, batch.positive_mask
    )
    if config.spatial_constraint:
        cls = spatial_constraint_loss(
            model_outputs.landmark_class_probs,
            model_outputs.landmark_spatial_probs,
            batch.landmark_targets,
            batch.active_mask,
            batch.class_active,
        )
    else:
        cls = landmark_classification_loss(
            model_outputs.landmark_class_probs, batch.landmark_targets, batch.active_mask
        )
    gcls, greg = garment_losses(
        model_outputs.garment_class_probs,
        batch.garment_targets,
        model_outputs.garment_box_raw,
        batch.garment_boxes,
    )
    return total_loss(reg, cls, gcls, greg, weights=config.loss_weights)


@dataclass
class TrainResult:
    model: GarmNet
    history: TrainHistory
    best_epoch: int
    best_checkpoint: Path | None
    final_checkpoint: Path | None


def build_training_model(config: TrainConfig) -> GarmNet:
    """Construct, initialize and (optionally) load pretrained backbone weights."""
    model = build_model(config.model_config())
    init_parameters(model, config.init_seed, config.kernel_std, config.bias_init)
    if config.pretrained_weights:
        load_backbone_weights(model.backbone, config.pretrained_weights)
    if not config.finetune_backbone:
        for p in model.backbone.parameters():
            p.requires_grad_(False)
    return model.to(config.device)


def _epoch_mean(step_stats: list[dict[str, float]]) -> dict[str, float]:
    keys = step_stats[0].keys()
    return {k: float(np.mean([s[k] for s in step_stats])) for k in keys}


def train(
    config: TrainConfig,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Run the full optimization loop and return the trained model.

    When ``out_dir`` is given, writes ``history.jsonl``, ``timing.jsonl``,
    ``best.ckpt`` (lowest validation total) and ``final.ckpt``.
    """
    if config.strict_determinism:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(config.init_seed)

    if config.balance:
        train_manifest = balance_classes(train_manifest)
    train_examples = load_examples(train_manifest, config.input_size)
    train_ids = [r.image_path for r in train_manifest.records]
    val_examples = load_examples(val_manifest, config.input_size)
    val_ids = [r.image_path for r in val_manifest.records]

    model = build_training_model(config)
    grid = model.config.anchor_grid()
    optimizer = torch.optim.Adadelta(
        [p for p in model.parameters() if p.requires_grad],
        lr=config.learning_rate,
        rho=config.adadelta_rho,
        eps=config.adadelta_eps,
    )

    history = TrainHistory()
    best_total = float("inf")
    best_epoch = -1
    best_state = None

    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = np.random.default_rng([config.data_seed, epoch]).permutation(len(train_examples))
        model.train()
        step_stats = []
        for step_start in range(0, len(order), config.batch_size):
            indices = order[step_start : step_start + config.batch_size]
            prepared = []
            for idx in indices:
                example = train_examples[idx]
                if config.augment:
                    example = augment(
                        example,
                        seed=[config.sampling_seed, epoch, int(idx), 0],
                        gaussian_sigma=config.gaussian_sigma,
                        hue_delta_range=(-config.hue_delta, config.hue_delta),
                    )
                prepared.append(
                    prepare_example(
                        example, train_ids[idx], grid, config,
                        mask_seed=[config.sampling_seed, epoch, int(idx), 1],
                    )
                )
            batch = collate(prepared, device=config.device)
            outputs = model(batch.images)
            bundle = compute_losses(outputs, batch, config)
            if not torch.isfinite(bundle.total):
                raise NumericalError(
                    f"non-finite total loss at epoch {epoch} (step {step_start // config.batch_size})",
                    example_ids=batch.example_ids,
                )
            optimizer.zero_grad()
            bundle.total.backward()
            optimizer.step()
            step_stats.append(bundle.detached())

        val_stats = evaluate_losses(model, val_examples, val_ids, grid, config)
        epoch_stats = EpochStats(
            epoch=epoch,
            train=_epoch_mean(step_stats),
            val=val_stats,
            seconds=time.perf_counter() - start,
        )
        history.epochs.append(epoch_stats)
        if val_stats["total"] < best_total:
            best_total = val_stats["total"]
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    best_path = final_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {"config": config.to_dict(), "best_epoch": best_epoch}
        final_path = out_dir / "final.ckpt"
        save_checkpoint(final_path, model, meta={**meta, "checkpoint": "final"})
        if best_state is not None:
            current = model.state_dict()
            model.load_state_dict(best_state)
            best_path = out_dir / "best.ckpt"
            save_checkpoint(best_path, model, meta={**meta, "checkpoint": "best"})
            model.load_state_dict(current)
        history.write(out_dir / "history.jsonl", out_dir / "timing.jsonl")

    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_checkpoint=best_path,
        final_checkpoint=final_path,
    )


@torch.no_grad()
def evaluate_losses(
    model: GarmNet,
    examples: list[Example],
    example_ids: list[str],
    grid: AnchorGrid,
    config: TrainConfig,
) -> dict[str, float]:
    """Loss components over a dataset; mask sampling is fixed per example so
    the metric is comparable across epochs."""
    model.eval()
    totals: list[dict[str, float]] = []
    for start in range(0, len(examples), config.batch_size):
        chunk = examples[start : start + config.batch_size]
        ids = example_ids[start : start + config.batch_size]
        prepared = [
            prepare_example(ex, eid, grid, config, mask_seed=[config.sampling_seed, start + k, 2])
            for k, (ex, eid) in enumerate(zip(chunk, ids))
        ]
        batch = collate(prepared, device=config.device)
        bundle = compute_losses(model(batch.images), batch, config)
        totals.append(bundle.detached())
    model.train()
    return _epoch_mean(totals) if totals else {}


@dataclass
class GradientCheckEntry:
    parameter: str
    index: int
    analytic: float
    finite_difference: float
    rel_error: float


@dataclass
class GradientCheckReport:
    max_rel_error: float
    n_checked: int
    entries: list[GradientCheckEntry]


def gradient_sanity(
    model: GarmNet,
    batch: Batch,
    config: TrainConfig,
    n_params: int = 100,
    seed: int = 0,
    step: float = 1e-5,
) -> GradientCheckReport:
    """Compare autograd gradients of the total loss against central finite
    differences on a random sample of parameters, in 64-bit precision.

    The model is evaluated in eval mode so parameter perturbations are the
    only state change between the two loss evaluations.
    """
    was_training = model.training
    model.eval()
    model.double()
    batch64 = Batch(
        images=batch.images.double(),
        landmark_targets=batch.landmark_targets.double(),
        offset_targets=batch.offset_targets.double(),
        positive_mask=batch.positive_mask,
        active_mask=batch.active_mask,
        class_active=batch.class_active,
        garment_targets=batch.garment_targets.double(),
        garment_boxes=batch.garment_boxes.double(),
        example_ids=batch.example_ids,
    )

    def loss_value() -> torch.Tensor:
        return compute_losses(model(batch64.images), batch64, config).total

    model.zero_grad()
    loss_value().backward()

    named = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    sized = [(name, p, p.numel()) for name, p in named]
    total_elems = sum(n for _, _, n in sized)
    rng = np.random.default_rng(seed)
    flat_choices = rng.choice(total_elems, size=min(n_params, total_elems), replace=False)

    entries = []
    offsets = np.cumsum([0] + [n for _, _, n in sized])
    with torch.no_grad():
        for flat in sorted(int(c) for c in flat_choices):
            which = int(np.searchsorted(offsets, flat, side="right") - 1)
            name, param, _ = sized[which]
            local = flat - int(offsets[which])
            view = param.view(-1)
            analytic = float(param.grad.view(-1)[local])
            original = float(view[local])
            view[local] = original + step
            up = float(loss_value())
            view[local] = original - step
            down = float(loss_value())
            view[local] = original
            fd = (up - down) / (2 * step)
            rel = abs(analytic - fd) / max(1.0, abs(analytic), abs(fd))
            entries.append(GradientCheckEntry(name, local, analytic, fd, rel))

    model.float()
    if was_training:
        model.train()
    return GradientCheckReport(
        max_rel_error=max(e.rel_error for e in entries) if entries else 0.0,
        n_checked=len(entries),
        entries=entries,
    )
