"""Training loop: schedules, Adam, input/label mixing, checkpointing.

Per epoch ``m`` of ``M`` the schedules give the primary-classifier EMA
weight mu = 1 - (1 - mu_base)(cos(pi m / M) + 1)/2, the auxiliary loss
weight gamma = (cos(pi m / M) + 1)/2, and a cosine-annealed learning
rate. Each iteration runs: backward pass on the summed head losses,
Adam update of every parameter, then EMA integration of each primary
classifier toward its auxiliary one.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, NumericalError, ParseError
from .evaluate import per_instance_accuracy, predict_samples
from .heads import imm_label_matrix
from .heatmap import rasterize_coords
from .lexicon import language_aware_soft_label, vanilla_soft_label
from .model import ModelConfig, SignModel
from .synth import Dataset, spatial_crop_pair, temporal_crop
from .vknet import HEAD_NAMES, LateralFlags, VKNetConfig

log = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "epoch",
    "lr",
    "gamma",
    "mu",
    "loss_total",
    "loss_cls",
    "loss_imm",
    "train_top1",
)


# -- schedules -----------------------------------------------------------------


def mu_schedule(m: int, total: int, mu_base: float = 0.99) -> float:
    """EMA weight rising from mu_base toward 1 over training."""
    return 1.0 - (1.0 - mu_base) * (math.cos(math.pi * m / total) + 1.0) / 2.0


def gamma_schedule(m: int, total: int) -> float:
    """Auxiliary loss weight decaying from 1 to 0 over training."""
    return (math.cos(math.pi * m / total) + 1.0) / 2.0


def cosine_lr(m: int, total: int, lr0: float) -> float:
    """Cosine annealing from lr0 to 0."""
    return lr0 * (math.cos(math.pi * m / total) + 1.0) / 2.0


# -- optimizer -----------------------------------------------------------------


def adam_step(
    params,
    lr: float,
    step: int,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update; ``step`` is the 1-based global iteration count.

    Weight decay enters as an L2 term added to the gradient before the
    moment updates (applied to every parameter, biases included).
    """
    if step < 1:
        raise ConfigError("adam step count must start at 1")
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for p in params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if weight_decay:
            g = g + weight_decay * p.data
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * g * g
        p.data -= (lr / bc1) * p.m / (np.sqrt(p.v / bc2) + eps)


# -- mixup ---------------------------------------------------------------------


def intra_modality_mixup(tensors, labels, rng, alpha: float):
    """Convex-mix a batch with one lambda and one partner permutation.

    Every tensor (all four input streams) and every label array is mixed
    against the same permuted partner with the same lambda. Batches of
    one sample pass through unchanged.
    """
    batch = tensors[0].shape[0]
    if batch < 2:
        log.info("mixup skipped: batch of %d", batch)
        return tensors, labels, 1.0, np.arange(batch)
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(batch)
    mixed_t = [lam * x + (1.0 - lam) * x[perm] for x in tensors]
    mixed_l = [
        None if y is None else lam * y + (1.0 - lam) * y[perm] for y in labels
    ]
    return mixed_t, mixed_l, lam, perm


# -- configuration ---------------------------------------------------------------


def _parse_laterals(value) -> LateralFlags:
    """Accept type-level toggles, fine-grained direction flags, or the
    dataclass itself."""
    if isinstance(value, LateralFlags):
        return value
    if not isinstance(value, dict):
        raise ConfigError("laterals must be a table of booleans")
    type_keys = {"video_keypoint", "video_video", "keypoint_keypoint"}
    fine_keys = set(LateralFlags.__dataclass_fields__)
    keys = set(value)
    if keys <= type_keys:
        return LateralFlags.from_types(**value)
    if keys <= fine_keys:
        return LateralFlags(**value)
    raise ConfigError(f"unknown lateral flags: {sorted(keys - type_keys - fine_keys)}")


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-3
    epsilon: float = 0.2
    tau: float = 0.5
    smoothing: str = "language"
    intra_mixup: bool = True
    mixup_alpha: float = 0.8
    inter_mixup: bool = True
    imm_heads: object = "all"
    inference_heads: object = "all"
    mu_base: float = 0.99
    t_long: int = 16
    spatial_aug: bool = True
    crop_scale: tuple = (0.7, 1.0)
    channels: tuple = (8, 16, 16, 32, 32)
    pools: tuple = ((2, 2, 2), (2, 2, 2), (2, 2, 2), None, None)
    laterals: LateralFlags = field(default_factory=LateralFlags)
    dtype: str = "float32"
    seed: int = 0
    stop_at_train_top1: float | None = None
    save_every: int = 0
    reproducible: bool = False

    def __post_init__(self):
        self.laterals = _parse_laterals(self.laterals)
        self.crop_scale = tuple(self.crop_scale)
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.smoothing not in ("language", "vanilla"):
            raise ConfigError(f"smoothing must be language or vanilla, got {self.smoothing!r}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError("epsilon outside [0, 1)")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.mixup_alpha <= 0:
            raise ConfigError("mixup_alpha must be positive")

    def resolved_heads(self, which) -> tuple:
        value = getattr(self, which)
        if value == "all":
            return HEAD_NAMES
        if value in (None, (), []) or value == "none":
            return ()
        heads = tuple(value)
        for h in heads:
            if h not in HEAD_NAMES:
                raise ConfigError(f"unknown head {h!r} in {which}")
        return heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["laterals"] = asdict(self.laterals)
        d["crop_scale"] = list(self.crop_scale)
        d["channels"] = list(self.channels)
        d["pools"] = [list(p) if p is not None else None for p in self.pools]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def load_train_config(path) -> TrainConfig:
    """Read a JSON or TOML training config."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib as toml_reader  # py311+
        except ImportError:
            try:
                import tomli as toml_reader
            except ImportError:
                raise ConfigError(
                    "TOML configs need Python 3.11+ or the tomli package"
                ) from None
        try:
            data = toml_reader.loads(text)
        except toml_reader.TOMLDecodeError as exc:
            raise ParseError(f"{path}: invalid TOML: {exc}") from None
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from None
    return TrainConfig.from_dict(data)


# -- batch assembly ---------------------------------------------------------------


def build_label_tables(dataset: Dataset, config: TrainConfig):
    """Per-class soft labels and (optionally) blended-target matrices."""
    n = dataset.lexicon.size
    if config.smoothing == "language":
        soft = np.stack(
            [
                language_aware_soft_label(
                    dataset.lexicon, b, config.epsilon, config.tau
                ).probs
                for b in range(n)
            ]
        )
    else:
        soft = np.stack(
            [vanilla_soft_label(n, b, config.epsilon).probs for b in range(n)]
        )
    imm = None
    if config.inter_mixup:
        imm = np.stack([imm_label_matrix(n, b) for b in range(n)])
    return soft.astype(np.float32), None if imm is None else imm.astype(np.float32)


def assemble_batch(dataset, indices, config, soft_table, imm_table, rng, sigma):
    """Temporal crop, heatmap render, shared spatial crop, label lookup."""
    streams = [[], [], [], []]
    t_short = config.t_long // 2
    for idx in indices:
        sample = dataset.splits["train"][idx]
        clip = temporal_crop(sample, config.t_long, rng=rng, mode="train")
        video = clip.video.astype(np.float32)
        heat = rasterize_coords(
            clip.keypoints, clip.valid,
            dataset.meta["heatmap_size"], dataset.meta["heatmap_size"], sigma,
        )
        if config.spatial_aug:
            video, heat = spatial_crop_pair(video, heat, config.crop_scale, rng)
        sl = slice(clip.short_offset, clip.short_offset + t_short)
        streams[0].append(video)
        streams[1].append(heat)
        streams[2].append(video[sl])
        streams[3].append(heat[sl])
    labels = np.array([dataset.splits["train"][i].label for i in indices])
    tensors = [np.stack(s).astype(np.float32) for s in streams]
    soft = soft_table[labels]
    imm = imm_table[labels] if imm_table is not None else None
    return tensors, soft, imm, labels


# -- the loop -----------------------------------------------------------------


@dataclass
class TrainResult:
    model: SignModel
    metrics: list[dict]
    checkpoint_path: Path | None
    csv_path: Path | None
    epochs_run: int

    @property
    def final_train_top1(self) -> float:
        return self.metrics[-1]["train_top1"] if self.metrics else 0.0


def write_metrics_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(
                [row["epoch"]] + [repr(row[c]) for c in METRICS_COLUMNS[1:]]
            )


def build_model_config(dataset: Dataset, config: TrainConfig) -> ModelConfig:
    meta = dataset.meta
    for key in ("video_size", "heatmap_size", "keypoints"):
        if key not in meta:
            raise DataError(f"dataset meta missing {key!r}")
    vk = VKNetConfig(
        video_shape=(config.t_long, meta["video_size"], meta["video_size"], 3),
        heatmap_shape=(
            config.t_long,
            meta["heatmap_size"],
            meta["heatmap_size"],
            meta["keypoints"],
        ),
        channels=tuple(config.channels),
        pools=tuple(tuple(p) if p is not None else None for p in config.pools),
        laterals=config.laterals,
        dtype=config.dtype,
    )
    imm_heads = config.resolved_heads("imm_heads") if config.inter_mixup else ()
    return ModelConfig(
        n_classes=dataset.lexicon.size,
        embed_dim=dataset.lexicon.embed_dim,
        vknet=vk,
        imm_heads=imm_heads,
        inference_heads=config.resolved_heads("inference_heads"),
        seed=config.seed,
    )


def train(dataset: Dataset, config: TrainConfig, out_dir=None) -> TrainResult:
    """Run the full loop; returns the trained model and the metrics rows."""
    if "train" not in dataset.splits or not dataset.splits["train"]:
        raise DataError("dataset has no training split")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    model_config = build_model_config(dataset, config)
    model = SignModel(
        model_config,
        dataset.lexicon.embeddings.astype(config.dtype),
        glosses=dataset.lexicon.glosses,
    )
    soft_table, imm_table = build_label_tables(dataset, config)
    params = [p for _, p in model.parameters()]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7261]))
    sigma = float(dataset.meta.get("sigma", 1.5))
    n_train = len(dataset.splits["train"])
    train_samples = dataset.splits["train"]

    rows: list[dict] = []
    adam_count = 0
    epochs_run = 0
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr)
        gamma = gamma_schedule(epoch, config.epochs)
        mu = mu_schedule(epoch, config.epochs, config.mu_base)
        order = rng.permutation(n_train)
        loss_sums = np.zeros(3)
        n_batches = 0
        for lo in range(0, n_train, config.batch_size):
            indices = order[lo : lo + config.batch_size]
            tensors, soft, imm, _hard = assemble_batch(
                dataset, indices, config, soft_table, imm_table, rng, sigma
            )
            if config.intra_mixup:
                tensors, (soft, imm), _lam, _perm = _mix(
                    tensors, soft, imm, rng, config.mixup_alpha
                )
            adam_count += 1
            step_losses = train_step(
                model, params, tensors, soft, imm, gamma, lr, mu,
                config.weight_decay, adam_count,
            )
            if not all(np.isfinite(v) for v in step_losses):
                _dump_diagnostics(out_dir, epoch, lo // config.batch_size, indices, step_losses)
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} batch {lo // config.batch_size} "
                    f"(samples {indices.tolist()})"
                )
            loss_sums += step_losses
            n_batches += 1
        train_top1 = per_instance_accuracy(
            predict_samples(model, train_samples, sigma, crops=1),
            [s.label for s in train_samples],
            1,
        )
        rows.append(
            {
                "epoch": epoch,
                "lr": lr,
                "gamma": gamma,
                "mu": mu,
                "loss_total": loss_sums[0] / n_batches,
                "loss_cls": loss_sums[1] / n_batches,
                "loss_imm": loss_sums[2] / n_batches,
                "train_top1": train_top1,
            }
        )
        epochs_run = epoch + 1
        log.info(
            "epoch %d: loss %.4f cls %.4f imm %.4f train@1 %.3f",
            epoch, *loss_sums / n_batches, train_top1,
        )
        if out_dir is not None and config.save_every and (epoch + 1) % config.save_every == 0:
            _save(model, out_dir / f"checkpoint_epoch{epoch}.bin", config, epoch, adam_count)
        if (
            config.stop_at_train_top1 is not None
            and train_top1 >= config.stop_at_train_top1
        ):
            log.info("early stop at epoch %d (train top-1 %.3f)", epoch, train_top1)
            break

    ckpt_path = csv_path = None
    if out_dir is not None:
        ckpt_path = out_dir / "checkpoint.bin"
        _save(model, ckpt_path, config, epochs_run - 1, adam_count)
        csv_path = out_dir / "metrics.csv"
        write_metrics_csv(rows, csv_path)
    return TrainResult(model, rows, ckpt_path, csv_path, epochs_run)


def _mix(tensors, soft, imm, rng, alpha):
    mixed_t, mixed_l, lam, perm = intra_modality_mixup(
        tensors, [soft, imm], rng, alpha
    )
    return mixed_t, mixed_l, lam, perm


def train_step(model, params, tensors, soft, imm, gamma, lr, mu, weight_decay, step):
    """One iteration: backward, Adam on every parameter, EMA integration."""
    for p in params:
        p.zero_grad()
    bundle = model.forward(*tensors)
    total, cls_sum, imm_sum = model.loss(bundle, soft, imm, gamma)
    total_val = total.item()
    if np.isfinite(total_val):
        total.backward()
        adam_step(params, lr=lr, step=step, weight_decay=weight_decay)
        model.heads.integrate(mu)
    return np.array([total_val, cls_sum, imm_sum])


def _save(model, path, config, epoch, adam_count):
    model.save(
        path,
        extra_meta={
            "epoch": epoch,
            "max_epochs": config.epochs,
            "train_config": config.to_dict(),
        },
        adam_step=adam_count,
    )


def _dump_diagnostics(out_dir, epoch, batch_index, indices, losses):
    if out_dir is None:
        return
    payload = {
        "epoch": epoch,
        "batch_index": batch_index,
        "sample_indices": [int(i) for i in indices],
        "losses": [float(v) for v in losses],
    }
    (Path(out_dir) / "failure_dump.json").write_text(json.dumps(payload, indent=1))
