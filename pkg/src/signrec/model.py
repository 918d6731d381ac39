"""Backbone + heads assembled into one trainable model.

Handles parameter enumeration, checkpoint (de)serialization including
optimizer state, and the inference-only export that strips the auxiliary
classifier and gloss-mapping layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .errors import ConfigError, DataError
from .heads import HeadNetwork, HeadsConfig
from .vknet import HEAD_NAMES, VKNet, VKNetConfig


@dataclass
class ModelConfig:
    n_classes: int
    embed_dim: int
    vknet: VKNetConfig = field(default_factory=VKNetConfig)
    imm_heads: tuple[str, ...] = HEAD_NAMES
    inference_heads: tuple[str, ...] = HEAD_NAMES
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "embed_dim": self.embed_dim,
            "vknet": self.vknet.to_dict(),
            "imm_heads": list(self.imm_heads),
            "inference_heads": list(self.inference_heads),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["vknet"] = VKNetConfig.from_dict(d["vknet"])
        d["imm_heads"] = tuple(d["imm_heads"])
        d["inference_heads"] = tuple(d["inference_heads"])
        return cls(**d)


class SignModel:
    """A backbone, its heads, and the frozen gloss embeddings."""

    def __init__(self, config: ModelConfig, gloss_embeddings: np.ndarray, glosses=None):
        self.config = config
        self.backbone = VKNet(config.vknet, seed=config.seed)
        heads_cfg = HeadsConfig(
            n_classes=config.n_classes,
            embed_dim=config.embed_dim,
            feature_dims=config.vknet.feature_dims,
            imm_heads=config.imm_heads,
            inference_heads=config.inference_heads,
        )
        self.heads = HeadNetwork(
            heads_cfg, gloss_embeddings, seed=config.seed, dtype=config.vknet.dtype
        )
        self.glosses = list(glosses) if glosses is not None else None

    def parameters(self):
        yield from self.backbone.parameters()
        yield from self.heads.parameters()

    def forward(self, v_long, k_long, v_short, k_short):
        return self.backbone.forward(v_long, k_long, v_short, k_short)

    def loss(self, bundle, targets, imm_targets, gamma):
        return self.heads.loss(bundle, targets, imm_targets, gamma)

    def predict(self, v_long, k_long, v_short, k_short) -> np.ndarray:
        with ad.no_grad():
            bundle = self.forward(v_long, k_long, v_short, k_short)
            return self.heads.predict(bundle)

    # -- persistence ----------------------------------------------------------

    def state_tensors(self, include_optimizer=True) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.parameters():
            out[f"param.{name}"] = p.data
            if include_optimizer:
                out[f"adam.m.{name}"] = p.m
                out[f"adam.v.{name}"] = p.v
        out["gloss_embeddings"] = self.heads.gloss_embeddings
        return out

    def save(self, path, extra_meta=None, adam_step=0, kind="train") -> None:
        meta = {
            "model_config": self.config.to_dict(),
            "glosses": self.glosses,
            "adam_step": adam_step,
        }
        if extra_meta:
            meta.update(extra_meta)
        ckpt.save_checkpoint(
            path, self.state_tensors(include_optimizer=(kind == "train")), meta, kind
        )

    @classmethod
    def load(cls, path) -> tuple["SignModel", dict, str]:
        """Rebuild a model from a checkpoint; returns (model, meta, kind)."""
        tensors, meta, kind = ckpt.load_checkpoint(path)
        config = ModelConfig.from_dict(meta["model_config"])
        if kind == "inference":
            config.imm_heads = ()
        if "gloss_embeddings" in tensors:
            emb = tensors["gloss_embeddings"]
        else:
            emb = np.zeros((config.n_classes, config.embed_dim), dtype=config.vknet.dtype)
        model = cls(config, emb, glosses=meta.get("glosses"))
        for name, p in model.parameters():
            key = f"param.{name}"
            if key not in tensors:
                raise DataError(f"checkpoint missing parameter {name!r}")
            if tuple(tensors[key].shape) != p.shape:
                raise DataError(f"checkpoint parameter {name!r} has wrong shape")
            p.data = tensors[key].astype(p.dtype)
            if kind == "train":
                p.m = tensors[f"adam.m.{name}"].astype(p.dtype)
                p.v = tensors[f"adam.v.{name}"].astype(p.dtype)
        return model, meta, kind


def export_inference_checkpoint(src_path, dst_path) -> None:
    """Strip optimizer state, auxiliary classifiers, and gloss maps."""
    tensors, meta, kind = ckpt.load_checkpoint(src_path)
    if kind == "inference":
        raise ConfigError("checkpoint is already inference-only")
    config = ModelConfig.from_dict(meta["model_config"])
    keep = {}
    for name, arr in tensors.items():
        if not name.startswith("param."):
            continue
        if ".fc2." in name or ".gloss_map." in name:
            continue
        keep[name] = arr
    config.imm_heads = ()
    meta = {
        "model_config": config.to_dict(),
        "glosses": meta.get("glosses"),
        "adam_step": 0,
        "exported_from": str(src_path),
    }
    ckpt.save_checkpoint(dst_path, keep, meta, kind="inference")
