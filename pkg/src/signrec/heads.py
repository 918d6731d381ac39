"""Per-feature head networks.

Each backbone feature gets a head with a primary classifier (trained on
smoothed labels) and, when enabled, a gloss-blending branch: gloss
embeddings are mapped into the feature space, broadcast-added onto the
vision feature, and classified by an auxiliary classifier against
half-half blended targets. After every optimizer step the primary
classifier is pulled toward the auxiliary one by an exponential moving
average; only the primary classifier participates in inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .vknet import HEAD_NAMES, FeatureBundle

HEAD_GROUPS = {
    "video": ("long_video", "short_video"),
    "keypoint": ("long_keypoint", "short_keypoint"),
    "joint": ("long", "short", "joint"),
}


def imm_label(n: int, b: int, m: int) -> np.ndarray:
    """Blended target for mixing gloss ``m`` into a sample of class ``b``:
    0.5 at each of b and m, except one-hot at b when m == b."""
    if n < 1:
        raise ConfigError("vocabulary is empty")
    y = np.zeros(n, dtype=np.float64)
    if m == b:
        y[b] = 1.0
    else:
        y[b] = 0.5
        y[m] = 0.5
    return y


def imm_label_matrix(n: int, b: int) -> np.ndarray:
    """All N blended targets for a class-``b`` sample, stacked as rows."""
    mat = np.full((n, n), 0.0, dtype=np.float64)
    mat[:, b] = 0.5
    mat[np.arange(n), np.arange(n)] += 0.5
    mat[b, b] = 1.0
    return mat


def inter_modality_features(f: ad.Tensor, mapped_gloss: ad.Tensor) -> ad.Tensor:
    """Broadcast-add mapped gloss features onto vision features:
    (B, D) + (N, D) -> (B, N, D)."""
    if f.shape[-1] != mapped_gloss.shape[-1]:
        raise ShapeError(
            f"feature dim {f.shape[-1]} != mapped gloss dim {mapped_gloss.shape[-1]}"
        )
    b, d = f.shape
    n = mapped_gloss.shape[0]
    return ad.reshape(f, (b, 1, d)) + ad.reshape(mapped_gloss, (1, n, d))


def integrate_classifiers(theta1: ad.Parameter, theta2: ad.Parameter, mu: float) -> None:
    """In-place convex combination theta1 <- mu*theta1 + (1-mu)*theta2."""
    if not 0.0 <= mu <= 1.0:
        raise ConfigError(f"mu {mu} outside [0, 1]")
    if theta1.shape != theta2.shape:
        raise ShapeError("classifier parameter shapes differ")
    if mu == 0.0:
        theta1.data[...] = theta2.data
    elif mu != 1.0:
        # written as theta1 + (1-mu)(theta2-theta1) so theta1 == theta2
        # is an exact fixed point
        theta1.data += (1.0 - mu) * (theta2.data - theta1.data)


@dataclass
class HeadsConfig:
    n_classes: int
    embed_dim: int
    feature_dims: dict[str, int]
    imm_heads: tuple[str, ...] = HEAD_NAMES
    inference_heads: tuple[str, ...] = HEAD_NAMES

    def __post_init__(self):
        self.imm_heads = tuple(self.imm_heads)
        self.inference_heads = tuple(self.inference_heads)
        for name in self.imm_heads + self.inference_heads:
            if name not in HEAD_NAMES:
                raise ConfigError(f"unknown head {name!r}")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if not self.inference_heads:
            raise ConfigError("at least one inference head required")


class Head:
    """One feature's classifiers; the gloss branch exists only when enabled."""

    def __init__(self, name, feat_dim, n_classes, embed_dim, with_imm, rng, dtype):
        self.name = name
        self.with_imm = with_imm
        self.fc1_w = ad.Parameter(
            ad.uniform_init((feat_dim, n_classes), feat_dim, rng, dtype),
            name=f"head.{name}.fc1.w",
        )
        self.fc1_b = ad.Parameter(
            np.zeros(n_classes, dtype=dtype), name=f"head.{name}.fc1.b"
        )
        if with_imm:
            self.fc2_w = ad.Parameter(
                ad.uniform_init((feat_dim, n_classes), feat_dim, rng, dtype),
                name=f"head.{name}.fc2.w",
            )
            self.fc2_b = ad.Parameter(
                np.zeros(n_classes, dtype=dtype), name=f"head.{name}.fc2.b"
            )
            self.gloss_w = ad.Parameter(
                ad.uniform_init((embed_dim, feat_dim), embed_dim, rng, dtype),
                name=f"head.{name}.gloss_map.w",
            )
            self.gloss_b = ad.Parameter(
                np.zeros(feat_dim, dtype=dtype), name=f"head.{name}.gloss_map.b"
            )

    def parameters(self):
        out = [(self.fc1_w.name, self.fc1_w), (self.fc1_b.name, self.fc1_b)]
        if self.with_imm:
            out += [
                (self.fc2_w.name, self.fc2_w),
                (self.fc2_b.name, self.fc2_b),
                (self.gloss_w.name, self.gloss_w),
                (self.gloss_b.name, self.gloss_b),
            ]
        return out

    def classification_loss(self, f: ad.Tensor, targets: np.ndarray) -> ad.Tensor:
        return ad.soft_cross_entropy(ad.linear(f, self.fc1_w, self.fc1_b), targets)

    def imm_loss(self, f: ad.Tensor, gloss_feats: ad.Tensor, imm_targets: np.ndarray) -> ad.Tensor:
        """Average cross entropy of the N blended rows, batch-meaned.

        ``imm_targets`` is (B, N, N): per sample, row m is the blended
        label for mixing gloss m in.
        """
        if not self.with_imm:
            raise ConfigError(f"head {self.name!r} has no gloss-blending branch")
        mapped = ad.linear(gloss_feats, self.gloss_w, self.gloss_b)  # (N, D)
        blended = inter_modality_features(f, mapped)  # (B, N, D)
        logits = ad.linear(blended, self.fc2_w, self.fc2_b)  # (B, N, N)
        b, n, _ = logits.shape
        flat = ad.reshape(logits, (b * n, n))
        return ad.soft_cross_entropy(flat, imm_targets.reshape(b * n, n))

    def loss(self, f, targets, gloss_feats, imm_targets, gamma):
        """(L_cls, L_imm or None, combined)."""
        l_cls = self.classification_loss(f, targets)
        if self.with_imm and imm_targets is not None:
            l_imm = self.imm_loss(f, gloss_feats, imm_targets)
            return l_cls, l_imm, l_cls + l_imm * gamma
        return l_cls, None, l_cls

    def predict(self, f: ad.Tensor) -> np.ndarray:
        """Softmax of the primary classifier only."""
        return ad.softmax(ad.linear(f, self.fc1_w, self.fc1_b)).data

    def integrate(self, mu: float) -> None:
        if self.with_imm:
            integrate_classifiers(self.fc1_w, self.fc2_w, mu)
            integrate_classifiers(self.fc1_b, self.fc2_b, mu)


class HeadNetwork:
    """The seven heads plus the frozen gloss-embedding table."""

    def __init__(self, config: HeadsConfig, gloss_embeddings: np.ndarray, seed: int = 0, dtype="float32"):
        self.config = config
        self.dtype = np.dtype(dtype)
        emb = np.asarray(gloss_embeddings, dtype=self.dtype)
        if emb.shape != (config.n_classes, config.embed_dim):
            raise ShapeError(
                f"gloss embeddings {emb.shape} != "
                f"({config.n_classes}, {config.embed_dim})"
            )
        self.gloss_embeddings = emb
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4845]))
        self.heads = {
            name: Head(
                name,
                config.feature_dims[name],
                config.n_classes,
                config.embed_dim,
                with_imm=name in config.imm_heads,
                rng=rng,
                dtype=self.dtype,
            )
            for name in HEAD_NAMES
        }

    def parameters(self):
        for name in HEAD_NAMES:
            yield from self.heads[name].parameters()

    def loss(self, bundle: FeatureBundle, targets, imm_targets, gamma):
        """Sum over heads of L_cls + gamma * L_imm.

        Returns (total tensor, cls component float, imm component float).
        """
        targets = np.asarray(targets, dtype=self.dtype)
        if imm_targets is not None:
            imm_targets = np.asarray(imm_targets, dtype=self.dtype)
        gloss_feats = ad.Tensor(self.gloss_embeddings)
        total = None
        cls_sum = 0.0
        imm_sum = 0.0
        for name in HEAD_NAMES:
            head = self.heads[name]
            l_cls, l_imm, combined = head.loss(
                bundle.by_name(name), targets, gloss_feats, imm_targets, gamma
            )
            cls_sum += l_cls.item()
            if l_imm is not None:
                imm_sum += l_imm.item()
            total = combined if total is None else total + combined
        return total, cls_sum, imm_sum

    def predict(self, bundle: FeatureBundle) -> np.ndarray:
        """Mean of the retained primary-classifier softmax outputs."""
        probs = [
            self.heads[name].predict(bundle.by_name(name))
            for name in self.config.inference_heads
        ]
        return np.mean(probs, axis=0)

    def integrate(self, mu: float) -> None:
        for name in HEAD_NAMES:
            self.heads[name].integrate(mu)
