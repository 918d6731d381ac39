"""Synthetic sign dataset with controllable visual and semantic structure.

Each class owns a motion program: smooth sinusoidal trajectories for K
keypoints, which drive both the keypoint stream and the RGB rendering
(colored discs over a class-family background texture). Confusable class
pairs share one motion program up to a small constant offset per keypoint
(the confusability budget), so the two classes look nearly identical;
their gloss embeddings are constructed with a chosen cosine similarity:
high for "similar-meaning" pairs, low for "distinct-meaning" pairs.
Embeddings realize an exact target cosine matrix via eigenfactorization.

Also hosts the cropping/augmentation protocol: random (train) or centered
(eval) temporal windows at two scales, and a shared spatial crop-resize
applied identically to RGB and heatmap tensors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, CropError, DataError
from .heatmap import rasterize_coords
from .lexicon import GlossLexicon

VS_S = "vs_s"
VS_D = "vs_d"
NON_VS = "non_vs"


@dataclass
class SynthSpec:
    """Generator knobs; everything is deterministic given ``seed``."""

    n_classes: int = 20
    vs_s_pairs: int = 4
    vs_d_pairs: int = 4
    vs_s_cosine: float = 0.85
    vs_d_cosine: float = 0.05
    base_cosine: float = 0.10
    embed_dim: int = 32
    train_per_class: int = 10
    dev_per_class: int = 2
    test_per_class: int = 4
    t_raw: int = 24
    video_size: int = 32
    heatmap_size: int = 16
    keypoints: int = 8
    sigma: float = 1.5
    confusability: float = 0.05
    sample_jitter: float = 0.04
    frame_noise: float = 0.01
    min_separation: float = 0.20
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if 2 * (self.vs_s_pairs + self.vs_d_pairs) > self.n_classes:
            raise ConfigError("pairs need more classes than available")
        for name in ("vs_s_cosine", "vs_d_cosine", "base_cosine"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [-1, 1]")
        if self.t_raw < 2:
            raise ConfigError("t_raw too short")
        if min(self.train_per_class, self.dev_per_class, self.test_per_class) < 0:
            raise ConfigError("split sizes must be non-negative")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "SynthSpec":
        path = Path(path)
        if not path.exists():
            raise DataError(f"generator spec not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None

    def pair_layout(self):
        """Class-index pairs per category plus the leftover singles."""
        vs_s = [(2 * i, 2 * i + 1) for i in range(self.vs_s_pairs)]
        off = 2 * self.vs_s_pairs
        vs_d = [(off + 2 * i, off + 2 * i + 1) for i in range(self.vs_d_pairs)]
        off += 2 * self.vs_d_pairs
        non = list(range(off, self.n_classes))
        return vs_s, vs_d, non

    def gloss_names(self) -> list[str]:
        vs_s, vs_d, non = self.pair_layout()
        names = [""] * self.n_classes
        for i, (a, b) in enumerate(vs_s):
            names[a], names[b] = f"sim{i}a", f"sim{i}b"
        for i, (a, b) in enumerate(vs_d):
            names[a], names[b] = f"dis{i}a", f"dis{i}b"
        for i, c in enumerate(non):
            names[c] = f"solo{i}"
        return names


@dataclass
class RawSample:
    """One uncropped sample: RGB tensor plus keypoint track."""

    video: np.ndarray  # (T, H_V, W_V, 3) float32 in [0, 1]
    keypoints: np.ndarray  # (T, K, 2) float32, heatmap pixel units
    valid: np.ndarray  # (T, K) bool
    label: int


@dataclass
class Dataset:
    lexicon: GlossLexicon
    splits: dict[str, list[RawSample]]
    categories: dict[str, list]
    spec: SynthSpec | None = None
    meta: dict = field(default_factory=dict)

    def class_category(self, label: int) -> str:
        for a, b in self.categories.get(VS_S, []):
            if label in (a, b):
                return VS_S
        for a, b in self.categories.get(VS_D, []):
            if label in (a, b):
                return VS_D
        return NON_VS


# -- gloss embeddings ----------------------------------------------------------


def build_embeddings(spec: SynthSpec, rng) -> np.ndarray:
    """Realize the target cosine matrix exactly (up to float error) via
    eigenfactorization, then rotate into ``embed_dim`` dims and rescale rows."""
    n = spec.n_classes
    target = np.full((n, n), spec.base_cosine, dtype=np.float64)
    np.fill_diagonal(target, 1.0)
    vs_s, vs_d, _ = spec.pair_layout()
    for a, b in vs_s:
        target[a, b] = target[b, a] = spec.vs_s_cosine
    for a, b in vs_d:
        target[a, b] = target[b, a] = spec.vs_d_cosine
    evals, evecs = np.linalg.eigh(target)
    if evals.min() < -1e-8:
        raise ConfigError(
            f"target cosine matrix is not realizable (min eigenvalue {evals.min():.2e})"
        )
    evals = np.clip(evals, 0.0, None)
    rank = int((evals > 1e-10).sum())
    if rank > spec.embed_dim:
        raise ConfigError(
            f"embed_dim {spec.embed_dim} too small for cosine targets (rank {rank})"
        )
    factor = evecs[:, -rank:] * np.sqrt(evals[-rank:])
    emb = np.zeros((n, spec.embed_dim), dtype=np.float64)
    emb[:, :rank] = factor
    # random rotation preserves all inner products; row scales keep cosines
    q, r = np.linalg.qr(rng.normal(size=(spec.embed_dim, spec.embed_dim)))
    q *= np.sign(np.diag(r))
    emb = emb @ q
    emb *= rng.uniform(0.6, 1.8, size=(n, 1))
    return emb


# -- motion programs -----------------------------------------------------------


@dataclass
class MotionProgram:
    """Sinusoidal per-keypoint trajectories in heatmap pixel space."""

    center: np.ndarray  # (K, 2)
    amp: np.ndarray  # (K, 2)
    omega: np.ndarray  # (K, 2)
    phase: np.ndarray  # (K, 2)
    texture: np.ndarray  # (3, 3) per-channel (fx, fy, phase)

    def positions(self, t_raw: int, offset=None) -> np.ndarray:
        """(T, K, 2) keypoint coordinates."""
        t = np.arange(t_raw, dtype=np.float64)[:, None, None]
        wave = np.empty((t_raw,) + self.center.shape)
        arg = self.omega[None] * t + self.phase[None]
        wave[:, :, 0] = np.sin(arg[:, :, 0])
        wave[:, :, 1] = np.cos(arg[:, :, 1])
        pos = self.center[None] + self.amp[None] * wave
        if offset is not None:
            pos = pos + offset[None]
        return pos


def sample_program(spec: SynthSpec, rng) -> MotionProgram:
    s = float(spec.heatmap_size)
    k = spec.keypoints
    center = rng.uniform(0.28 * s, 0.72 * s, size=(k, 2))
    amp = rng.uniform(0.08 * s, 0.20 * s, size=(k, 2))
    cycles = rng.uniform(0.5, 1.75, size=(k, 2))
    omega = 2.0 * np.pi * cycles / spec.t_raw
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(k, 2))
    texture = np.stack(
        [
            rng.integers(1, 4, size=3).astype(np.float64),
            rng.integers(1, 4, size=3).astype(np.float64),
            rng.uniform(0.0, 2.0 * np.pi, size=3),
        ],
        axis=1,
    )
    return MotionProgram(center, amp, omega, phase, texture)


def trajectory_distance(pos_a: np.ndarray, pos_b: np.ndarray, size: float) -> float:
    """Mean keypoint separation over time, as a fraction of frame size."""
    return float(np.linalg.norm(pos_a - pos_b, axis=-1).mean() / size)


def pair_offset(spec: SynthSpec, rng) -> np.ndarray:
    """Constant per-keypoint displacement whose mean size stays within the
    confusability budget."""
    s = float(spec.heatmap_size)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=spec.keypoints)
    mag = spec.confusability * s * rng.uniform(0.6, 1.0, size=spec.keypoints)
    return np.stack([mag * np.cos(angle), mag * np.sin(angle)], axis=1)


def build_programs(spec: SynthSpec, rng):
    """One (program, offset) per class; pair members share the program."""
    vs_s, vs_d, non = spec.pair_layout()
    programs: list[MotionProgram | None] = [None] * spec.n_classes
    offsets = [np.zeros((spec.keypoints, 2)) for _ in range(spec.n_classes)]
    accepted: list[np.ndarray] = []

    def admit(rng_local):
        for _ in range(300):
            prog = sample_program(spec, rng_local)
            pos = prog.positions(spec.t_raw)
            if all(
                trajectory_distance(pos, prev, spec.heatmap_size) >= spec.min_separation
                for prev in accepted
            ):
                accepted.append(pos)
                return prog
        raise ConfigError(
            "could not place a sufficiently distinct motion program; "
            "lower n_classes or min_separation"
        )

    for a, b in vs_s + vs_d:
        prog = admit(rng)
        programs[a] = programs[b] = prog
        offsets[b] = pair_offset(spec, rng)
    for c in non:
        programs[c] = admit(rng)
    return programs, offsets


# -- rendering -----------------------------------------------------------------

_PALETTE = np.array(
    [
        [0.95, 0.25, 0.20],
        [0.20, 0.85, 0.30],
        [0.25, 0.40, 0.95],
        [0.95, 0.85, 0.20],
        [0.85, 0.25, 0.90],
        [0.20, 0.90, 0.90],
        [0.95, 0.55, 0.15],
        [0.60, 0.95, 0.45],
        [0.55, 0.30, 0.85],
        [0.90, 0.60, 0.70],
        [0.35, 0.65, 0.35],
        [0.70, 0.70, 0.95],
    ]
)


def keypoint_color(k: int) -> np.ndarray:
    return _PALETTE[k % len(_PALETTE)]


def render_video(
    coords_hm: np.ndarray, texture: np.ndarray, video_size: int, heatmap_size: int
) -> np.ndarray:
    """Paint keypoint discs over the class-family texture.

    ``coords_hm`` is (T, K, 2) in heatmap pixel units; the video renders at
    ``video_size`` with coordinates scaled up proportionally.
    """
    t, k = coords_hm.shape[0], coords_hm.shape[1]
    scale = video_size / heatmap_size
    coords = coords_hm * scale
    xs = np.arange(video_size, dtype=np.float64)
    grid_x = xs[None, None, :, None]  # broadcast over (T, H, W, K)
    grid_y = xs[None, :, None, None]
    frame = np.empty((t, video_size, video_size, 3), dtype=np.float64)
    for c in range(3):
        fx, fy, ph = texture[c]
        tex = 0.30 + 0.10 * np.sin(
            2.0 * np.pi * (fx * xs[None, :] + fy * xs[:, None]) / video_size + ph
        )
        frame[:, :, :, c] = tex[None, :, :]
    radius = 0.065 * video_size
    d = np.sqrt(
        (grid_x - coords[:, None, None, :, 0]) ** 2
        + (grid_y - coords[:, None, None, :, 1]) ** 2
    )  # (T, H, W, K)
    alpha = np.clip(radius + 0.5 - d, 0.0, 1.0)
    for kp in range(k):
        a = alpha[:, :, :, kp : kp + 1]
        frame = frame * (1.0 - a) + keypoint_color(kp)[None, None, None, :] * a
    return np.clip(frame, 0.0, 1.0).astype(np.float32)


# -- dataset assembly ------------------------------------------------------------


def _sample_rng(spec: SynthSpec, tag: int, *key) -> np.random.Generator:
    return np.random.default_rng([spec.seed, tag, *key])


def make_sample(spec: SynthSpec, programs, offsets, label: int, index: int) -> RawSample:
    rng = _sample_rng(spec, 3, label, index)
    s = float(spec.heatmap_size)
    jitter_dir = rng.uniform(0.0, 2.0 * np.pi, size=spec.keypoints)
    jitter_mag = spec.sample_jitter * s * rng.uniform(0.0, 1.0, size=spec.keypoints)
    jitter = np.stack(
        [jitter_mag * np.cos(jitter_dir), jitter_mag * np.sin(jitter_dir)], axis=1
    )
    coords = programs[label].positions(spec.t_raw, offsets[label] + jitter)
    coords = coords + rng.normal(0.0, spec.frame_noise * s, size=coords.shape)
    coords = np.clip(coords, 1.0, s - 2.0)
    video = render_video(
        coords, programs[label].texture, spec.video_size, spec.heatmap_size
    )
    valid = np.ones((spec.t_raw, spec.keypoints), dtype=bool)
    return RawSample(
        video=video,
        keypoints=coords.astype(np.float32),
        valid=valid,
        label=label,
    )


def generate_dataset(spec: SynthSpec) -> Dataset:
    """Build the lexicon and the train/dev/test splits."""
    emb = build_embeddings(spec, _sample_rng(spec, 0))
    lexicon = GlossLexicon(spec.gloss_names(), emb)
    programs, offsets = build_programs(spec, _sample_rng(spec, 1))
    counts = {
        "train": spec.train_per_class,
        "dev": spec.dev_per_class,
        "test": spec.test_per_class,
    }
    splits: dict[str, list[RawSample]] = {}
    base = 0
    for split, per_class in counts.items():
        samples = []
        for label in range(spec.n_classes):
            for j in range(per_class):
                samples.append(make_sample(spec, programs, offsets, label, base + j))
        splits[split] = samples
        base += per_class
    vs_s, vs_d, non = spec.pair_layout()
    return Dataset(
        lexicon=lexicon,
        splits=splits,
        categories={VS_S: vs_s, VS_D: vs_d, NON_VS: non},
        spec=spec,
        meta={
            "video_size": spec.video_size,
            "heatmap_size": spec.heatmap_size,
            "keypoints": spec.keypoints,
            "sigma": spec.sigma,
            "t_raw": spec.t_raw,
        },
    )


def class_trajectories(spec: SynthSpec) -> list[np.ndarray]:
    """Noise-free per-class keypoint tracks (for analysis and tests)."""
    programs, offsets = build_programs(spec, _sample_rng(spec, 1))
    return [
        programs[c].positions(spec.t_raw, offsets[c]) for c in range(spec.n_classes)
    ]


# -- temporal and spatial crops ---------------------------------------------------


@dataclass
class CroppedClip:
    """A long window plus the offset of its half-length sub-window."""

    video: np.ndarray  # (T_L, H_V, W_V, 3)
    keypoints: np.ndarray  # (T_L, K, 2)
    valid: np.ndarray  # (T_L, K)
    short_offset: int
    label: int


def temporal_crop(sample: RawSample, t_long: int, rng=None, mode="train") -> CroppedClip:
    """Contiguous long window of the raw clip plus a half-length sub-window.

    Training mode draws both windows uniformly at random; evaluation mode
    centers them.
    """
    if t_long % 2:
        raise ConfigError(f"long clip length {t_long} must be even")
    t_raw = sample.video.shape[0]
    if t_raw < t_long:
        raise DataError(f"raw length {t_raw} shorter than long clip {t_long}")
    t_short = t_long // 2
    if mode == "train":
        if rng is None:
            raise ConfigError("training crops need an rng")
        start = int(rng.integers(0, t_raw - t_long + 1))
        short_offset = int(rng.integers(0, t_long - t_short + 1))
    elif mode == "eval":
        start = (t_raw - t_long) // 2
        short_offset = (t_long - t_short) // 2
    else:
        raise ConfigError(f"unknown crop mode {mode!r}")
    sl = slice(start, start + t_long)
    return CroppedClip(
        video=sample.video[sl],
        keypoints=sample.keypoints[sl],
        valid=sample.valid[sl],
        short_offset=short_offset,
        label=sample.label,
    )


def three_crop_starts(t_raw: int, t_long: int) -> list[int]:
    """Start / middle / end window origins for multi-crop inference."""
    if t_raw < t_long:
        raise DataError(f"raw length {t_raw} shorter than long clip {t_long}")
    return [0, (t_raw - t_long) // 2, t_raw - t_long]


def sample_crop_rect(rng, scale_range) -> tuple[float, float, float, float]:
    """Normalized (top, left, height, width) with area in ``scale_range``."""
    lo, hi = float(scale_range[0]), float(scale_range[1])
    if not (0.0 < lo <= hi <= 1.0):
        raise ConfigError(f"scale range {scale_range} not within (0, 1]")
    area = float(rng.uniform(lo, hi))
    side = float(np.sqrt(area))
    top = float(rng.uniform(0.0, 1.0 - side))
    left = float(rng.uniform(0.0, 1.0 - side))
    return (top, left, side, side)


def bilinear_crop_resize(seq: np.ndarray, rect) -> np.ndarray:
    """Crop a normalized rectangle from every frame and resize back to the
    native resolution with bilinear interpolation (edge-clamped)."""
    top, left, hfrac, wfrac = rect
    t, h, w = seq.shape[0], seq.shape[1], seq.shape[2]

    def axis_weights(size, origin, frac):
        src = origin * size + (np.arange(size) + 0.5) * frac - 0.5
        lo = np.floor(src).astype(int)
        frac_part = src - lo
        lo_c = np.clip(lo, 0, size - 1)
        hi_c = np.clip(lo + 1, 0, size - 1)
        mat = np.zeros((size, size), dtype=seq.dtype)
        rows = np.arange(size)
        np.add.at(mat, (rows, lo_c), 1.0 - frac_part)
        np.add.at(mat, (rows, hi_c), frac_part)
        return mat

    wy = axis_weights(h, top, hfrac)
    wx = axis_weights(w, left, wfrac)
    return np.einsum("ih,thwc,jw->tijc", wy, seq, wx, optimize=True)


def transform_coordinate(coord, rect, size) -> np.ndarray:
    """Where a source pixel coordinate lands after the crop-resize."""
    top, left, hfrac, wfrac = rect
    x, y = np.asarray(coord, dtype=np.float64)
    return np.array(
        [
            (x + 0.5 - left * size) / wfrac - 0.5,
            (y + 0.5 - top * size) / hfrac - 0.5,
        ]
    )


def spatial_crop_pair(video: np.ndarray, heatmaps: np.ndarray, scale_range, rng):
    """Sample one crop rectangle and apply it to both modalities.

    The rectangle is drawn in normalized coordinates so the identical
    region (up to resolution scaling) is taken from the RGB clip and the
    heatmap stack; both are resized back to their native resolutions.
    """
    rect = sample_crop_rect(rng, scale_range)
    for name, size in (("video", video.shape[1]), ("heatmaps", heatmaps.shape[1])):
        if rect[2] * size < 2.0 or rect[3] * size < 2.0:
            raise CropError(
                f"crop rectangle degenerate in {name} space "
                f"({rect[2] * size:.2f} px)"
            )
    return (
        bilinear_crop_resize(video, rect),
        bilinear_crop_resize(heatmaps, rect),
    )
