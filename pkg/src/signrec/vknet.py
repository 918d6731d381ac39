"""Four-tower video/keypoint backbone with bidirectional lateral connections.

Two temporal scales (a long clip and its half-length counterpart), each
processed by a video encoder and a keypoint-heatmap encoder: four towers
of five 3-d conv blocks. After each of the first four blocks, lateral
connections exchange information between towers before the next block:

* video -> keypoint: per-frame stride-2 3x3 conv (video frames are 2x the
  heatmap resolution), keypoint -> video: the transposed version;
* long -> short (same modality): stride-2 length-3 conv over time applied
  at every spatial position, short -> long: the transposed version.

Fusion is elementwise addition onto the partner tower's block output, all
directions computed from pre-fusion activations. Each tower ends in
global average pooling; the bundle exposes the four tower features, the
per-scale concatenations, and the full joint feature.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError

STREAMS = ("v_long", "k_long", "v_short", "k_short")
HEAD_NAMES = (
    "long_video",
    "long_keypoint",
    "short_video",
    "short_keypoint",
    "long",
    "short",
    "joint",
)


@dataclass
class LateralFlags:
    """Per-direction switches for the three lateral connection types."""

    video_to_keypoint: bool = True
    keypoint_to_video: bool = True
    long_to_short_video: bool = True
    short_to_long_video: bool = True
    long_to_short_keypoint: bool = True
    short_to_long_keypoint: bool = True

    @classmethod
    def none(cls) -> "LateralFlags":
        return cls(False, False, False, False, False, False)

    @classmethod
    def from_types(
        cls,
        video_keypoint: bool = True,
        video_video: bool = True,
        keypoint_keypoint: bool = True,
    ) -> "LateralFlags":
        """Bidirectional toggles at the granularity of the three types."""
        return cls(
            video_to_keypoint=video_keypoint,
            keypoint_to_video=video_keypoint,
            long_to_short_video=video_video,
            short_to_long_video=video_video,
            long_to_short_keypoint=keypoint_keypoint,
            short_to_long_keypoint=keypoint_keypoint,
        )

    def directed(self):
        """(name, source stream, target stream, kind) for enabled directions."""
        out = []
        if self.video_to_keypoint:
            out.append(("v2k_long", "v_long", "k_long", "conv2d"))
            out.append(("v2k_short", "v_short", "k_short", "conv2d"))
        if self.keypoint_to_video:
            out.append(("k2v_long", "k_long", "v_long", "tconv2d"))
            out.append(("k2v_short", "k_short", "v_short", "tconv2d"))
        if self.long_to_short_video:
            out.append(("vv_long2short", "v_long", "v_short", "conv1d"))
        if self.short_to_long_video:
            out.append(("vv_short2long", "v_short", "v_long", "tconv1d"))
        if self.long_to_short_keypoint:
            out.append(("kk_long2short", "k_long", "k_short", "conv1d"))
        if self.short_to_long_keypoint:
            out.append(("kk_short2long", "k_short", "k_long", "tconv1d"))
        return out


@dataclass
class VKNetConfig:
    """Backbone hyperparameters.

    ``video_shape`` and ``heatmap_shape`` describe the LONG clip as
    (T, H, W, C); the short clip halves T. Video H/W must be exactly twice
    the heatmap H/W whenever video<->keypoint laterals are enabled.
    """

    video_shape: tuple[int, int, int, int] = (16, 32, 32, 3)
    heatmap_shape: tuple[int, int, int, int] = (16, 16, 16, 8)
    channels: tuple[int, ...] = (8, 16, 16, 32, 32)
    pools: tuple = ((2, 2, 2), (2, 2, 2), (2, 2, 2), None, None)
    laterals: LateralFlags = field(default_factory=LateralFlags)
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.laterals, dict):
            self.laterals = LateralFlags(**self.laterals)
        self.video_shape = tuple(self.video_shape)
        self.heatmap_shape = tuple(self.heatmap_shape)
        self.channels = tuple(self.channels)
        self.pools = tuple(tuple(p) if p is not None else None for p in self.pools)
        if len(self.channels) != 5:
            raise ConfigError("channels must list 5 block widths")
        if len(self.pools) != 5:
            raise ConfigError("pools must list 5 entries (window tuple or null)")
        if self.video_shape[0] != self.heatmap_shape[0]:
            raise ConfigError("video and heatmap long clips must share T")
        if self.video_shape[0] % 2:
            raise ConfigError("long clip length must be even")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pools"] = [list(p) if p is not None else None for p in self.pools]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VKNetConfig":
        return cls(**d)

    def stream_input_shape(self, stream: str) -> tuple:
        t, h, w, c = self.video_shape if stream.startswith("v") else self.heatmap_shape
        if stream.endswith("short"):
            t //= 2
        return (t, h, w, c)

    def shape_trace(self) -> dict[str, list[tuple]]:
        """Per-stream (T, H, W, C) after each block; raises on bad pools."""
        trace = {}
        for stream in STREAMS:
            t, h, w, _ = self.stream_input_shape(stream)
            shapes = []
            for i in range(5):
                c = self.channels[i]
                if self.pools[i] is not None:
                    pt, ph, pw = self.pools[i]
                    if t % pt or h % ph or w % pw:
                        raise ConfigError(
                            f"block {i + 1} pool {self.pools[i]} does not divide "
                            f"{stream} extent ({t}, {h}, {w})"
                        )
                    t, h, w = t // pt, h // ph, w // pw
                shapes.append((t, h, w, c))
            trace[stream] = shapes
        return trace

    def validate(self) -> None:
        trace = self.shape_trace()
        for name, src, dst, kind in self.laterals.directed():
            for level in range(4):
                st, sh, sw, sc = trace[src][level]
                dt, dh, dw, dc = trace[dst][level]
                if kind in ("conv2d", "tconv2d"):
                    if st != dt:
                        raise ConfigError(
                            f"lateral {name} block {level + 1}: temporal extents "
                            f"{st} vs {dt} differ"
                        )
                    ok = (sh, sw) == (2 * dh, 2 * dw) if kind == "conv2d" else (
                        (dh, dw) == (2 * sh, 2 * sw)
                    )
                    if not ok:
                        raise ConfigError(
                            f"lateral {name} block {level + 1}: spatial {sh}x{sw} "
                            f"-> {dh}x{dw} is not a 2:1 stride-2 match"
                        )
                else:
                    if (sh, sw) != (dh, dw):
                        raise ConfigError(
                            f"lateral {name} block {level + 1}: spatial extents differ"
                        )
                    ok = st == 2 * dt if kind == "conv1d" else dt == 2 * st
                    if not ok:
                        raise ConfigError(
                            f"lateral {name} block {level + 1}: temporal {st} -> {dt} "
                            f"is not a 2:1 stride-2 match"
                        )

    @property
    def feature_dims(self) -> dict[str, int]:
        c = self.channels[-1]
        return {
            "long_video": c,
            "long_keypoint": c,
            "short_video": c,
            "short_keypoint": c,
            "long": 2 * c,
            "short": 2 * c,
            "joint": 4 * c,
        }


@dataclass
class FeatureBundle:
    """The seven pooled features produced by one forward pass."""

    long_video: ad.Tensor
    long_keypoint: ad.Tensor
    short_video: ad.Tensor
    short_keypoint: ad.Tensor
    long: ad.Tensor
    short: ad.Tensor
    joint: ad.Tensor

    def by_name(self, name: str) -> ad.Tensor:
        return getattr(self, name)


class VKNet:
    """Backbone instance: parameters plus the wiring described in the config."""

    def __init__(self, config: VKNetConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x564B]))
        self.params: dict[str, ad.Parameter] = {}
        trace = config.shape_trace()

        for stream in STREAMS:
            c_in = config.stream_input_shape(stream)[-1]
            for i, c_out in enumerate(config.channels):
                fan_in = 27 * c_in
                self._add(
                    f"encoder.{stream}.block{i + 1}.w",
                    ad.uniform_init(
                        (3, 3, 3, c_in, c_out), fan_in, rng, self.dtype,
                        gain=ad.RELU_GAIN,
                    ),
                )
                self._add(
                    f"encoder.{stream}.block{i + 1}.b",
                    np.zeros(c_out, dtype=self.dtype),
                )
                c_in = c_out

        for name, src, _dst, kind in config.laterals.directed():
            for level in range(4):
                c = trace[src][level][-1]
                if kind in ("conv2d", "tconv2d"):
                    shape, fan_in = (3, 3, c, c), 9 * c
                else:
                    shape, fan_in = (3, c, c), 3 * c
                self._add(
                    f"lateral.b{level + 1}.{name}.w",
                    ad.uniform_init(shape, fan_in, rng, self.dtype),
                )
                self._add(f"lateral.b{level + 1}.{name}.b", np.zeros(c, dtype=self.dtype))

    def _add(self, name: str, data: np.ndarray):
        self.params[name] = ad.Parameter(data, name=name)

    def parameters(self):
        return self.params.items()

    # -- forward -------------------------------------------------------------

    def _block(self, stream: str, level: int, x: ad.Tensor) -> ad.Tensor:
        w = self.params[f"encoder.{stream}.block{level + 1}.w"]
        b = self.params[f"encoder.{stream}.block{level + 1}.b"]
        out = ad.relu(ad.conv3d(x, w, b, stride=1, padding=1))
        pool = self.config.pools[level]
        if pool is not None:
            out = ad.avg_pool(out, pool)
        return out

    def _lateral(self, name: str, level: int, kind: str, x: ad.Tensor) -> ad.Tensor:
        w = self.params[f"lateral.b{level + 1}.{name}.w"]
        b = self.params[f"lateral.b{level + 1}.{name}.b"]
        batch, t, h, wd, c = x.shape
        if kind in ("conv2d", "tconv2d"):
            frames = ad.reshape(x, (batch * t, h, wd, c))
            if kind == "conv2d":
                out = ad.conv2d(frames, w, b, stride=2, padding=1)
            else:
                out = ad.transposed_conv2d(frames, w, b, stride=2, padding=1, output_padding=1)
            _, oh, ow, oc = out.shape
            return ad.reshape(out, (batch, t, oh, ow, oc))
        cols = ad.reshape(ad.moveaxis(x, 1, 3), (batch * h * wd, t, c))
        if kind == "conv1d":
            out = ad.conv1d(cols, w, b, stride=2, padding=1)
        else:
            out = ad.transposed_conv1d(cols, w, b, stride=2, padding=1, output_padding=1)
        ot, oc = out.shape[1], out.shape[2]
        return ad.moveaxis(ad.reshape(out, (batch, h, wd, ot, oc)), 3, 1)

    def forward(self, v_long, k_long, v_short, k_short) -> FeatureBundle:
        inputs = {"v_long": v_long, "k_long": k_long, "v_short": v_short, "k_short": k_short}
        acts: dict[str, ad.Tensor] = {}
        for stream in STREAMS:
            x = inputs[stream]
            if not isinstance(x, ad.Tensor):
                x = ad.Tensor(np.asarray(x, dtype=self.dtype))
            want = self.config.stream_input_shape(stream)
            if x.shape[1:] != want:
                raise ShapeError(
                    f"{stream} input shape {x.shape[1:]} != configured {want}"
                )
            acts[stream] = x

        directed = self.config.laterals.directed()
        for level in range(5):
            outs = {s: self._block(s, level, acts[s]) for s in STREAMS}
            if level < 4 and directed:
                fused = dict(outs)
                for name, src, dst, kind in directed:
                    fused[dst] = fused[dst] + self._lateral(name, level, kind, outs[src])
                acts = fused
            else:
                acts = outs

        pooled = {s: ad.global_average_pool(acts[s]) for s in STREAMS}
        long = ad.concat([pooled["v_long"], pooled["k_long"]], axis=1)
        short = ad.concat([pooled["v_short"], pooled["k_short"]], axis=1)
        joint = ad.concat([short, long], axis=1)
        return FeatureBundle(
            long_video=pooled["v_long"],
            long_keypoint=pooled["k_long"],
            short_video=pooled["v_short"],
            short_keypoint=pooled["k_short"],
            long=long,
            short=short,
            joint=joint,
        )


def build(config: VKNetConfig, seed: int = 0) -> VKNet:
    """Construct a backbone; raises ConfigError on incompatible laterals."""
    return VKNet(config, seed)
