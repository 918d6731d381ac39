"""On-disk dataset layout.

A dataset directory holds one JSON manifest, the lexicon in word-vector
text format, and per-sample raw tensor files (magic ``TNSR``, u32 version,
u32 rank, u32 dims, then little-endian float32 payload). Each manifest
sample records its label, gloss token, and the video/keypoint file paths.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .lexicon import load_word_vectors, save_word_vectors
from .synth import Dataset, RawSample, SynthSpec

TENSOR_MAGIC = b"TNSR"
MANIFEST_NAME = "manifest.json"
LEXICON_NAME = "lexicon.vec"


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float32)
    with Path(path).open("wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"tensor file not found: {path}")
    with path.open("rb") as fh:
        if fh.read(4) != TENSOR_MAGIC:
            raise ParseError(f"{path}: not a tensor file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise ParseError(f"{path}: unsupported tensor version {version}")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        payload = fh.read()
    expect = int(np.prod(shape)) * 4
    if len(payload) != expect:
        raise ParseError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write manifest, lexicon, and tensor files; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_word_vectors(dataset.lexicon, out_dir / LEXICON_NAME)
    manifest = {
        "version": 1,
        "n_classes": dataset.lexicon.size,
        "glosses": dataset.lexicon.glosses,
        "lexicon": LEXICON_NAME,
        "categories": {
            k: [list(p) for p in v] if k != "non_vs" else list(v)
            for k, v in dataset.categories.items()
        },
        "meta": dataset.meta,
        "generator_spec": dataset.spec.to_dict() if dataset.spec else None,
        "splits": {},
    }
    for split, samples in dataset.splits.items():
        split_dir = out_dir / split
        split_dir.mkdir(exist_ok=True)
        entries = []
        for i, sample in enumerate(samples):
            video_rel = f"{split}/{i:05d}.video.bin"
            kpt_rel = f"{split}/{i:05d}.kpt.bin"
            write_tensor(out_dir / video_rel, sample.video)
            track = np.concatenate(
                [sample.keypoints, sample.valid[:, :, None].astype(np.float32)],
                axis=2,
            )
            write_tensor(out_dir / kpt_rel, track)
            entries.append(
                {
                    "label": int(sample.label),
                    "gloss": dataset.lexicon.glosses[sample.label],
                    "video": video_rel,
                    "keypoints": kpt_rel,
                }
            )
        manifest["splits"][split] = entries
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_dataset(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    manifest_path = data_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no {MANIFEST_NAME} in {data_dir}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: invalid JSON: {exc}") from None
    lexicon = load_word_vectors(data_dir / manifest["lexicon"])
    if lexicon.glosses != manifest["glosses"]:
        raise DataError("lexicon glosses disagree with manifest")
    splits: dict[str, list[RawSample]] = {}
    for split, entries in manifest["splits"].items():
        samples = []
        for entry in entries:
            video = read_tensor(data_dir / entry["video"])
            track = read_tensor(data_dir / entry["keypoints"])
            if track.shape[0] != video.shape[0]:
                raise DataError(
                    f"{entry['keypoints']}: track length {track.shape[0]} != "
                    f"video length {video.shape[0]}"
                )
            label = int(entry["label"])
            if not 0 <= label < lexicon.size:
                raise DataError(f"label {label} out of range")
            samples.append(
                RawSample(
                    video=video,
                    keypoints=track[:, :, :2],
                    valid=track[:, :, 2] > 0.5,
                    label=label,
                )
            )
        splits[split] = samples
    categories = {
        "vs_s": [tuple(p) for p in manifest["categories"].get("vs_s", [])],
        "vs_d": [tuple(p) for p in manifest["categories"].get("vs_d", [])],
        "non_vs": list(manifest["categories"].get("non_vs", [])),
    }
    spec = (
        SynthSpec.from_dict(manifest["generator_spec"])
        if manifest.get("generator_spec")
        else None
    )
    return Dataset(
        lexicon=lexicon,
        splits=splits,
        categories=categories,
        spec=spec,
        meta=manifest.get("meta", {}),
    )
