"""Inference, accuracy metrics, and the confusable-pair partition.

Single-crop prediction uses centered temporal windows; 3-crop averages
the predictions from windows at the start, middle, and end of the raw
clip. Ties in top-k ranking break toward the lower class index.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError
from .heatmap import rasterize_coords
from .synth import CroppedClip, Dataset, temporal_crop, three_crop_starts

VISIGN_DELTA = 0.1
VISIGN_SIMILARITY = 0.5


def clip_arrays(clip: CroppedClip, heatmap_size: int, sigma: float, dtype=np.float32):
    """Render one cropped clip into the four network input tensors."""
    heat = rasterize_coords(
        clip.keypoints, clip.valid, heatmap_size, heatmap_size, sigma, dtype=dtype
    )
    t_short = clip.video.shape[0] // 2
    sl = slice(clip.short_offset, clip.short_offset + t_short)
    return (
        clip.video.astype(dtype),
        heat,
        clip.video[sl].astype(dtype),
        heat[sl],
    )


def check_dataset_compatible(model, dataset: Dataset) -> None:
    cfg = model.config.vknet
    meta = dataset.meta
    if meta.get("video_size") != cfg.video_shape[1]:
        raise DataError(
            f"dataset video size {meta.get('video_size')} != model {cfg.video_shape[1]}"
        )
    if meta.get("heatmap_size") != cfg.heatmap_shape[1]:
        raise DataError(
            f"dataset heatmap size {meta.get('heatmap_size')} != "
            f"model {cfg.heatmap_shape[1]}"
        )
    if meta.get("keypoints") != cfg.heatmap_shape[3]:
        raise DataError(
            f"dataset keypoint count {meta.get('keypoints')} != "
            f"model {cfg.heatmap_shape[3]}"
        )


def predict_at_start(model, samples, sigma, start=None, batch_size=32) -> np.ndarray:
    """Class probabilities for each sample using one temporal window.

    ``start=None`` centers the long window; otherwise it begins at the
    given frame. The half-length window is always centered inside it.
    """
    cfg = model.config.vknet
    t_long = cfg.video_shape[0]
    hm_size = cfg.heatmap_shape[1]
    dtype = np.dtype(cfg.dtype)
    out = []
    for lo in range(0, len(samples), batch_size):
        batch = samples[lo : lo + batch_size]
        arrays = [[], [], [], []]
        for s in batch:
            if start is None:
                clip = temporal_crop(s, t_long, mode="eval")
            else:
                t_raw = s.video.shape[0]
                if t_raw < t_long:
                    raise DataError(
                        f"raw length {t_raw} shorter than long clip {t_long}"
                    )
                if not 0 <= start <= t_raw - t_long:
                    raise DataError(f"window start {start} out of range")
                sl = slice(start, start + t_long)
                clip = CroppedClip(
                    video=s.video[sl],
                    keypoints=s.keypoints[sl],
                    valid=s.valid[sl],
                    short_offset=(t_long - t_long // 2) // 2,
                    label=s.label,
                )
            for acc, arr in zip(arrays, clip_arrays(clip, hm_size, sigma, dtype)):
                acc.append(arr)
        out.append(model.predict(*(np.stack(a) for a in arrays)))
    return np.concatenate(out, axis=0)


def predict_samples(model, samples, sigma, crops=1, batch_size=32) -> np.ndarray:
    """Probabilities per sample: 1-crop (center) or 3-crop (start/middle/end)."""
    if crops == 1:
        return predict_at_start(model, samples, sigma, start=None, batch_size=batch_size)
    if crops != 3:
        raise ConfigError(f"crops must be 1 or 3, got {crops}")
    t_long = model.config.vknet.video_shape[0]
    lengths = {s.video.shape[0] for s in samples}
    if len(lengths) == 1:
        starts = three_crop_starts(lengths.pop(), t_long)
        stack = [
            predict_at_start(model, samples, sigma, start=st, batch_size=batch_size)
            for st in starts
        ]
        return np.mean(stack, axis=0)
    preds = np.zeros((len(samples), model.config.n_classes), dtype=np.float64)
    for i, s in enumerate(samples):
        stack = [
            predict_at_start(model, [s], sigma, start=st, batch_size=1)[0]
            for st in three_crop_starts(s.video.shape[0], t_long)
        ]
        preds[i] = np.mean(stack, axis=0)
    return preds


def topk_hits(probs: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Boolean per-sample membership of the true label in the top-k set,
    breaking score ties toward the lower class index."""
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return (order == np.asarray(labels)[:, None]).any(axis=1)


def per_instance_accuracy(probs, labels, k) -> float:
    """Fraction of samples whose true label ranks in the top k."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise DataError("no samples to score")
    return float(topk_hits(probs, labels, k).mean())


def per_class_accuracy(probs, labels, k) -> float:
    """Unweighted mean over classes of each class's top-k accuracy;
    classes without samples are excluded."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise DataError("no samples to score")
    hits = topk_hits(probs, labels, k)
    accs = []
    for c in np.unique(labels):
        mask = labels == c
        accs.append(hits[mask].mean())
    return float(np.mean(accs))


def confusion_counts(probs, labels, n_classes) -> np.ndarray:
    pred = np.argmax(probs, axis=1)  # argmax takes the first (lowest) index on ties
    mat = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(mat, (np.asarray(labels), pred), 1)
    return mat


def evaluate_split(model, dataset: Dataset, split="test", crops=1, batch_size=32) -> dict:
    """Score one split and assemble the report structure."""
    if split not in dataset.splits:
        raise DataError(f"split {split!r} not in dataset")
    samples = dataset.splits[split]
    if not samples:
        raise DataError(f"split {split!r} is empty")
    check_dataset_compatible(model, dataset)
    sigma = float(dataset.meta.get("sigma", 1.5))
    probs = predict_samples(model, samples, sigma, crops=crops, batch_size=batch_size)
    labels = np.array([s.label for s in samples])
    n = model.config.n_classes
    ks = [k for k in (1, 2, 3, 4, 5) if k <= n]
    order = np.argsort(-probs, axis=1, kind="stable")
    report = {
        "split": split,
        "crops": crops,
        "n_instances": len(samples),
        "n_classes": n,
        "glosses": dataset.lexicon.glosses,
        "per_instance_topk": {str(k): per_instance_accuracy(probs, labels, k) for k in ks},
        "per_class_topk": {str(k): per_class_accuracy(probs, labels, k) for k in ks},
        "confusion": confusion_counts(probs, labels, n).tolist(),
        "samples": [
            {
                "index": i,
                "label": int(labels[i]),
                "gloss": dataset.lexicon.glosses[labels[i]],
                "pred": int(order[i, 0]),
                "top2_index": [int(order[i, 0]), int(order[i, 1])],
                "top2_prob": [float(probs[i, order[i, 0]]), float(probs[i, order[i, 1]])],
            }
            for i in range(len(samples))
        ],
        "visign": subset_stats(probs, labels, dataset),
    }
    return report


def subset_stats(probs, labels, dataset: Dataset) -> dict:
    """Top-1 accuracy over the generator's ground-truth class categories."""
    hits = topk_hits(probs, labels, 1)
    stats = {}
    for cat in ("vs_s", "vs_d", "non_vs"):
        mask = np.array([dataset.class_category(int(l)) == cat for l in labels])
        stats[cat] = {
            "instances": int(mask.sum()),
            "top1": float(hits[mask].mean()) if mask.any() else None,
        }
    return stats


def visign_partition(
    report: dict,
    sim: np.ndarray,
    delta_threshold: float = VISIGN_DELTA,
    similarity_threshold: float = VISIGN_SIMILARITY,
) -> dict:
    """Identify confusable-sign instances from a baseline model's report.

    An instance whose top-2 probabilities are within ``delta_threshold``
    marks its two predicted glosses as a confusable pair, classified by
    their embedding cosine: similar-meaning if it reaches
    ``similarity_threshold``, distinct-meaning otherwise.
    """
    instances = []
    counts = {"vs_s": 0, "vs_d": 0, "non_vs": 0}
    pairs: dict[str, set] = {"vs_s": set(), "vs_d": set()}
    for s in report["samples"]:
        g1, g2 = s["top2_index"]
        p1, p2 = s["top2_prob"]
        delta = p1 - p2
        similarity = float(sim[g1, g2])
        if delta <= delta_threshold:
            category = "vs_s" if similarity >= similarity_threshold else "vs_d"
            pairs[category].add(tuple(sorted((g1, g2))))
        else:
            category = "non_vs"
        counts[category] += 1
        instances.append(
            {
                "index": s["index"],
                "g1": g1,
                "g2": g2,
                "p1": p1,
                "p2": p2,
                "delta": delta,
                "similarity": similarity,
                "category": category,
            }
        )
    return {
        "delta_threshold": delta_threshold,
        "similarity_threshold": similarity_threshold,
        "instances": instances,
        "counts": counts,
        "pairs": {k: sorted(list(p) for p in v) for k, v in pairs.items()},
    }
