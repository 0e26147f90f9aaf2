"""Sliding-window template scoring, thresholding and non-maximum suppression.

A template's score at an anchor is the mean of its features' response-map
reads, as a percent.  Detection scores every template at every stride-aligned
anchor, keeps scores above the threshold, and suppresses non-maxima greedily.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import MatchConfig
from .cues import Channel
from .errors import ConfigMismatchError
from .frames import CameraIntrinsics, RGBDFrame
from .responses import FrameMaps, build_frame_maps
from .templates import Template, TemplateDB


@dataclass(frozen=True)
class Detection:
    object_id: str
    template_id: int
    x: int              # anchor (template top-left) in frame pixels
    y: int
    similarity: float   # percent in [0, 100]


def score(template: Template, maps: FrameMaps, anchor: tuple[int, int],
          channels: frozenset) -> float:
    """Similarity percent of one template at one anchor.

    Accumulates sequentially in feature order so the result is reproducible
    bit for bit.
    """
    ax, ay = anchor
    if ax < 0 or ay < 0 or ax + template.width > maps.width or ay + template.height > maps.height:
        raise ValueError(
            f"anchor ({ax}, {ay}) puts template {template.width}x{template.height} "
            f"outside the {maps.width}x{maps.height} frame"
        )
    total = 0.0
    for f in template.features:
        stack = maps.stack_for(Channel(f.channel), channels)
        total += stack.values[f.bin, (ay + f.y) * maps.width + (ax + f.x)]
    return 100.0 * total / len(template.features)


def score_image(template: Template, maps: FrameMaps, channels: frozenset,
                stride: int = 1) -> np.ndarray:
    """Scores at every stride-aligned anchor where the template fits."""
    out_h = maps.height - template.height + 1
    out_w = maps.width - template.width + 1
    if out_h <= 0 or out_w <= 0:
        return np.zeros((0, 0))
    acc = np.zeros(((out_h + stride - 1) // stride, (out_w + stride - 1) // stride))
    for f in template.features:
        stack = maps.stack_for(Channel(f.channel), channels)
        plane = stack.values[f.bin].reshape(maps.height, maps.width)
        acc += plane[f.y:f.y + out_h:stride, f.x:f.x + out_w:stride]
    return 100.0 * acc / len(template.features)


def non_max_suppress(detections: Sequence[Detection], radius: int = 16) -> list[Detection]:
    """Greedy suppression: walk detections by descending similarity (ties to the
    lower template id) and drop any within Chebyshev ``radius`` of a kept one."""
    order = sorted(detections, key=lambda d: (-d.similarity, d.template_id, d.y, d.x))
    kept: list[Detection] = []
    for det in order:
        if any(abs(det.x - k.x) <= radius and abs(det.y - k.y) <= radius for k in kept):
            continue
        kept.append(det)
    return kept


def _detect_candidates(maps: FrameMaps, db: TemplateDB, threshold: float,
                       stride: int) -> tuple[np.ndarray, ...]:
    """Best template per anchor (lowest id wins ties), thresholded."""
    best_sim = np.full((maps.height, maps.width), -1.0)
    best_idx = np.full((maps.height, maps.width), -1, dtype=np.int32)
    for idx, template in enumerate(db.templates):
        scores = score_image(template, maps, db.channels, stride)
        if scores.size == 0:
            continue
        h, w = scores.shape
        view_sim = best_sim[:h * stride:stride, :w * stride:stride]
        view_idx = best_idx[:h * stride:stride, :w * stride:stride]
        better = scores > view_sim
        view_sim[better] = scores[better]
        view_idx[better] = idx
    mask = (best_idx >= 0) & (best_sim >= threshold)
    ys, xs = np.nonzero(mask)
    return ys, xs, best_sim[ys, xs], best_idx[ys, xs]


def _suppress_grid(ys, xs, sims, idxs, db: TemplateDB, shape: tuple[int, int],
                   radius: int) -> list[Detection]:
    """Occupancy-grid NMS, equivalent to non_max_suppress on the same input."""
    tids = np.array([db.templates[i].template_id for i in idxs], dtype=np.int64) \
        if len(idxs) else np.zeros(0, dtype=np.int64)
    order = np.lexsort((xs, ys, tids, -sims))
    occupied = np.zeros(shape, dtype=bool)
    h, w = shape
    kept: list[Detection] = []
    for i in order:
        y, x = int(ys[i]), int(xs[i])
        if occupied[y, x]:
            continue
        template = db.templates[int(idxs[i])]
        kept.append(Detection(object_id=template.object_id, template_id=template.template_id,
                              x=x, y=y, similarity=float(sims[i])))
        occupied[max(0, y - radius):min(h, y + radius + 1),
                 max(0, x - radius):min(w, x + radius + 1)] = True
    return kept


def detect_with_maps(maps: FrameMaps, db: TemplateDB, threshold: float = 75.0,
                     stride: int = 1) -> list[Detection]:
    """Match every template against precomputed frame maps."""
    if db.fingerprint() != maps.config.fingerprint():
        raise ConfigMismatchError("database fingerprint does not match the frame maps' config")
    ys, xs, sims, idxs = _detect_candidates(maps, db, threshold, stride)
    kept = _suppress_grid(ys, xs, sims, idxs, db, (maps.height, maps.width),
                          maps.config.nms_radius)
    return sorted(kept, key=lambda d: (-d.similarity, d.template_id, d.y, d.x))


def detect(frame: RGBDFrame, db: TemplateDB, threshold: float = 75.0,
           stride: int = 1, intrinsics: CameraIntrinsics | None = None,
           config: MatchConfig | None = None) -> list[Detection]:
    """Build response maps for the frame and run the full template sweep.

    The frame is expected to be stabilized already.  Channel maps are built
    for the channel set the database was trained with.
    """
    config = config or db.config
    if intrinsics is None:
        raise ValueError("detect requires camera intrinsics")
    maps = build_frame_maps(frame, intrinsics, config, db.channels)
    return detect_with_maps(maps, db, threshold, stride)


def bench_full_comparison(frame: RGBDFrame, db: TemplateDB,
                          repetitions: int, intrinsics: CameraIntrinsics,
                          threshold: float = 75.0, stride: int = 1) -> float:
    """Mean wall-clock seconds of a full database comparison on one frame.

    Includes response-map construction, excludes frame I/O.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    elapsed = 0.0
    for _ in range(repetitions):
        start = time.perf_counter()
        detect(frame, db, threshold=threshold, stride=stride, intrinsics=intrinsics)
        elapsed += time.perf_counter() - start
    return elapsed / repetitions
