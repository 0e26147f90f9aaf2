"""Training runs, recognition trials, ROC sweeps and timing reports.

The protocol mirrors a rotating-platform rig: templates are trained from
rotated views at a few fixed table positions, then recognition trials draw a
trained position, a fresh rotation and fresh sensor noise.  A detection is a
true positive when it carries the correct object name and its 3D centroid
lands within 5 cm of ground truth; every other response is a false positive.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import MatchConfig
from .cues import Channel
from .errors import LocalizationError
from .frames import Point3D
from .localize import locate, scanline_depth_fill
from .matching import Detection, detect_with_maps
from .responses import build_frame_maps
from .scenes import (GroundTruth, NoiseSpec, ObjectSpec, SceneSpec,
                     rotate_views)
from .stabilize import stabilize
from .templates import TemplateDB, View, train_from_views

logger = logging.getLogger(__name__)

TP_RADIUS_M = 0.05
DETECTION_BOUNDARY = 75.0

CHANNEL_SETS = {
    "m1,m2": frozenset({Channel.M1, Channel.M2}),
    "m1,m2,m3": frozenset({Channel.M1, Channel.M2, Channel.M3}),
    "m1,m2,m4": frozenset({Channel.M1, Channel.M2, Channel.M4}),
    "m1,m2,m3,m4": frozenset({Channel.M1, Channel.M2, Channel.M3, Channel.M4}),
}

# evaluation noise: color noise stays below the false-gradient regime of the
# Sobel threshold; depth flicker is strong enough that a stabilized window
# loses the band around depth edges almost everywhere
TRIAL_NOISE = NoiseSpec(rgb_sigma=5.0, flicker_rate=0.18, edge_band=3)
TRAIN_NOISE = NoiseSpec(rgb_sigma=2.0, flicker_rate=0.18, edge_band=3)

STANDARD_POSITIONS = ((0.0, 1.0), (0.06, 1.08), (-0.06, 1.16))


def standard_objects() -> list[ObjectSpec]:
    """Nine desk-scale objects, three per material category."""
    return [
        ObjectSpec("noodle_box", "diffuse", "box", 0.0, 1.0,
                   width=0.065, height=0.15, thickness=0.05, texture_seed=11),
        ObjectSpec("soup_can", "diffuse", "cylinder", 0.0, 1.0,
                   width=0.062, height=0.11, texture_seed=23, bright_cap=True),
        ObjectSpec("candle_box", "diffuse", "box", 0.0, 1.0,
                   width=0.05, height=0.17, thickness=0.05, texture_seed=37),
        ObjectSpec("water_glass", "transparent", "glass-profile", 0.0, 1.0,
                   width=0.04, height=0.125, texture_seed=41),
        ObjectSpec("beer_glass", "transparent", "glass-profile", 0.0, 1.0,
                   width=0.045, height=0.16, texture_seed=43),
        ObjectSpec("jam_jar", "transparent", "cylinder", 0.0, 1.0,
                   width=0.05, height=0.09, texture_seed=47),
        ObjectSpec("soda_bottle", "composite", "cylinder", 0.0, 1.0,
                   width=0.05, height=0.19, texture_seed=53, label_band=(0.70, 0.95)),
        ObjectSpec("soap_bottle", "composite", "glass-profile", 0.0, 1.0,
                   width=0.05, height=0.17, texture_seed=59, label_band=(0.72, 0.96)),
        ObjectSpec("spice_jar", "composite", "cylinder", 0.0, 1.0,
                   width=0.046, height=0.15, texture_seed=61, label_band=(0.02, 0.27)),
    ]


def scene_for(obj: ObjectSpec, position: tuple[float, float], rotation: float,
              seed: int, noise: NoiseSpec, frames: int = 10) -> SceneSpec:
    placed = replace(obj, x=position[0], z=position[1], rotation=rotation)
    return SceneSpec(objects=(placed,), seed=seed, noise=noise, frames=frames)


# --- training ------------------------------------------------------------------


def iter_training_views(obj: ObjectSpec, positions=STANDARD_POSITIONS,
                        n_rotations: int = 12, noise: NoiseSpec = TRAIN_NOISE,
                        seed: int = 1):
    """Yield stabilized single-object views over a position/rotation grid."""
    from .scenes import render

    for p_index, position in enumerate(positions):
        base = scene_for(obj, position, 0.0, seed + 1000 * p_index, noise)
        for v_index, spec in enumerate(rotate_views(base, 0, n_rotations)):
            frames, gt = render(spec)
            frame = stabilize(frames)
            mask = gt.by_id(obj.object_id).silhouette
            yield View(obj.object_id, frame, mask, pose_label=f"p{p_index}r{v_index}")


def run_training(objects: Sequence[ObjectSpec], channel_sets: dict[str, frozenset] | None = None,
                 config: MatchConfig | None = None, positions=STANDARD_POSITIONS,
                 n_rotations: int = 12, noise: NoiseSpec = TRAIN_NOISE,
                 seed: int = 1) -> dict[str, TemplateDB]:
    """Train one database per channel set in a single pass over the views.

    Each view is rendered and its channel-superset maps built once; every
    database then extracts its own channel subset and runs its own dedup.
    """
    from .errors import EmptyTemplateError
    from .templates import extract_template, is_duplicate, mask_anchor_box

    config = config or MatchConfig()
    if channel_sets is None:
        channel_sets = {"m1,m2": CHANNEL_SETS["m1,m2"],
                        "m1,m2,m3,m4": CHANNEL_SETS["m1,m2,m3,m4"]}
    dbs = {name: TemplateDB(config=config, channels=chans)
           for name, chans in channel_sets.items()}
    union = frozenset().union(*channel_sets.values())
    intrinsics = SceneSpec().intrinsics
    for obj in objects:
        for view in iter_training_views(obj, positions, n_rotations, noise, seed):
            maps = build_frame_maps(view.frame, intrinsics, config, union)
            anchor = mask_anchor_box(view.mask, config.mask_dilation)[:2]
            for db in dbs.values():
                try:
                    candidate = extract_template(view.frame, intrinsics, view.mask,
                                                 db.channels, view.object_id, config,
                                                 view.pose_label, maps=maps)
                except EmptyTemplateError as err:
                    logger.info("skipping view %s/%s: %s", view.object_id, view.pose_label, err)
                    continue
                if not is_duplicate(candidate, db, maps, anchor, config):
                    db.add(candidate)
        for name, db in dbs.items():
            logger.info("trained %s [%s]: %d templates", obj.object_id, name,
                        db.counts().get(obj.object_id, 0))
    return dbs


# --- trials ----------------------------------------------------------------------


@dataclass
class ScoredDetection:
    detection: Detection
    centroid: Point3D | None  # None when localization failed

    def is_tp(self, true_object: str, true_centroid: Point3D) -> bool:
        if self.detection.object_id != true_object or self.centroid is None:
            return False
        dx = self.centroid.x - true_centroid.x
        dy = self.centroid.y - true_centroid.y
        dz = self.centroid.z - true_centroid.z
        return math.sqrt(dx * dx + dy * dy + dz * dz) <= TP_RADIUS_M


@dataclass
class TrialResult:
    trial_id: int
    object_id: str
    category: str
    centroid: Point3D
    detections: list[ScoredDetection]

    def tp_at(self, threshold: float) -> bool:
        return any(s.detection.similarity >= threshold and
                   s.is_tp(self.object_id, self.centroid) for s in self.detections)

    def fp_at(self, threshold: float) -> bool:
        return any(s.detection.similarity >= threshold and
                   not s.is_tp(self.object_id, self.centroid) for s in self.detections)


@dataclass
class RocCurve:
    rows: list[tuple[int, float, float]]  # (threshold percent, TPR, FPR)

    def tpr_at(self, threshold: int) -> float:
        for t, tpr, _ in self.rows:
            if t == threshold:
                return tpr
        raise KeyError(threshold)

    def fpr_at(self, threshold: int) -> float:
        for t, _, fpr in self.rows:
            if t == threshold:
                return fpr
        raise KeyError(threshold)


def classify_detection(detection: Detection, centroid: Point3D | None,
                       truth: GroundTruth) -> bool:
    """Pure TP rule: correct name and centroid within 5 cm of ground truth."""
    try:
        gt_obj = truth.by_id(detection.object_id)
    except KeyError:
        return False
    if centroid is None:
        return False
    dx = centroid.x - gt_obj.centroid.x
    dy = centroid.y - gt_obj.centroid.y
    dz = centroid.z - gt_obj.centroid.z
    return math.sqrt(dx * dx + dy * dy + dz * dz) <= TP_RADIUS_M


def run_trials(objects: Sequence[ObjectSpec], dbs: dict[str, TemplateDB],
               n_trials: int = 25, positions=STANDARD_POSITIONS,
               noise: NoiseSpec = TRIAL_NOISE, seed: int = 77,
               stride: int = 2, min_threshold: float = 0.0) -> dict[str, list[TrialResult]]:
    """Seeded recognition trials shared across channel-set databases.

    Every trial renders one object at a trained position with a fresh random
    rotation, stabilizes, builds the channel superset maps once, and runs each
    database's sweep at ``min_threshold`` so one pass supports the whole
    0..100 threshold sweep afterwards.
    """
    from .scenes import render

    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    union: set = set()
    for db in dbs.values():
        union |= set(db.channels)
    intrinsics = SceneSpec().intrinsics
    results: dict[str, list[TrialResult]] = {name: [] for name in dbs}
    trial_id = 0
    for obj_index, obj in enumerate(objects):
        for t_index in range(n_trials):
            rng = np.random.default_rng([seed, obj_index, t_index])
            position = positions[int(rng.integers(len(positions)))]
            rotation = float(rng.uniform(0.0, 2.0 * math.pi))
            spec = scene_for(obj, position, rotation,
                             seed=int(rng.integers(1 << 62)), noise=noise)
            frames, gt = render(spec)
            frame = stabilize(frames)
            config = next(iter(dbs.values())).config
            maps = build_frame_maps(frame, intrinsics, config, frozenset(union))
            filled = maps.filled_depth
            if filled is None:
                filled = scanline_depth_fill(frame.depth)
            gt_obj = gt.by_id(obj.object_id)
            for name, db in dbs.items():
                scored = []
                for det in detect_with_maps(maps, db, threshold=min_threshold, stride=stride):
                    template = next(t for t in db.templates if t.template_id == det.template_id)
                    try:
                        location = locate(det, template, filled, intrinsics)
                        centroid = location.centroid
                    except LocalizationError:
                        centroid = None
                    scored.append(ScoredDetection(det, centroid))
                results[name].append(TrialResult(
                    trial_id=trial_id, object_id=obj.object_id, category=obj.category,
                    centroid=gt_obj.centroid, detections=scored))
            trial_id += 1
    return results


def roc_curve(trials: Sequence[TrialResult], thresholds: Iterable[int] = range(0, 101)) -> RocCurve:
    """Per-trial ROC: a trial scores TPR when any detection is a TP, and FPR
    when any detection is a false positive."""
    rows = []
    n = len(trials)
    if n == 0:
        raise ValueError("cannot build a ROC curve from zero trials")
    for t in thresholds:
        tpr = sum(trial.tp_at(t) for trial in trials) / n
        fpr = sum(trial.fp_at(t) for trial in trials) / n
        rows.append((int(t), tpr, fpr))
    return RocCurve(rows=rows)


def recognition_rate(trials: Sequence[TrialResult], threshold: float = DETECTION_BOUNDARY) -> float:
    if not trials:
        raise ValueError("no trials")
    return sum(trial.tp_at(threshold) for trial in trials) / len(trials)


def rates_by_scope(trials_by_set: dict[str, list[TrialResult]],
                   threshold: float = DETECTION_BOUNDARY) -> dict[str, dict[str, float]]:
    """Recognition-rate summary shaped like the paper's rate table: one row for
    the full set, one for the diffuse-only subset."""
    out: dict[str, dict[str, float]] = {"all": {}, "diffuse": {}}
    for name, trials in trials_by_set.items():
        out["all"][name] = recognition_rate(trials, threshold)
        diffuse = [t for t in trials if t.category == "diffuse"]
        if diffuse:
            out["diffuse"][name] = recognition_rate(diffuse, threshold)
    return out


def roc_dominates(better: RocCurve, worse: RocCurve) -> bool:
    """True when for every operating point of ``worse`` there is a point of
    ``better`` with no more FPR and no less TPR."""
    points = [(fpr, tpr) for _, tpr, fpr in better.rows]
    for _, tpr_w, fpr_w in worse.rows:
        if not any(fpr_b <= fpr_w and tpr_b >= tpr_w for fpr_b, tpr_b in points):
            return False
    return True


# --- CSV reports ------------------------------------------------------------------


def write_counts_csv(counts_by_set: dict[str, dict[str, int]], path: str | Path) -> None:
    sets = list(counts_by_set)
    objects = sorted({obj for counts in counts_by_set.values() for obj in counts})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["object"] + sets)
        for obj in objects:
            writer.writerow([obj] + [counts_by_set[s].get(obj, 0) for s in sets])


def write_roc_csv(curves: dict[str, RocCurve], path: str | Path) -> None:
    sets = list(curves)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["threshold"]
        for name in sets:
            header += [f"tpr[{name}]", f"fpr[{name}]"]
        writer.writerow(header)
        thresholds = [row[0] for row in curves[sets[0]].rows]
        for i, t in enumerate(thresholds):
            row = [t]
            for name in sets:
                _, tpr, fpr = curves[name].rows[i]
                row += [f"{tpr:.4f}", f"{fpr:.4f}"]
            writer.writerow(row)


def write_rates_csv(rates: dict[str, dict[str, float]], path: str | Path) -> None:
    sets = sorted({name for row in rates.values() for name in row})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope"] + sets)
        for scope, row in rates.items():
            writer.writerow([scope] + [f"{row.get(name, float('nan')) * 100:.1f}" for name in sets])


def write_timings_csv(timings: dict[str, float], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel_set", "seconds"])
        for name, seconds in timings.items():
            writer.writerow([name, f"{seconds:.6f}"])
