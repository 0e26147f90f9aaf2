"""Depth hole filling and 3D localization of detections.

Unavailable depth is filled column-wise from the nearest valid value below,
exploiting the tabletop assumption: the surface an object stands on extends
in front of it, so pushing table depth up into the unknown silhouette yields
a usable stand-in geometry.  Matched feature pixels are then backprojected,
outliers rejected, and the surviving points averaged into a centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LocalizationError
from .frames import CameraIntrinsics, Point3D, backproject_pixels


@dataclass
class ObjectLocation:
    object_id: str
    centroid: Point3D
    inlier_count: int
    used_feature_count: int


def scanline_depth_fill(depth_mm: np.ndarray) -> np.ndarray:
    """Fill every unavailable pixel with the nearest valid value below it.

    Pixels with no valid value below them in their column stay unavailable;
    valid pixels are never modified.  Idempotent.
    """
    depth = np.asarray(depth_mm)
    filled = depth.copy()
    carry = np.zeros(depth.shape[1], dtype=depth.dtype)
    for row in range(depth.shape[0] - 1, -1, -1):
        values = depth[row]
        valid = values > 0
        filled[row] = np.where(valid, values, carry)
        carry = np.where(valid, values, carry)
    return filled


def statistical_outlier_filter(points: np.ndarray, passes: int = 2,
                               k_sigma: float = 2.0, min_points: int = 3) -> np.ndarray:
    """Drop points farther than mean + k_sigma * stddev from the centroid.

    Runs ``passes`` rounds, recomputing the centroid in between, and never
    reduces the set below ``min_points`` (the closest points are kept instead).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("outlier filter needs at least one point")
    for _ in range(passes):
        if len(pts) <= min_points:
            break
        centroid = pts.mean(axis=0)
        dist = np.linalg.norm(pts - centroid, axis=1)
        keep = dist <= dist.mean() + k_sigma * dist.std()
        if keep.sum() < min_points:
            keep = np.zeros(len(pts), dtype=bool)
            keep[np.argsort(dist, kind="stable")[:min_points]] = True
        pts = pts[keep]
    return pts


def locate(detection, template, filled_depth_mm: np.ndarray,
           intrinsics: CameraIntrinsics) -> ObjectLocation:
    """3D centroid of a detection from its template's feature pixels.

    Features whose depth is still unavailable after filling are dropped; the
    rest are backprojected and cleaned with the statistical outlier filter.
    """
    xs = np.array([detection.x + f.x for f in template.features], dtype=np.intp)
    ys = np.array([detection.y + f.y for f in template.features], dtype=np.intp)
    depths = np.asarray(filled_depth_mm)[ys, xs]
    usable = depths > 0
    if not usable.any():
        raise LocalizationError(
            f"no feature of {detection.object_id} at ({detection.x}, {detection.y}) has usable depth"
        )
    points = backproject_pixels(xs[usable], ys[usable], depths[usable], intrinsics)
    inliers = statistical_outlier_filter(points)
    centroid = inliers.mean(axis=0)
    return ObjectLocation(
        object_id=detection.object_id,
        centroid=Point3D(*centroid),
        inlier_count=len(inliers),
        used_feature_count=len(points),
    )
