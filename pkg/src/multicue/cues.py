"""The four cue transformations that turn a frame into matchable fields.

Each channel hypothesizes one physical property:

  m1  2D shape            dominant intensity gradients      range [0, pi)
  m2  3D geometry         dominant surface normals          two angular DoF
  m3  transparency        unavailable-depth contours        binary support
  m4  specular reflection crossmodally filtered highlights  binary support

m3 and m4 produce binary masks whose contours are then described with the
same dominant-gradient feature as m1.  m3 additionally contributes surface
normals of the extruded (hole-filled) geometry, which are routed into the m2
channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatchError
from .frames import CameraIntrinsics, luminance


class Channel(str, Enum):
    M1 = "m1"
    M2 = "m2"
    M3 = "m3"
    M4 = "m4"


@dataclass(frozen=True)
class ModalityChannel:
    id: Channel
    physical_property: str
    value_range: str


MODALITIES = {
    Channel.M1: ModalityChannel(Channel.M1, "2D shape", "[0,pi]"),
    Channel.M2: ModalityChannel(Channel.M2, "3D geometry", "[0,pi]^2"),
    Channel.M3: ModalityChannel(Channel.M3, "transparency", "{0,1}"),
    Channel.M4: ModalityChannel(Channel.M4, "specular reflection", "{0,1}"),
}


@dataclass
class OrientationMap:
    """Per-pixel undirected orientation in [0, pi) with gradient magnitude."""

    orientation: np.ndarray  # (H, W) float64, defined only where valid
    magnitude: np.ndarray    # (H, W) float64
    validity: np.ndarray     # (H, W) bool


@dataclass
class NormalMap:
    """Per-pixel unit surface normals facing the camera (nz <= 0)."""

    normals: np.ndarray   # (H, W, 3) float64
    validity: np.ndarray  # (H, W) bool
    support: np.ndarray | None = None  # valid-sample fraction of the fit patch


def _sobel_xy(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel responses for the interior; exact int32 arithmetic."""
    g = gray.astype(np.int32)
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    # column/row slices of the 3x3 neighborhood
    tl, tc, tr = g[:-2, :-2], g[:-2, 1:-1], g[:-2, 2:]
    ml, mr = g[1:-1, :-2], g[1:-1, 2:]
    bl, bc, br = g[2:, :-2], g[2:, 1:-1], g[2:, 2:]
    gx[1:-1, 1:-1] = (tr + 2 * mr + br) - (tl + 2 * ml + bl)
    gy[1:-1, 1:-1] = (bl + 2 * bc + br) - (tl + 2 * tc + tr)
    return gx, gy


def _fold_orientation(gy: np.ndarray, gx: np.ndarray) -> np.ndarray:
    """Undirected gradient orientation in [0, pi)."""
    return np.mod(np.arctan2(gy, gx), np.pi)


def intensity_gradients(rgb: np.ndarray, threshold: float = 30.0) -> OrientationMap:
    """Dominant per-pixel color gradient (channel of maximum Sobel magnitude).

    Only the direction of the gradient is kept, which makes the feature robust
    to contrast changes; pixels below the magnitude threshold are invalid.
    """
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) color image, got {rgb.shape}")
    h, w = rgb.shape[:2]
    if h < 3 or w < 3:
        raise ValueError(f"image {h}x{w} is smaller than the 3x3 gradient support")

    mags = np.empty((3, h, w), dtype=np.float64)
    gxs = np.empty((3, h, w), dtype=np.int32)
    gys = np.empty((3, h, w), dtype=np.int32)
    for c in range(3):
        gx, gy = _sobel_xy(rgb[:, :, c])
        gxs[c], gys[c] = gx, gy
        mags[c] = np.hypot(gx, gy)
    best = np.argmax(mags, axis=0)  # first channel wins ties
    rows, cols = np.indices((h, w))
    magnitude = mags[best, rows, cols]
    orientation = _fold_orientation(gys[best, rows, cols], gxs[best, rows, cols])

    validity = magnitude >= threshold
    validity[0, :] = validity[-1, :] = False
    validity[:, 0] = validity[:, -1] = False
    orientation = np.where(validity, orientation, 0.0)
    return OrientationMap(orientation=orientation, magnitude=magnitude, validity=validity)


def mask_contour_orientations(mask: np.ndarray, threshold: float = 30.0) -> OrientationMap:
    """Contour orientations of a binary mask, treated as a {0, 255} image."""
    gray = np.where(mask, 255, 0).astype(np.int32)
    h, w = gray.shape
    if h < 3 or w < 3:
        raise ValueError(f"mask {h}x{w} is smaller than the 3x3 gradient support")
    gx, gy = _sobel_xy(gray)
    magnitude = np.hypot(gx, gy)
    validity = magnitude >= threshold
    validity[0, :] = validity[-1, :] = False
    validity[:, 0] = validity[:, -1] = False
    orientation = np.where(validity, _fold_orientation(gy, gx), 0.0)
    return OrientationMap(orientation=orientation, magnitude=magnitude, validity=validity)


def nan_mask(depth: np.ndarray) -> np.ndarray:
    """True exactly where depth is unavailable (the 0 sentinel)."""
    return np.asarray(depth) == 0


def _box_sum(values: np.ndarray, radius: int) -> np.ndarray:
    """Exact windowed sum over a (2r+1)^2 patch with zero padding."""
    k = 2 * radius + 1
    padded = np.pad(values, ((radius + 1, radius), (radius + 1, radius)))
    c = np.cumsum(np.cumsum(padded, axis=0), axis=1)
    return c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]


def depth_normals(depth_mm: np.ndarray, intrinsics: CameraIntrinsics,
                  patch_radius: int = 2, min_samples: int = 6) -> NormalMap:
    """Least-squares plane normals over a patch of backprojected depth samples.

    For every pixel with at least ``min_samples`` valid samples in its patch,
    the plane z = a*x + b*y + c is fit to the metric points and the normal
    (a, b, -1)/|..| (camera-facing) is reported.
    """
    depth_mm = np.asarray(depth_mm)
    h, w = depth_mm.shape
    valid = (depth_mm > 0).astype(np.float64)
    z = depth_mm.astype(np.float64) / 1000.0
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    x = (us - intrinsics.cx) * z / intrinsics.fx
    y = (vs - intrinsics.cy) * z / intrinsics.fy

    # normal equations of the weighted plane fit, accumulated per patch
    n = _box_sum(valid, patch_radius)
    sx = _box_sum(valid * x, patch_radius)
    sy = _box_sum(valid * y, patch_radius)
    sz = _box_sum(valid * z, patch_radius)
    sxx = _box_sum(valid * x * x, patch_radius)
    sxy = _box_sum(valid * x * y, patch_radius)
    syy = _box_sum(valid * y * y, patch_radius)
    sxz = _box_sum(valid * x * z, patch_radius)
    syz = _box_sum(valid * y * z, patch_radius)

    # Cramer's rule for [[sxx sxy sx][sxy syy sy][sx sy n]] [a b c]^T = [sxz syz sz]^T
    c00 = syy * n - sy * sy
    c01 = sxy * n - sy * sx
    c02 = sxy * sy - syy * sx
    det = sxx * c00 - sxy * c01 + sx * c02
    det_a = sxz * c00 - sxy * (syz * n - sy * sz) + sx * (syz * sy - syy * sz)
    det_b = sxx * (syz * n - sy * sz) - sxz * c01 + sx * (sxy * sz - syz * sx)

    solvable = (n >= min_samples) & (np.abs(det) > 1e-18)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(solvable, det_a / det, 0.0)
        b = np.where(solvable, det_b / det, 0.0)
    finite = np.isfinite(a) & np.isfinite(b)
    solvable &= finite
    a = np.where(solvable, a, 0.0)
    b = np.where(solvable, b, 0.0)

    norm = np.sqrt(a * a + b * b + 1.0)
    normals = np.stack([a / norm, b / norm, -1.0 / norm], axis=-1)
    normals[~solvable] = 0.0
    support = n / float((2 * patch_radius + 1) ** 2)
    return NormalMap(normals=normals, validity=solvable, support=support)


def extruded_normals(depth_filled_mm: np.ndarray, original_nan_mask: np.ndarray,
                     intrinsics: CameraIntrinsics, patch_radius: int = 2,
                     min_samples: int = 6) -> NormalMap:
    """Normals of the hole-filled geometry, valid only inside the filled region.

    These augment the m2 channel for transparent objects whose interpolated
    shape is the only geometry available.
    """
    nm = depth_normals(depth_filled_mm, intrinsics, patch_radius=patch_radius,
                       min_samples=min_samples)
    keep = nm.validity & np.asarray(original_nan_mask, dtype=bool)
    nm.normals[~keep] = 0.0
    return NormalMap(normals=nm.normals, validity=keep, support=nm.support)


def merge_normal_maps(native: NormalMap, extruded: NormalMap) -> NormalMap:
    """Combine measured and extruded normals; extruded wins where both exist."""
    normals = native.normals.copy()
    normals[extruded.validity] = extruded.normals[extruded.validity]
    support = None
    if native.support is not None and extruded.support is not None:
        support = np.where(extruded.validity, extruded.support, native.support)
    return NormalMap(normals=normals, validity=native.validity | extruded.validity,
                     support=support)


def specular_candidates(rgb: np.ndarray, threshold: int = 251) -> np.ndarray:
    """Saturated-intensity pixels: luma in the last five 8-bit bins by default."""
    return np.asarray(luminance(rgb)) >= threshold


def crossmodal_specular_filter(candidates: np.ndarray, nan: np.ndarray) -> np.ndarray:
    """Keep only highlight candidates whose depth is simultaneously unavailable.

    Bright diffuse surfaces have measured depth and are discarded, which is
    what suppresses their false positives.
    """
    candidates = np.asarray(candidates, dtype=bool)
    nan = np.asarray(nan, dtype=bool)
    if candidates.shape != nan.shape:
        raise DimensionMismatchError(
            f"candidate mask {candidates.shape} and depth mask {nan.shape} differ"
        )
    return candidates & nan
