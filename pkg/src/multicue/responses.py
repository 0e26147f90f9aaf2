"""Quantization, bitmask spreading and precomputed similarity lookup.

This is the performance core of matching: orientations collapse to a small
number of bins, each pixel's neighborhood bins are OR-ed into a bitmask, and
a lookup table turns (template bin, observed bitmask) into a similarity in
[0, 1].  Response images are stored row-linearized so scoring one template
feature is a single indexed read.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import MatchConfig
from .cues import (Channel, NormalMap, OrientationMap, crossmodal_specular_filter,
                   depth_normals, extruded_normals, intensity_gradients,
                   mask_contour_orientations, merge_normal_maps, nan_mask,
                   specular_candidates)
from .frames import CameraIntrinsics, RGBDFrame

NO_BIN = -1
FLAT_BIN = 8  # ninth bin of the normal channel: near the optical axis


@dataclass
class QuantizedMap:
    bins: np.ndarray  # (H, W) int16, NO_BIN where the source pixel is invalid
    n_bins: int
    channel: Channel


@dataclass
class SpreadMap:
    masks: np.ndarray  # (H, W) uint16, bit b set iff bin b occurs within radius
    n_bins: int
    radius: int


@dataclass
class ResponseStack:
    """Per-bin response images, row-linearized for single-read feature lookup."""

    values: np.ndarray  # (n_bins, H*W) float64
    width: int
    height: int

    def response(self, bin_index: int, x: int, y: int) -> float:
        return float(self.values[bin_index, y * self.width + x])


def quantize_orientation(theta: float, n_bins: int = 8) -> int:
    """Bin index of an undirected orientation; theta == pi wraps to bin 0."""
    if not 0.0 <= theta <= math.pi:
        raise ValueError(f"orientation {theta} outside [0, pi]")
    return int(theta * n_bins / math.pi) % n_bins


def quantize_orientation_map(omap: OrientationMap, n_bins: int = 8,
                             channel: Channel = Channel.M1) -> QuantizedMap:
    scaled = np.floor(omap.orientation * (n_bins / np.pi)).astype(np.int16) % n_bins
    bins = np.where(omap.validity, scaled, NO_BIN).astype(np.int16)
    return QuantizedMap(bins=bins, n_bins=n_bins, channel=channel)


def quantize_normal(normal, flat_angle_deg: float = 15.0) -> int:
    """Bin of a camera-facing unit normal: 8 azimuth sectors plus a flat bin."""
    nx, ny, nz = (float(c) for c in normal)
    length = math.sqrt(nx * nx + ny * ny + nz * nz)
    if abs(length - 1.0) > 1e-6:
        raise ValueError(f"normal must be unit length, |n| = {length}")
    if nz > 1e-9:
        raise ValueError(f"normal must face the camera (nz <= 0), got nz = {nz}")
    inclination = math.acos(min(1.0, max(-1.0, -nz)))
    if inclination < math.radians(flat_angle_deg):
        return FLAT_BIN
    azimuth = math.atan2(ny, nx) % (2.0 * math.pi)
    return min(int(azimuth / (math.pi / 4.0)), 7)


def quantize_normal_map(nmap: NormalMap, flat_angle_deg: float = 15.0) -> QuantizedMap:
    nx, ny, nz = nmap.normals[..., 0], nmap.normals[..., 1], nmap.normals[..., 2]
    inclination = np.arccos(np.clip(-nz, -1.0, 1.0))
    azimuth = np.mod(np.arctan2(ny, nx), 2.0 * np.pi)
    sector = np.minimum(np.floor(azimuth / (np.pi / 4.0)).astype(np.int16), 7)
    bins = np.where(inclination < np.radians(flat_angle_deg), FLAT_BIN, sector)
    bins = np.where(nmap.validity, bins, NO_BIN).astype(np.int16)
    return QuantizedMap(bins=bins, n_bins=9, channel=Channel.M2)


def spread(quantized: QuantizedMap, radius: int) -> SpreadMap:
    """OR the bins of all defined pixels within Chebyshev distance ``radius``."""
    if radius < 0:
        raise ValueError(f"spread radius must be >= 0, got {radius}")
    bins = quantized.bins
    base = np.where(bins >= 0, np.left_shift(1, np.maximum(bins, 0)), 0).astype(np.uint16)
    h, w = base.shape
    out = np.zeros_like(base)
    for dy in range(-radius, radius + 1):
        ys = slice(max(0, dy), h + min(0, dy))
        yd = slice(max(0, -dy), h - max(0, dy))
        for dx in range(-radius, radius + 1):
            xs = slice(max(0, dx), w + min(0, dx))
            xd = slice(max(0, -dx), w - max(0, dx))
            out[yd, xd] |= base[ys, xs]
    return SpreadMap(masks=out, n_bins=quantized.n_bins, radius=radius)


@lru_cache(maxsize=None)
def orientation_lut(n_bins: int = 8) -> np.ndarray:
    """table[bin][bitmask] = max over set bits of |cos(center difference)|."""
    width = math.pi / n_bins
    sim = [[abs(math.cos((a + 0.5) * width - (b + 0.5) * width)) for b in range(n_bins)]
           for a in range(n_bins)]
    return _lut_from_pairwise(sim, n_bins)


@lru_cache(maxsize=None)
def normal_lut(n_bins: int = 9) -> np.ndarray:
    """Normal-channel table: azimuth-cosine for tilted pairs, flat bin special.

    flat-flat = 1, flat-tilted = 0; negative azimuth cosines clamp to 0 to
    keep similarities in [0, 1].
    """
    sector = math.pi / 4.0
    sim = [[0.0] * n_bins for _ in range(n_bins)]
    for a in range(8):
        for b in range(8):
            sim[a][b] = max(0.0, math.cos((a + 0.5) * sector - (b + 0.5) * sector))
    sim[FLAT_BIN][FLAT_BIN] = 1.0
    return _lut_from_pairwise(sim, n_bins)


def _lut_from_pairwise(sim: list[list[float]], n_bins: int) -> np.ndarray:
    lut = np.zeros((n_bins, 1 << n_bins), dtype=np.float64)
    for a in range(n_bins):
        row = lut[a]
        for mask in range(1, 1 << n_bins):
            low_bit = mask & -mask
            rest = mask ^ low_bit
            row[mask] = max(row[rest], sim[a][low_bit.bit_length() - 1])
    return lut


def build_response_maps(spread_map: SpreadMap, lut: np.ndarray) -> ResponseStack:
    """One response image per bin: pixel value = lut[bin][spread bitmask]."""
    h, w = spread_map.masks.shape
    values = lut[:, spread_map.masks.ravel()]
    return ResponseStack(values=np.ascontiguousarray(values), width=w, height=h)


# --- per-frame pipeline ------------------------------------------------------


@dataclass
class FrameMaps:
    """Everything the matcher and trainer need from one stabilized frame.

    The m2 channel exists in two variants: measured normals only, and measured
    normals merged with normals of the extruded geometry.  Databases trained
    with the transparency channel use the merged variant.
    """

    width: int
    height: int
    config: MatchConfig
    intrinsics: CameraIntrinsics
    quantized: dict      # key: "m1" | "m2" | "m2x" | "m3" | "m4" -> QuantizedMap
    magnitudes: dict     # same keys -> (H, W) float64 selection strength
    stacks: dict         # same keys -> ResponseStack
    nan: np.ndarray      # unavailable-depth mask of the stabilized frame
    filled_depth: np.ndarray | None  # scanline-filled depth, present iff m3 built

    def key_for(self, channel: Channel, channels: frozenset) -> str:
        if channel == Channel.M2 and Channel.M3 in channels:
            return "m2x"
        return channel.value

    def stack_for(self, channel: Channel, channels: frozenset) -> ResponseStack:
        return self.stacks[self.key_for(channel, channels)]


def build_frame_maps(frame: RGBDFrame, intrinsics: CameraIntrinsics,
                     config: MatchConfig | None = None,
                     channels=(Channel.M1, Channel.M2, Channel.M3, Channel.M4)) -> FrameMaps:
    """Compute quantized maps, spread masks and response stacks for a frame.

    ``channels`` is the superset of channels any consumer will read; the
    extruded-m2 variant is produced whenever m3 is requested.
    """
    from .localize import scanline_depth_fill  # cycle: localization owns the fill

    config = config or MatchConfig()
    channels = frozenset(Channel(c) for c in channels)
    quantized: dict[str, QuantizedMap] = {}
    magnitudes: dict[str, np.ndarray] = {}
    nan = nan_mask(frame.depth)
    filled = None

    if Channel.M1 in channels:
        omap = intensity_gradients(frame.rgb, threshold=config.gradient_threshold)
        quantized["m1"] = quantize_orientation_map(omap, config.orientation_bins, Channel.M1)
        magnitudes["m1"] = omap.magnitude

    native = None
    if Channel.M2 in channels:
        native = depth_normals(frame.depth, intrinsics, patch_radius=config.patch_radius)
        quantized["m2"] = quantize_normal_map(native, config.flat_angle_deg)
        # selection strength of a normal is how much of its patch supported the fit
        magnitudes["m2"] = np.where(native.validity, native.support, 0.0)

    if Channel.M3 in channels:
        filled = scanline_depth_fill(frame.depth)
        contour = mask_contour_orientations(nan, threshold=config.gradient_threshold)
        quantized["m3"] = quantize_orientation_map(contour, config.orientation_bins, Channel.M3)
        magnitudes["m3"] = contour.magnitude
        if native is not None:
            ext = extruded_normals(filled, nan, intrinsics, patch_radius=config.patch_radius)
            merged = merge_normal_maps(native, ext)
            quantized["m2x"] = quantize_normal_map(merged, config.flat_angle_deg)
            magnitudes["m2x"] = np.where(merged.validity, merged.support, 0.0)

    if Channel.M4 in channels:
        candidates = specular_candidates(frame.rgb, threshold=config.specular_threshold)
        highlights = crossmodal_specular_filter(candidates, nan)
        contour = mask_contour_orientations(highlights, threshold=config.gradient_threshold)
        quantized["m4"] = quantize_orientation_map(contour, config.orientation_bins, Channel.M4)
        magnitudes["m4"] = contour.magnitude

    stacks = {}
    for key, qmap in quantized.items():
        lut = normal_lut(config.normal_bins) if key.startswith("m2") else orientation_lut(config.orientation_bins)
        stacks[key] = build_response_maps(spread(qmap, config.spread_radius), lut)

    return FrameMaps(width=frame.width, height=frame.height, config=config,
                     intrinsics=intrinsics, quantized=quantized,
                     magnitudes=magnitudes, stacks=stacks, nan=nan, filled_depth=filled)
