"""Template extraction, training-time deduplication and database persistence.

A template is one object view reduced to a list of (offset, channel, bin)
features relative to the view's bounding box.  Training walks a sequence of
views and keeps only templates the database cannot already match at the
duplicate threshold.
"""

from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .config import MatchConfig
from .cues import Channel
from .errors import ConfigMismatchError, DatabaseFormatError, EmptyTemplateError
from .frames import CameraIntrinsics, RGBDFrame
from .responses import FrameMaps, build_frame_maps

logger = logging.getLogger(__name__)

DB_MAGIC = b"MFDB"
DB_VERSION = 1

_CHANNEL_BITS = {Channel.M1: 1, Channel.M2: 2, Channel.M3: 4, Channel.M4: 8}


class Feature(NamedTuple):
    x: int            # offset from the template anchor (bounding box top-left)
    y: int
    channel: str      # "m1".."m4"
    bin: int


@dataclass
class Template:
    object_id: str
    template_id: int
    width: int
    height: int
    features: tuple[Feature, ...]
    pose_label: str = ""  # training metadata; not persisted in the DB file

    def matches_content(self, other: "Template") -> bool:
        return (self.object_id, self.template_id, self.width, self.height, self.features) == \
               (other.object_id, other.template_id, other.width, other.height, other.features)


class View(NamedTuple):
    object_id: str
    frame: RGBDFrame
    mask: np.ndarray
    pose_label: str = ""


@dataclass
class TemplateDB:
    config: MatchConfig
    channels: frozenset
    templates: list[Template] = field(default_factory=list)
    version: int = DB_VERSION
    _next_id: int = 0

    def fingerprint(self) -> tuple:
        return self.config.fingerprint()

    def add(self, template: Template) -> Template:
        assigned = Template(
            object_id=template.object_id,
            template_id=self._next_id,
            width=template.width,
            height=template.height,
            features=template.features,
            pose_label=template.pose_label,
        )
        self.templates.append(assigned)
        self._next_id += 1
        return assigned

    def by_object(self, object_id: str) -> list[Template]:
        return [t for t in self.templates if t.object_id == object_id]

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for t in self.templates:
            out[t.object_id] = out.get(t.object_id, 0) + 1
        return out


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = mask.copy()
    h, w = mask.shape
    for dy in range(-radius, radius + 1):
        ys = slice(max(0, dy), h + min(0, dy))
        yd = slice(max(0, -dy), h - max(0, dy))
        for dx in range(-radius, radius + 1):
            xs = slice(max(0, dx), w + min(0, dx))
            xd = slice(max(0, -dx), w - max(0, dx))
            out[yd, xd] |= mask[ys, xs]
    return out


def mask_anchor_box(mask: np.ndarray, dilation: int) -> tuple[int, int, int, int]:
    """(x0, y0, width, height) of the dilated mask's bounding box."""
    dilated = _dilate(np.asarray(mask, dtype=bool), dilation)
    ys, xs = np.nonzero(dilated)
    if len(ys) == 0:
        raise EmptyTemplateError("object mask is empty")
    x0, y0 = int(xs.min()), int(ys.min())
    return x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1


def _tie_hash(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    # spatially unbiased deterministic ordering for equal-magnitude candidates
    return ((xs.astype(np.uint64) * 2654435761 + ys.astype(np.uint64) * 40503)
            & np.uint64(0xFFFFFFFF))


def _select_features(bins: np.ndarray, magnitude: np.ndarray, region: np.ndarray,
                     k: int, spacing: int) -> list[tuple[int, int, int]]:
    """Greedy magnitude-descending pick with a Chebyshev spacing floor."""
    candidate = (bins >= 0) & region
    ys, xs = np.nonzero(candidate)
    if len(ys) == 0:
        return []
    mags = magnitude[ys, xs]
    order = np.lexsort((xs, ys, _tie_hash(xs, ys), -mags))
    picked: list[tuple[int, int, int]] = []
    kept_x: list[int] = []
    kept_y: list[int] = []
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        if any(abs(x - px) < spacing and abs(y - py) < spacing
               for px, py in zip(kept_x, kept_y)):
            continue
        picked.append((x, y, int(bins[y, x])))
        kept_x.append(x)
        kept_y.append(y)
        if len(picked) >= k:
            break
    return picked


def extract_template(frame: RGBDFrame, intrinsics: CameraIntrinsics,
                     object_mask: np.ndarray, channels, object_id: str,
                     config: MatchConfig | None = None, pose_label: str = "",
                     maps: FrameMaps | None = None) -> Template:
    """Extract a multi-channel template from a masked object view.

    Candidates are restricted to the object mask dilated by a couple of pixels
    so contour cues straddling the silhouette survive; per channel, up to
    k_per_channel features are kept, strongest first, no two closer than the
    spacing floor.
    """
    config = config or MatchConfig()
    channels = frozenset(Channel(c) for c in channels)
    if maps is None:
        maps = build_frame_maps(frame, intrinsics, config, channels)
    object_mask = np.asarray(object_mask, dtype=bool)
    if object_mask.shape != (frame.height, frame.width):
        raise ValueError("object mask dimensions do not match the frame")

    x0, y0, width, height = mask_anchor_box(object_mask, config.mask_dilation)
    region = _dilate(object_mask, config.mask_dilation)

    features: list[Feature] = []
    for channel in sorted(channels, key=lambda c: c.value):
        key = maps.key_for(channel, channels)
        qmap = maps.quantized[key]
        picks = _select_features(qmap.bins, maps.magnitudes[key], region,
                                 config.k_per_channel, config.feature_spacing)
        features.extend(Feature(x - x0, y - y0, channel.value, b) for x, y, b in picks)

    if not features:
        raise EmptyTemplateError(f"no features found for {object_id!r} in any channel")
    return Template(object_id=object_id, template_id=-1, width=width, height=height,
                    features=tuple(features), pose_label=pose_label)


def is_duplicate(candidate: Template, db: TemplateDB, source_maps: FrameMaps,
                 anchor: tuple[int, int], config: MatchConfig | None = None) -> bool:
    """True iff an existing same-object template already matches the candidate's
    source frame at the candidate's location at the duplicate threshold."""
    from .matching import score  # scoring lives with the matcher

    config = config or MatchConfig()
    if db.fingerprint() != config.fingerprint():
        raise ConfigMismatchError("database fingerprint does not match the runtime config")
    ax, ay = anchor
    for existing in db.by_object(candidate.object_id):
        if ax + existing.width > source_maps.width or ay + existing.height > source_maps.height:
            continue
        if score(existing, source_maps, (ax, ay), db.channels) >= config.duplicate_threshold:
            return True
    return False


def train_from_views(db: TemplateDB, views: Iterable[View],
                     intrinsics: CameraIntrinsics) -> dict[str, int]:
    """Extract and add each view unless the database already matches it.

    Extraction failures are logged and skipped; training continues.  Returns
    the per-object count of templates accepted by this call.
    """
    accepted: dict[str, int] = {}
    for view in views:
        maps = build_frame_maps(view.frame, intrinsics, db.config, db.channels)
        try:
            candidate = extract_template(view.frame, intrinsics, view.mask, db.channels,
                                         view.object_id, db.config, view.pose_label, maps=maps)
        except EmptyTemplateError as err:
            logger.info("skipping view %s/%s: %s", view.object_id, view.pose_label, err)
            continue
        x0, y0, _, _ = mask_anchor_box(view.mask, db.config.mask_dilation)
        if is_duplicate(candidate, db, maps, (x0, y0), db.config):
            continue
        db.add(candidate)
        accepted[view.object_id] = accepted.get(view.object_id, 0) + 1
    return accepted


# --- persistence --------------------------------------------------------------
#
# Little-endian binary layout:
#   magic "MFDB", version u16,
#   fingerprint block: orientation_bins u8, normal_bins u8, spread_radius u8,
#     channels u8 (bitmask m1..m4), k_per_channel u16, specular_threshold u8,
#     pad u8, gradient_threshold f32,
#   template count u32,
#   per template: object_id (u16 length + UTF-8), template_id u32,
#     width u16, height u16, feature count u16,
#     features as (x u16, y u16, channel u8, bin u8),
#   CRC32 of all preceding bytes, u32.

_HEADER = struct.Struct("<4sH")
_FINGERPRINT = struct.Struct("<BBBBHBxf")
_COUNT = struct.Struct("<I")
_TEMPLATE_HEAD = struct.Struct("<IHHH")
_FEATURE = struct.Struct("<HHBB")

_CHANNEL_CODES = {"m1": 0, "m2": 1, "m3": 2, "m4": 3}
_CHANNEL_NAMES = {v: k for k, v in _CHANNEL_CODES.items()}


def save_db(db: TemplateDB, path: str | Path) -> None:
    cfg = db.config
    channel_mask = sum(_CHANNEL_BITS[c] for c in db.channels)
    blob = bytearray()
    blob += _HEADER.pack(DB_MAGIC, db.version)
    blob += _FINGERPRINT.pack(cfg.orientation_bins, cfg.normal_bins, cfg.spread_radius,
                              channel_mask, cfg.k_per_channel, cfg.specular_threshold,
                              float(cfg.gradient_threshold))
    blob += _COUNT.pack(len(db.templates))
    for t in db.templates:
        encoded = t.object_id.encode("utf-8")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += _TEMPLATE_HEAD.pack(t.template_id, t.width, t.height, len(t.features))
        for f in t.features:
            blob += _FEATURE.pack(f.x, f.y, _CHANNEL_CODES[f.channel], f.bin)
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    Path(path).write_bytes(bytes(blob))


def load_db(path: str | Path, config: MatchConfig | None = None) -> TemplateDB:
    """Load a template database; verifies checksum, version and fingerprint.

    When ``config`` is given its persisted fingerprint fields must agree, and
    the remaining runtime fields are taken from it.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + _FINGERPRINT.size + _COUNT.size + 4:
        raise DatabaseFormatError(f"{path}: truncated database file")
    payload, crc_stored = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(payload) != crc_stored:
        raise DatabaseFormatError(f"{path}: checksum failure")
    magic, version = _HEADER.unpack_from(payload, 0)
    if magic != DB_MAGIC:
        raise DatabaseFormatError(f"{path}: bad magic {magic!r}")
    if version != DB_VERSION:
        raise DatabaseFormatError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    (orientation_bins, normal_bins, spread_radius, channel_mask,
     k_per_channel, specular_threshold, gradient_threshold) = _FINGERPRINT.unpack_from(payload, offset)
    offset += _FINGERPRINT.size

    base = config or MatchConfig()
    from dataclasses import replace
    cfg = replace(base, orientation_bins=orientation_bins, normal_bins=normal_bins,
                  spread_radius=spread_radius, k_per_channel=k_per_channel,
                  specular_threshold=specular_threshold,
                  gradient_threshold=round(float(gradient_threshold), 6))
    if config is not None and cfg.fingerprint() != config.fingerprint():
        raise ConfigMismatchError(f"{path}: database fingerprint differs from the runtime config")
    channels = frozenset(c for c, bit in _CHANNEL_BITS.items() if channel_mask & bit)

    (count,) = _COUNT.unpack_from(payload, offset)
    offset += _COUNT.size
    templates = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            object_id = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            template_id, width, height, n_features = _TEMPLATE_HEAD.unpack_from(payload, offset)
            offset += _TEMPLATE_HEAD.size
            features = []
            for _ in range(n_features):
                x, y, code, bin_index = _FEATURE.unpack_from(payload, offset)
                offset += _FEATURE.size
                features.append(Feature(x, y, _CHANNEL_NAMES[code], bin_index))
            templates.append(Template(object_id=object_id, template_id=template_id,
                                      width=width, height=height, features=tuple(features)))
    except struct.error as err:
        raise DatabaseFormatError(f"{path}: truncated template records") from err

    db = TemplateDB(config=cfg, channels=channels, templates=templates)
    db._next_id = max((t.template_id for t in templates), default=-1) + 1
    return db
