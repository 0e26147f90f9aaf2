"""Temporal stabilization of RGB-D streams over a short frame window.

Depth flickers on and off around object edges.  Accumulating a window of
frames, averaging color, and discarding every pixel that was unavailable at
least once yields a stabilized frame whose validity mask is the intersection
of the per-frame masks.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, EmptyAccumulatorError
from .frames import RGBDFrame, _round_half_up


class FrameAccumulator:
    """Running per-pixel state for one stabilization window.

    Strictly sequential per instance; independent instances may run anywhere.
    """

    def __init__(self, width: int, height: int, window_size: int = 10):
        if window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {window_size}")
        self.width = width
        self.height = height
        self.window_size = window_size
        self.frames_seen = 0
        self._rgb_sum = np.zeros((height, width, 3), dtype=np.int64)
        self._depth_sum = np.zeros((height, width), dtype=np.int64)
        self._valid_count = np.zeros((height, width), dtype=np.int64)
        self.nan_union_mask = np.zeros((height, width), dtype=bool)
        self._last_frame_id = 0

    def accumulate(self, frame: RGBDFrame) -> None:
        if (frame.height, frame.width) != (self.height, self.width):
            raise DimensionMismatchError(
                f"frame is {frame.height}x{frame.width}, accumulator is {self.height}x{self.width}"
            )
        if self.frames_seen >= self.window_size:
            raise ValueError(f"window of {self.window_size} frames is already full")
        valid = frame.validity
        self._rgb_sum += frame.rgb
        self._depth_sum += np.where(valid, frame.depth.astype(np.int64), 0)
        self._valid_count += valid
        self.nan_union_mask |= ~valid
        self.frames_seen += 1
        self._last_frame_id = frame.frame_id

    def finalize(self) -> RGBDFrame:
        """Stabilized frame: mean color, mean depth, ever-unavailable pixels removed."""
        if self.frames_seen == 0:
            raise EmptyAccumulatorError("cannot finalize an accumulator with no frames")
        rgb = _round_half_up(self._rgb_sum / self.frames_seen)
        rgb = np.clip(rgb, 0, 255).astype(np.uint8)
        counts = np.maximum(self._valid_count, 1)
        depth = _round_half_up(self._depth_sum / counts)
        depth = np.where(self.nan_union_mask, 0, depth).astype(np.uint16)
        return RGBDFrame(rgb=rgb, depth=depth, frame_id=self._last_frame_id)


def stabilize(frames: Sequence[RGBDFrame], window_size: int | None = None) -> RGBDFrame:
    """Accumulate a sequence of frames (at most one window) and finalize."""
    if not frames:
        raise EmptyAccumulatorError("no frames to stabilize")
    if window_size is None:
        window_size = len(frames)
    first = frames[0]
    acc = FrameAccumulator(first.width, first.height, window_size=window_size)
    for frame in frames[:window_size]:
        acc.accumulate(frame)
    return acc.finalize()


def stabilize_windows(frames: Sequence[RGBDFrame], window_size: int) -> list[RGBDFrame]:
    """Split a stream into consecutive full windows and stabilize each."""
    out = []
    for start in range(0, len(frames) - window_size + 1, window_size):
        out.append(stabilize(frames[start:start + window_size]))
    return out


def unstable_fraction(frames: Sequence[RGBDFrame]) -> float:
    """Fraction of pixels whose availability is not constant across the sequence."""
    if len(frames) < 2:
        raise ValueError("unstable_fraction needs at least 2 frames")
    first = frames[0].validity
    for frame in frames[1:]:
        if frame.depth.shape != first.shape:
            raise DimensionMismatchError("frames in the sequence have different dimensions")
    always = first.copy()
    never = ~first
    for frame in frames[1:]:
        valid = frame.validity
        always &= valid
        never &= ~valid
    changed = ~(always | never)
    return float(changed.sum()) / changed.size
