"""Registered RGB-D frames, camera geometry and frame directory I/O.

A frame couples an 8-bit color image with a 16-bit depth image in millimeters.
Depth value 0 is the unavailability sentinel: the sensor could not measure
that pixel.  All valid depths are >= 1 mm.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

from .errors import FrameFormatError, UnavailableDepthError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R BT.601


class Point3D(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels; the camera frame is the world frame."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")


@dataclass
class RGBDFrame:
    """Registered color + depth pair.  Immutable by convention after load."""

    rgb: np.ndarray    # (H, W, 3) uint8
    depth: np.ndarray  # (H, W)   uint16, millimeters, 0 = unavailable
    frame_id: int = 0

    def __post_init__(self) -> None:
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or self.rgb.dtype != np.uint8:
            raise FrameFormatError(f"rgb must be (H, W, 3) uint8, got {self.rgb.shape} {self.rgb.dtype}")
        if self.depth.ndim != 2 or self.depth.dtype != np.uint16:
            raise FrameFormatError(f"depth must be (H, W) uint16, got {self.depth.shape} {self.depth.dtype}")
        if self.rgb.shape[:2] != self.depth.shape:
            raise FrameFormatError(
                f"rgb {self.rgb.shape[:2]} and depth {self.depth.shape} are not registered"
            )

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def validity(self) -> np.ndarray:
        """Boolean map, True where depth was measured."""
        return self.depth > 0


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5)


def luminance(rgb) -> np.ndarray | int:
    """BT.601 luma of 8-bit RGB, rounded half up and clamped to [0, 255].

    Accepts a single (3,) pixel or an (..., 3) array.
    """
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.shape[-1] != 3:
        raise ValueError(f"expected 3 color channels, got shape {arr.shape}")
    luma = arr[..., 0] * LUMA_WEIGHTS[0] + arr[..., 1] * LUMA_WEIGHTS[1] + arr[..., 2] * LUMA_WEIGHTS[2]
    luma = np.clip(_round_half_up(luma), 0, 255)
    if luma.ndim == 0:
        return int(luma)
    return luma.astype(np.uint8)


def backproject(u: float, v: float, depth_mm: float, intrinsics: CameraIntrinsics) -> Point3D:
    """Lift a pixel with measured depth to metric camera coordinates."""
    if depth_mm <= 0:
        raise UnavailableDepthError(f"pixel ({u}, {v}) has no measured depth")
    z = depth_mm / 1000.0
    return Point3D(
        (u - intrinsics.cx) * z / intrinsics.fx,
        (v - intrinsics.cy) * z / intrinsics.fy,
        z,
    )


def backproject_pixels(us: np.ndarray, vs: np.ndarray, depths_mm: np.ndarray,
                       intrinsics: CameraIntrinsics) -> np.ndarray:
    """Vectorized backprojection; caller guarantees depths_mm > 0.  Returns (N, 3)."""
    z = np.asarray(depths_mm, dtype=np.float64) / 1000.0
    x = (np.asarray(us, dtype=np.float64) - intrinsics.cx) * z / intrinsics.fx
    y = (np.asarray(vs, dtype=np.float64) - intrinsics.cy) * z / intrinsics.fy
    return np.stack([x, y, z], axis=-1)


# --- frame directory format -------------------------------------------------
#
# A frame directory holds exactly:
#   rgb.png    8-bit, 3-channel color
#   depth.png  16-bit single-channel grayscale, millimeters, 0 = unavailable
#   meta.txt   four ASCII lines: fx=<float> fy=<float> cx=<float> cy=<float>


def save_frame(frame: RGBDFrame, intrinsics: CameraIntrinsics, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    Image.fromarray(frame.rgb, mode="RGB").save(directory / "rgb.png")
    depth = np.ascontiguousarray(frame.depth, dtype="<u2")
    Image.fromarray(depth, mode="I;16").save(directory / "depth.png")
    meta = "\n".join(
        f"{name}={getattr(intrinsics, name)}" for name in ("fx", "fy", "cx", "cy")
    )
    (directory / "meta.txt").write_text(meta + "\n")


def load_intrinsics(directory: str | Path) -> CameraIntrinsics:
    path = Path(directory) / "meta.txt"
    if not path.is_file():
        raise FileNotFoundError(f"missing {path}")
    values = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise FrameFormatError(f"{path}: expected name=value lines, got {raw!r}")
        name, value = line.split("=", 1)
        values[name.strip()] = float(value)
    missing = {"fx", "fy", "cx", "cy"} - values.keys()
    if missing:
        raise FrameFormatError(f"{path}: missing intrinsics {sorted(missing)}")
    return CameraIntrinsics(values["fx"], values["fy"], values["cx"], values["cy"])


def load_frame(directory: str | Path, frame_id: int = 0) -> RGBDFrame:
    """Load a registered frame from a frame directory.

    Raises FileNotFoundError for missing files and FrameFormatError for wrong
    bit depths or unregistered image sizes.
    """
    directory = Path(directory)
    rgb_path = directory / "rgb.png"
    depth_path = directory / "depth.png"
    for path in (rgb_path, depth_path):
        if not path.is_file():
            raise FileNotFoundError(f"missing {path}")
    load_intrinsics(directory)  # meta.txt is required even if unused here

    rgb_img = Image.open(rgb_path)
    if rgb_img.mode != "RGB":
        raise FrameFormatError(f"{rgb_path}: expected 8-bit RGB, got mode {rgb_img.mode}")
    rgb = np.asarray(rgb_img, dtype=np.uint8)

    depth_img = Image.open(depth_path)
    if depth_img.mode not in ("I;16", "I;16B", "I"):
        raise FrameFormatError(f"{depth_path}: expected 16-bit grayscale, got mode {depth_img.mode}")
    depth = np.asarray(depth_img)
    if depth.dtype != np.uint16:
        if depth.min() < 0 or depth.max() > np.iinfo(np.uint16).max:
            raise FrameFormatError(f"{depth_path}: values do not fit 16-bit unsigned depth")
        depth = depth.astype(np.uint16)

    if rgb.shape[:2] != depth.shape:
        raise FrameFormatError(
            f"{directory}: rgb {rgb.shape[:2]} and depth {depth.shape} dimensions differ"
        )
    return RGBDFrame(rgb=rgb, depth=depth, frame_id=frame_id)
