"""Deterministic synthetic RGB-D tabletop scenes with exact ground truth.

The renderer is painter's-algorithm 2.5D: a textured wall, a table plane, and
upright objects whose front surface depth is computed in closed form.  Three
material categories follow the sensor behaviors the pipeline consumes:

  diffuse      banded texture, fully measured depth
  transparent  background attenuated toward gray (low-contrast silhouette
               edges), depth unavailable inside the silhouette, plus small
               saturated highlight blobs driven by a fixed light
  composite    a diffuse label band on an otherwise transparent body

Per-frame noise is seeded Gaussian color noise plus depth-validity flicker
confined to a band around depth edges.  Identical seeds render bit-identical
frame sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import SceneSpecError
from .frames import CameraIntrinsics, Point3D, RGBDFrame, save_frame

# background texture: a smooth mid-gray tone field.  Steps between adjacent
# tones stay below the gradient threshold, while the extreme tones leave the
# silhouette edge of an attenuated glass right at the threshold.
WALL_TONES = (141, 146, 151, 156, 161)
TILE_SIZE = 5
GLASS_MIX = 0.15          # background weight inside transparent silhouettes
GLASS_GRAY = 151.0        # gray the background is pulled toward
BAND_PALETTE = (62, 96, 128, 186, 214)
HIGHLIGHT_VALUE = 255
DEPTH_EDGE_JUMP_MM = 100  # discontinuity that defines the flicker band


@dataclass(frozen=True)
class TableSpec:
    height: float = 0.55     # meters below the optical axis
    tilt_deg: float = 0.0    # rotation of the plane about the camera x axis
    z_near: float = 0.55
    z_far: float = 2.2


@dataclass(frozen=True)
class LightSpec:
    u: float = 128.0         # image position of the fixed light
    v: float = 20.0
    intensity: int = HIGHLIGHT_VALUE


@dataclass(frozen=True)
class NoiseSpec:
    rgb_sigma: float = 0.0
    flicker_rate: float = 0.0  # per-frame dropout probability inside the band
    edge_band: int = 0         # Chebyshev width of the flicker band in pixels


@dataclass(frozen=True)
class ObjectSpec:
    object_id: str
    category: str            # diffuse | transparent | composite
    shape: str               # box | cylinder | glass-profile
    x: float                 # lateral table position, meters
    z: float                 # distance from the camera, meters
    rotation: float = 0.0    # about the vertical axis, radians
    width: float = 0.06      # full width (box) or max diameter (revolved)
    height: float = 0.15
    thickness: float | None = None   # box depth; defaults to width
    texture_seed: int = 0
    label_band: tuple[float, float] | None = None  # composite band extent in [0,1]
    bright_cap: bool = False  # saturated diffuse band at the top (false-positive bait)

    def __post_init__(self):
        if self.category not in ("diffuse", "transparent", "composite"):
            raise SceneSpecError(f"unknown category {self.category!r}")
        if self.shape not in ("box", "cylinder", "glass-profile"):
            raise SceneSpecError(f"unknown shape {self.shape!r}")
        if self.category == "composite" and self.label_band is None:
            raise SceneSpecError(f"{self.object_id}: composite objects need a label_band")


@dataclass(frozen=True)
class SceneSpec:
    width: int = 256
    height: int = 224
    # principal point sits high so the camera overlooks the tabletop
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(256.0, 256.0, 127.5, 75.5))
    table: TableSpec = field(default_factory=TableSpec)
    light: LightSpec = field(default_factory=LightSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    objects: tuple[ObjectSpec, ...] = ()
    seed: int = 0
    frames: int = 10
    wall_z: float = 2.4
    occlusion_limit: float = 0.25
    texture_seed: int | None = None  # environment identity; defaults to seed

    def effective_texture_seed(self) -> int:
        return self.seed if self.texture_seed is None else self.texture_seed


@dataclass
class GroundTruthObject:
    object_id: str
    category: str
    silhouette: np.ndarray         # visible object pixels
    centroid: Point3D              # analytic centroid of the generating solid
    transparency_mask: np.ndarray  # pixels rendered depth-unavailable
    highlight_mask: np.ndarray     # rendered specular blob pixels


@dataclass
class GroundTruth:
    objects: list[GroundTruthObject]

    def by_id(self, object_id: str) -> GroundTruthObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(object_id)


# --- geometry helpers ---------------------------------------------------------


def _radius_profile(obj: ObjectSpec, t: np.ndarray) -> np.ndarray:
    """Half width of the solid at normalized height t (0 = base, 1 = top)."""
    if obj.shape == "box":
        d = obj.thickness if obj.thickness is not None else obj.width
        half = (abs(math.cos(obj.rotation)) * obj.width + abs(math.sin(obj.rotation)) * d) / 2.0
        return np.full_like(t, half)
    if obj.shape == "cylinder":
        return np.full_like(t, obj.width / 2.0)
    # glass-profile: tapered tumbler, narrow base widening to the rim
    r_top = obj.width / 2.0
    r_base = 0.78 * r_top
    return r_base + (r_top - r_base) * t


def _centroid_t(obj: ObjectSpec) -> float:
    """Normalized height of the solid centroid (volume-weighted)."""
    if obj.shape in ("box", "cylinder"):
        return 0.5
    r_top = obj.width / 2.0
    r_base = 0.78 * r_top
    a, b = r_base, r_top - r_base
    # integrals of r(t)^2 and t*r(t)^2 for linear r(t) = a + b*t over [0, 1]
    m0 = a * a + a * b + b * b / 3.0
    m1 = a * a / 2.0 + 2.0 * a * b / 3.0 + b * b / 4.0
    return m1 / m0


def _table_plane(spec: SceneSpec):
    """Unit normal and offset of the table plane n . p = c."""
    theta = math.radians(spec.table.tilt_deg)
    normal = np.array([0.0, math.cos(theta), math.sin(theta)])
    z_mid = (spec.table.z_near + spec.table.z_far) / 2.0
    point = np.array([0.0, spec.table.height, z_mid])
    return normal, float(normal @ point)


def _table_y_at(spec: SceneSpec, z: float) -> float:
    normal, offset = _table_plane(spec)
    return (offset - normal[2] * z) / normal[1]


def _band_palette(texture_seed: int, n_bands: int) -> np.ndarray:
    rng = np.random.default_rng([texture_seed, 0x7E47])
    palette = list(BAND_PALETTE)
    tones = [palette[int(rng.integers(len(palette)))]]
    for _ in range(n_bands - 1):
        options = [p for p in palette if abs(p - tones[-1]) >= 30]
        tones.append(options[int(rng.integers(len(options)))])
    return np.array(tones, dtype=np.float64)


# --- rendering ----------------------------------------------------------------


def _render_static(spec: SceneSpec):
    """Noise-free scene: color, metric depth, validity and ground truth."""
    h, w = spec.height, spec.width
    K = spec.intrinsics
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))

    # background: wall plane, overridden by the table where its ray hits first.
    # The tone field is smoothed before quantization so neighboring tiles
    # almost always differ by one palette step.
    rng_wall = np.random.default_rng([spec.effective_texture_seed() & 0x7FFFFFFF, 0xA11])
    th, tw = h // TILE_SIZE + 3, w // TILE_SIZE + 3
    field_values = rng_wall.random((th, tw))
    for _ in range(2):
        field_values = (field_values
                        + np.roll(field_values, 1, 0) + np.roll(field_values, -1, 0)
                        + np.roll(field_values, 1, 1) + np.roll(field_values, -1, 1)) / 5.0
    ranks = field_values.argsort(axis=None).argsort(axis=None).reshape(field_values.shape)
    levels = (ranks * len(WALL_TONES)) // field_values.size
    tiles = np.asarray(WALL_TONES, dtype=np.float64)[levels]
    texture = np.kron(tiles, np.ones((TILE_SIZE, TILE_SIZE)))[:h, :w]
    color = np.repeat(texture[:, :, None], 3, axis=2)

    depth_m = np.full((h, w), spec.wall_z)
    normal, offset = _table_plane(spec)
    denom = normal[1] * (vs - K.cy) / K.fy + normal[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hit = offset / denom
    table_mask = (denom > 1e-9) & (t_hit > spec.table.z_near) & (t_hit < spec.table.z_far)
    depth_m = np.where(table_mask, t_hit, depth_m)
    valid = np.ones((h, w), dtype=bool)

    gt_objects = []
    order = sorted(range(len(spec.objects)), key=lambda i: -spec.objects[i].z)
    _check_occlusion(spec)
    for index in order:
        obj = spec.objects[index]
        gt_objects.append(_render_object(spec, obj, us, vs, color, depth_m, valid))
    gt_objects.sort(key=lambda g: [o.object_id for o in spec.objects].index(g.object_id))
    return color, depth_m, valid, GroundTruth(objects=gt_objects)


def _render_object(spec, obj, us, vs, color, depth_m, valid):
    h, w = spec.height, spec.width
    K = spec.intrinsics
    y_base = _table_y_at(spec, obj.z)
    v_base = K.cy + K.fy * y_base / obj.z
    v_top = K.cy + K.fy * (y_base - obj.height) / obj.z
    if v_top < 1 or v_base > h - 2:
        raise SceneSpecError(
            f"{obj.object_id}: extent rows [{v_top:.0f}, {v_base:.0f}] leave the {h}-row frame"
        )
    u_center = K.cx + K.fx * obj.x / obj.z

    t = np.clip((v_base - vs) / (v_base - v_top), 0.0, 1.0)
    radius = _radius_profile(obj, t)
    in_rows = (vs >= v_top) & (vs <= v_base)
    half_px = K.fx * radius / obj.z
    silhouette = in_rows & (np.abs(us - u_center) <= half_px)

    # front-surface depth of the visible sheet
    if obj.shape == "box":
        d = obj.thickness if obj.thickness is not None else obj.width
        d_eff = abs(math.cos(obj.rotation)) * d + abs(math.sin(obj.rotation)) * obj.width
        z_front = np.full((h, w), obj.z - d_eff / 2.0)
    else:
        lateral = (us - u_center) * obj.z / K.fx
        bulge = np.sqrt(np.maximum(radius ** 2 - lateral ** 2, 0.0))
        z_front = obj.z - bulge
    visible = silhouette & (z_front < depth_m)

    band_mask = np.zeros((h, w), dtype=bool)
    if obj.category == "composite":
        lo, hi = obj.label_band
        band_mask = visible & (t >= lo) & (t <= hi)
    diffuse_mask = visible if obj.category == "diffuse" else band_mask
    clear_mask = visible & ~diffuse_mask if obj.category != "diffuse" else np.zeros((h, w), dtype=bool)

    if diffuse_mask.any():
        n_bands = max(3, int(round(obj.height / 0.035)))
        palette = _band_palette(obj.texture_seed, n_bands)
        # aperiodic band boundaries so a vertically shifted template mismatches
        rng_bands = np.random.default_rng([obj.texture_seed, 0xB0B])
        edges = (np.arange(1, n_bands) + rng_bands.uniform(-0.3, 0.3, n_bands - 1)) / n_bands
        band_index = np.searchsorted(np.sort(edges), t)
        tone = palette[band_index]
        if obj.bright_cap:
            tone = np.where(t >= 0.86, 253.0, tone)
        for c in range(3):
            color[:, :, c][diffuse_mask] = tone[diffuse_mask]
    if clear_mask.any():
        for c in range(3):
            mixed = GLASS_MIX * color[:, :, c] + (1.0 - GLASS_MIX) * GLASS_GRAY
            color[:, :, c][clear_mask] = np.floor(mixed[clear_mask] + 0.5)

    highlight = np.zeros((h, w), dtype=bool)
    if obj.category in ("transparent", "composite"):
        highlight = _paint_highlights(spec, obj, us, vs, u_center, v_base, v_top,
                                      clear_mask, color)

    depth_m[diffuse_mask] = z_front[diffuse_mask]
    valid[diffuse_mask] = True
    depth_m[clear_mask] = z_front[clear_mask]  # occludes, but is not measured
    valid[clear_mask] = False

    centroid = Point3D(obj.x, y_base - obj.height * _centroid_t(obj), obj.z)
    return GroundTruthObject(object_id=obj.object_id, category=obj.category,
                             silhouette=visible, centroid=centroid,
                             transparency_mask=clear_mask, highlight_mask=highlight)


def _paint_highlights(spec, obj, us, vs, u_center, v_base, v_top, clear_mask, color):
    """Saturated blobs driven by the fixed light; they shift with object pose
    but, for rotationally symmetric shapes, not with rotation."""
    h, w = spec.height, spec.width
    highlight = np.zeros((h, w), dtype=bool)
    n_blobs = 2 if obj.height >= 0.15 else 1
    du_light = spec.light.u - u_center
    rotation_shift = 0.0
    if obj.shape == "box":
        rotation_shift = 2.0 * math.sin(obj.rotation)
    for j in range(n_blobs):
        t_blob = 0.45 + 0.22 * j
        v_blob = v_base - t_blob * (v_base - v_top)
        half_px = spec.intrinsics.fx * float(_radius_profile(obj, np.array(t_blob))) / obj.z
        u_blob = u_center + float(np.clip(0.08 * du_light + rotation_shift,
                                          -0.5 * half_px, 0.5 * half_px))
        r_blob = max(1.0, 0.22 * half_px)
        blob = ((us - u_blob) ** 2 + (vs - v_blob) ** 2 <= r_blob ** 2) & clear_mask
        highlight |= blob
    for c in range(3):
        color[:, :, c][highlight] = spec.light.intensity
    return highlight


def _check_occlusion(spec: SceneSpec) -> None:
    boxes = []
    K = spec.intrinsics
    for obj in spec.objects:
        y_base = _table_y_at(spec, obj.z)
        v_base = K.cy + K.fy * y_base / obj.z
        v_top = K.cy + K.fy * (y_base - obj.height) / obj.z
        half = float(np.max(_radius_profile(obj, np.linspace(0, 1, 8)))) * K.fx / obj.z
        u_c = K.cx + K.fx * obj.x / obj.z
        boxes.append((u_c - half, v_top, u_c + half, v_base))
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            a, b = boxes[i], boxes[j]
            iw = min(a[2], b[2]) - max(a[0], b[0])
            ih = min(a[3], b[3]) - max(a[1], b[1])
            if iw <= 0 or ih <= 0:
                continue
            inter = iw * ih
            smaller = min((a[2] - a[0]) * (a[3] - a[1]), (b[2] - b[0]) * (b[3] - b[1]))
            if inter / smaller > spec.occlusion_limit:
                raise SceneSpecError(
                    f"objects {spec.objects[i].object_id!r} and {spec.objects[j].object_id!r} "
                    f"overlap beyond the occlusion limit {spec.occlusion_limit}"
                )


def _flicker_band(depth_mm: np.ndarray, valid: np.ndarray, band: int) -> np.ndarray:
    """Valid pixels within ``band`` of a validity edge or a depth discontinuity."""
    if band <= 0:
        return np.zeros_like(valid)
    edges = np.zeros_like(valid)
    d = depth_mm.astype(np.int64)
    jump_x = (np.abs(np.diff(d, axis=1)) > DEPTH_EDGE_JUMP_MM) | (valid[:, 1:] != valid[:, :-1])
    jump_y = (np.abs(np.diff(d, axis=0)) > DEPTH_EDGE_JUMP_MM) | (valid[1:, :] != valid[:-1, :])
    edges[:, 1:] |= jump_x
    edges[:, :-1] |= jump_x
    edges[1:, :] |= jump_y
    edges[:-1, :] |= jump_y
    h, w = edges.shape
    out = np.zeros_like(edges)
    for dy in range(-band, band + 1):
        ys = slice(max(0, dy), h + min(0, dy))
        yd = slice(max(0, -dy), h - max(0, dy))
        for dx in range(-band, band + 1):
            xs = slice(max(0, dx), w + min(0, dx))
            xd = slice(max(0, -dx), w - max(0, dx))
            out[yd, xd] |= edges[ys, xs]
    return out & valid


def render(spec: SceneSpec) -> tuple[list[RGBDFrame], GroundTruth]:
    """Render the frame sequence and its ground truth.  Fully deterministic."""
    color, depth_m, valid, gt = _render_static(spec)
    depth_mm = np.where(valid, np.clip(depth_m * 1000.0, 1, 65535), 0).astype(np.uint16)
    band = _flicker_band(depth_mm, valid, spec.noise.edge_band)

    frames = []
    for i in range(spec.frames):
        rng = np.random.default_rng([spec.seed & 0x7FFFFFFFFFFFFFFF, i])
        if spec.noise.rgb_sigma > 0:
            noisy = color + rng.normal(0.0, spec.noise.rgb_sigma, color.shape)
            rgb = np.clip(np.floor(noisy + 0.5), 0, 255).astype(np.uint8)
        else:
            rgb = color.astype(np.uint8)
        depth = depth_mm.copy()
        if spec.noise.flicker_rate > 0 and band.any():
            drop = band & (rng.random(band.shape) < spec.noise.flicker_rate)
            depth[drop] = 0
        frames.append(RGBDFrame(rgb=rgb, depth=depth, frame_id=i))
    return frames, gt


def rotate_views(spec: SceneSpec, object_index: int, n_views: int) -> list[SceneSpec]:
    """Specs stepping the object's rotation uniformly over [0, 2pi).

    Each view gets its own derived noise seed so sensor noise is independent
    across views, as it is on a physical rig.
    """
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    out = []
    texture_seed = spec.effective_texture_seed()  # the room does not rotate
    for i in range(n_views):
        objects = list(spec.objects)
        obj = objects[object_index]
        objects[object_index] = replace(obj, rotation=obj.rotation + 2.0 * math.pi * i / n_views)
        seed = spec.seed if i == 0 else (spec.seed + 0x9E3779B9 * i) % (1 << 63)
        out.append(replace(spec, objects=tuple(objects), seed=seed, texture_seed=texture_seed))
    return out


# --- scene spec text files ------------------------------------------------------


def save_scene_spec(spec: SceneSpec, path: str | Path) -> None:
    lines = [
        f"width={spec.width}", f"height={spec.height}",
        f"fx={spec.intrinsics.fx}", f"fy={spec.intrinsics.fy}",
        f"cx={spec.intrinsics.cx}", f"cy={spec.intrinsics.cy}",
        f"seed={spec.seed}", f"frames={spec.frames}", f"wall_z={spec.wall_z}",
        f"occlusion_limit={spec.occlusion_limit}",
        *([] if spec.texture_seed is None else [f"texture_seed={spec.texture_seed}"]),
        f"table.height={spec.table.height}", f"table.tilt_deg={spec.table.tilt_deg}",
        f"table.z_near={spec.table.z_near}", f"table.z_far={spec.table.z_far}",
        f"light.u={spec.light.u}", f"light.v={spec.light.v}",
        f"light.intensity={spec.light.intensity}",
        f"noise.rgb_sigma={spec.noise.rgb_sigma}",
        f"noise.flicker_rate={spec.noise.flicker_rate}",
        f"noise.edge_band={spec.noise.edge_band}",
    ]
    for i, obj in enumerate(spec.objects):
        prefix = f"object.{i}"
        lines += [
            f"{prefix}.id={obj.object_id}", f"{prefix}.category={obj.category}",
            f"{prefix}.shape={obj.shape}", f"{prefix}.x={obj.x}", f"{prefix}.z={obj.z}",
            f"{prefix}.rotation={obj.rotation}", f"{prefix}.width={obj.width}",
            f"{prefix}.height={obj.height}",
            f"{prefix}.texture_seed={obj.texture_seed}",
        ]
        if obj.thickness is not None:
            lines.append(f"{prefix}.thickness={obj.thickness}")
        if obj.label_band is not None:
            lines.append(f"{prefix}.label_band={obj.label_band[0]},{obj.label_band[1]}")
        if obj.bright_cap:
            lines.append(f"{prefix}.bright_cap=1")
    Path(path).write_text("\n".join(lines) + "\n")


def load_scene_spec(path: str | Path) -> SceneSpec:
    values: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneSpecError(f"{path}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value

    def take(key, cast, default):
        return cast(values[key]) if key in values else default

    objects = []
    index = 0
    while f"object.{index}.id" in values:
        prefix = f"object.{index}"
        band = None
        if f"{prefix}.label_band" in values:
            lo, hi = values[f"{prefix}.label_band"].split(",")
            band = (float(lo), float(hi))
        objects.append(ObjectSpec(
            object_id=values[f"{prefix}.id"],
            category=values[f"{prefix}.category"],
            shape=values[f"{prefix}.shape"],
            x=float(values[f"{prefix}.x"]),
            z=float(values[f"{prefix}.z"]),
            rotation=take(f"{prefix}.rotation", float, 0.0),
            width=take(f"{prefix}.width", float, 0.06),
            height=take(f"{prefix}.height", float, 0.15),
            thickness=take(f"{prefix}.thickness", float, None),
            texture_seed=take(f"{prefix}.texture_seed", int, 0),
            label_band=band,
            bright_cap=bool(take(f"{prefix}.bright_cap", int, 0)),
        ))
        index += 1

    defaults = SceneSpec()
    return SceneSpec(
        width=take("width", int, defaults.width),
        height=take("height", int, defaults.height),
        intrinsics=CameraIntrinsics(
            take("fx", float, defaults.intrinsics.fx),
            take("fy", float, defaults.intrinsics.fy),
            take("cx", float, defaults.intrinsics.cx),
            take("cy", float, defaults.intrinsics.cy),
        ),
        table=TableSpec(take("table.height", float, defaults.table.height),
                        take("table.tilt_deg", float, defaults.table.tilt_deg),
                        take("table.z_near", float, defaults.table.z_near),
                        take("table.z_far", float, defaults.table.z_far)),
        light=LightSpec(take("light.u", float, defaults.light.u),
                        take("light.v", float, defaults.light.v),
                        take("light.intensity", int, defaults.light.intensity)),
        noise=NoiseSpec(take("noise.rgb_sigma", float, 0.0),
                        take("noise.flicker_rate", float, 0.0),
                        take("noise.edge_band", int, 0)),
        objects=tuple(objects),
        seed=take("seed", int, 0),
        frames=take("frames", int, defaults.frames),
        wall_z=take("wall_z", float, defaults.wall_z),
        occlusion_limit=take("occlusion_limit", float, defaults.occlusion_limit),
        texture_seed=take("texture_seed", int, None),
    )


def write_scene(spec: SceneSpec, out_dir: str | Path) -> GroundTruth:
    """Render a scene to disk: numbered frame directories plus a ground-truth
    summary and a copy of the spec."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames, gt = render(spec)
    for frame in frames:
        save_frame(frame, spec.intrinsics, out_dir / f"{frame.frame_id:03d}")
    save_scene_spec(spec, out_dir / "scene.txt")
    lines = ["object_id,category,centroid_x,centroid_y,centroid_z"]
    for obj in gt.objects:
        c = obj.centroid
        lines.append(f"{obj.object_id},{obj.category},{c.x},{c.y},{c.z}")
    (out_dir / "groundtruth.csv").write_text("\n".join(lines) + "\n")
    return gt
