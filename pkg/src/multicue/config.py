"""Runtime configuration for feature extraction, matching and training.

A single MatchConfig instance travels through the whole pipeline.  The subset
of fields that changes the meaning of stored templates (bin counts, spread
radius, thresholds, feature budget) is frozen into a fingerprint that is
persisted with every template database and checked again at match time.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path


@dataclass(frozen=True)
class MatchConfig:
    orientation_bins: int = 8       # bins over [0, pi) for gradient channels
    normal_bins: int = 9            # 8 azimuth sectors + 1 flat bin
    spread_radius: int = 4          # Chebyshev radius T of bitmask spreading
    gradient_threshold: float = 30.0  # minimum Sobel magnitude on 8-bit data
    specular_threshold: int = 251   # last five 8-bit intensity bins
    k_per_channel: int = 16         # feature budget per modality channel
    duplicate_threshold: float = 97.0  # dedup similarity percent while training
    nms_radius: int = 16            # Chebyshev radius of non-max suppression
    window_size: int = 10           # stabilization window in frames
    feature_spacing: int = 5        # minimum Chebyshev distance between features
    patch_radius: int = 2           # half size of the normal-fit patch (5x5)
    flat_angle_deg: float = 15.0    # inclination below which a normal is "flat"
    mask_dilation: int = 2          # object mask dilation before extraction

    def fingerprint(self) -> tuple:
        """The fields a template database must agree on to be matchable."""
        return (
            self.orientation_bins,
            self.normal_bins,
            self.spread_radius,
            float(self.gradient_threshold),
            int(self.specular_threshold),
            self.k_per_channel,
        )


_CONFIG_KEYS = {f.name: f.type for f in fields(MatchConfig)}


def load_config(path: str | Path) -> MatchConfig:
    """Parse a key-value text file (``name=value`` per line, ``#`` comments)."""
    cfg = MatchConfig()
    overrides = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected name=value, got {raw!r}")
        name, value = (part.strip() for part in line.split("=", 1))
        if name not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown config key {name!r}")
        current = getattr(cfg, name)
        overrides[name] = type(current)(float(value)) if isinstance(current, (int, float)) else value
    return replace(cfg, **overrides)


def save_config(config: MatchConfig, path: str | Path) -> None:
    lines = [f"{f.name}={getattr(config, f.name)}" for f in fields(MatchConfig)]
    Path(path).write_text("\n".join(lines) + "\n")
