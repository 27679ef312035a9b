"""Spatial DVS image generation: center pixel minus the mean of a neighbor set, ternarized."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CalibrationError
from .sparse import TernaryTensor

Offset = tuple[int, int]


@dataclass(frozen=True)
class DvsConfig:
    id: int
    channel_patterns: tuple[tuple[Offset, ...], ...]
    pos_threshold: float
    neg_threshold: float

    def __post_init__(self):
        if not self.neg_threshold < 0 < self.pos_threshold:
            raise ValueError(f"need neg < 0 < pos, got ({self.pos_threshold}, {self.neg_threshold})")
        pats = tuple(tuple((int(dy), int(dx)) for dy, dx in ch) for ch in self.channel_patterns)
        if not pats:
            raise ValueError("at least one output channel")
        for ch in pats:
            if not ch:
                raise ValueError("every channel needs at least one neighbor")
            if (0, 0) in ch:
                raise ValueError("the center pixel cannot be its own neighbor")
        object.__setattr__(self, "channel_patterns", pats)

    @property
    def channels(self) -> int:
        return len(self.channel_patterns)

    @property
    def reach(self) -> int:
        return max(max(abs(dy), abs(dx)) for ch in self.channel_patterns for dy, dx in ch)

    def with_thresholds(self, pos: float, neg: float | None = None) -> "DvsConfig":
        return replace(self, pos_threshold=pos, neg_threshold=-pos if neg is None else neg)


@dataclass(frozen=True, eq=False)
class GrayFrame:
    intensity: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.intensity)
        if a.ndim != 2 or min(a.shape) < 1:
            raise ValueError(f"gray frame must be 2-D, got shape {a.shape}")
        if a.min() < 0 or a.max() > 255:
            raise ValueError("intensities must lie in [0, 255]")
        a = a.astype(np.int32)
        a.setflags(write=False)
        object.__setattr__(self, "intensity", a)

    @property
    def height(self) -> int:
        return self.intensity.shape[0]

    @property
    def width(self) -> int:
        return self.intensity.shape[1]


_DIAG_A = ((-1, -1), (1, 1))
_DIAG_B = ((-1, 1), (1, -1))
_CROSS = ((-1, 0), (1, 0), (0, -1), (0, 1))

# Placeholder thresholds; the encode pipeline recalibrates against the corpus.
_DEFAULT_T = 10.0


def config_catalog() -> list[DvsConfig]:
    """Pixel-combination configurations 1..5; entry 5 (two diagonal channels) is the default."""
    patterns = {
        1: (_DIAG_A + _DIAG_B,),
        2: (((0, -1), (0, 1)), ((-1, 0), (1, 0))),
        3: (((-1, 0), (0, -1)), ((1, 0), (0, 1))),
        4: (_CROSS, _DIAG_A + _DIAG_B),
        5: (_DIAG_A, _DIAG_B),
    }
    return [DvsConfig(i, p, _DEFAULT_T, -_DEFAULT_T) for i, p in patterns.items()]


def get_config(config_id: int) -> DvsConfig:
    for cfg in config_catalog():
        if cfg.id == config_id:
            return cfg
    raise KeyError(f"no DVS configuration #{config_id}")


def rgb_to_gray(r, g, b) -> GrayFrame:
    r, g, b = (np.asarray(c, dtype=np.int64) for c in (r, g, b))
    if not r.shape == g.shape == b.shape:
        raise ValueError(f"channel shapes differ: {r.shape}, {g.shape}, {b.shape}")
    # integer form of round(0.299 r + 0.587 g + 0.114 b), halves rounded up
    y = (299 * r + 587 * g + 114 * b + 500) // 1000
    return GrayFrame(np.atleast_2d(y))


def _scaled_differences(f: GrayFrame, cfg: DvsConfig) -> list[tuple[np.ndarray, int]]:
    """Per channel: (n * center - sum(neighbors), n), exact integers."""
    pad = cfg.reach
    img = np.pad(f.intensity.astype(np.int64), pad, mode="edge")
    h, w = f.height, f.width
    center = img[pad:pad + h, pad:pad + w]
    out = []
    for ch in cfg.channel_patterns:
        total = sum(img[pad + dy:pad + dy + h, pad + dx:pad + dx + w] for dy, dx in ch)
        out.append((len(ch) * center - total, len(ch)))
    return out


def encode_frame(f: GrayFrame, cfg: DvsConfig) -> TernaryTensor:
    chans = []
    for diff, n in _scaled_differences(f, cfg):
        t = np.zeros(diff.shape, dtype=np.int8)
        t[diff > cfg.pos_threshold * n] = 1
        t[diff < cfg.neg_threshold * n] = -1
        chans.append(t)
    return TernaryTensor(np.stack(chans, axis=-1))


def calibrate_thresholds(frames, cfg: DvsConfig, target_density: float,
                         tolerance: float = 0.01) -> tuple[float, float]:
    """Symmetric (pos, neg) thresholds whose mean output density is closest to the target."""
    if not 0 < target_density < 1:
        raise ValueError("target density must lie strictly between 0 and 1")
    mags = []
    for f in frames:
        for diff, n in _scaled_differences(f, cfg):
            mags.append(np.abs(diff).reshape(-1) / n)
    if not mags:
        raise CalibrationError("no frames to calibrate on")
    mags = np.sort(np.concatenate(mags))
    distinct = np.unique(mags)
    if distinct[-1] == 0:
        raise CalibrationError("every center-neighbor difference is zero; no density is reachable")
    # thresholds strictly between consecutive magnitudes, all > 0
    lows = np.concatenate(([0.0], distinct))
    highs = np.concatenate((distinct, [distinct[-1] + 2.0]))
    cands = (lows + highs) / 2
    cands = cands[(cands > 0) & (cands > lows)]
    if cands.size == 0:
        raise CalibrationError("frames produce no usable difference levels")
    dens = 1.0 - np.searchsorted(mags, cands, side="right") / mags.size
    best = int(np.argmin(np.abs(dens - target_density)))
    if abs(dens[best] - target_density) > tolerance:
        raise CalibrationError(f"closest reachable density is {dens[best]:.4f}, target {target_density}")
    t = float(cands[best])
    return t, -t
