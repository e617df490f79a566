"""Min-max scaling statistics, masking and grid-channel assembly.

All statistics come from the training split only and are frozen afterwards.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import InvalidInput, IOFailure, ShapeMismatch
from ..tensor import linspace_grid
from .container import DIRECTIONS, SampleRecord

log = logging.getLogger(__name__)

AGE_SENTINEL = -1.0
T1_CLAMP = (-0.5, 1.5)
VOLUME_RANGE = (0.1, 0.9)
GRID_CHANNELS = ("t1", "age", "volume", "sex", "frequency", "direction", "pos_x", "pos_y", "pos_z")
SCALAR_ORDER = GRID_CHANNELS[1:6]


def apply_mask(field: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Multiply by a binary mask broadcast over the channel axis."""
    if field.shape[-3:] != mask.shape[-3:]:
        raise ShapeMismatch(f"field {field.shape} and mask {mask.shape} differ spatially")
    if not np.isin(mask, (0, 1)).all():
        raise InvalidInput("mask must be binary")
    return field * mask.astype(field.dtype)


def _affine(x, lo, hi):
    span = hi - lo
    if span == 0:
        return np.zeros_like(np.asarray(x, dtype=np.float64))
    return (np.asarray(x, dtype=np.float64) - lo) / span


@dataclass
class ScalingStats:
    t1_voxel_min: np.ndarray  # [1, W, H, D]
    t1_voxel_max: np.ndarray
    disp_min: float
    disp_max: float
    age_min: float
    age_max: float
    vol_min: float
    vol_max: float
    freq_min: float
    freq_max: float

    SCALARS = ("disp_min", "disp_max", "age_min", "age_max", "vol_min", "vol_max", "freq_min", "freq_max")

    @classmethod
    def from_records(cls, records) -> "ScalingStats":
        """Fold over the training records (masking applied before the T1 extrema)."""
        records = list(records)
        if not records:
            raise InvalidInput("scaling statistics need at least one training record")
        t1_min = t1_max = None
        d_lo, d_hi = math.inf, -math.inf
        for r in records:
            t1 = apply_mask(r.t1.astype(np.float64), r.mask)
            t1_min = t1 if t1_min is None else np.minimum(t1_min, t1)
            t1_max = t1 if t1_max is None else np.maximum(t1_max, t1)
            inside = r.mask[0].astype(bool)
            for d in (r.disp_real, r.disp_imag):
                vals = d[:, inside]
                if vals.size:
                    d_lo = min(d_lo, float(vals.min()))
                    d_hi = max(d_hi, float(vals.max()))
        if not math.isfinite(d_lo):
            d_lo = d_hi = 0.0
        ages = [float(r.age) for r in records if _valid_age(r.age)]
        vols = [float(r.brain_volume) for r in records]
        freqs = [float(r.frequency) for r in records]
        return cls(
            t1_voxel_min=t1_min.astype(np.float32), t1_voxel_max=t1_max.astype(np.float32),
            disp_min=d_lo, disp_max=d_hi,
            age_min=min(ages) if ages else 0.0, age_max=max(ages) if ages else 0.0,
            vol_min=min(vols), vol_max=max(vols), freq_min=min(freqs), freq_max=max(freqs),
        )

    # -- persistence ----------------------------------------------------------
    def save(self, directory) -> None:
        d = Path(directory)
        try:
            d.mkdir(parents=True, exist_ok=True)
            meta = {k: float(getattr(self, k)) for k in self.SCALARS}
            meta["grid"] = list(self.t1_voxel_min.shape[1:])
            (d / "scaling.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
            for name in ("t1_voxel_min", "t1_voxel_max"):
                np.ascontiguousarray(getattr(self, name), dtype="<f4").tofile(d / f"{name}.f32")
        except OSError as exc:
            raise IOFailure(f"could not write scaling stats to {d}: {exc}") from exc

    @classmethod
    def load(cls, directory) -> "ScalingStats":
        d = Path(directory)
        try:
            meta = json.loads((d / "scaling.json").read_text())
            shape = (1,) + tuple(meta["grid"])
            arrays = {name: np.fromfile(d / f"{name}.f32", dtype="<f4").astype(np.float32).reshape(shape)
                      for name in ("t1_voxel_min", "t1_voxel_max")}
        except (OSError, ValueError, KeyError) as exc:
            raise IOFailure(f"could not read scaling stats from {d}: {exc}") from exc
        return cls(**arrays, **{k: float(meta[k]) for k in cls.SCALARS})

    def __eq__(self, other):
        if not isinstance(other, ScalingStats):
            return NotImplemented
        return (all(getattr(self, k) == getattr(other, k) for k in self.SCALARS)
                and np.array_equal(self.t1_voxel_min, other.t1_voxel_min)
                and np.array_equal(self.t1_voxel_max, other.t1_voxel_max))


def _valid_age(a) -> bool:
    return a is not None and math.isfinite(float(a)) and float(a) > 0


def scale_t1(t1: np.ndarray, stats: ScalingStats) -> np.ndarray:
    """Per-voxel ``(t1 - min) / (max - min)``; degenerate voxels map to 0."""
    lo, hi = stats.t1_voxel_min, stats.t1_voxel_max
    if t1.shape[-4:] != lo.shape:
        raise ShapeMismatch(f"t1 {t1.shape} does not match statistics {lo.shape}")
    span = hi.astype(np.float64) - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (t1 - lo) / safe, 0.0)
    a, b = T1_CLAMP
    if out.min(initial=0.0) < a or out.max(initial=0.0) > b:
        log.warning("scaled T1 outside [%g, %g]; clamping", a, b)
        out = np.clip(out, a, b)
    return out.astype(np.float32)


def scale_displacement(d, stats: ScalingStats):
    return _affine(d, stats.disp_min, stats.disp_max)


def unscale_displacement(d_scaled, stats: ScalingStats):
    return np.asarray(d_scaled, dtype=np.float64) * (stats.disp_max - stats.disp_min) + stats.disp_min


def scale_age(a, stats: ScalingStats) -> float:
    """Age to ``[0, 1]``; missing or non-positive ages become the sentinel -1."""
    if not _valid_age(a):
        return AGE_SENTINEL
    return float(_affine(float(a), stats.age_min, stats.age_max))


def scale_volume(v, stats: ScalingStats) -> float:
    lo, hi = VOLUME_RANGE
    return float(lo + (hi - lo) * _affine(float(v), stats.vol_min, stats.vol_max))


def scale_frequency(f, stats: ScalingStats) -> float:
    return float(_affine(float(f), stats.freq_min, stats.freq_max))


def encode_sex(s) -> float:
    if int(s) not in (0, 1) or int(s) != s:
        raise InvalidInput(f"sex must be 0 or 1, got {s!r}")
    return float(s)


def encode_direction(d: str) -> float:
    if d not in DIRECTIONS:
        raise InvalidInput(f"direction must be one of {DIRECTIONS}, got {d!r}")
    return float(DIRECTIONS.index(d))


def scalar_features(record: SampleRecord, stats: ScalingStats) -> np.ndarray:
    """``[age, volume, sex, frequency, direction]`` after scaling/encoding."""
    return np.array([
        scale_age(record.age, stats), scale_volume(record.brain_volume, stats), encode_sex(record.sex),
        scale_frequency(record.frequency, stats), encode_direction(record.direction),
    ], dtype=np.float32)


def prepared_t1(record: SampleRecord, stats: ScalingStats) -> np.ndarray:
    """Mask, scale, and re-mask T1 so out-of-brain voxels are exactly 0."""
    t1 = scale_t1(apply_mask(record.t1.astype(np.float64), record.mask), stats)
    return apply_mask(t1, record.mask)


def positional_channels(grid, dtype=np.float32) -> np.ndarray:
    """``[3, W, H, D]`` coordinates in ``[0, 1]`` along each axis."""
    axes = [linspace_grid(int(n), dtype=dtype) for n in grid]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=0)


def assemble_grid_input(record: SampleRecord, stats: ScalingStats) -> np.ndarray:
    """``[9, W, H, D]`` in the order t1, age, volume, sex, frequency, direction, pos_x, pos_y, pos_z."""
    grid = record.grid
    if stats.t1_voxel_min.shape[1:] != grid:
        raise ShapeMismatch(f"record grid {grid} != statistics grid {stats.t1_voxel_min.shape[1:]}")
    out = np.empty((9,) + grid, dtype=np.float32)
    out[0] = prepared_t1(record, stats)[0]
    out[1:6] = scalar_features(record, stats)[:, None, None, None]
    out[6:9] = positional_channels(grid)
    return out


def prepared_target(record: SampleRecord, stats: ScalingStats, which: str) -> np.ndarray:
    """Scaled displacement, zeroed outside the mask."""
    return apply_mask(scale_displacement(record.target(which), stats), record.mask).astype(np.float32)
