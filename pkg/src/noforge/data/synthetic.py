"""Seeded MRE-like samples for desk-scale experiments.

Each sample has an ellipsoidal brain mask, a T1 volume built from Gaussian
blobs, and a damped harmonic displacement field whose wavelength depends on
frequency and age and whose propagation axis depends on the drive direction.
"""
from __future__ import annotations

import numpy as np

from ..errors import InvalidConfig
from .container import SampleRecord

FREQUENCIES = tuple(range(20, 100, 10))
N_BLOBS = 5
MASK_SEMI_AXIS = 0.4
DEFAULT_FOV = 0.06  # metres along the longest axis
AXIS_OF_DIRECTION = {"LR": 0, "AP": 1}


def ellipsoid_mask(grid) -> np.ndarray:
    """``[1, W, H, D]`` u8 mask of the centred ellipsoid with semi-axes ``0.4 * extent``."""
    r2 = np.zeros(tuple(grid))
    for axis, n in enumerate(grid):
        c = (np.arange(n) - (n - 1) / 2.0) / (MASK_SEMI_AXIS * n)
        shape = [1, 1, 1]
        shape[axis] = n
        r2 = r2 + (c**2).reshape(shape)
    return (r2 <= 1.0).astype(np.uint8)[None]


def voxel_positions(grid, fov: float = DEFAULT_FOV) -> np.ndarray:
    """``[3, W, H, D]`` positions in metres relative to the volume centre (isotropic voxels)."""
    h = fov / max(grid)
    axes = [(np.arange(n) - (n - 1) / 2.0) * h for n in grid]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=0)


def wave_speed(age: float) -> float:
    """Shear wave speed in m/s; stiffer (faster) tissue in younger subjects is not modelled."""
    return 2.0 + 0.01 * age


def displacement_field(grid, frequency: float, direction: str, age: float,
                       fov: float = DEFAULT_FOV) -> tuple[np.ndarray, np.ndarray]:
    """Unmasked ``(real, imag)`` fields ``[3, W, H, D]``.

    ``u_c = exp(-|r| / delta) * sin(k (r . e) + phi_c)`` with ``delta = fov / 2``,
    ``|k| = 2 pi f / c(age)`` and ``phi_c = 2 pi c / 3``; the imaginary part uses cos.
    """
    if direction not in AXIS_OF_DIRECTION:
        raise InvalidConfig(f"direction must be AP or LR, got {direction!r}")
    r = voxel_positions(grid, fov)
    envelope = np.exp(-np.sqrt((r**2).sum(axis=0)) / (0.5 * fov))
    k = 2.0 * np.pi * frequency / wave_speed(age)
    arg = k * r[AXIS_OF_DIRECTION[direction]]
    phases = [2.0 * np.pi * c / 3.0 for c in range(3)]
    real = np.stack([envelope * np.sin(arg + p) for p in phases])
    imag = np.stack([envelope * np.cos(arg + p) for p in phases])
    return real, imag


def _t1_volume(rng, grid, mask) -> np.ndarray:
    inside = np.argwhere(mask[0])
    idx = np.indices(grid).astype(np.float64)
    t1 = np.full(tuple(grid), 0.1)
    scale = np.asarray(grid, dtype=np.float64)
    for _ in range(N_BLOBS):
        centre = inside[rng.integers(len(inside))]
        width = rng.uniform(0.08, 0.25) * scale
        amp = rng.uniform(0.5, 1.5)
        d2 = sum(((idx[a] - centre[a]) / width[a]) ** 2 for a in range(3))
        t1 += amp * np.exp(-0.5 * d2)
    return t1[None]


def generate_sample(seq: np.random.SeedSequence, subject_id: str, grid, fov: float = DEFAULT_FOV) -> SampleRecord:
    rng = np.random.default_rng(seq)
    grid = tuple(int(g) for g in grid)
    mask = ellipsoid_mask(grid)
    frequency = float(FREQUENCIES[rng.integers(len(FREQUENCIES))])
    direction = ("AP", "LR")[rng.integers(2)]
    age = float(rng.uniform(14.0, 80.0))
    sex = int(rng.integers(2))
    volume = float(rng.uniform(1000.0, 1600.0))
    t1 = _t1_volume(rng, grid, mask)
    real, imag = displacement_field(grid, frequency, direction, age, fov)
    m = mask.astype(np.float64)
    return SampleRecord(
        subject_id=subject_id, t1=t1.astype(np.float32), mask=mask,
        disp_real=(real * m).astype(np.float32), disp_imag=(imag * m).astype(np.float32),
        age=age, sex=sex, brain_volume=volume, frequency=frequency, direction=direction,
    )


def generate_synthetic_dataset(n: int, grid_shape, seed: int = 0, fov: float = DEFAULT_FOV) -> list[SampleRecord]:
    """``n`` records, bit-reproducible from ``(n, grid_shape, seed)``.

    Sample ``i`` draws from the ``i``-th child of ``SeedSequence(seed)``, so a
    prefix of a larger dataset equals the smaller dataset.
    """
    if n < 1:
        raise InvalidConfig(f"n must be >= 1, got {n}")
    grid = tuple(int(g) for g in grid_shape)
    if len(grid) != 3 or min(grid) < 4:
        raise InvalidConfig(f"grid extents must be >= 4, got {grid}")
    children = np.random.SeedSequence(seed).spawn(n)
    return [generate_sample(children[i], f"syn{i:04d}", grid, fov) for i in range(n)]
