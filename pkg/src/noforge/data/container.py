"""Sample records and the on-disk dataset container.

A dataset is a directory holding ``manifest.json`` and one raw little-endian,
C-ordered file per tensor (mask as u8, everything else f32; displacement files
store the three component planes back to back)::

    {"version": 1, "grid": [W, H, D],
     "samples": [{"id", "files": {"t1", "mask", "disp_real", "disp_imag"},
                  "age", "sex", "brain_volume_cm3", "frequency_hz", "direction"}]}
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CorruptData, InvalidInput, IOFailure, UnknownSample

MANIFEST = "manifest.json"
VERSION = 1
DIRECTIONS = ("AP", "LR")
FREQ_BAND = (20.0, 90.0)

_FILE_SPECS = {
    # key: (channels, dtype)
    "t1": (1, np.float32),
    "mask": (1, np.uint8),
    "disp_real": (3, np.float32),
    "disp_imag": (3, np.float32),
}


@dataclass
class SampleRecord:
    subject_id: str
    t1: np.ndarray          # [1, W, H, D]
    mask: np.ndarray        # [1, W, H, D], {0, 1}
    disp_real: np.ndarray   # [3, W, H, D]
    disp_imag: np.ndarray   # [3, W, H, D]
    age: float | None
    sex: int
    brain_volume: float
    frequency: float
    direction: str

    @property
    def grid(self) -> tuple:
        return tuple(self.t1.shape[1:])

    def validate(self) -> None:
        g = self.grid
        for name, (ch, _) in _FILE_SPECS.items():
            arr = getattr(self, name)
            if arr.shape != (ch,) + g:
                raise InvalidInput(f"{self.subject_id}: {name} has shape {arr.shape}, expected {(ch,) + g}")
        if not np.isin(self.mask, (0, 1)).all():
            raise InvalidInput(f"{self.subject_id}: mask is not binary")
        inside = self.mask[0].astype(bool)
        for name in ("disp_real", "disp_imag"):
            if not np.isfinite(getattr(self, name)[:, inside]).all():
                raise InvalidInput(f"{self.subject_id}: {name} is not finite inside the mask")
        if not FREQ_BAND[0] <= self.frequency <= FREQ_BAND[1]:
            raise InvalidInput(f"{self.subject_id}: frequency {self.frequency} Hz outside {FREQ_BAND}")
        if self.direction not in DIRECTIONS:
            raise InvalidInput(f"{self.subject_id}: direction must be one of {DIRECTIONS}")
        if self.sex not in (0, 1):
            raise InvalidInput(f"{self.subject_id}: sex must be 0 or 1")

    def target(self, which: str) -> np.ndarray:
        if which == "real":
            return self.disp_real
        if which == "imag":
            return self.disp_imag
        raise InvalidInput(f"target must be 'real' or 'imag', got {which!r}")


def _file_names(sid: str) -> dict:
    return {"t1": f"{sid}_t1.f32", "mask": f"{sid}_mask.u8",
            "disp_real": f"{sid}_disp_real.f32", "disp_imag": f"{sid}_disp_imag.f32"}


def _write_raw(path: Path, arr: np.ndarray, dtype) -> None:
    np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tofile(path)


def write_dataset(root, records, grid=None) -> Path:
    """Write ``records`` under ``root`` (created if needed)."""
    root = Path(root)
    records = list(records)
    if not records and grid is None:
        raise InvalidInput("cannot infer the grid of an empty dataset")
    grid = tuple(grid or records[0].grid)
    samples = []
    try:
        root.mkdir(parents=True, exist_ok=True)
        for r in records:
            r.validate()
            if r.grid != grid:
                raise InvalidInput(f"{r.subject_id}: grid {r.grid} != dataset grid {grid}")
            files = _file_names(r.subject_id)
            for key, (_, dt) in _FILE_SPECS.items():
                _write_raw(root / files[key], getattr(r, key), dt)
            samples.append({
                "id": r.subject_id,
                "files": files,
                "age": None if r.age is None or (isinstance(r.age, float) and math.isnan(r.age)) else float(r.age),
                "sex": int(r.sex),
                "brain_volume_cm3": float(r.brain_volume),
                "frequency_hz": float(r.frequency),
                "direction": r.direction,
            })
        manifest = {"version": VERSION, "grid": list(grid), "samples": samples}
        tmp = root / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        os.replace(tmp, root / MANIFEST)
    except OSError as exc:
        raise IOFailure(f"could not write dataset to {root}: {exc}") from exc
    return root


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise CorruptData(f"{path} not found") from None
    except ValueError as exc:
        raise CorruptData(f"{path}: invalid JSON ({exc})") from None
    if manifest.get("version") != VERSION:
        raise CorruptData(f"{path}: unsupported manifest version {manifest.get('version')}")
    if len(manifest.get("grid", [])) != 3 or "samples" not in manifest:
        raise CorruptData(f"{path}: missing grid or samples")
    return manifest


def _load_tensor(root: Path, name: str, shape, dtype) -> np.ndarray:
    path = root / name
    dt = np.dtype(dtype).newbyteorder("<")
    expected = int(np.prod(shape)) * dt.itemsize
    try:
        size = path.stat().st_size
    except FileNotFoundError:
        raise CorruptData(f"{path} is missing") from None
    if size != expected:
        raise CorruptData(f"{path}: {size} bytes, manifest implies {expected}")
    return np.fromfile(path, dtype=dt).astype(np.dtype(dtype)).reshape(shape)


def _record_from_entry(root: Path, grid, s: dict) -> SampleRecord:
    try:
        tensors = {key: _load_tensor(root, s["files"][key], (ch,) + grid, dt)
                   for key, (ch, dt) in _FILE_SPECS.items()}
        rec = SampleRecord(
            subject_id=str(s["id"]), age=s.get("age"), sex=int(s["sex"]),
            brain_volume=float(s["brain_volume_cm3"]), frequency=float(s["frequency_hz"]),
            direction=str(s["direction"]), **tensors)
    except KeyError as exc:
        raise CorruptData(f"manifest entry {s.get('id')!r} lacks field {exc}") from None
    try:
        rec.validate()
    except InvalidInput as exc:
        raise CorruptData(str(exc)) from None
    return rec


def read_dataset(root) -> list[SampleRecord]:
    """Load every record listed in the manifest, in manifest order."""
    root = Path(root)
    manifest = read_manifest(root)
    grid = tuple(int(g) for g in manifest["grid"])
    return [_record_from_entry(root, grid, s) for s in manifest["samples"]]


def read_sample(root, sample_id: str) -> SampleRecord:
    root = Path(root)
    manifest = read_manifest(root)
    grid = tuple(int(g) for g in manifest["grid"])
    for s in manifest["samples"]:
        if str(s.get("id")) == sample_id:
            return _record_from_entry(root, grid, s)
    raise UnknownSample(f"sample {sample_id!r} is not listed in {root / MANIFEST}")


def write_tensor_file(path, arr: np.ndarray) -> None:
    """Raw little-endian f32 dump in the container convention."""
    try:
        _write_raw(Path(path), arr, np.float32)
    except OSError as exc:
        raise IOFailure(f"could not write {path}: {exc}") from exc
