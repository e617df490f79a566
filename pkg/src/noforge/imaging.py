"""Central-slice images as binary PGM, plus the raw slice values as CSV.

Contrast rule: target and prediction slices of one plane share a single
``[lo, hi]`` window (min/max over both); the error slice uses the same
scale with 0 mapped to black, so a perfect prediction renders all black.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import IOFailure

PLANES = ("axial", "coronal", "sagittal")


def central_slices(vol: np.ndarray) -> dict:
    """``vol [W, H, D]`` -> axial ``[W, H]``, coronal ``[W, D]``, sagittal ``[H, D]``."""
    w, h, d = vol.shape
    return {"axial": vol[:, :, d // 2], "coronal": vol[:, h // 2, :], "sagittal": vol[w // 2, :, :]}


def to_gray(img: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.clip(np.rint(255.0 * (img - lo) / span), 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    """P5, maxval 255, row-major; rows are the first array axis."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    rows, cols = img.shape
    try:
        with open(path, "wb") as f:
            f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
            f.write(img.tobytes())
    except OSError as exc:
        raise IOFailure(f"could not write {path}: {exc}") from exc


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"255":
        raise ValueError(f"{path} is not an 8-bit binary PGM")
    cols, rows = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=rows * cols).reshape(rows, cols)


def magnitude(field: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """``[3, W, H, D]`` -> masked Euclidean norm ``[W, H, D]``."""
    return np.sqrt(np.sum(np.square(field, dtype=np.float64), axis=0)) * mask[0]


def slice_images(target: np.ndarray, pred: np.ndarray, mask: np.ndarray) -> dict:
    """``{(plane, kind): (values, gray)}`` for kinds target, prediction, error."""
    t = magnitude(target, mask)
    p = magnitude(pred, mask)
    e = magnitude(target - pred, mask)
    ts, ps, es = central_slices(t), central_slices(p), central_slices(e)
    out = {}
    for plane in PLANES:
        lo = float(min(ts[plane].min(), ps[plane].min()))
        hi = float(max(ts[plane].max(), ps[plane].max()))
        out[(plane, "target")] = (ts[plane], to_gray(ts[plane], lo, hi))
        out[(plane, "prediction")] = (ps[plane], to_gray(ps[plane], lo, hi))
        out[(plane, "error")] = (es[plane], to_gray(es[plane], 0.0, hi - lo))
    return out


def write_slice_set(out_dir, sample_id: str, target, pred, mask, csv_rows: list) -> list:
    """Write nine PGMs for one sample and append its slice values to ``csv_rows``."""
    out_dir = Path(out_dir)
    written = []
    for (plane, kind), (vals, gray) in slice_images(target, pred, mask).items():
        path = out_dir / f"{sample_id}_{plane}_{kind}.pgm"
        write_pgm(path, gray)
        written.append(path)
        for (r, c), v in np.ndenumerate(vals):
            csv_rows.append(f"{sample_id},{plane},{kind},{r},{c},{v:.9g}")
    return written
