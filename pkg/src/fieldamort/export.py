"""CSV and PGM writers for figure data."""

import csv
from pathlib import Path
from typing import Optional

import numpy as np

from .bench import ScalingReport


def _open_csv(path: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8")


def write_grid_csv(path: str, points: np.ndarray, potential: np.ndarray, field: np.ndarray) -> str:
    """One row per grid point: x,y,phi,hx,hy (x,phi,h in 1D)."""
    dim = points.shape[1]
    header = ["x", "y", "phi", "hx", "hy"] if dim == 2 else ["x", "phi", "h"]
    with _open_csv(path) as f:
        w = csv.writer(f)
        w.writerow(header)
        for r, phi, h in zip(points, potential, field):
            w.writerow([repr(float(v)) for v in (*r, phi, *h)])
    return str(Path(path).absolute())


def write_demo_csv(path: str, xs: np.ndarray, phi_true: np.ndarray, phi_model: np.ndarray) -> str:
    with _open_csv(path) as f:
        w = csv.writer(f)
        w.writerow(["x", "phi_true", "phi_model"])
        for row in zip(xs, phi_true, phi_model):
            w.writerow([repr(float(v)) for v in row])
    return str(Path(path).absolute())


def write_scaling_csv(path: str, report: ScalingReport) -> str:
    with _open_csv(path) as f:
        w = csv.writer(f)
        w.writerow(["m_points", "n_sources", "exact_time", "amortized_time", "exact_ops", "amortized_ops"])
        for p in report.points:
            w.writerow([p.m_points, p.n_sources, repr(p.exact_time), repr(p.amortized_time), p.exact_ops, p.amortized_ops])
    return str(Path(path).absolute())


def to_gray(values: np.ndarray, lo: Optional[float] = None, hi: Optional[float] = None) -> np.ndarray:
    """Min-max scale to 0..255; a constant image maps to mid-gray."""
    v = np.asarray(values, dtype=np.float64)
    lo = float(np.min(v)) if lo is None else lo
    hi = float(np.max(v)) if hi is None else hi
    if hi <= lo:
        return np.full(v.shape, 128, dtype=np.uint8)
    return np.round(255.0 * np.clip((v - lo) / (hi - lo), 0.0, 1.0)).astype(np.uint8)


def write_pgm(path: str, values: np.ndarray, lo: Optional[float] = None, hi: Optional[float] = None) -> str:
    """Binary P5 grayscale; values[i, j] is row i (increasing y), drawn bottom-up."""
    img = to_gray(values, lo, hi)[::-1]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img).tobytes())
    return str(Path(path).absolute())
