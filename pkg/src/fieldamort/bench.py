"""Scaling sweep: exact O(M x N) superposition against O(M + N) amortized inference."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import BENCH_REPEATS, BENCH_SIZES, DEFAULT_SEED, check_keys, positive_int
from .data import random_collection
from .errors import ConfigError, UsageError
from .models import AnyModel, infer_collection
from .numerics import make_rng
from .oracle import Box, collection_field
from .utils.counters import OpCounter
from .utils.logger import Logger

NO_CROSSOVER = "none in sweep range"


@dataclass(frozen=True)
class SweepConfig:
    sizes: Tuple[Tuple[int, int], ...] = tuple(product(BENCH_SIZES, BENCH_SIZES))
    repeats: int = BENCH_REPEATS
    seed: int = DEFAULT_SEED
    threads: int = 1

    @classmethod
    def from_dict(cls, values: dict, prefix: str = "bench", **overrides) -> "SweepConfig":
        check_keys(values, {"m_values", "n_values", "sizes", "repeats", "seed", "threads"}, prefix)
        values = {**values, **{k: v for k, v in overrides.items() if v is not None}}
        if "sizes" in values:
            try:
                sizes = tuple((int(m), int(n)) for m, n in values["sizes"])
            except (TypeError, ValueError):
                raise ConfigError(f"{prefix}.sizes", "must be a list of [M, N] pairs")
        else:
            ms, ns = values.get("m_values", BENCH_SIZES), values.get("n_values", BENCH_SIZES)
            if not all(isinstance(v, int) and v > 0 for v in list(ms) + list(ns)):
                raise ConfigError(f"{prefix}.m_values", "m_values and n_values must be positive integers")
            sizes = tuple(product(ms, ns))
        seed = values.get("seed", DEFAULT_SEED)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"{prefix}.seed", f"must be a non-negative integer, got {seed!r}")
        return cls(sizes, positive_int(values, "repeats", BENCH_REPEATS, prefix), seed,
                   positive_int(values, "threads", 1, prefix))


@dataclass(frozen=True)
class ScalingPoint:
    m_points: int
    n_sources: int
    exact_time: float
    amortized_time: float
    exact_ops: int
    amortized_ops: int


@dataclass(frozen=True)
class CostFit:
    """Least-squares cost model; coefficients keyed by term name."""

    coefficients: Dict[str, float]
    r2: float

    def predict(self, m, n):
        c = self.coefficients
        if "mn" in c:
            return c["mn"] * np.asarray(m) * np.asarray(n) + c["const"]
        return c["m"] * np.asarray(m) + c["n"] * np.asarray(n) + c["const"]


@dataclass
class ScalingReport:
    points: List[ScalingPoint]
    exact_fit: CostFit
    amortized_fit: CostFit

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path: "str | Path") -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return out


@dataclass
class Crossover:
    found: bool
    contour: List[Tuple[float, float]] = field(default_factory=list)
    exact_fit: Optional[CostFit] = None
    amortized_fit: Optional[CostFit] = None
    message: str = ""


def _lstsq(design: np.ndarray, y: np.ndarray, names: Sequence[str]) -> CostFit:
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    ss_res = float(np.sum((y - design @ coef) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return CostFit({k: float(v) for k, v in zip(names, coef)}, r2)


def fit_exact(points: Sequence[ScalingPoint]) -> CostFit:
    """t = alpha * M * N + gamma."""
    mn = np.array([p.m_points * p.n_sources for p in points], dtype=np.float64)
    design = np.stack([mn, np.ones_like(mn)], axis=1)
    return _lstsq(design, np.array([p.exact_time for p in points]), ("mn", "const"))


def fit_amortized(points: Sequence[ScalingPoint]) -> CostFit:
    """t = a * M + b * N + c."""
    m = np.array([p.m_points for p in points], dtype=np.float64)
    n = np.array([p.n_sources for p in points], dtype=np.float64)
    design = np.stack([m, n, np.ones_like(m)], axis=1)
    return _lstsq(design, np.array([p.amortized_time for p in points]), ("m", "n", "const"))


def _median_time(fn: Callable[[], object], repeats: int) -> float:
    fn()  # warm-up, not timed
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def run_sweep(model: AnyModel, sizes: Sequence[Tuple[int, int]], repeats: int = BENCH_REPEATS,
              seed: int = DEFAULT_SEED, threads: int = 1, domain: Optional[Box] = None) -> ScalingReport:
    """Time exact and amortized field evaluation on fresh random inputs per size."""
    if threads != 1:
        raise UsageError(f"the timed region runs single-threaded; refusing threads={threads}")
    if repeats < 3:
        raise UsageError(f"need at least 3 timing repeats, got {repeats}")
    if len(sizes) < 4:
        raise UsageError(f"cost-model fits need at least 4 sizes, got {len(sizes)}")
    ms = [m for m, _ in sizes]
    ns = [n for _, n in sizes]
    if max(ms) < 4 * min(ms) or max(ns) < 4 * min(ns):
        raise UsageError("sizes must span at least a 4x range in both M and N")
    domain = domain or Box.square(dim=model.dim)
    lo, hi = np.array(domain.lo), np.array(domain.hi)
    points: List[ScalingPoint] = []
    for i, (m, n) in enumerate(sizes):
        rng = make_rng(seed, stream=i + 1)
        col = random_collection(rng, n, domain)
        pts = rng.uniform(lo, hi, size=(m, domain.dim))
        exact_count, amortized_count = OpCounter(), OpCounter()
        collection_field(col, pts, exact_count)
        infer_collection(model, col, pts, amortized_count)
        exact_time = _median_time(lambda: collection_field(col, pts), repeats)
        amortized_time = _median_time(lambda: infer_collection(model, col, pts), repeats)
        amortized_ops = amortized_count.amortized_ops if amortized_count.amortized_ops else amortized_count.pair_evals
        points.append(ScalingPoint(m, n, exact_time, amortized_time, exact_count.pair_evals, amortized_ops))
        Logger.info(f"M={m:5d} N={n:5d}: exact {exact_time * 1e3:8.2f} ms, amortized {amortized_time * 1e3:8.2f} ms")
    report = ScalingReport(points, fit_exact(points), fit_amortized(points))
    Logger.info(f"exact fit R^2={report.exact_fit.r2:.4f}, amortized fit R^2={report.amortized_fit.r2:.4f}")
    return report


def crossover(report: ScalingReport, resolution: int = 64) -> Crossover:
    """Contour where the fitted amortized cost equals the fitted exact cost."""
    ex, am = report.exact_fit, report.amortized_fit
    m_lo = min(p.m_points for p in report.points)
    m_hi = max(p.m_points for p in report.points)
    n_lo = min(p.n_sources for p in report.points)
    n_hi = max(p.n_sources for p in report.points)
    mm, nn = np.meshgrid(np.geomspace(m_lo, m_hi, resolution), np.geomspace(n_lo, n_hi, resolution))
    diff = ex.predict(mm, nn) - am.predict(mm, nn)
    if np.all(diff > 0) or np.all(diff < 0):
        return Crossover(False, [], ex, am, NO_CROSSOVER)
    alpha, gamma = ex.coefficients["mn"], ex.coefficients["const"]
    a, b, c = am.coefficients["m"], am.coefficients["n"], am.coefficients["const"]
    contour = []
    # alpha M N + gamma = a M + b N + c  =>  N = (a M + c - gamma) / (alpha M - b)
    for m in np.geomspace(m_lo, m_hi, resolution):
        denom = alpha * m - b
        if denom == 0:
            continue
        n_star = (a * m + c - gamma) / denom
        if n_lo <= n_star <= n_hi:
            contour.append((float(m), float(n_star)))
    if not contour:
        return Crossover(False, [], ex, am, NO_CROSSOVER)
    return Crossover(True, contour, ex, am, f"{len(contour)} contour points inside the sweep range")
