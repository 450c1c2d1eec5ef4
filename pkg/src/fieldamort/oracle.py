"""Exact dipole potentials and fields by superposition, and the error metrics.

Units: lengths in source radii, mu0 = 1 so H carries the mu0 factor. A 2D
source is the in-plane cross-section of a sphere and uses the 3D dipole
law evaluated in the plane.

    outside (|u| > d):  phi = m.u / (4 pi |u|^3)
    inside  (|u| <= d): phi = m.u / (4 pi d^3)

with u = r - r_i. The two forms meet at |u| = d.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import DOMAIN_HI, DOMAIN_LO, SOURCE_RADIUS
from .errors import MetricsError, ShapeError
from .utils.counters import OpCounter

FOUR_PI = 4.0 * np.pi


class InvalidSourceError(ValueError):
    pass


def _vector(values, n: int, name: str) -> Tuple[float, ...]:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size != n or not np.all(np.isfinite(arr)):
        raise InvalidSourceError(f"{name} must be {n} finite numbers, got {values!r}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class Source:
    position: Tuple[float, float]
    moment: Tuple[float, float]
    radius: float = SOURCE_RADIUS

    def __post_init__(self):
        object.__setattr__(self, "position", _vector(self.position, 2, "position"))
        object.__setattr__(self, "moment", _vector(self.moment, 2, "moment"))
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise InvalidSourceError(f"radius must be positive and finite, got {self.radius!r}")
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class Source1D:
    position: float
    moment: float
    radius: float = SOURCE_RADIUS

    def __post_init__(self):
        for name in ("position", "moment", "radius"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise InvalidSourceError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if self.radius <= 0:
            raise InvalidSourceError(f"radius must be positive, got {self.radius!r}")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; one or two axes."""

    lo: Tuple[float, ...] = (DOMAIN_LO, DOMAIN_LO)
    hi: Tuple[float, ...] = (DOMAIN_HI, DOMAIN_HI)

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or len(lo) not in (1, 2):
            raise ShapeError(f"box needs matching 1 or 2 axis bounds, got {lo} / {hi}")
        if not all(l < h for l, h in zip(lo, hi)):
            raise ShapeError(f"empty box {lo} / {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def square(cls, lo: float = DOMAIN_LO, hi: float = DOMAIN_HI, dim: int = 2) -> "Box":
        return cls((lo,) * dim, (hi,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def width(self) -> np.ndarray:
        return np.array(self.hi) - np.array(self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.hi) + np.array(self.lo))

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * self.width

    def contains(self, point) -> bool:
        p = np.atleast_1d(np.asarray(point, dtype=np.float64))
        return bool(np.all(p >= np.array(self.lo)) and np.all(p <= np.array(self.hi)))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class SourceCollection:
    sources: Tuple[Union[Source, Source1D], ...]
    domain: Box = field(default_factory=Box)

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise InvalidSourceError("a collection needs at least one source")
        want = Source if self.domain.dim == 2 else Source1D
        for i, s in enumerate(self.sources):
            if not isinstance(s, want):
                raise InvalidSourceError(f"source {i} is {type(s).__name__}, domain expects {want.__name__}")
            if not self.domain.contains(s.position):
                raise InvalidSourceError(f"source {i} at {s.position} lies outside the domain")

    def __len__(self) -> int:
        return len(self.sources)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Positions (N, d), moments (N, d), radii (N,)."""
        pos = np.array([np.atleast_1d(s.position) for s in self.sources], dtype=np.float64)
        mom = np.array([np.atleast_1d(s.moment) for s in self.sources], dtype=np.float64)
        rad = np.array([s.radius for s in self.sources], dtype=np.float64)
        return pos, mom, rad


@dataclass(frozen=True)
class FieldSample:
    location: Tuple[float, ...]
    potential: float
    field: Tuple[float, ...]


@dataclass
class SampleBatch:
    """Array-backed sequence of FieldSample: locations (M, d), potential (M,), field (M, d)."""

    locations: np.ndarray
    potential: np.ndarray
    field: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float64)
        self.potential = np.asarray(self.potential, dtype=np.float64).reshape(-1)
        self.field = np.asarray(self.field, dtype=np.float64).reshape(self.locations.shape)
        if self.potential.shape[0] != self.locations.shape[0]:
            raise ShapeError(f"{self.potential.shape[0]} potentials for {self.locations.shape[0]} locations")

    def __len__(self) -> int:
        return int(self.potential.shape[0])

    def __iter__(self) -> Iterator[FieldSample]:
        for r, phi, h in zip(self.locations, self.potential, self.field):
            yield FieldSample(tuple(r.tolist()), float(phi), tuple(h.tolist()))

    @classmethod
    def from_samples(cls, samples: Sequence[FieldSample]) -> "SampleBatch":
        samples = list(samples)
        return cls(np.array([s.location for s in samples], dtype=np.float64).reshape(len(samples), -1),
                   np.array([s.potential for s in samples], dtype=np.float64),
                   np.array([s.field for s in samples], dtype=np.float64).reshape(len(samples), -1))

    @classmethod
    def concat(cls, batches: Sequence["SampleBatch"]) -> "SampleBatch":
        return cls(np.concatenate([b.locations for b in batches]),
                   np.concatenate([b.potential for b in batches]),
                   np.concatenate([b.field for b in batches]))


@dataclass(frozen=True)
class ErrorMetrics:
    delta_phi: float
    delta_h: float
    n_phi: int = 0
    n_h: int = 0

    def to_dict(self) -> dict:
        return {"delta_phi": self.delta_phi, "delta_h": self.delta_h, "n_phi": self.n_phi, "n_h": self.n_h}


def _points(points, dim: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, dim)
    return pts.reshape(-1, dim)


def _dipole_terms(pos: np.ndarray, mom: np.ndarray, radius: float, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Potential (M,) and field (M, 2) of one source at pts (M, 2)."""
    u = pts - pos
    dist = np.sqrt(np.sum(u * u, axis=1))
    m_dot_u = u @ mom
    inside = dist <= radius
    safe = np.where(inside, radius, dist)
    inv3 = 1.0 / safe ** 3
    phi = m_dot_u * inv3 / FOUR_PI
    # Outside: H = -(m/|u|^3 - 3 (m.u) u/|u|^5) / 4pi; inside: H = -m / (4pi d^3)
    radial = np.where(inside, 0.0, 3.0 * m_dot_u * inv3 / safe ** 2)
    h = -(mom[None, :] * inv3[:, None] - radial[:, None] * u) / FOUR_PI
    return phi, h


def dipole_potential(src: Source, r) -> float:
    phi, _ = _dipole_terms(np.array(src.position), np.array(src.moment), src.radius, _points(r, 2))
    return float(phi[0])


def dipole_field(src: Source, r) -> np.ndarray:
    _, h = _dipole_terms(np.array(src.position), np.array(src.moment), src.radius, _points(r, 2))
    return h[0]


def _collection_terms(col: SourceCollection, points, counter: Optional[OpCounter]) -> Tuple[np.ndarray, np.ndarray]:
    pts = _points(points, col.dim)
    pos, mom, rad = col.arrays()
    phi = np.zeros(pts.shape[0])
    h = np.zeros_like(pts)
    # Ascending source index; fixed order keeps sums bit-reproducible.
    for j in range(len(col)):
        if col.dim == 2:
            dphi, dh = _dipole_terms(pos[j], mom[j], rad[j], pts)
        else:
            dphi, dh1 = _dipole_terms_1d(pos[j, 0], mom[j, 0], rad[j], pts[:, 0])
            dh = dh1[:, None]
        phi += dphi
        h += dh
    if counter is not None:
        counter.pair_evals += len(col) * pts.shape[0]
    return phi, h


def collection_potential(col: SourceCollection, points, counter: Optional[OpCounter] = None) -> np.ndarray:
    return _collection_terms(col, points, counter)[0]


def collection_field(col: SourceCollection, points, counter: Optional[OpCounter] = None) -> np.ndarray:
    return _collection_terms(col, points, counter)[1]


def label_points(col: SourceCollection, points, counter: Optional[OpCounter] = None) -> SampleBatch:
    """Oracle potential and field at every point, as one batch."""
    pts = _points(points, col.dim)
    phi, h = _collection_terms(col, pts, counter)
    return SampleBatch(pts, phi, h)


def _dipole_terms_1d(pos: float, mom: float, radius: float, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u = xs - pos
    dist = np.abs(u)
    inside = dist <= radius
    safe = np.where(inside, radius, dist)
    inv3 = 1.0 / safe ** 3
    phi = mom * u * inv3 / FOUR_PI
    h = np.where(inside, -mom * inv3, 2.0 * mom * inv3) / FOUR_PI
    return phi, h


def dipole_potential_1d(src: Source1D, x: float) -> float:
    phi, _ = _dipole_terms_1d(src.position, src.moment, src.radius, np.array([float(x)]))
    return float(phi[0])


def dipole_field_1d(src: Source1D, x: float) -> float:
    _, h = _dipole_terms_1d(src.position, src.moment, src.radius, np.array([float(x)]))
    return float(h[0])


def collection_potential_1d(sources: Sequence[Source1D], xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    phi = np.zeros_like(xs)
    for s in sources:
        phi += _dipole_terms_1d(s.position, s.moment, s.radius, xs)[0]
    return phi


def collection_field_1d(sources: Sequence[Source1D], xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    h = np.zeros_like(xs)
    for s in sources:
        h += _dipole_terms_1d(s.position, s.moment, s.radius, xs)[1]
    return h


def relative_errors(pred: Union[SampleBatch, Sequence[FieldSample]],
                    truth: Union[SampleBatch, Sequence[FieldSample]]) -> ErrorMetrics:
    """Median relative potential error and median relative field-norm error.

    Samples whose true potential (or field norm) is exactly zero are left
    out of that median.
    """
    pred = pred if isinstance(pred, SampleBatch) else SampleBatch.from_samples(pred)
    truth = truth if isinstance(truth, SampleBatch) else SampleBatch.from_samples(truth)
    if len(pred) == 0 or len(pred) != len(truth):
        raise ShapeError(f"need equal non-empty sample counts, got {len(pred)} and {len(truth)}")
    if not np.array_equal(pred.locations, truth.locations):
        raise ShapeError("prediction and truth locations differ")
    phi_ok = truth.potential != 0.0
    h_norm = np.linalg.norm(truth.field, axis=1)
    h_ok = h_norm != 0.0
    if not phi_ok.any() or not h_ok.any():
        raise MetricsError("every sample has a zero reference value; the median is undefined")
    err_phi = np.abs(pred.potential[phi_ok] - truth.potential[phi_ok]) / np.abs(truth.potential[phi_ok])
    err_h = np.linalg.norm(pred.field[h_ok] - truth.field[h_ok], axis=1) / h_norm[h_ok]
    return ErrorMetrics(float(np.median(err_phi)), float(np.median(err_h)), int(phi_ok.sum()), int(h_ok.sum()))
