"""Seeded generation of source collections with oracle labels, and dataset files.

Dataset directory layout:
    meta.json    format version, generation config, counts, byte sizes, checksum
    sources.f64  rows (collection_index, position[d], moment[d], radius)
    points.f64   rows (location[d]), points_per_collection rows per collection
    labels.f64   rows (potential, field[d]), aligned with points.f64
All arrays are row-major little-endian float64.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .config import (
    DATASET_FORMAT_VERSION,
    DEFAULT_SEED,
    DOMAIN_HI,
    DOMAIN_LO,
    MOMENT_SCALE,
    N_COLLECTIONS,
    POINTS_PER_COLLECTION,
    SOURCE_RADIUS,
    check_keys,
    choice,
    positive_float,
    positive_int,
)
from .errors import ChecksumError, ConfigError, DatasetIOError, FormatVersionError, TruncatedFileError, UsageError
from .numerics import make_rng
from .oracle import Box, InvalidSourceError, SampleBatch, Source, Source1D, SourceCollection, label_points
from .utils.logger import Logger

SAMPLING_MODES = ("uniform_random", "regular_grid")
_FILES = ("sources.f64", "points.f64", "labels.f64")


@dataclass(frozen=True)
class DataGenConfig:
    n_collections: int = N_COLLECTIONS
    sources_per_collection: int = 1
    # When set, each collection draws its count uniformly in [sources_per_collection, max]
    max_sources_per_collection: Optional[int] = None
    domain: Box = field(default_factory=Box)
    points_per_collection: int = POINTS_PER_COLLECTION
    sampling: str = "uniform_random"
    moment_scale: float = MOMENT_SCALE
    radius: float = SOURCE_RADIUS
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        self.validate("data")

    @property
    def dim(self) -> int:
        return self.domain.dim

    def validate(self, prefix: str) -> None:
        for name in ("n_collections", "sources_per_collection", "points_per_collection"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{prefix}.{name}", f"must be a positive integer, got {v!r}")
        if self.max_sources_per_collection is not None and self.max_sources_per_collection < self.sources_per_collection:
            raise ConfigError(f"{prefix}.max_sources_per_collection", "must be >= sources_per_collection")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"{prefix}.sampling", f"must be one of {', '.join(SAMPLING_MODES)}")
        if self.sampling == "regular_grid":
            per_axis = round(self.points_per_collection ** (1.0 / self.dim))
            if per_axis ** self.dim != self.points_per_collection or per_axis < 2:
                raise ConfigError(f"{prefix}.points_per_collection",
                                  f"regular_grid needs a perfect {'square' if self.dim == 2 else 'count'} >= 4")
        if not (self.moment_scale > 0 and self.radius > 0):
            raise ConfigError(f"{prefix}.moment_scale", "moment_scale and radius must be positive")

    @property
    def grid_per_axis(self) -> int:
        return int(round(self.points_per_collection ** (1.0 / self.dim)))

    @classmethod
    def from_dict(cls, values: dict, prefix: str = "data", **overrides) -> "DataGenConfig":
        allowed = {"n_collections", "sources_per_collection", "max_sources_per_collection", "dim", "domain",
                   "points_per_collection", "sampling", "moment_scale", "radius", "seed"}
        check_keys(values, allowed, prefix)
        values = {**values, **{k: v for k, v in overrides.items() if v is not None}}
        dim = values.get("dim", 2)
        if dim not in (1, 2):
            raise ConfigError(f"{prefix}.dim", f"must be 1 or 2, got {dim!r}")
        dom = values.get("domain", [DOMAIN_LO, DOMAIN_HI])
        try:
            if isinstance(dom, dict):
                domain = Box(tuple(dom["lo"]), tuple(dom["hi"]))
            else:
                lo, hi = dom
                domain = Box.square(float(lo), float(hi), dim)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"{prefix}.domain", f"expected [lo, hi] or {{lo: [...], hi: [...]}}: {e}")
        if domain.dim != dim:
            raise ConfigError(f"{prefix}.domain", f"has {domain.dim} axes but dim is {dim}")
        max_src = values.get("max_sources_per_collection")
        if max_src is not None:
            max_src = positive_int(values, "max_sources_per_collection", 1, prefix)
        seed = values.get("seed", DEFAULT_SEED)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"{prefix}.seed", f"must be a non-negative integer, got {seed!r}")
        cfg = cls(
            n_collections=positive_int(values, "n_collections", N_COLLECTIONS, prefix),
            sources_per_collection=positive_int(values, "sources_per_collection", 1, prefix),
            max_sources_per_collection=max_src,
            domain=domain,
            points_per_collection=positive_int(values, "points_per_collection", POINTS_PER_COLLECTION, prefix),
            sampling=choice(values, "sampling", "uniform_random", SAMPLING_MODES, prefix),
            moment_scale=positive_float(values, "moment_scale", MOMENT_SCALE, prefix),
            radius=positive_float(values, "radius", SOURCE_RADIUS, prefix),
            seed=seed,
        )
        cfg.validate(prefix)
        return cfg

    def to_dict(self) -> dict:
        return {
            "n_collections": self.n_collections,
            "sources_per_collection": self.sources_per_collection,
            "max_sources_per_collection": self.max_sources_per_collection,
            "dim": self.dim,
            "domain": self.domain.to_dict(),
            "points_per_collection": self.points_per_collection,
            "sampling": self.sampling,
            "moment_scale": self.moment_scale,
            "radius": self.radius,
            "seed": self.seed,
        }


@dataclass
class Dataset:
    config: DataGenConfig
    collections: List[SourceCollection]
    samples: List[SampleBatch]

    def __len__(self) -> int:
        return len(self.collections)

    @property
    def n_sources(self) -> int:
        return sum(len(c) for c in self.collections)

    @property
    def max_sources(self) -> int:
        return max(len(c) for c in self.collections)

    def points(self) -> np.ndarray:
        """Stacked locations (C, P, d)."""
        return np.stack([s.locations for s in self.samples])

    def potentials(self) -> np.ndarray:
        return np.stack([s.potential for s in self.samples])

    def fields(self) -> np.ndarray:
        return np.stack([s.field for s in self.samples])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.config, [self.collections[i] for i in indices], [self.samples[i] for i in indices])

    def arrays(self):
        """(sources, points, labels) rows as stored on disk."""
        rows = []
        for c, col in enumerate(self.collections):
            pos, mom, rad = col.arrays()
            rows.append(np.concatenate([np.full((len(col), 1), float(c)), pos, mom, rad[:, None]], axis=1))
        sources = np.concatenate(rows)
        points = np.concatenate([s.locations for s in self.samples])
        labels = np.concatenate([np.concatenate([s.potential[:, None], s.field], axis=1) for s in self.samples])
        return sources, points, labels

    def checksum(self) -> str:
        return _checksum([a.astype("<f8").tobytes() for a in self.arrays()])


def _checksum(payloads: Sequence[bytes]) -> str:
    h = hashlib.sha256()
    for p in payloads:
        h.update(p)
    return "sha256:" + h.hexdigest()


def sample_grid(domain: Box, per_axis: int) -> np.ndarray:
    """Cell-centred grid, per_axis**d points; x varies fastest."""
    if per_axis < 2:
        raise UsageError(f"grid needs at least 2 points per axis, got {per_axis}")
    axes = [lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis for lo, hi in zip(domain.lo, domain.hi)]
    if domain.dim == 1:
        return axes[0][:, None]
    xx, yy = np.meshgrid(axes[0], axes[1])
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def random_collection(rng, n_sources: int, domain: Box, moment_scale: float = MOMENT_SCALE,
                      radius: float = SOURCE_RADIUS) -> SourceCollection:
    """Positions uniform in the domain, directions uniform, magnitudes uniform in (0, moment_scale]."""
    lo, hi = np.array(domain.lo), np.array(domain.hi)
    pos = rng.uniform(lo, hi, size=(n_sources, domain.dim))
    mag = moment_scale * (1.0 - rng.random(n_sources))
    if domain.dim == 2:
        angle = rng.uniform(0.0, 2.0 * np.pi, n_sources)
        mom = mag[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        sources = [Source(p, m, radius) for p, m in zip(pos, mom)]
    else:
        sign = np.where(rng.random(n_sources) < 0.5, -1.0, 1.0)
        sources = [Source1D(float(p[0]), float(s * m), radius) for p, s, m in zip(pos, sign, mag)]
    return SourceCollection(tuple(sources), domain)


def generate(config: DataGenConfig) -> Dataset:
    """Each collection draws from its own substream (seed, index + 1)."""
    grid = sample_grid(config.domain, config.grid_per_axis) if config.sampling == "regular_grid" else None
    lo, hi = np.array(config.domain.lo), np.array(config.domain.hi)
    collections, samples = [], []
    for c in range(config.n_collections):
        rng = make_rng(config.seed, stream=c + 1)
        n = config.sources_per_collection
        if config.max_sources_per_collection is not None:
            n = int(rng.integers(config.sources_per_collection, config.max_sources_per_collection + 1))
        col = random_collection(rng, n, config.domain, config.moment_scale, config.radius)
        pts = grid if grid is not None else rng.uniform(lo, hi, size=(config.points_per_collection, config.dim))
        collections.append(col)
        samples.append(label_points(col, pts))
    return Dataset(config, collections, samples)


def save(ds: Dataset, path: "str | Path") -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    payloads = [a.astype("<f8").tobytes() for a in ds.arrays()]
    for name, payload in zip(_FILES, payloads):
        with open(out / name, "wb") as f:
            f.write(payload)
    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "config": ds.config.to_dict(),
        "dim": ds.config.dim,
        "n_collections": len(ds),
        "points_per_collection": len(ds.samples[0]) if ds.samples else 0,
        "n_sources": ds.n_sources,
        "bytes": {name: len(p) for name, p in zip(_FILES, payloads)},
        "checksum": _checksum(payloads),
    }
    with open(out / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
    return out


def load(path: "str | Path") -> Dataset:
    src = Path(path)
    try:
        with open(src / "meta.json", "r", encoding="utf-8") as f:
            meta = json.load(f)
    except FileNotFoundError:
        raise DatasetIOError(f"dataset not found: {src / 'meta.json'}")
    except json.JSONDecodeError as e:
        raise DatasetIOError(f"unreadable dataset meta in {src}: {e}")
    if meta.get("format_version") != DATASET_FORMAT_VERSION:
        raise FormatVersionError(f"dataset format {meta.get('format_version')!r} in {src}; this build reads {DATASET_FORMAT_VERSION!r}")
    try:
        sizes, checksum, config_doc = meta["bytes"], meta["checksum"], meta["config"]
        d = int(meta["dim"])
        n_col, per = int(meta["n_collections"]), int(meta["points_per_collection"])
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetIOError(f"malformed dataset meta in {src}: missing or invalid {e}")
    payloads = []
    for name in _FILES:
        try:
            with open(src / name, "rb") as f:
                payload = f.read()
        except FileNotFoundError:
            raise DatasetIOError(f"dataset file missing: {src / name}")
        expected = sizes.get(name) if isinstance(sizes, dict) else None
        if expected is None:
            raise DatasetIOError(f"malformed dataset meta in {src}: no byte count for {name}")
        if len(payload) != expected:
            raise TruncatedFileError(f"{src / name} holds {len(payload)} bytes, meta.json records {expected}")
        payloads.append(payload)
    if _checksum(payloads) != checksum:
        raise ChecksumError(f"checksum mismatch in {src}; the payload is corrupted")
    config = DataGenConfig.from_dict(config_doc)
    try:
        sources = np.frombuffer(payloads[0], dtype="<f8").reshape(-1, 2 + 2 * d).astype(np.float64)
        points = np.frombuffer(payloads[1], dtype="<f8").reshape(n_col, per, d).astype(np.float64)
        labels = np.frombuffer(payloads[2], dtype="<f8").reshape(n_col, per, 1 + d).astype(np.float64)
    except ValueError as e:
        raise DatasetIOError(f"dataset payload in {src} does not match its meta: {e}")
    owner = sources[:, 0].astype(np.int64)
    collections, samples = [], []
    try:
        for c in range(n_col):
            rows = sources[owner == c]
            if d == 2:
                srcs = tuple(Source(r[1:3], r[3:5], r[5]) for r in rows)
            else:
                srcs = tuple(Source1D(r[1], r[2], r[3]) for r in rows)
            collections.append(SourceCollection(srcs, config.domain))
            samples.append(SampleBatch(points[c], labels[c, :, 0], labels[c, :, 1:]))
    except InvalidSourceError as e:
        raise DatasetIOError(f"invalid source data in {src}: {e}")
    Logger.info(f"Loaded {n_col} collections ({len(sources)} sources, {per} points each) from {src}")
    return Dataset(config, collections, samples)


def save_collection(col: SourceCollection, path: "str | Path") -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "domain": col.domain.to_dict(),
        "sources": [{"position": list(np.atleast_1d(s.position)), "moment": list(np.atleast_1d(s.moment)),
                     "radius": s.radius} for s in col.sources],
    }
    with open(out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
    return out


def load_collection(path: "str | Path") -> SourceCollection:
    """Read a single-collection JSON file ({domain: {lo, hi}, sources: [...]})."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise DatasetIOError(f"collection file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError("collection", f"invalid JSON in {path}: {e}")
    try:
        domain = Box(tuple(doc["domain"]["lo"]), tuple(doc["domain"]["hi"]))
        if domain.dim == 2:
            srcs = tuple(Source(s["position"], s["moment"], s.get("radius", SOURCE_RADIUS)) for s in doc["sources"])
        else:
            srcs = tuple(Source1D(float(np.ravel(s["position"])[0]), float(np.ravel(s["moment"])[0]),
                                  s.get("radius", SOURCE_RADIUS)) for s in doc["sources"])
        return SourceCollection(srcs, domain)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError("collection", f"malformed collection in {path}: {e}")
