"""Amortized field models: per-source hypernetwork g, summed embeddings, inference net f.

A collection's representation is the element-wise sum of its sources'
embeddings, so N hypernetwork calls and M inference calls give the field
at M points around N sources. For the Fourier, FC+ILR and Linear kinds f is
linear in the embedding and the model superposes exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import (
    FCILR_DEPTH,
    FCILR_WIDTH,
    FCINR_DEPTH,
    FCINR_WIDTH,
    FOURIER_N_MAX,
    HYPER_DEPTH,
    HYPER_WIDTH_FACTOR,
    LAMBDA_MIN,
    MOMENT_SCALE,
    OUTPUT_SCALE,
)
from .errors import CheckpointIOError, ShapeError, UnsupportedKindError
from .numerics import MlpParams, Rng, init_mlp, load_checkpoint, mlp_backward, mlp_forward, mlp_param_count, save_checkpoint
from .oracle import Box, SampleBatch, SourceCollection, label_points
from .utils.counters import OpCounter


class ModelKind(str, Enum):
    FOURIER = "fourier"
    FC_ILR = "fcilr"
    FC_INR = "fcinr"
    LINEAR = "linear"

    @property
    def additive(self) -> bool:
        """True when f is linear in the summed embedding."""
        return self is not ModelKind.FC_INR

    @classmethod
    def parse(cls, value: Union[str, "ModelKind"]) -> "ModelKind":
        try:
            return cls(value)
        except ValueError:
            raise UnsupportedKindError(f"unknown model kind {value!r}; expected one of {', '.join(k.value for k in cls)}")


@dataclass(frozen=True)
class ModeSchedule:
    n_max: int = FOURIER_N_MAX
    kind: str = "integer"
    lambda_min: float = LAMBDA_MIN
    omega_lo: float = 0.25
    omega_hi: float = 4.0

    def __post_init__(self):
        if self.kind not in ("integer", "log_spaced"):
            raise ShapeError(f"unknown mode schedule {self.kind!r}")
        if self.n_max < 1 or self.lambda_min <= 0:
            raise ShapeError(f"schedule needs n_max >= 1 and lambda_min > 0, got {self.n_max}, {self.lambda_min}")
        if self.kind == "log_spaced" and not 0 < self.omega_lo < self.omega_hi:
            raise ShapeError(f"log schedule needs 0 < omega_lo < omega_hi, got {self.omega_lo}, {self.omega_hi}")

    def omegas(self) -> np.ndarray:
        if self.kind == "integer":
            return 2.0 * np.pi * np.arange(self.n_max) / self.lambda_min
        w = np.geomspace(self.omega_lo, self.omega_hi, self.n_max)
        w[0] = 0.0  # zero-frequency mode carries the bias terms
        return w

    def to_dict(self) -> dict:
        return {"n_max": self.n_max, "kind": self.kind, "lambda_min": self.lambda_min,
                "omega_lo": self.omega_lo, "omega_hi": self.omega_hi}


def _factors(coords: np.ndarray, omegas: np.ndarray):
    """cos, sin and their coordinate derivatives, each coords.shape + (n,)."""
    arg = coords[..., None] * omegas
    c, s = np.cos(arg), np.sin(arg)
    return c, s, -omegas * s, omegas * c


def fourier_basis(r, sched: ModeSchedule) -> Tuple[np.ndarray, np.ndarray]:
    """2D basis values (..., 4 n^2) and spatial gradient (..., 2, 4 n^2).

    Blocks in order cos.cos, sin.cos, cos.sin, sin.sin; row-major in (n, m)
    with n the x-frequency and m the y-frequency.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 2:
        raise ShapeError(f"2D basis needs points with 2 coordinates, got {r.shape}")
    om = sched.omegas()
    cx, sx, dcx, dsx = _factors(r[..., 0], om)
    cy, sy, dcy, dsy = _factors(r[..., 1], om)

    def outer(a, b):
        return (a[..., :, None] * b[..., None, :]).reshape(a.shape[:-1] + (-1,))

    basis = np.concatenate([outer(cx, cy), outer(sx, cy), outer(cx, sy), outer(sx, sy)], axis=-1)
    gx = np.concatenate([outer(dcx, cy), outer(dsx, cy), outer(dcx, sy), outer(dsx, sy)], axis=-1)
    gy = np.concatenate([outer(cx, dcy), outer(sx, dcy), outer(cx, dsy), outer(sx, dsy)], axis=-1)
    return basis, np.stack([gx, gy], axis=-2)


def fourier_basis_1d(x, sched: ModeSchedule) -> Tuple[np.ndarray, np.ndarray]:
    """1D basis (..., 2n) as [cos block, sin block] and its derivative."""
    c, s, dc, ds = _factors(np.asarray(x, dtype=np.float64), sched.omegas())
    return np.concatenate([c, s], axis=-1), np.concatenate([dc, ds], axis=-1)


@dataclass(frozen=True)
class FeatureScaler:
    """Maps (position, moment, radius) to O(1) hypernetwork inputs."""

    center: Tuple[float, ...]
    half_width: Tuple[float, ...]
    moment_scale: float = MOMENT_SCALE

    @classmethod
    def for_domain(cls, domain: Box, moment_scale: float = MOMENT_SCALE) -> "FeatureScaler":
        return cls(tuple(domain.center.tolist()), tuple(domain.half_width.tolist()), float(moment_scale))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def n_features(self) -> int:
        return 2 * self.dim + 1

    def normalize(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if f.shape[-1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} source features, got {f.shape[-1]}")
        d = self.dim
        out = f.copy()
        out[..., :d] = (f[..., :d] - np.array(self.center)) / np.array(self.half_width)
        out[..., d:2 * d] = f[..., d:2 * d] / self.moment_scale
        return out

    def to_dict(self) -> dict:
        return {"center": list(self.center), "half_width": list(self.half_width), "moment_scale": self.moment_scale}


def source_features(col: SourceCollection) -> np.ndarray:
    """Raw features per source: position, moment, radius; (N, 2d + 1)."""
    pos, mom, rad = col.arrays()
    return np.concatenate([pos, mom, rad[:, None]], axis=1)


@dataclass(frozen=True)
class Architecture:
    kind: ModelKind
    n_max: int = FOURIER_N_MAX
    schedule: str = "integer"
    lambda_min: float = LAMBDA_MIN
    omega_lo: float = 0.25
    omega_hi: float = 4.0
    trunk_width: int = FCILR_WIDTH
    trunk_depth: int = FCILR_DEPTH
    inr_width: int = FCINR_WIDTH
    inr_depth: int = FCINR_DEPTH
    hyper_width_factor: Optional[float] = None
    hyper_depth: Optional[int] = None
    hyper_max_width: Optional[int] = None
    output_scale: float = OUTPUT_SCALE

    def mode_schedule(self) -> ModeSchedule:
        return ModeSchedule(self.n_max, self.schedule, self.lambda_min, self.omega_lo, self.omega_hi)


@dataclass(frozen=True)
class AmortizedModel:
    kind: ModelKind
    dim: int
    hyper: MlpParams
    scaler: FeatureScaler
    output_scale: float = OUTPUT_SCALE
    schedule: Optional[ModeSchedule] = None
    trunk: Optional[MlpParams] = None
    inr_dims: Optional[Tuple[int, ...]] = None
    # Initialization seed, recorded in checkpoints
    seed: Optional[int] = None

    def __post_init__(self):
        if self.dim != self.scaler.dim:
            raise ShapeError(f"{self.dim}D model with a {self.scaler.dim}D feature scaler")
        needs = {ModelKind.FOURIER: self.schedule, ModelKind.FC_ILR: self.trunk, ModelKind.FC_INR: self.inr_dims}
        if self.kind in needs and needs[self.kind] is None:
            raise ShapeError(f"{self.kind.value} model is missing its inference-network description")
        if self.hyper.dims[0] != self.scaler.n_features:
            raise ShapeError(f"hypernetwork input {self.hyper.dims[0]} != {self.scaler.n_features} source features")
        if self.hyper.dims[-1] != self.embedding_size:
            raise ShapeError(f"hypernetwork output {self.hyper.dims[-1]} != embedding size {self.embedding_size}")

    @property
    def embedding_size(self) -> int:
        if self.kind is ModelKind.FOURIER:
            assert self.schedule is not None
            return 4 * self.schedule.n_max ** 2 if self.dim == 2 else 2 * self.schedule.n_max
        if self.kind is ModelKind.FC_ILR:
            assert self.trunk is not None
            return self.trunk.dims[-1] + 1
        if self.kind is ModelKind.FC_INR:
            assert self.inr_dims is not None
            return mlp_param_count(self.inr_dims)
        return self.dim + 1

    def trainable(self) -> List[np.ndarray]:
        tensors = self.hyper.tensors()
        if self.trunk is not None:
            tensors += self.trunk.tensors()
        return tensors

    def with_trainable(self, tensors: Sequence[np.ndarray]) -> "AmortizedModel":
        n_hyper = 2 * len(self.hyper.weights)
        trunk = self.trunk.replace_tensors(tensors[n_hyper:]) if self.trunk is not None else None
        return replace(self, hyper=self.hyper.replace_tensors(tensors[:n_hyper]), trunk=trunk)

    def embed_many(self, features: np.ndarray, counter: Optional[OpCounter] = None) -> np.ndarray:
        """Embeddings (S, E) for raw source features (S, F)."""
        feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if counter is not None:
            counter.embed_calls += feats.shape[0]
        return mlp_forward(self.hyper, self.scaler.normalize(feats))

    def _check(self, agg: np.ndarray, points: np.ndarray):
        if agg.ndim != 2 or agg.shape[1] != self.embedding_size:
            raise ShapeError(f"embedding shape {agg.shape} does not match ({agg.shape[0] if agg.ndim else '?'}, {self.embedding_size})")
        if points.ndim != 3 or points.shape[0] != agg.shape[0] or points.shape[2] != self.dim:
            raise ShapeError(f"points shape {points.shape} does not match ({agg.shape[0]}, P, {self.dim})")

    def potential_and_field(self, agg, points, with_field: bool = True) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Surrogate potential (B, P) and field (B, P, d) for B summed embeddings."""
        agg = np.asarray(agg, dtype=np.float64)
        points = np.asarray(points, dtype=np.float64)
        self._check(agg, points)
        s = self.output_scale
        if self.kind is ModelKind.FOURIER:
            phi, grad = self._fourier(agg, points, with_field)
        elif self.kind is ModelKind.LINEAR:
            w = agg[:, None, :self.dim]
            phi = np.sum(w * points, axis=-1) + agg[:, None, self.dim]
            grad = np.broadcast_to(w, points.shape) if with_field else None
        elif self.kind is ModelKind.FC_ILR:
            assert self.trunk is not None
            width = self.trunk.dims[-1]
            feats = mlp_forward(self.trunk, points)
            phi = np.einsum("bpw,bw->bp", feats, agg[:, :width]) + agg[:, None, width]
            grad = None
            if with_field:
                cot = np.broadcast_to(agg[:, None, :width], feats.shape)
                _, grad = mlp_backward(self.trunk, points, cot)
        else:
            assert self.inr_dims is not None
            net = MlpParams.from_flat(agg, self.inr_dims)
            phi = mlp_forward(net, points)[..., 0]
            grad = None
            if with_field:
                _, grad = mlp_backward(net, points, np.ones(points.shape[:-1] + (1,)))
        field = -s * np.asarray(grad) if with_field else None
        return s * phi, field

    def _fourier(self, agg, points, with_field):
        assert self.schedule is not None
        om = self.schedule.omegas()
        n = self.schedule.n_max
        if self.dim == 1:
            c, sn, dc, ds = _factors(points[..., 0], om)
            a, b = agg[:, None, :n], agg[:, None, n:]
            phi = np.sum(c * a + sn * b, axis=-1)
            grad = np.sum(dc * a + ds * b, axis=-1)[..., None] if with_field else None
            return phi, grad
        coef = agg.reshape(agg.shape[0], 4, n, n)
        a, b, c, d = (coef[:, k] for k in range(4))
        cx, sx, dcx, dsx = _factors(points[..., 0], om)
        cy, sy, dcy, dsy = _factors(points[..., 1], om)
        at = np.swapaxes
        # g_c[p, n] = sum_m a[n, m] cy[p, m] + c[n, m] sy[p, m]; likewise g_s with b, d
        g_c = cy @ at(a, -1, -2) + sy @ at(c, -1, -2)
        g_s = cy @ at(b, -1, -2) + sy @ at(d, -1, -2)
        phi = np.sum(cx * g_c + sx * g_s, axis=-1)
        if not with_field:
            return phi, None
        h_c = cx @ a + sx @ b
        h_s = cx @ c + sx @ d
        grad_x = np.sum(dcx * g_c + dsx * g_s, axis=-1)
        grad_y = np.sum(dcy * h_c + dsy * h_s, axis=-1)
        return phi, np.stack([grad_x, grad_y], axis=-1)

    def backward(self, agg, points, cot_phi, cot_field=None) -> Tuple[np.ndarray, Optional[MlpParams]]:
        """Pull cotangents of (potential, field) back to the embeddings and trunk.

        Returns d/d(agg) (B, E) and the trunk gradients (FC+ILR only). The
        field cotangent is supported where f's field is linear in the
        embedding without differentiating the trunk twice.
        """
        agg = np.asarray(agg, dtype=np.float64)
        points = np.asarray(points, dtype=np.float64)
        self._check(agg, points)
        s = self.output_scale
        g_phi = s * np.asarray(cot_phi, dtype=np.float64)
        g_h = None if cot_field is None else -s * np.asarray(cot_field, dtype=np.float64)
        if g_h is not None and self.kind in (ModelKind.FC_ILR, ModelKind.FC_INR):
            raise UnsupportedKindError(f"field-term gradients are not available for the {self.kind.value} kind")
        if self.kind is ModelKind.FOURIER:
            return self._fourier_backward(points, g_phi, g_h), None
        if self.kind is ModelKind.LINEAR:
            d_w = np.einsum("bp,bpi->bi", g_phi, points)
            if g_h is not None:
                d_w = d_w + g_h.sum(axis=1)
            return np.concatenate([d_w, g_phi.sum(axis=1)[:, None]], axis=1), None
        if self.kind is ModelKind.FC_ILR:
            assert self.trunk is not None
            width = self.trunk.dims[-1]
            feats = mlp_forward(self.trunk, points)
            d_agg = np.concatenate([np.einsum("bp,bpw->bw", g_phi, feats), g_phi.sum(axis=1)[:, None]], axis=1)
            trunk_grads, _ = mlp_backward(self.trunk, points, g_phi[..., None] * agg[:, None, :width])
            return d_agg, trunk_grads
        assert self.inr_dims is not None
        net = MlpParams.from_flat(agg, self.inr_dims)
        grads, _ = mlp_backward(net, points, g_phi[..., None])
        return grads.flat(), None

    def _fourier_backward(self, points, g_phi, g_h):
        assert self.schedule is not None
        om = self.schedule.omegas()
        at = np.swapaxes
        if self.dim == 1:
            c, sn, dc, ds = _factors(points[..., 0], om)
            w_c = g_phi[..., None] * c
            w_s = g_phi[..., None] * sn
            if g_h is not None:
                w_c = w_c + g_h[..., 0:1] * dc
                w_s = w_s + g_h[..., 0:1] * ds
            return np.concatenate([w_c.sum(axis=1), w_s.sum(axis=1)], axis=1)
        cx, sx, dcx, dsx = _factors(points[..., 0], om)
        cy, sy, dcy, dsy = _factors(points[..., 1], om)
        # x-side weights paired with the plain y factors, and with the y derivatives
        u_c = g_phi[..., None] * cx
        u_s = g_phi[..., None] * sx
        if g_h is not None:
            u_c = u_c + g_h[..., 0:1] * dcx
            u_s = u_s + g_h[..., 0:1] * dsx
        d_a = at(u_c, -1, -2) @ cy
        d_b = at(u_s, -1, -2) @ cy
        d_c = at(u_c, -1, -2) @ sy
        d_d = at(u_s, -1, -2) @ sy
        if g_h is not None:
            v_c = g_h[..., 1:2] * cx
            v_s = g_h[..., 1:2] * sx
            d_a = d_a + at(v_c, -1, -2) @ dcy
            d_b = d_b + at(v_s, -1, -2) @ dcy
            d_c = d_c + at(v_c, -1, -2) @ dsy
            d_d = d_d + at(v_s, -1, -2) @ dsy
        return np.stack([d_a, d_b, d_c, d_d], axis=1).reshape(points.shape[0], -1)


@dataclass(frozen=True)
class OracleReplay:
    """Pass-through model answering with the exact oracle, optionally scaled."""

    dim: int = 2
    scale: float = 1.0
    kind: str = "oracle"


AnyModel = Union[AmortizedModel, OracleReplay]


def embed(model: AmortizedModel, features) -> np.ndarray:
    """Embedding of one source's raw features."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 1:
        raise ShapeError(f"embed takes one feature vector, got shape {feats.shape}")
    return model.embed_many(feats[None, :])[0]


def aggregate(embs: Sequence[np.ndarray]) -> np.ndarray:
    embs = [np.asarray(e, dtype=np.float64) for e in embs]
    if not embs:
        raise ShapeError("cannot aggregate an empty list of embeddings")
    size = embs[0].shape
    if any(e.shape != size for e in embs):
        raise ShapeError(f"embeddings differ in shape: {sorted({e.shape for e in embs})}")
    total = np.zeros(size)
    for e in embs:
        total = total + e
    return total


def potential(model: AmortizedModel, agg, r) -> float:
    pts = np.asarray(r, dtype=np.float64).reshape(1, 1, model.dim)
    phi, _ = model.potential_and_field(np.asarray(agg, dtype=np.float64)[None, :], pts, with_field=False)
    return float(phi[0, 0])


def field(model: AmortizedModel, agg, r) -> np.ndarray:
    pts = np.asarray(r, dtype=np.float64).reshape(1, 1, model.dim)
    _, h = model.potential_and_field(np.asarray(agg, dtype=np.float64)[None, :], pts)
    return h[0, 0]


def infer_collection(model: AnyModel, col: SourceCollection, points, counter: Optional[OpCounter] = None) -> SampleBatch:
    """N embeddings, one sum, then potential and field at M points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, col.dim)
    if isinstance(model, OracleReplay):
        truth = label_points(col, pts, counter)
        return SampleBatch(pts, model.scale * truth.potential, model.scale * truth.field)
    if model.dim != col.dim:
        raise UnsupportedKindError(f"{model.dim}D model cannot evaluate a {col.dim}D collection")
    agg = model.embed_many(source_features(col), counter).sum(axis=0)
    phi, h = model.potential_and_field(agg[None, :], pts[None])
    if counter is not None:
        counter.field_calls += pts.shape[0]
    return SampleBatch(pts, phi[0], h[0])


def build_model(arch: Architecture, domain: Box, rng: Rng, moment_scale: float = MOMENT_SCALE,
                seed: Optional[int] = None) -> AmortizedModel:
    """Fresh model for an architecture; trunk drawn before the hypernetwork."""
    kind = ModelKind.parse(arch.kind)
    dim = domain.dim
    scaler = FeatureScaler.for_domain(domain, moment_scale)
    schedule = trunk = inr_dims = None
    if kind is ModelKind.FOURIER:
        schedule = arch.mode_schedule()
        emb = 4 * schedule.n_max ** 2 if dim == 2 else 2 * schedule.n_max
    elif kind is ModelKind.FC_ILR:
        trunk = init_mlp([dim] + [arch.trunk_width] * arch.trunk_depth, rng, activate_last=True)
        emb = arch.trunk_width + 1
    elif kind is ModelKind.FC_INR:
        inr_dims = tuple([dim] + [arch.inr_width] * arch.inr_depth + [1])
        emb = mlp_param_count(inr_dims)
    else:
        emb = dim + 1
    if kind is ModelKind.LINEAR:
        hyper_dims = [scaler.n_features, emb]
    else:
        factor = arch.hyper_width_factor if arch.hyper_width_factor is not None else HYPER_WIDTH_FACTOR[kind.value]
        depth = arch.hyper_depth if arch.hyper_depth is not None else HYPER_DEPTH[kind.value]
        width = max(1, int(round(factor * emb)))
        if arch.hyper_max_width is not None:
            width = min(width, arch.hyper_max_width)
        hyper_dims = [scaler.n_features] + [width] * depth + [emb]
    hyper = init_mlp(hyper_dims, rng)
    return AmortizedModel(kind, dim, hyper, scaler, arch.output_scale, schedule, trunk, inr_dims, seed)


def save_model(model: AnyModel, directory: "str | Path") -> Path:
    if isinstance(model, OracleReplay):
        return save_checkpoint(directory, {"kind": "oracle", "dim": model.dim, "scale": model.scale}, [])
    meta = {
        "kind": model.kind.value,
        "dim": model.dim,
        "activation": model.hyper.activation,
        "output_scale": model.output_scale,
        "scaler": model.scaler.to_dict(),
        "hyper_dims": model.hyper.dims,
        "schedule": model.schedule.to_dict() if model.schedule is not None else None,
        "trunk_dims": model.trunk.dims if model.trunk is not None else None,
        "inr_dims": list(model.inr_dims) if model.inr_dims is not None else None,
        "seed": model.seed,
    }
    return save_checkpoint(directory, meta, model.trainable())


def load_model(directory: "str | Path") -> AnyModel:
    meta, tensors = load_checkpoint(directory)
    try:
        if meta["kind"] == "oracle":
            return OracleReplay(int(meta["dim"]), float(meta.get("scale", 1.0)))
        kind = ModelKind.parse(meta["kind"])
        n_hyper = 2 * (len(meta["hyper_dims"]) - 1)
        hyper = MlpParams(tuple(tensors[0:n_hyper:2]), tuple(tensors[1:n_hyper:2]), meta["activation"])
        trunk = None
        if meta["trunk_dims"] is not None:
            rest = tensors[n_hyper:]
            trunk = MlpParams(tuple(rest[0::2]), tuple(rest[1::2]), meta["activation"], activate_last=True)
        sc = meta["scaler"]
        scaler = FeatureScaler(tuple(sc["center"]), tuple(sc["half_width"]), float(sc["moment_scale"]))
        schedule = ModeSchedule(**meta["schedule"]) if meta["schedule"] is not None else None
        inr_dims = tuple(meta["inr_dims"]) if meta["inr_dims"] is not None else None
        seed = int(meta["seed"]) if meta.get("seed") is not None else None
        return AmortizedModel(kind, int(meta["dim"]), hyper, scaler, float(meta["output_scale"]), schedule, trunk, inr_dims,
                              seed)
    except (KeyError, TypeError, ValueError, ShapeError) as e:
        raise CheckpointIOError(f"malformed checkpoint meta in {directory}: {e}")
