"""Losses, the staged Adam schedule, evaluation and ensembles.

Training runs on collections of any size: embeddings of every source in a
minibatch are summed per collection before the inference network, so
gradients flow through embed -> aggregate -> potential (and, for the joint
loss, through the analytic field of the Fourier expansion).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import (
    BATCH_COLLECTIONS,
    DEFAULT_SEED,
    DESK_SCALE,
    DIVERGENCE_FACTOR,
    EPOCHS_PER_STAGE,
    FIT_DEPTH,
    FIT_EPOCHS,
    FIT_GRID,
    FIT_LOG_LR,
    FIT_N_SOURCES,
    FIT_WIDTH,
    LOG_LRS,
    check_keys,
    choice,
    positive_float,
    positive_int,
)
from .data import Dataset, random_collection, sample_grid
from .errors import ConfigError, DivergenceError, FieldAmortError, NumericalError, UnsupportedKindError, UsageError
from .models import AmortizedModel, AnyModel, Architecture, ModelKind, build_model, infer_collection, source_features
from .numerics import AdamState, MlpParams, adam_step, init_mlp, make_rng, mlp_backward, mlp_forward
from .oracle import Box, ErrorMetrics, SampleBatch, SourceCollection, label_points, relative_errors
from .utils.logger import Logger

LOSSES = ("potential_only", "joint_potential_field")


@dataclass(frozen=True)
class TrainConfig:
    arch: Architecture
    epochs_per_stage: int = EPOCHS_PER_STAGE
    log_lrs: Tuple[float, ...] = tuple(LOG_LRS)
    # None trains on every collection each epoch
    batch_collections: Optional[int] = BATCH_COLLECTIONS
    points_per_step: Optional[int] = None
    loss: str = "potential_only"
    seed: int = DEFAULT_SEED
    log_every: int = 500

    def __post_init__(self):
        self.validate("train")

    @property
    def kind(self) -> ModelKind:
        return ModelKind.parse(self.arch.kind)

    def validate(self, prefix: str) -> None:
        if self.epochs_per_stage < 0:
            raise ConfigError(f"{prefix}.epochs_per_stage", "must be >= 0")
        if not self.log_lrs:
            raise ConfigError(f"{prefix}.log_lrs", "needs at least one stage")
        if any(b >= a for a, b in zip(self.log_lrs, self.log_lrs[1:])):
            raise ConfigError(f"{prefix}.log_lrs", f"must be strictly decreasing, got {list(self.log_lrs)}")
        if self.loss not in LOSSES:
            raise ConfigError(f"{prefix}.loss", f"must be one of {', '.join(LOSSES)}")
        if self.loss == "joint_potential_field" and self.kind is not ModelKind.FOURIER:
            raise ConfigError(f"{prefix}.loss", "joint_potential_field is only defined for the fourier kind")

    @classmethod
    def from_dict(cls, values: dict, prefix: str = "train", desk_scale: bool = False, **overrides) -> "TrainConfig":
        arch_keys = {f for f in Architecture.__dataclass_fields__ if f != "kind"}
        allowed = {"kind", "epochs_per_stage", "log_lrs", "batch_collections", "points_per_step", "loss", "seed",
                   "log_every"} | arch_keys
        check_keys(values, allowed, prefix)
        values = {**values, **{k: v for k, v in overrides.items() if v is not None}}
        try:
            kind = ModelKind.parse(values.get("kind", "fourier"))
        except UnsupportedKindError as e:
            raise ConfigError(f"{prefix}.kind", str(e))
        arch_values = {k: values[k] for k in arch_keys if k in values}
        if desk_scale:
            arch_values = {**_desk_arch(kind), **arch_values}
        for key in ("n_max", "trunk_width", "trunk_depth", "inr_width", "inr_depth"):
            if key in arch_values:
                positive_int(arch_values, key, 1, prefix)
        if "output_scale" in arch_values:
            positive_float(arch_values, "output_scale", 1.0, prefix)
        if "schedule" in arch_values:
            choice(arch_values, "schedule", "integer", ("integer", "log_spaced"), prefix)
        arch = Architecture(kind=kind, **arch_values)
        lrs = values.get("log_lrs", LOG_LRS)
        if not isinstance(lrs, list) or not all(isinstance(v, (int, float)) for v in lrs):
            raise ConfigError(f"{prefix}.log_lrs", f"must be a list of numbers, got {lrs!r}")
        epochs = values.get("epochs_per_stage", DESK_SCALE["epochs_per_stage"] if desk_scale else EPOCHS_PER_STAGE)
        if isinstance(epochs, bool) or not isinstance(epochs, int) or epochs < 0:
            raise ConfigError(f"{prefix}.epochs_per_stage", f"must be a non-negative integer, got {epochs!r}")
        batch = values.get("batch_collections", DESK_SCALE["batch_collections"] if desk_scale else BATCH_COLLECTIONS)
        if batch is not None:
            batch = positive_int({"batch_collections": batch}, "batch_collections", 1, prefix)
        points = values.get("points_per_step", DESK_SCALE["points_per_step"] if desk_scale else None)
        if points is not None:
            points = positive_int({"points_per_step": points}, "points_per_step", 1, prefix)
        seed = values.get("seed", DEFAULT_SEED)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"{prefix}.seed", f"must be a non-negative integer, got {seed!r}")
        cfg = cls(
            arch=arch,
            epochs_per_stage=epochs,
            log_lrs=tuple(float(v) for v in lrs),
            batch_collections=batch,
            points_per_step=points,
            loss=choice(values, "loss", "potential_only", LOSSES, prefix),
            seed=seed,
            log_every=positive_int(values, "log_every", 500, prefix),
        )
        cfg.validate(prefix)
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        out["arch"]["kind"] = self.kind.value
        out["log_lrs"] = list(self.log_lrs)
        return out


def _desk_arch(kind: ModelKind) -> dict:
    return {
        "n_max": DESK_SCALE["n_max"],
        "trunk_width": DESK_SCALE["trunk_width"],
        "inr_width": DESK_SCALE["inr_width"],
        "hyper_width_factor": DESK_SCALE["hyper_width_factor"][kind.value],
        "hyper_max_width": DESK_SCALE["hyper_max_width"],
    }


@dataclass
class TrainingBatch:
    """Sources of B collections with their labeled points.

    features (S, F) raw source features; owner (S,) collection of each
    source within the batch; points (B, P, d); potential (B, P); field (B, P, d).
    """

    features: np.ndarray
    owner: np.ndarray
    points: np.ndarray
    potential: np.ndarray
    field: np.ndarray

    @property
    def n_collections(self) -> int:
        return int(self.points.shape[0])

    @classmethod
    def from_dataset(cls, ds: Dataset, collections: Optional[Sequence[int]] = None,
                     points: Optional[Sequence[int]] = None) -> "TrainingBatch":
        return _Corpus(ds).batch(np.arange(len(ds)) if collections is None else np.asarray(collections), points)


class _Corpus:
    """Dataset flattened into arrays once, for fast minibatch assembly."""

    def __init__(self, ds: Dataset):
        self.features = np.concatenate([source_features(c) for c in ds.collections])
        counts = np.array([len(c) for c in ds.collections])
        self.offsets = np.concatenate([[0], np.cumsum(counts)])
        self.points = ds.points()
        self.potential = ds.potentials()
        self.field = ds.fields()

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def batch(self, cols: np.ndarray, pts: Optional[Sequence[int]] = None) -> TrainingBatch:
        idx = [np.arange(self.offsets[c], self.offsets[c + 1]) for c in cols]
        owner = np.concatenate([np.full(len(i), b) for b, i in enumerate(idx)])
        p = slice(None) if pts is None else np.asarray(pts)
        return TrainingBatch(self.features[np.concatenate(idx)], owner, self.points[cols][:, p],
                             self.potential[cols][:, p], self.field[cols][:, p])

    def sample(self, rng, n_collections: Optional[int], n_points: Optional[int]) -> TrainingBatch:
        n = len(self)
        cols = np.arange(n) if n_collections is None or n_collections >= n else np.sort(rng.choice(n, n_collections, replace=False))
        per = self.points.shape[1]
        pts = None if n_points is None or n_points >= per else np.sort(rng.choice(per, n_points, replace=False))
        return self.batch(cols, pts)


def _aggregate_batch(model: AmortizedModel, batch: TrainingBatch) -> np.ndarray:
    emb = model.embed_many(batch.features)
    agg = np.zeros((batch.n_collections, emb.shape[1]))
    np.add.at(agg, batch.owner, emb)
    return agg


def loss_and_grads(model: AmortizedModel, batch: TrainingBatch, loss: str = "potential_only") -> Tuple[float, List[np.ndarray]]:
    """Loss value and gradients aligned with model.trainable()."""
    joint = loss == "joint_potential_field"
    if joint and model.kind is not ModelKind.FOURIER:
        raise UnsupportedKindError(f"the joint potential/field loss is only defined for the fourier kind, not {model.kind.value}")
    agg = _aggregate_batch(model, batch)
    phi, h = model.potential_and_field(agg, batch.points, with_field=joint)
    n = phi.size
    r_phi = phi - batch.potential
    value = float(np.sum(r_phi ** 2) / n)
    cot_h = None
    if joint:
        r_h = h - batch.field
        value += float(np.sum(r_h ** 2) / n)
        cot_h = 2.0 * r_h / n
    d_agg, trunk_grads = model.backward(agg, batch.points, 2.0 * r_phi / n, cot_h)
    hyper_grads, _ = mlp_backward(model.hyper, model.scaler.normalize(batch.features), d_agg[batch.owner])
    grads = hyper_grads.tensors()
    if trunk_grads is not None:
        grads += trunk_grads.tensors()
    return value, grads


def loss_potential(model: AmortizedModel, batch: TrainingBatch) -> float:
    """Mean squared potential error over the batch."""
    phi, _ = model.potential_and_field(_aggregate_batch(model, batch), batch.points, with_field=False)
    return float(np.mean((phi - batch.potential) ** 2))


def loss_field(model: AmortizedModel, batch: TrainingBatch) -> float:
    """Mean over samples of the squared field-vector error."""
    _, h = model.potential_and_field(_aggregate_batch(model, batch), batch.points)
    return float(np.sum((h - batch.field) ** 2) / batch.potential.size)


def loss_joint(model: AmortizedModel, batch: TrainingBatch) -> float:
    if model.kind is not ModelKind.FOURIER:
        raise UnsupportedKindError(f"the joint potential/field loss is only defined for the fourier kind, not {model.kind.value}")
    agg = _aggregate_batch(model, batch)
    phi, h = model.potential_and_field(agg, batch.points)
    n = batch.potential.size
    return float(np.sum((phi - batch.potential) ** 2) / n + np.sum((h - batch.field) ** 2) / n)


@dataclass
class TrainReport:
    kind: str
    seed: int
    loss_curve: List[float] = field(default_factory=list)
    lr_curve: List[float] = field(default_factory=list)
    stage_losses: List[Optional[float]] = field(default_factory=list)
    wall_time: float = 0.0
    metrics: Dict[str, ErrorMetrics] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "wall_time": self.wall_time,
            "stage_losses": self.stage_losses,
            "loss_curve": self.loss_curve,
            "lr_curve": self.lr_curve,
            "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
            "config": self.config,
        }

    def write_json(self, path: "str | Path") -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return out


def train(config: TrainConfig, dataset: Dataset, validation: Optional[Dict[str, Dataset]] = None) -> Tuple[AmortizedModel, TrainReport]:
    """Staged Adam schedule; Adam restarts at every stage."""
    rng = make_rng(config.seed)
    model = build_model(config.arch, dataset.config.domain, rng, dataset.config.moment_scale, seed=config.seed)
    corpus = _Corpus(dataset)
    report = TrainReport(config.kind.value, config.seed, config=config.to_dict())
    n_stages = len(config.log_lrs)
    Logger.info(f"Training {config.kind.value}: {model.hyper.n_params + (model.trunk.n_params if model.trunk else 0)} "
                f"parameters, {n_stages} stage(s) x {config.epochs_per_stage} epochs")
    initial: Optional[float] = None
    start = time.perf_counter()
    for stage, log_lr in enumerate(config.log_lrs, start=1):
        lr = 10.0 ** log_lr
        state = AdamState.init(model.trainable())
        Logger.step(stage, f"Stage {stage}/{n_stages}: lr=1e{log_lr:g}")
        for epoch in range(1, config.epochs_per_stage + 1):
            batch = corpus.sample(rng, config.batch_collections, config.points_per_step)
            value, grads = loss_and_grads(model, batch, config.loss)
            if not np.isfinite(value):
                raise DivergenceError(stage, epoch, value, "non-finite loss")
            if initial is None:
                initial = value
            elif value > DIVERGENCE_FACTOR * initial:
                raise DivergenceError(stage, epoch, value, f"loss exceeds {DIVERGENCE_FACTOR:g} x initial {initial:.3e}")
            try:
                params, state = adam_step(state, model.trainable(), grads, lr)
            except NumericalError as e:
                raise DivergenceError(stage, epoch, value, str(e))
            model = model.with_trainable(params)
            report.loss_curve.append(value)
            report.lr_curve.append(lr)
            if epoch % config.log_every == 0:
                Logger.info(f"  stage {stage} epoch {epoch}: loss={value:.4e} ({time.perf_counter() - start:.1f}s)")
        report.stage_losses.append(report.loss_curve[-1] if config.epochs_per_stage else None)
    report.wall_time = time.perf_counter() - start
    for name, ds in (validation or {}).items():
        report.metrics[name] = evaluate(model, ds)
        m = report.metrics[name]
        Logger.info(f"{name}: delta_phi={m.delta_phi:.4f} delta_h={m.delta_h:.4f}")
    Logger.success(f"Training finished in {report.wall_time:.1f}s")
    return model, report


def evaluate(model: AnyModel, dataset: Dataset) -> ErrorMetrics:
    """Infer every collection and pool the metrics over all samples."""
    if model.dim != dataset.config.dim:
        raise UnsupportedKindError(f"{model.dim}D model cannot evaluate a {dataset.config.dim}D dataset")
    preds = [infer_collection(model, col, s.locations) for col, s in zip(dataset.collections, dataset.samples)]
    return relative_errors(SampleBatch.concat(preds), SampleBatch.concat(dataset.samples))


@dataclass
class EnsembleReport:
    seeds: List[int]
    runs: List[Dict[str, ErrorMetrics]]
    mean: Dict[str, ErrorMetrics]
    std: Dict[str, ErrorMetrics]

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "runs": [{k: v.to_dict() for k, v in r.items()} for r in self.runs],
            "mean": {k: v.to_dict() for k, v in self.mean.items()},
            "std": {k: v.to_dict() for k, v in self.std.items()},
        }


def ensemble(config: TrainConfig, dataset: Dataset, n_runs: int, validation: Optional[Dict[str, Dataset]] = None,
             seeds: Optional[Sequence[int]] = None) -> EnsembleReport:
    """Independent runs; sample mean and standard deviation of final metrics."""
    if n_runs < 2:
        raise UsageError(f"an ensemble needs at least 2 runs, got {n_runs}")
    seeds = list(seeds) if seeds is not None else [config.seed + i for i in range(n_runs)]
    if len(seeds) != n_runs:
        raise UsageError(f"{len(seeds)} seeds given for {n_runs} runs")
    sets = validation or {"train": dataset}
    runs: List[Dict[str, ErrorMetrics]] = []
    for i, seed in enumerate(seeds):
        Logger.step(i + 1, f"Ensemble run {i + 1}/{n_runs} (seed {seed})")
        try:
            _, report = train(replace(config, seed=seed), dataset, sets)
        except FieldAmortError as e:
            e.args = (f"ensemble run {i} (seed {seed}): {e}",)
            raise
        runs.append(report.metrics)
    mean, std = {}, {}
    for name in sets:
        phi = np.array([r[name].delta_phi for r in runs])
        h = np.array([r[name].delta_h for r in runs])
        mean[name] = ErrorMetrics(float(phi.mean()), float(h.mean()))
        std[name] = ErrorMetrics(float(phi.std(ddof=1)), float(h.std(ddof=1)))
    return EnsembleReport(seeds, runs, mean, std)


@dataclass(frozen=True)
class FitConfig:
    """Single-collection fit of a plain FC network (no hypernetwork)."""

    target: str = "potential"
    width: int = FIT_WIDTH
    depth: int = FIT_DEPTH
    grid: int = FIT_GRID
    n_validation: int = FIT_GRID * FIT_GRID
    epochs: int = FIT_EPOCHS
    log_lrs: Tuple[float, ...] = (FIT_LOG_LR, FIT_LOG_LR - 1.0)
    n_sources: int = FIT_N_SOURCES
    eval_every: int = 1000
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.target not in ("potential", "field"):
            raise ConfigError("fit.target", f"must be potential or field, got {self.target!r}")
        if self.epochs < 0 or self.grid < 2 or self.eval_every < 1:
            raise ConfigError("fit", "epochs must be >= 0, grid >= 2 and eval_every >= 1")


@dataclass
class FitReport:
    target: str
    seed: int
    delta_phi: Optional[float] = None
    delta_grad_phi: Optional[float] = None
    delta_h: Optional[float] = None
    eval_epochs: List[int] = field(default_factory=list)
    curves: Dict[str, List[float]] = field(default_factory=dict)
    loss_curve: List[float] = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _fit_predict(net: MlpParams, target: str, scale: float, pts: np.ndarray) -> Tuple[Optional[np.ndarray], np.ndarray]:
    if target == "field":
        return None, scale * mlp_forward(net, pts)
    phi = scale * mlp_forward(net, pts)[:, 0]
    _, grad = mlp_backward(net, pts, np.ones((pts.shape[0], 1)))
    return phi, -scale * grad


def _fit_metrics(target: str, phi, h, truth: SampleBatch) -> Dict[str, float]:
    if target == "field":
        m = relative_errors(SampleBatch(truth.locations, truth.potential, h), truth)
        return {"delta_h": m.delta_h}
    m = relative_errors(SampleBatch(truth.locations, phi, h), truth)
    return {"delta_phi": m.delta_phi, "delta_grad_phi": m.delta_h}


def fit_collection(collection: SourceCollection, config: FitConfig) -> FitReport:
    """Fit potential (field read off its gradient) or the field directly on a regular grid."""
    rng = make_rng(config.seed)
    train_pts = sample_grid(collection.domain, config.grid)
    val_pts = rng.uniform(np.array(collection.domain.lo), np.array(collection.domain.hi),
                          size=(config.n_validation, collection.dim))
    truth_train = label_points(collection, train_pts)
    truth_val = label_points(collection, val_pts)
    out_dim = collection.dim if config.target == "field" else 1
    y = truth_train.field if config.target == "field" else truth_train.potential[:, None]
    scale = float(np.std(y)) or 1.0
    y = y / scale
    net = init_mlp([collection.dim] + [config.width] * config.depth + [out_dim], rng)
    report = FitReport(config.target, config.seed)
    n_stages = len(config.log_lrs)
    per_stage = [config.epochs // n_stages + (1 if i < config.epochs % n_stages else 0) for i in range(n_stages)]
    start = time.perf_counter()
    epoch = 0
    for stage, (log_lr, n_epochs) in enumerate(zip(config.log_lrs, per_stage), start=1):
        state = AdamState.init(net.tensors())
        for _ in range(n_epochs):
            epoch += 1
            resid = mlp_forward(net, train_pts) - y
            value = float(np.mean(np.sum(resid ** 2, axis=1)))
            if not np.isfinite(value):
                raise DivergenceError(stage, epoch, value, "non-finite loss")
            grads, _ = mlp_backward(net, train_pts, 2.0 * resid / resid.shape[0])
            params, state = adam_step(state, net.tensors(), grads.tensors(), 10.0 ** log_lr)
            net = net.replace_tensors(params)
            report.loss_curve.append(value)
            if epoch % config.eval_every == 0:
                for k, v in _fit_metrics(config.target, *_fit_predict(net, config.target, scale, val_pts), truth_val).items():
                    report.curves.setdefault(k, []).append(v)
                report.eval_epochs.append(epoch)
    report.wall_time = time.perf_counter() - start
    final = _fit_metrics(config.target, *_fit_predict(net, config.target, scale, val_pts), truth_val)
    for k, v in final.items():
        setattr(report, k, v)
    Logger.success(f"Fit ({config.target}) finished in {report.wall_time:.1f}s: "
                   + ", ".join(f"{k}={v:.4f}" for k, v in final.items()))
    return report


def fit_random_collection(config: FitConfig, domain: Optional[Box] = None) -> Tuple[SourceCollection, FitReport]:
    """The single-collection experiment on a random collection drawn from config.seed."""
    col = random_collection(make_rng(config.seed, stream=1), config.n_sources, domain or Box())
    return col, fit_collection(col, config)
