#!/usr/bin/env python3
"""fieldamort command line: gen-data, train, eval, bench, demo-1d, dump-field, fit."""

import argparse
import json
import sys
import traceback
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import bench, data, export, models, training
from .config import DEFAULT_CONFIG_PATH, FIT_EPOCHS, LOG_QUIET, RESULTS_DIR, load_config, section
from .errors import EXIT_IO, EXIT_OK, EXIT_UNEXPECTED, FieldAmortError, UnsupportedKindError, UsageError
from .numerics import make_rng
from .oracle import Box, SampleBatch, SourceCollection, label_points, relative_errors
from .utils.logger import Logger


def _timestamped(prefix: str, suffix: str) -> Path:
    return RESULTS_DIR / f"{prefix}_{datetime.now().strftime('%Y%m%d_%H%M%S')}{suffix}"


def _write_json(path: Path, doc: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
    return path


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    gen = data.DataGenConfig.from_dict(section(cfg, args.section), prefix=args.section, seed=args.seed,
                                       n_collections=args.n_collections)
    Logger.step(1, f"Generate {gen.n_collections} collections ({gen.sampling}, seed {gen.seed})")
    ds = data.generate(gen)
    Logger.step(2, f"Write dataset to {args.out}")
    data.save(ds, args.out)
    print("=" * 60)
    print("DATASET SUMMARY")
    print("=" * 60)
    print(f"Collections: {len(ds)}")
    print(f"Sources: {ds.n_sources}")
    print(f"Points per collection: {gen.points_per_collection}")
    print(f"Seed: {gen.seed}")
    print(f"Checksum: {ds.checksum()}")
    print("=" * 60)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    tc = training.TrainConfig.from_dict(section(cfg, "train"), desk_scale=args.desk_scale, kind=args.kind,
                                        seed=args.seed, epochs_per_stage=args.epochs, loss=args.loss)
    Logger.step(1, f"Load training data from {args.data}")
    ds = data.load(args.data)
    validation = {}
    if args.val_single:
        validation["single_source"] = data.load(args.val_single)
    if args.val_multi:
        if tc.kind is models.ModelKind.FC_INR:
            Logger.warning("FC INR does not superpose; skipping multi-source validation")
        else:
            validation["multi_source"] = data.load(args.val_multi)
    Logger.step(2, f"Train {tc.kind.value}{' (desk scale)' if args.desk_scale else ''}")
    model, report = training.train(tc, ds, validation)
    Logger.step(3, f"Write checkpoint and report to {args.out}")
    models.save_model(model, args.out)
    report.write_json(Path(args.out) / "train_report.json")
    print("=" * 60)
    print("TRAINING SUMMARY")
    print("=" * 60)
    for stage, (lr, loss) in enumerate(zip(tc.log_lrs, report.stage_losses), start=1):
        print(f"Stage {stage} (log lr {lr:g}): final loss {'n/a' if loss is None else f'{loss:.4e}'}")
    for name, m in report.metrics.items():
        print(f"{name}: delta_phi={100 * m.delta_phi:.2f}% delta_h={100 * m.delta_h:.2f}%")
    print(f"Wall time: {report.wall_time:.1f}s")
    print("=" * 60)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = models.load_model(args.ckpt)
    ds = data.load(args.data)
    multi = args.multi_source or ds.max_sources > 1
    if multi and model.kind == models.ModelKind.FC_INR:
        raise UnsupportedKindError("unsupported: FC INR does not superpose; it cannot be evaluated on multi-source collections")
    Logger.step(1, f"Evaluate {model.kind} checkpoint on {len(ds)} collections")
    metrics = training.evaluate(model, ds)
    doc = {"kind": str(getattr(model.kind, "value", model.kind)), "multi_source": multi, "n_collections": len(ds),
           **metrics.to_dict()}
    out = _write_json(Path(args.out) if args.out else _timestamped("eval", ".json"), doc)
    print(json.dumps(doc, indent=2))
    Logger.success(f"Metrics written to {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    sweep = bench.SweepConfig.from_dict(section(cfg, "bench"), seed=args.seed, repeats=args.repeats)
    model = models.load_model(args.ckpt)
    Logger.step(1, f"Sweep {len(sweep.sizes)} sizes, {sweep.repeats} repeats each")
    report = bench.run_sweep(model, sweep.sizes, sweep.repeats, sweep.seed, sweep.threads)
    cross = bench.crossover(report)
    out = Path(args.out)
    doc = report.to_dict()
    doc["crossover"] = {"found": cross.found, "message": cross.message, "contour": cross.contour}
    _write_json(out / "scaling.json", doc)
    export.write_scaling_csv(str(out / "scaling.csv"), report)
    Logger.success(f"Crossover: {cross.message}")
    Logger.success(f"Scaling report written to {out}")
    return EXIT_OK


def cmd_demo_1d(args) -> int:
    if args.sources < 1:
        raise UsageError(f"--sources must be at least 1, got {args.sources}")
    model = models.load_model(args.ckpt)
    if not isinstance(model, models.AmortizedModel) or model.kind is not models.ModelKind.FOURIER or model.dim != 1:
        raise UnsupportedKindError("demo-1d needs a 1D Fourier checkpoint")
    lo = model.scaler.center[0] - model.scaler.half_width[0]
    hi = model.scaler.center[0] + model.scaler.half_width[0]
    domain = Box((lo,), (hi,))
    rng = make_rng(args.seed, stream=1)
    col = data.random_collection(rng, args.sources, domain, model.scaler.moment_scale)
    xs = data.sample_grid(domain, args.points)[:, 0]
    truth = label_points(col, xs[:, None])
    pred = models.infer_collection(model, col, xs[:, None])
    outside = np.all([np.abs(xs - s.position) > s.radius for s in col.sources], axis=0)
    if outside.any():
        m = relative_errors(SampleBatch(xs[outside, None], pred.potential[outside], pred.field[outside]),
                            SampleBatch(xs[outside, None], truth.potential[outside], truth.field[outside]))
        Logger.info(f"{args.sources} sources: delta_phi={100 * m.delta_phi:.2f}% outside source interiors")
    path = export.write_demo_csv(args.out, xs, truth.potential, pred.potential)
    Logger.success(f"Demo curve written to {path}")
    return EXIT_OK


def cmd_dump_field(args) -> int:
    model = models.load_model(args.ckpt)
    col: SourceCollection = data.load_collection(args.collection)
    if col.dim != 2:
        raise UsageError("dump-field renders 2D collections")
    pts = data.sample_grid(col.domain, args.grid)
    truth = label_points(col, pts)
    pred = models.infer_collection(model, col, pts)
    out = Path(args.out)
    export.write_grid_csv(str(out / "truth.csv"), pts, truth.potential, truth.field)
    export.write_grid_csv(str(out / "model.csv"), pts, pred.potential, pred.field)
    n = args.grid
    quantities = {
        "phi": (truth.potential, pred.potential),
        "hnorm": (np.linalg.norm(truth.field, axis=1), np.linalg.norm(pred.field, axis=1)),
    }
    for name, (t, p) in quantities.items():
        lo, hi = float(np.min(t)), float(np.max(t))
        export.write_pgm(str(out / f"truth_{name}.pgm"), t.reshape(n, n), lo, hi)
        export.write_pgm(str(out / f"model_{name}.pgm"), p.reshape(n, n), lo, hi)
    Logger.success(f"Field grids ({n}x{n}) written to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    fc = training.FitConfig(target=args.target, epochs=args.epochs, seed=args.seed)
    Logger.step(1, f"Fit a {fc.width}x{fc.depth} network to one {fc.n_sources}-source collection ({fc.target})")
    col, report = training.fit_random_collection(fc)
    out = Path(args.out)
    data.save_collection(col, out / "collection.json")
    _write_json(out / f"fit_{fc.target}.json", report.to_dict())
    Logger.success(f"Fit report written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fieldamort", description="Amortized dipole field inference")
    parser.add_argument("--quiet", action="store_true", help="silence progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=str(DEFAULT_CONFIG_PATH), help="JSON run configuration")
        p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="silence progress output")
        p.set_defaults(handler=handler)
        return p

    p = add("gen-data", cmd_gen_data, "generate a labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--section", choices=["data", "validation"], default="data")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-collections", type=int)

    p = add("train", cmd_train, "train an amortized model")
    p.add_argument("--kind", choices=[k.value for k in models.ModelKind])
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--desk-scale", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, help="epochs per stage")
    p.add_argument("--loss", choices=list(training.LOSSES))
    p.add_argument("--val-single")
    p.add_argument("--val-multi")

    p = add("eval", cmd_eval, "evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--multi-source", action="store_true")
    p.add_argument("--out")

    p = add("bench", cmd_bench, "scaling sweep, exact vs amortized")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)

    p = add("demo-1d", cmd_demo_1d, "1D multi-source demonstration curve")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sources", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=512)

    p = add("dump-field", cmd_dump_field, "truth and model field grids as CSV and PGM")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--collection", required=True)
    p.add_argument("--grid", type=int, default=128)
    p.add_argument("--out", required=True)

    p = add("fit", cmd_fit, "single-collection fit of a plain FC network")
    p.add_argument("--out", required=True)
    p.add_argument("--target", choices=["potential", "field"], default="potential")
    p.add_argument("--epochs", type=int, default=FIT_EPOCHS)
    p.add_argument("--seed", type=int, default=0)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    Logger.quiet = args.quiet or LOG_QUIET
    try:
        return args.handler(args)
    except FieldAmortError as e:
        Logger.error(str(e))
        return e.exit_code
    except OSError as e:
        Logger.error(f"I/O error: {e}")
        return EXIT_IO
    except Exception as e:
        Logger.error(f"Unexpected error: {e}")
        Logger.error(f"  Error type: {type(e).__name__}")
        Logger.error(f"  Traceback: {traceback.format_exc()}")
        return EXIT_UNEXPECTED


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
