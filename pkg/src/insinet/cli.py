"""Command-line entry point: ``insinet <command> [options]``.

Every command works inside one run directory,
``<run root>/<name>/{config, checkpoints, reports, plots, logs, data}``, where
the run root is ``--out``, the config's ``out`` key, ``$INSINET_RUN_ROOT`` or
``runs`` (first one set wins).

Exit codes: 0 ok, 1 unexpected failure, 2 usage or config error,
3 invalid geometry, 4 invalid or missing input, 5 shape or contract
violation, 6 training divergence, 7 gradient check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .benchmarks import (BenchmarkSuite, generate_neighborhood_benchmark, generate_scale_benchmark,
                         generate_target_size_benchmark, misregister_suite)
from .config import RunConfig, RunDir
from .data import DatasetManifest, prepare_dataset, split_dataset
from .evaluation import (ablation_table, evaluate_set, misregistration_evaluate, reference_gains,
                         ring_evaluate, run_ablation, scale_evaluate, target_size_evaluate)
from .exceptions import ConfigError, GradientCheckError, IncompleteInputError, INSINetError
from .gradcheck import gradient_check
from .nn.model import INSINet
from .plots import PLOT_KINDS, emit_plot
from .profiling import profile_model
from .synthetic import synthesize_scene
from .training import Checkpoint, predict, train

log = logging.getLogger("insinet")

COMMANDS = ("synth", "prepare", "split", "bench-neigh", "bench-scale", "bench-misreg",
            "train", "eval", "predict", "ablate", "profile", "gradcheck", "plot")


# -- helpers ----------------------------------------------------------------------

def _need_file(path: Path, hint: str) -> Path:
    if not path.exists():
        raise IncompleteInputError(f"{path} not found; run `{hint}` first")
    return path


def _read_scene(run: RunDir):
    d = run.scene_dir
    t1 = io.read_png(_need_file(d / "t1.png", "synth"))
    t2 = io.read_png(_need_file(d / "t2.png", "synth"))
    label = io.read_png(_need_file(d / "label.png", "synth"))
    return t1, t2, (label > 0).astype(np.uint8)


def _split(run: RunDir, name: str) -> DatasetManifest:
    return DatasetManifest.read(_need_file(run.split_manifest(name), "split"))


def _checkpoint(run: RunDir, args) -> Checkpoint:
    path = Path(args.checkpoint) if getattr(args, "checkpoint", None) else run.checkpoint
    return Checkpoint.load(_need_file(path, "train"))


def _write_report(run: RunDir, name: str, report: dict) -> Path:
    path = io.write_json(run.report(name), report)
    log.info("wrote %s", path)
    return path


# -- commands ------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, run: RunDir, args) -> None:
    w = args.width or args.size or cfg.scene.width
    h = args.height or args.size or cfg.scene.height
    seed = cfg.stage_seed("synth")
    t1, t2, label = synthesize_scene(seed, w, h, cfg.scene.params())
    d = run.scene_dir
    io.write_png(d / "t1.png", t1)
    io.write_png(d / "t2.png", t2)
    io.write_label_png(d / "label.png", label)
    io.write_json(d / "scene.json", {"seed": seed, "width": w, "height": h,
                                     "changed_fraction": float(label.mean())})
    print(f"scene {w}x{h} seed {seed}: {100 * label.mean():.2f}% changed -> {d}")


def cmd_prepare(cfg: RunConfig, run: RunDir, args) -> None:
    t1, t2, label = _read_scene(run)
    stride = args.stride if args.stride is not None else cfg.data.stride
    manifest = prepare_dataset(t1, t2, label, cfg.data.tile_size, stride, run.dataset_dir,
                               scene_id="scene", seed=cfg.seed)
    print(f"{len(manifest)} samples of {cfg.data.tile_size}px -> {run.dataset_dir}")


def cmd_split(cfg: RunConfig, run: RunDir, args) -> None:
    manifest = DatasetManifest.read(_need_file(run.dataset_dir / "manifest.jsonl", "prepare"))
    parts = split_dataset(manifest, cfg.data.ratios, cfg.stage_seed("split"))
    for m in parts:
        m.save(run.split_manifest(m.split))
    print("split " + ", ".join(f"{m.split}={len(m)}" for m in parts))


def cmd_train(cfg: RunConfig, run: RunDir, args) -> None:
    tc = cfg.train
    overrides = {k: v for k, v in (("epochs", args.epochs), ("max_steps", args.max_steps)) if v is not None}
    if overrides:
        tc = replace(tc, **overrides)
    train_set = _split(run, "train")
    val_path = run.split_manifest("val")
    val_set = DatasetManifest.read(val_path) if val_path.exists() and not args.no_val else None
    log_path = run.logs / "train.jsonl"
    if log_path.exists():
        log_path.unlink()
    t0 = time.perf_counter()
    ckpt, report = train(cfg.network, train_set, val_set, tc, log_path, run.checkpoint)
    summary = {"kind": "train", "epochs_run": len(report.epoch_loss), "best_epoch": ckpt.epoch,
               "best_val_f1": ckpt.best_val_f1, "seconds": time.perf_counter() - t0,
               **report.to_dict()}
    _write_report(run, "train", summary)
    print(f"trained {len(report.step_loss)} steps, final loss {report.step_loss[-1]:.4f}, "
          f"best val F1 {ckpt.best_val_f1}")


def cmd_eval(cfg: RunConfig, run: RunDir, args) -> None:
    ckpt = _checkpoint(run, args)
    data = DatasetManifest.read(args.manifest) if args.manifest else _split(run, args.split)
    counts, rep = evaluate_set(ckpt, data)
    report = {"kind": "eval", "split": data.split, "n_samples": len(data),
              "counts": counts.to_dict(), "metrics": rep.to_dict()}
    _write_report(run, "eval", report)
    print(" ".join(f"{k}={v:.4f}" for k, v in rep.to_dict().items() if isinstance(v, float)))


def cmd_predict(cfg: RunConfig, run: RunDir, args) -> None:
    ckpt = _checkpoint(run, args)
    if args.manifest:
        data = DatasetManifest.read(args.manifest)
    elif args.split == "all":
        data = DatasetManifest.read(_need_file(run.dataset_dir / "manifest.jsonl", "prepare"))
    else:
        data = _split(run, args.split)
    samples = list(data)
    out = predict(ckpt, samples, stitch=args.stitch)
    pred_dir = run.reports / "predictions"
    files = []
    for s, p in zip(samples, out["predictions"]):
        path = pred_dir / f"{s.meta.get('sample_id', len(files))}.png"
        io.write_png(path, p * np.uint8(255))
        files.append(str(path.relative_to(run.path)))
    for scene_id, scene_map in out["scenes"].items():
        path = pred_dir / f"{scene_id}_stitched.png"
        io.write_png(path, scene_map.astype(np.uint8) * np.uint8(255))
        files.append(str(path.relative_to(run.path)))
    _write_report(run, "predict", {"kind": "predict", "n_samples": len(samples), "files": files})
    print(f"{len(files)} prediction maps -> {pred_dir}")


def _maybe_checkpoint(run: RunDir, args) -> Checkpoint | None:
    if args.no_eval:
        return None
    path = Path(args.checkpoint) if args.checkpoint else run.checkpoint
    if not path.exists():
        log.warning("no checkpoint at %s; benchmark generated without scoring", path)
        return None
    return Checkpoint.load(path)


def cmd_bench_neigh(cfg: RunConfig, run: RunDir, args) -> None:
    t1, t2, label = _read_scene(run)
    suite = generate_neighborhood_benchmark(t1, t2, label, cfg.data.tile_size, cfg.stage_seed("bench"),
                                            cfg.bench.n_regions, run.bench_dir("neighborhood"))
    print(f"neighborhood benchmark: {sum(1 for _ in suite.sets())} sets")
    ckpt = _maybe_checkpoint(run, args)
    if ckpt is not None:
        scores = ring_evaluate(ckpt, suite, cfg.eval.metric)
        _write_report(run, "ring", scores.to_dict())
        print("ring " + " ".join(f"{k}={v:.4f}" for k, v in scores.scores.items()))


def cmd_bench_scale(cfg: RunConfig, run: RunDir, args) -> None:
    test = list(_split(run, "test"))
    scale = generate_scale_benchmark(test, cfg.bench.factors, run.bench_dir("scale"))
    sizes = generate_target_size_benchmark(test, cfg.bench.size_thresholds, cfg.bench.factors,
                                           run.bench_dir("target_size"))
    print(f"scale benchmark: {len(test)} samples x {len(scale.groups['scale'])} factors")
    ckpt = _maybe_checkpoint(run, args)
    if ckpt is not None:
        scores = scale_evaluate(ckpt, scale, cfg.eval.metric)
        _write_report(run, "scale", scores.to_dict())
        _write_report(run, "target_size", target_size_evaluate(ckpt, sizes, cfg.eval.metric))
        print("scale " + " ".join(f"{k}x={v:.4f}" for k, v in scores.scores.items()))


def cmd_bench_misreg(cfg: RunConfig, run: RunDir, args) -> None:
    src = run.bench_dir("neighborhood")
    _need_file(src / "suite.json", "bench-neigh")
    registered = BenchmarkSuite.read(src)
    shift = tuple(args.shift) if args.shift else tuple(cfg.bench.shift)
    shifted = misregister_suite(registered, shift, run.bench_dir("misregistration"))
    print(f"misregistered benchmark with shift {shift}")
    ckpt = _maybe_checkpoint(run, args)
    if ckpt is not None:
        report = misregistration_evaluate(ckpt, registered, shifted, cfg.eval.metric)
        _write_report(run, "misregistration", report)
        print("delta " + " ".join(f"{k}={v:+.4f}" for k, v in report["delta"].items()))


def cmd_ablate(cfg: RunConfig, run: RunDir, args) -> None:
    tc = cfg.train
    if args.epochs is not None or args.max_steps is not None:
        tc = replace(tc, epochs=args.epochs or tc.epochs, max_steps=args.max_steps)
    train_set = list(_split(run, "train"))
    test_set = list(_split(run, "test"))
    rows = run_ablation(cfg.network, train_set, test_set, tc, profile_size=args.input_size)
    table = ablation_table(rows)
    _write_report(run, "ablation", {"kind": "ablation", "rows": [r.to_dict() for r in rows],
                                    "reference_gains": reference_gains()})
    (run.reports / "ablation.txt").write_text(table + "\n")
    print(table)


def cmd_profile(cfg: RunConfig, run: RunDir, args) -> None:
    model = _checkpoint(run, args).build_model() if args.checkpoint else INSINet(cfg.network)
    report = profile_model(model, args.input_size)
    d = report.to_dict()
    _write_report(run, "profile", {"kind": "profile", **d})
    print(f"Params (M) {report.params_m:.4f}  MACs (G) {report.macs_g:.4f}  at {report.input_size}px")


def cmd_gradcheck(cfg: RunConfig, run: RunDir, args) -> None:
    report = gradient_check(seed=cfg.seed, min_total=args.coords, tolerance=args.tolerance)
    _write_report(run, "gradcheck", {"kind": "gradcheck", **report.to_dict()})
    print(f"max relative error {report.max_rel_error:.3g} over {len(report.checks)} coordinates")
    if not report.passed:
        raise GradientCheckError(f"failing groups: {', '.join(report.failing_groups)}")


def cmd_plot(cfg: RunConfig, run: RunDir, args) -> None:
    if args.report:
        report = io.read_json(_need_file(Path(args.report), "eval"))
        kind = args.kind or (report.get("kind") if isinstance(report, dict) else None)
        out = Path(args.output) if args.output else run.plots / f"{kind}.png"
        emit_plot(report, out, kind)
        print(f"wrote {out}")
        return
    written = []
    for kind in PLOT_KINDS:
        path = run.report(kind)
        if path.exists():
            written.append(emit_plot(io.read_json(path), run.plots / f"{kind}.png", kind))
    if not written:
        raise IncompleteInputError(f"no plottable reports in {run.reports}")
    for p in written:
        print(f"wrote {p}")


HANDLERS = {
    "synth": cmd_synth, "prepare": cmd_prepare, "split": cmd_split,
    "bench-neigh": cmd_bench_neigh, "bench-scale": cmd_bench_scale, "bench-misreg": cmd_bench_misreg,
    "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "ablate": cmd_ablate,
    "profile": cmd_profile, "gradcheck": cmd_gradcheck, "plot": cmd_plot,
}


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run config")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", help="run root directory")
    common.add_argument("--name", help="run name (overrides the config)")
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                        help="force deterministic torch kernels")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="insinet", description="Change detection pipeline: data, training, benchmarks, plots.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, description=help_)

    p = add("synth", "generate a synthetic bitemporal scene")
    p.add_argument("--size", type=int, help="square scene side")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)

    p = add("prepare", "tile the scene into samples with neighborhoods")
    p.add_argument("--stride", type=int)

    add("split", "split the dataset into train/val/test")

    p = add("train", "train on the train split, keeping the best validation F1")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--no-val", action="store_true", help="ignore the val split")

    for name, help_ in (("eval", "score a checkpoint on a split"),
                        ("predict", "write change maps for a split")):
        p = add(name, help_)
        p.add_argument("--checkpoint")
        if name == "predict":
            p.add_argument("--split", default="all", choices=("all", "train", "val", "test"),
                           help="'all' is the whole prepared scene (needed for --stitch)")
        else:
            p.add_argument("--split", default="test", choices=("train", "val", "test"))
        p.add_argument("--manifest", help="manifest file instead of a split")
        if name == "predict":
            p.add_argument("--stitch", action="store_true", help="also stitch whole-scene maps")

    for name, help_ in (("bench-neigh", "build and score the neighborhood ring benchmark"),
                        ("bench-scale", "build and score the scale and target-size benchmarks"),
                        ("bench-misreg", "build and score the misregistered ring benchmark")):
        p = add(name, help_)
        p.add_argument("--checkpoint")
        p.add_argument("--no-eval", action="store_true", help="only generate the benchmark")
        if name == "bench-misreg":
            p.add_argument("--shift", type=int, nargs=2, metavar=("ROWS", "COLS"))

    p = add("ablate", "train and score the five cumulative component rows")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--input-size", type=int, help="side used for Params/MACs")

    p = add("profile", "count Params and MACs")
    p.add_argument("--checkpoint")
    p.add_argument("--input-size", type=int)

    p = add("gradcheck", "finite-difference gradient check on the tiny config")
    p.add_argument("--coords", type=int, default=50)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = add("plot", "draw charts from reports")
    p.add_argument("--report", help="a single report file (default: every report in the run)")
    p.add_argument("--kind", choices=PLOT_KINDS)
    p.add_argument("--output")
    return parser


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.name:
        cfg = replace(cfg, name=args.name)
    return cfg.resolved(seed=args.seed, deterministic=args.deterministic, out=args.out)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        run = cfg.run_dir().create()
        run.write_config(cfg)
        io.append_jsonl(run.logs / "commands.jsonl",
                        {"command": args.command, "argv": list(argv if argv is not None else sys.argv[1:]),
                         "time": time.time()})
        HANDLERS[args.command](cfg, run, args)
    except ConfigError as exc:
        print(f"insinet {args.command}: config error: {exc}", file=sys.stderr)
        return exc.exit_code
    except INSINetError as exc:
        print(f"insinet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
