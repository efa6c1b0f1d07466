"""Command-line pipeline: synth, train, detect, eval, gradcheck.

Every subcommand is non-interactive, exits nonzero on failure, and writes
nothing when its inputs fail validation. MSCD_THREADS caps worker threads
(default 1, which guarantees bitwise-deterministic runs).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import gradcheck
from .baselines import cva, rcva
from .detector import apply_threshold, feature_magnitude, isodata_threshold, otsu_threshold
from .evaluate import evaluate, fcc_map
from .network import Architecture, SiameseCDModel, build_model
from .raster import load_raster, replicate_band, save_raster, standardize, to_decibels
from .synth import SynthSpec, generate_scene
from .tensor import Rng
from .trainer import (
    TrainConfig,
    config_from_mapping,
    override_config,
    parse_key_values,
    train,
    write_trace_csv,
)


class CliError(Exception):
    pass


def _load_optical(path):
    r = load_raster(path)
    if r.bands != 3:
        raise CliError(f"{path}: optical input must have 3 bands, got {r.bands}")
    return standardize(r)[0]


def _load_sar(path, db: bool):
    r = load_raster(path)
    if r.bands == 1:
        if db:
            r = to_decibels(r)
        r = replicate_band(r)
    elif r.bands == 3:
        if db:
            raise CliError(f"{path}: --sar-db expects a 1-band SAR input")
    else:
        raise CliError(f"{path}: SAR input must have 1 or 3 bands, got {r.bands}")
    return standardize(r)[0]


def _check_equal_dims(x1, z2):
    if (x1.rows, x1.cols) != (z2.rows, z2.cols):
        raise CliError(f"scene sizes differ: {x1.rows}x{x1.cols} vs {z2.rows}x{z2.cols}")


# -- train ---------------------------------------------------------------


def _train_setup(args) -> tuple[TrainConfig, Architecture]:
    kv = {}
    if args.config:
        with open(args.config) as f:
            kv = parse_key_values(f.read())
    cfg, arch_kwargs = config_from_mapping(kv)
    cfg = override_config(
        cfg,
        epochs=args.epochs,
        phase1_epochs=args.phase1_epochs,
        iters_per_batch=args.iters_per_batch,
        clusters=args.clusters,
        batch_size=args.batch_size,
        patch_rows=args.patch,
        patch_cols=args.patch,
        stride=args.stride,
        lr=args.lr,
        momentum=args.momentum,
        seed=args.seed,
    )
    for name in ("l1", "l2", "width"):
        if getattr(args, name) is not None:
            arch_kwargs[name] = getattr(args, name)
    if args.shared_projections:
        arch_kwargs["shared_projections"] = True
    arch = Architecture(k=cfg.clusters, **arch_kwargs)
    return cfg, arch


def cmd_train(args) -> int:
    cfg, arch = _train_setup(args)
    x1 = _load_optical(args.x1)
    z2 = _load_sar(args.z2, args.sar_db)
    _check_equal_dims(x1, z2)
    rng = Rng(cfg.seed)
    model = build_model(arch, rng)
    model, trace = train(model, x1, z2, cfg, rng=rng)
    model.save(args.out)
    trace_path = args.trace if args.trace else args.out + ".trace.csv"
    write_trace_csv(trace, trace_path)
    print(f"checkpoint: {args.out}")
    print(f"trace: {trace_path} ({len(trace)} iterations)")
    return 0


# -- detect --------------------------------------------------------------


def cmd_detect(args) -> int:
    if args.method == "deep" and not args.checkpoint:
        raise CliError("--method deep requires --checkpoint")
    x1 = _load_optical(args.x1)
    z2 = _load_sar(args.z2, args.sar_db)
    _check_equal_dims(x1, z2)
    if args.method == "deep":
        model = SiameseCDModel.load(args.checkpoint)
        g = feature_magnitude(model, x1, z2)
    elif args.method == "cva":
        g = cva(x1, z2)
    else:
        g = rcva(x1, z2, window=args.window)
    if args.threshold == "otsu":
        t = otsu_threshold(g)
    elif args.threshold == "isodata":
        t = isodata_threshold(g)
    else:
        try:
            t = float(args.threshold)
        except ValueError:
            raise CliError(f"--threshold must be 'otsu', 'isodata', or a number, "
                           f"got {args.threshold!r}") from None
    change_map = apply_threshold(g, t)
    save_raster(g, args.out_prefix + "G.rf32")
    save_raster(change_map, args.out_prefix + "map.pgm")
    print(t)
    return 0


# -- eval ----------------------------------------------------------------


def _fmt(value) -> str:
    return "na" if value is None else f"{value:.2f}"


def cmd_eval(args) -> int:
    pred = load_raster(args.pred)
    ref = load_raster(args.ref)
    report = evaluate(pred, ref)
    if args.fcc:
        save_raster(fcc_map(pred, ref), args.fcc)
    row = f"{_fmt(report.sensitivity)},{_fmt(report.specificity)}"
    if args.label:
        row = f"{args.label},{row}"
    print(row)
    return 0


# -- synth ---------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SynthSpec(
        rows=args.dims[0],
        cols=args.dims[1],
        n_classes=args.classes,
        change_fraction=args.change_fraction,
        speckle_looks=args.looks,
        seed=args.seed,
    )
    x1, z2, ref = generate_scene(spec)
    os.makedirs(args.out, exist_ok=True)
    save_raster(x1, os.path.join(args.out, "X1.rf32"))
    save_raster(z2, os.path.join(args.out, "Z2.rf32"))
    save_raster(ref, os.path.join(args.out, "ref.pgm"))
    with open(os.path.join(args.out, "synth.cfg"), "w") as f:
        f.write(f"rows = {spec.rows}\ncols = {spec.cols}\n"
                f"n_classes = {spec.n_classes}\nchange_fraction = {spec.change_fraction}\n"
                f"speckle_looks = {spec.speckle_looks}\nseed = {spec.seed}\n")
    print(args.out)
    return 0


# -- gradcheck -----------------------------------------------------------


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(seed=args.seed, seeds_per_op=args.seeds_per_op)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name} rel_err={res.rel_error:.3g}")
        failed += 0 if res.passed else 1
    return 1 if failed else 0


# -- parser --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mscd",
        description="Self-supervised optical/SAR change detection toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the two-branch model on one scene pair")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--x1", required=True, help="pre-change optical raster (3 bands)")
    p.add_argument("--z2", required=True, help="post-change SAR raster (1 band)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--trace", help="loss trace CSV path (default: <out>.trace.csv)")
    p.add_argument("--sar-db", action="store_true", help="apply 10*log10(x+1e-6) to the SAR input")
    p.add_argument("--epochs", type=int)
    p.add_argument("--phase1-epochs", type=int, dest="phase1_epochs")
    p.add_argument("--iters-per-batch", type=int, dest="iters_per_batch")
    p.add_argument("--clusters", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--patch", type=int, help="square patch size")
    p.add_argument("--stride", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--l1", type=int, help="projection depth per branch")
    p.add_argument("--l2", type=int, help="prediction head depth")
    p.add_argument("--width", type=int, help="hidden channel count")
    p.add_argument("--shared-projections", action="store_true", dest="shared_projections")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="produce a magnitude image and binary change map")
    p.add_argument("--method", choices=("deep", "cva", "rcva"), default="deep")
    p.add_argument("--checkpoint", help="trained model (required for --method deep)")
    p.add_argument("--x1", required=True)
    p.add_argument("--z2", required=True)
    p.add_argument("--out-prefix", required=True, dest="out_prefix",
                   help="writes <prefix>G.rf32 and <prefix>map.pgm")
    p.add_argument("--threshold", default="otsu", help="otsu | isodata | <number>")
    p.add_argument("--window", type=int, default=3, help="rcva search window (odd)")
    p.add_argument("--sar-db", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="sensitivity/specificity of a map vs a reference")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--fcc", help="write a false-color comparison .ppm")
    p.add_argument("--label", help="prefix the printed CSV row with this method label")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic optical/SAR scene pair")
    p.add_argument("--dims", type=int, nargs=2, required=True, metavar=("ROWS", "COLS"))
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--change-fraction", type=float, default=0.05, dest="change_fraction")
    p.add_argument("--looks", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds-per-op", type=int, default=20, dest="seeds_per_op")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
