"""Command-line entry point: ``sscd <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import DatasetError, NetpbmError
from .evaluate import change_probability, change_scores, pipeline_predictions, semantic_predictions, semantic_report
from .gradsuite import format_report, run_suite
from .metrics import ConfusionMatrix, accumulate_confusion, miou_from_confusion
from .networks import CheckpointError, EncoderConfig, load_weights, parse_key_values, with_max_disp
from .synthesis import AugmentConfig, synthesize_dataset
from .train import TrainConfig, TrainingDiverged, select_fold, toy_config, train

log = logging.getLogger("sscd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_tuple(text):
    return tuple(int(v) for v in str(text).replace(",", " ").split())


# training flags: name -> (type, help); values also accepted from --config files
TRAIN_FIELDS = {
    "batch_size": (int, "minibatch size"),
    "iterations": (int, "optimizer steps"),
    "lr": (float, "Adam learning rate"),
    "fold": (int, "hold out this fold of a k-fold split"),
    "folds": (int, "number of folds"),
    "split_seed": (int, "seed of the k-fold permutation"),
    "stage_widths": (_int_tuple, "encoder widths, e.g. 16,32,64,128"),
    "blocks_per_stage": (int, "conv blocks per encoder stage"),
    "batchnorm": (int, "1 to use batch norm, 0 to disable"),
    "upsample": (str, "nearest or bilinear"),
    "max_disp": (int, "correlation displacement radius (cd, csscd)"),
    "num_classes": (int, "semantic classes K including no-change (sscd, csscd)"),
    "augment": (int, "1 enables morphological mask augmentation (sscd)"),
    "kernel_min": (int, "smallest augmentation kernel"),
    "kernel_max": (int, "largest augmentation kernel"),
    "crop": (int, "patch crop size (cd, csscd)"),
    "out_size": (int, "patch output size (cd, csscd)"),
    "crops_per_image": (int, "sliding windows per pair (cd, csscd)"),
    "rotations": (_int_tuple, "rotations in degrees, e.g. 0,90,180,270"),
}


def _add_train_flags(p):
    p.add_argument("data", help="dataset directory")
    p.add_argument("--out", required=True, help="run directory for checkpoints and manifest")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="key=value file; explicit flags win")
    p.add_argument("--preset", choices=("toy", "full"), default="toy")
    for name, (typ, help_) in TRAIN_FIELDS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None, help=help_)


def _resolve(args, task):
    """Merge preset defaults, config file values and explicit flags."""
    values = {}
    if args.config:
        try:
            raw = parse_key_values(Path(args.config).read_text())
        except OSError as exc:
            raise DatasetError([f"{args.config}: {exc}"]) from exc
        for key, text in raw.items():
            if key == "seed":
                continue
            if key not in TRAIN_FIELDS:
                raise UsageError(f"{args.config}: unknown key {key!r}")
            try:
                values[key] = TRAIN_FIELDS[key][0](text)
            except ValueError as exc:
                raise UsageError(f"{args.config}: bad value for {key}: {text!r}") from exc
    for key in TRAIN_FIELDS:
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)

    base = toy_config(task, args.seed, num_classes=values.get("num_classes", 4))
    enc = EncoderConfig.toy() if args.preset == "toy" else EncoderConfig.full()
    enc = type(enc)(
        stage_widths=values.get("stage_widths", enc.stage_widths),
        blocks_per_stage=values.get("blocks_per_stage", enc.blocks_per_stage),
        use_batchnorm=bool(values.get("batchnorm", enc.use_batchnorm)),
    )
    model_kw = {"encoder": enc, "upsample": values.get("upsample", base.model.upsample)}
    if task != "cd":
        model_kw["num_classes"] = values.get("num_classes", 4 if args.preset == "toy" else 11)
    model = type(base.model)(**model_kw)
    if task != "sscd" and "max_disp" in values:
        model = with_max_disp(model, values["max_disp"])
    augment = AugmentConfig(
        enabled=bool(values.get("augment", 0)),
        kernel_min=values.get("kernel_min", 1),
        kernel_max=values.get("kernel_max", 20),
    )
    if args.preset == "full":
        defaults = TrainConfig(task=task, seed=args.seed)
        batch, iters = defaults.batch_size, defaults.iterations
    else:
        batch, iters = base.batch_size, base.iterations
    cfg = TrainConfig(
        task=task,
        seed=args.seed,
        model=model,
        batch_size=values.get("batch_size", batch),
        iterations=values.get("iterations", iters),
        lr=values.get("lr", 2e-4),
        augment=augment,
        fold=values.get("fold"),
        folds=values.get("folds", 5),
        split_seed=values.get("split_seed", 0),
    )
    patch = {
        "crop": values.get("crop"),
        "out": values.get("out_size", 64 if args.preset == "toy" else 256),
        "crops_per_image": values.get("crops_per_image", 1 if args.preset == "toy" else 30),
        "rotations": values.get("rotations", (0,) if args.preset == "toy" else dataio.DEFAULT_ROTATIONS),
    }
    return cfg, patch


def _patch_set(pairs, patch):
    crop = patch["crop"]
    if crop is None:
        crop = min(min(p.shape) for p in pairs)
    return dataio.extract_patches(
        pairs, crop=crop, out=patch["out"], crops_per_image=patch["crops_per_image"], rotations=patch["rotations"]
    )


def _log_loss(every):
    def fn(it, value):
        if it == 1 or it % every == 0:
            log.info("iter %d loss %.6f", it, value)

    return fn


def _run_training(args, task):
    cfg, patch = _resolve(args, task)
    if task == "sscd":
        data = dataio.read_tuples(args.data)
        data, _ = select_fold(data, cfg)
    else:
        pairs = dataio.read_pairs(args.data, require_labels=(task == "csscd"))
        pairs, _ = select_fold(pairs, cfg)
        data = _patch_set(pairs, patch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train.cfg").write_text(cfg.as_text())
    res = train(data, cfg, out_dir=out, dataset_hash=dataio.dataset_hash(args.data),
                log=_log_loss(max(1, cfg.iterations // 100)))
    print(f"trained {cfg.kind} for {cfg.iterations} iterations; final loss {res.losses[-1]:.6f}")
    print(f"checkpoint: {res.checkpoints[-1]}")
    return EXIT_OK


# subcommands ---------------------------------------------------------------


def cmd_toygen(args):
    out = Path(args.out)
    if args.kind == "pairs":
        for i in range(args.count):
            scene = dataio.generate_toy_scene_pair(args.seed * 100_003 + i, args.size, args.classes, shift=args.shift)
            dataio.write_pair(out, scene.as_pair(f"{i:04d}"))
    else:
        dataio.write_seg_dataset(out, dataio.toy_segmentation_set(args.count, args.seed, args.size, args.classes))
    print(f"wrote {args.count} toy {args.kind} to {out}")
    return EXIT_OK


def cmd_synthesize(args):
    segs = dataio.read_seg_dataset(args.seg_dir) if args.count else []
    samples = synthesize_dataset(segs, args.count, n_max=args.n_max, seed=args.seed)
    dataio.write_tuples(args.out_dir, samples)
    print(f"wrote {len(samples)} tuples to {args.out_dir}")
    return EXIT_OK


def cmd_patches(args):
    pairs = dataio.read_pairs(args.pairs_dir)
    ps = dataio.extract_patches(
        pairs, crop=args.crop, out=args.out_size, crops_per_image=args.crops_per_image, rotations=args.rotations
    )
    ps.write_manifest(args.manifest)
    print(f"{len(ps)} patches from {len(pairs)} pairs; manifest at {args.manifest}")
    return EXIT_OK


def cmd_train_cd(args):
    return _run_training(args, "cd")


def cmd_train_sscd(args):
    return _run_training(args, "sscd")


def cmd_train_csscd(args):
    return _run_training(args, "csscd")


def _eval_items(path, mode):
    """Images, masks and labels of an evaluation set as stacked arrays."""
    root = Path(path)
    if (root / "tuples").is_dir():
        items = dataio.read_tuples(root)
        ids = [f"{i:05d}" for i in range(len(items))]
        L1 = np.stack([t.L1p for t in items])
        L2 = np.stack([t.L2p for t in items])
    else:
        items = dataio.read_pairs(root, require_labels=(mode != "cd"))
        ids = [p.pair_id for p in items]
        L1 = np.stack([p.L1 for p in items]) if mode != "cd" else None
        L2 = np.stack([p.L2 for p in items]) if mode != "cd" else None
    I1 = np.stack([it.I1 for it in items])
    I2 = np.stack([it.I2 for it in items])
    M = np.stack([it.M for it in items])
    return ids, I1, I2, M, L1, L2


def _select(ids, arrays, args):
    if args.fold is None:
        return ids, arrays
    splits = dataio.kfold_split(len(ids), args.folds, args.split_seed)
    keep = splits[args.fold][1]
    return [ids[i] for i in keep], [None if a is None else a[keep] for a in arrays]


def _overlay(image, mask):
    rgb = dataio.netpbm.image_to_bytes(image).astype(np.float64)
    red = np.array([255.0, 0.0, 0.0])
    rgb[mask.astype(bool)] = 0.5 * rgb[mask.astype(bool)] + 0.5 * red
    return rgb.astype(np.uint8)


def cmd_eval(args):
    expected = {"cd": ["cscdnet"], "sscd": ["sscdnet"], "csscd": ["csscdnet"], "pipeline": ["cscdnet", "sscdnet"]}
    kinds = expected[args.mode]
    if len(args.checkpoint) != len(kinds):
        raise UsageError(f"mode {args.mode} needs {len(kinds)} checkpoint(s): {' then '.join(kinds)}")
    models = [load_weights(path, expected_kind=kind).eval() for path, kind in zip(args.checkpoint, kinds)]
    ids, I1, I2, M, L1, L2 = _eval_items(args.dataset, args.mode)
    ids, (I1, I2, M, L1, L2) = _select(ids, (I1, I2, M, L1, L2), args)
    out = Path(args.out)
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    per_image = []

    if args.mode == "cd":
        prob = change_probability(models[0], I1, I2)
        report, rows = change_scores(prob, M, args.tau)
        pred = (prob >= args.tau).astype(np.uint8)
        for pid, s in zip(ids, rows):
            per_image += [f"{pid},precision,{s.precision:.6f}", f"{pid},recall,{s.recall:.6f}",
                          f"{pid},f1,{s.f1:.6f}", f"{pid},iou,{s.iou:.6f}"]
        for pid, img, m in zip(ids, I1, pred):
            dataio.write_rgb(_overlay(img, m), out / "overlays" / f"{pid}_change.ppm")
    else:
        model = models[-1]
        if args.mode == "sscd":
            P1, P2 = semantic_predictions(model, I1, I2, M)
        elif args.mode == "csscd":
            P1, P2 = semantic_predictions(model, I1, I2)
        else:
            (P1, P2), est = pipeline_predictions(models[0], model, I1, I2, args.tau)
            report_cd, _ = change_scores(change_probability(models[0], I1, I2), M, args.tau)
        k = model.config.num_classes
        report = semantic_report(P1, P2, L1, L2, k)
        if args.mode == "pipeline":
            report.precision, report.recall, report.f1 = report_cd.precision, report_cd.recall, report_cd.f1
        palette = dataio.default_palette(k)
        for i, pid in enumerate(ids):
            cm = ConfusionMatrix(k)
            accumulate_confusion(cm, P1[i], L1[i])
            accumulate_confusion(cm, P2[i], L2[i])
            per_image.append(f"{pid},miou,{miou_from_confusion(cm).miou:.6f}")
            both = np.concatenate([dataio.colorize(P1[i], palette), dataio.colorize(P2[i], palette)], axis=1)
            dataio.write_rgb(both, out / "overlays" / f"{pid}_semantic.ppm")

    report.write(out / "report.csv")
    (out / "per_image.csv").write_text("".join(line + "\n" for line in per_image))
    print("\n".join(report.lines()))
    return EXIT_OK


def cmd_gradcheck(args):
    results = run_suite(seeds=args.seeds, h=args.step, tolerance=args.tolerance)
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def build_parser():
    parser = _Parser(prog="sscd", description="Scene change detection and semantic change labeling.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("toygen", help="render toy scene pairs or segmentation samples")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--shift", type=int, default=0, help="horizontal viewpoint shift of the second image")
    p.add_argument("--kind", choices=("pairs", "seg"), default="pairs")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toygen)

    p = sub.add_parser("synthesize", help="build semantic-change tuples from a segmentation dataset")
    p.add_argument("seg_dir")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--n-max", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("patches", help="write the patch manifest of a pair dataset")
    p.add_argument("pairs_dir")
    p.add_argument("--manifest", required=True)
    p.add_argument("--crop", type=int, default=224)
    p.add_argument("--out-size", type=int, default=256)
    p.add_argument("--crops-per-image", type=int, default=30)
    p.add_argument("--rotations", type=_int_tuple, default=dataio.DEFAULT_ROTATIONS)
    p.set_defaults(func=cmd_patches)

    for name, func in (("train-cd", cmd_train_cd), ("train-sscd", cmd_train_sscd), ("train-csscd", cmd_train_csscd)):
        p = sub.add_parser(name, help=f"train ({name[6:]})")
        _add_train_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate checkpoints on a dataset")
    p.add_argument("dataset")
    p.add_argument("--mode", choices=("cd", "sscd", "pipeline", "csscd"), required=True)
    p.add_argument("--checkpoint", action="append", required=True, help="repeat for pipeline mode: cd then sscd")
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--fold", type=int)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sscd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"sscd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, NetpbmError, CheckpointError, ValueError, KeyError, OSError) as exc:
        print(f"sscd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
