"""Command line entry point.

Subcommands: prepare, train, render, eval, traits, synth, pbr. Every command
writes into an output directory and records what it produced in
``artifacts.json`` there.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import zipfile
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DatasetError, ParseError, SplatError
from .evaluate import (eval_images, evaluate_views, format_eval_report, mask_keep, summarize)
from .io.colmap import load_colmap_text
from .io.images import save_alpha16, save_rgba
from .io.manifest import Manifest, load_dataset, manifest_from_colmap
from .io.ply import export_ply, import_ply, load_scene
from .metrics import trait_summary
from .optim.config import MODES, TrainConfig
from .optim.trainer import Trainer, fit, initial_scene
from .render.raster import render
from .synth import SynthSpec, generate_dataset, generate_scene, plant_batch, write_dataset
from .traits.pipeline import TraitConfig, extract_traits
from .traits.report import CSV_COLUMNS, write_csv

log = logging.getLogger("plantsplat")

CONFIG_SECTIONS = ("train", "traits", "synth")
TRUTH_COLUMNS = ("plant_id", "height_cm", "width1_cm", "width2_cm")
TRAITS = ("height_cm", "width1_cm", "width2_cm")


# config and run-directory plumbing

def load_config_file(path):
    """YAML tree with optional ``train``, ``traits`` and ``synth`` sections."""
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"invalid YAML: {getattr(exc, 'problem', exc)}", path=path,
                         line=mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = sorted(set(data) - set(CONFIG_SECTIONS))
    if unknown:
        raise ConfigError(f"{path}: unknown sections {', '.join(unknown)}")
    for key, value in data.items():
        if value is not None and not isinstance(value, dict):
            raise ConfigError(f"{path}: section {key!r} must be a mapping")
    return {k: dict(v or {}) for k, v in data.items()}


def train_config(args, **overrides):
    d = dict(args.config_data.get("train", {}))
    if args.seed is not None:
        d["seed"] = args.seed
    if args.mode is not None:
        d["mode"] = args.mode
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(d)


def trait_config(args, **overrides):
    d = dict(args.config_data.get("traits", {}))
    if args.seed is not None:
        d["seed"] = args.seed
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TraitConfig.from_dict(d)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def record_artifacts(out_dir, command, paths):
    """Merge ``paths`` into the run directory's artifact index."""
    out_dir = Path(out_dir)
    index_path = out_dir / "artifacts.json"
    index = {}
    if index_path.is_file():
        try:
            index = json.loads(index_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            index = {}
    entries = []
    for p in paths:
        p = Path(p)
        entries.append({"path": os.path.relpath(p, out_dir), "bytes": p.stat().st_size,
                        "sha256": _sha256(p)})
    index[command] = sorted(entries, key=lambda e: e["path"])
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return index_path


def set_threads(threads):
    if threads is None:
        return
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    import numba
    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


def emit(rows, header=None, out=None):
    """Tab-delimited output to stdout."""
    out = out or sys.stdout
    if header:
        out.write("\t".join(header) + "\n")
    for r in rows:
        out.write("\t".join(str(v) for v in r) + "\n")


# checkpoints

def _save_arrays(path, arrays):
    """npz-compatible archive with fixed timestamps so equal state gives
    equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.asarray(arrays[name]), allow_pickle=False)


def checkpoint_paths(stem):
    stem = str(stem)
    if stem.endswith(".ply"):
        stem = stem[:-4]
    return Path(stem + ".ply"), Path(stem + ".state.npz"), Path(stem + ".json")


def save_checkpoint(trainer, ckpt_dir):
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ply, state, meta = checkpoint_paths(ckpt_dir / f"ckpt_{trainer.iteration:06d}")
    export_ply(trainer.scene, ply)
    _save_arrays(state, trainer.state_dict())
    info = {
        "iteration": trainer.iteration,
        "extent": trainer.extent,
        "config": trainer.config.to_dict(),
        "rng_state": trainer.rng.bit_generator.state,
        "view_queue": [int(v) for v in trainer._view_queue],
    }
    meta.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [ply, state, meta]


def load_checkpoint(stem, config):
    """Trainer restored from a checkpoint; ``config`` may raise the
    iteration budget."""
    ply, state, meta = checkpoint_paths(stem)
    for p in (ply, state, meta):
        if not p.is_file():
            raise DatasetError(f"checkpoint file missing: {p}")
    scene = load_scene(ply)
    info = json.loads(meta.read_text(encoding="utf-8"))
    rng = np.random.default_rng()
    rng.bit_generator.state = info["rng_state"]
    trainer = Trainer(scene, config, info["extent"], rng)
    with np.load(state) as z:
        trainer.load_state_dict({k: z[k] for k in z.files})
    trainer._view_queue = list(info["view_queue"])
    return trainer


# subcommands

def cmd_prepare(args):
    out = Path(args.out)
    colmap_dir = Path(args.colmap)
    if not colmap_dir.is_dir():
        raise DatasetError(f"COLMAP directory not found: {colmap_dir}")
    image_dir = Path(args.images)
    if not image_dir.is_dir():
        raise DatasetError(f"image directory not found: {image_dir}")
    model = load_colmap_text(colmap_dir)
    if len(model.images) < 2:
        raise DatasetError(f"need at least 2 posed images, found {len(model.images)}")
    missing = [im.name for im in model.images if not (image_dir / im.name).is_file()]
    if missing:
        raise DatasetError(f"{len(missing)} posed images missing from {image_dir}, "
                           f"e.g. {missing[0]}")
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    m = manifest_from_colmap(model, args.factor, seed, args.train_fraction,
                             os.path.relpath(image_dir.resolve(), out.resolve()),
                             os.path.relpath(colmap_dir.resolve(), out.resolve()))
    path = out / "manifest.json"
    m.save(path)
    record_artifacts(out, "prepare", [path])
    n_train = len(m.split_names("train"))
    emit([(str(path), n_train, len(m.frames) - n_train)], ("manifest", "train", "test"))
    return 0


def cmd_train(args):
    from .plotting import plot_loss_curve

    config = train_config(args, iterations=args.iterations,
                          checkpoint_every=args.checkpoint_every)
    dataset, manifest = load_dataset(args.manifest, need_masks=config.masked,
                                     threads=args.threads)
    out = Path(args.out)
    ckpt_dir = out / "checkpoints"
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        trainer = load_checkpoint(args.resume, config)
        log.info("resuming at iteration %d", trainer.iteration)
    else:
        rng = np.random.default_rng(config.seed)
        trainer = Trainer(initial_scene(dataset, config, rng), config,
                          dataset.scene_extent(), rng)
    produced = []

    def on_checkpoint(tr):
        produced.extend(save_checkpoint(tr, ckpt_dir))

    eval_rows = []

    def on_eval(tr):
        if dataset.test:
            s = summarize(evaluate_views(tr.scene, dataset.test))
            eval_rows.append((tr.iteration, s["psnr"], s["ssim"]))

    log_path = out / "train_log.tsv"
    mode = "a" if args.resume and log_path.is_file() else "w"
    with open(log_path, mode, encoding="utf-8") as fh:
        result = fit(dataset, config, trainer, on_checkpoint, on_eval if args.eval_every else None,
                     args.eval_every or 0, fh)
    # always leave a checkpoint for the final iteration
    if not any(p.name == f"ckpt_{trainer.iteration:06d}.ply" for p in produced):
        produced.extend(save_checkpoint(trainer, ckpt_dir))
    final = out / "scene.ply"
    export_ply(result.scene, final)
    produced += [final, log_path]
    if eval_rows:
        ev = out / "eval_log.tsv"
        with open(ev, "w", encoding="utf-8") as fh:
            emit(eval_rows, ("iteration", "psnr", "ssim"), fh)
        produced.append(ev)
    if result.log:
        fig = plot_loss_curve([r.iteration for r in result.log], [r.loss for r in result.log],
                              out / "loss_curve.png", [r.splats for r in result.log])
        produced.append(Path(fig))
    record_artifacts(out, "train", produced)
    first = result.log[0].loss if result.log else float("nan")
    last = result.log[-1].loss if result.log else float("nan")
    emit([(trainer.iteration, len(result.scene), f"{first:.6f}", f"{last:.6f}",
           f"{result.wall_time:.2f}", str(final))],
         ("iteration", "splats", "first_loss", "final_loss", "seconds", "scene"))
    return 0


def _views(dataset, split):
    if split == "train":
        return dataset.train
    if split == "test":
        return dataset.test
    return dataset.train + dataset.test


def cmd_render(args):
    scene = load_scene(args.checkpoint)
    dataset, _ = load_dataset(args.manifest, need_masks=False, threads=args.threads)
    views = _views(dataset, args.split)
    if not views:
        raise DatasetError(f"no views in split {args.split!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bg = tuple(args.background)
    produced, rows = [], []
    for v in views:
        r = render(scene, v.camera, bg)
        stem = Path(v.name).stem
        rgb_path, a_path = out / f"{stem}.png", out / f"{stem}.alpha.png"
        save_rgba(rgb_path, r.rgb)
        save_alpha16(a_path, r.alpha_acc)
        produced += [rgb_path, a_path]
        rows.append((v.name, str(rgb_path), str(a_path)))
    record_artifacts(out, "render", produced)
    emit(rows, ("view_id", "rgb", "alpha"))
    return 0


def _eval_report(scene, dataset, out, command, features=None, mask_prediction=True,
                 header=(), figure=True):
    from .plotting import plot_eval_views

    if not dataset.test:
        raise DatasetError("manifest has no test split")
    rows = evaluate_views(scene, dataset.test, mask_prediction, features)
    header = list(header) + [
        f"prediction: {'masked' if mask_prediction else 'unmasked'} render on black",
        "target: ground truth times mask",
    ]
    if features is not None:
        prov = Path(features) / "provenance.txt"
        header.append("lpips features: " + (prov.read_text(encoding="utf-8").strip()
                                            if prov.is_file() else str(features)))
    text = format_eval_report(rows, header)
    out.mkdir(parents=True, exist_ok=True)
    report = out / f"{command}_report.tsv"
    report.write_text(text, encoding="utf-8")
    produced = [report]
    if figure:
        pairs = [eval_images(scene, v, mask_prediction) for v in dataset.test]
        fig = plot_eval_views([Path(v.name).stem for v in dataset.test],
                              [p for p, _ in pairs], [t for _, t in pairs],
                              [(r.psnr, r.ssim) for r in rows], out / f"{command}_views.png")
        produced.append(Path(fig))
    sys.stdout.write(text)
    return rows, produced


def cmd_eval(args):
    scene = load_scene(args.checkpoint)
    dataset, _ = load_dataset(args.manifest, need_masks=True, threads=args.threads)
    out = Path(args.out)
    _, produced = _eval_report(scene, dataset, out, "eval", args.features,
                               not args.unmasked_prediction,
                               [f"checkpoint: {args.checkpoint}"], not args.no_figure)
    record_artifacts(out, "eval", produced)
    return 0


def cmd_pbr(args):
    """Evaluate a full-scene model with masks applied afterwards and export a
    cloud pruned by mask reprojection."""
    scene = load_scene(args.checkpoint)
    dataset, _ = load_dataset(args.manifest, need_masks=True, threads=args.threads)
    out = Path(args.out)
    _, produced = _eval_report(scene, dataset, out, "pbr", args.features, True,
                               [f"checkpoint: {args.checkpoint}",
                                "background removed after training with the dataset masks"],
                               not args.no_figure)
    views = dataset.train + dataset.test
    keep = mask_keep(scene.positions, views)
    raw_idx = np.flatnonzero(scene.opacities >= args.opacity_min)
    kept_idx = np.flatnonzero(keep & (scene.opacities >= args.opacity_min))
    raw_path, pruned_path = out / "cloud_raw.ply", out / "cloud_pruned.ply"
    export_ply(scene.positions[raw_idx].astype(np.float64), raw_path)
    export_ply(scene.positions[kept_idx].astype(np.float64), pruned_path)
    scene_path = out / "scene_pruned.ply"
    export_ply(scene.subset(np.flatnonzero(keep)), scene_path)
    produced += [raw_path, pruned_path, scene_path]
    record_artifacts(out, "pbr", produced)
    emit([(len(raw_idx), len(kept_idx), int(keep.sum()), len(scene))],
         ("raw_points", "pruned_points", "kept_splats", "total_splats"))
    return 0


def _read_truth(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRUTH_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"ground-truth CSV lacks columns {', '.join(missing)}", path=path)
        truth = {}
        for line, row in enumerate(reader, start=2):
            try:
                truth[row["plant_id"]] = {k: float(row[k]) for k in TRAITS}
            except ValueError:
                raise ParseError("non-numeric trait value", path=path, line=line) from None
    return truth


def _traits_for(path, config, plant_id, centers):
    content = import_ply(path)
    source = content.scene if content.is_scene else content.points
    return extract_traits(source, config, plant_id, centers)


def cmd_traits(args):
    from .plotting import plot_trait_scatter

    up = tuple(args.up_axis) if args.up_axis else None
    config = trait_config(args, up_axis=up, up_mode=args.up_mode, eps=args.eps,
                          min_pts=args.min_pts, opacity_min=args.opacity_min)
    centers = None
    if args.manifest:
        m = Manifest.load(args.manifest)
        centers = np.array([m.camera_view(f, 1).center for f in m.frames])
    src = Path(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = sorted(src.glob("*.ply")) if src.is_dir() else [src]
    if not inputs:
        raise DatasetError(f"no PLY files in {src}")
    reports, produced, failures = [], [], []
    for path in inputs:
        try:
            rep = _traits_for(path, config, path.stem, centers)
        except SplatError as exc:
            if len(inputs) == 1:
                raise
            log.error("%s: %s", path.name, exc)
            failures.append((path.stem, exc))
            continue
        txt = out / f"{path.stem}.traits.txt"
        txt.write_text(rep.to_text(), encoding="utf-8")
        produced.append(txt)
        reports.append(rep)
    csv_path = out / "traits.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        write_csv(reports, fh)
    produced.append(csv_path)
    emit([[r.csv_row()[c] for c in CSV_COLUMNS] for r in reports], CSV_COLUMNS)
    if args.truth:
        truth = _read_truth(args.truth)
        matched = [r for r in reports if r.plant_id in truth]
        if not matched:
            raise DatasetError("no reported plant matches the ground-truth CSV")
        rows, y_all, yh_all = [], {}, {}
        for t in TRAITS:
            y = [truth[r.plant_id][t] for r in matched]
            y_hat = [getattr(r, t) for r in matched]
            y_all[t.replace("_cm", "")], yh_all[t.replace("_cm", "")] = y, y_hat
            s = trait_summary(y, y_hat)
            rows.append((t, len(y), repr(s["r2"]), repr(s["rmse"]), repr(s["mape"]),
                         repr(s["mae"]), repr(s["accuracy"])))
        head = ("trait", "n", "r2", "rmse_cm", "mape_pct", "mae_cm", "accuracy_pct")
        agg = out / "traits_metrics.tsv"
        with open(agg, "w", encoding="utf-8") as fh:
            emit(rows, head, fh)
        sys.stdout.write("\n")
        emit(rows, head)
        produced += [agg, Path(plot_trait_scatter(y_all, yh_all, out / "trait_scatter.png"))]
    record_artifacts(out, "traits", produced)
    return 5 if failures else 0


def _synth_spec(args):
    d = dict(args.config_data.get("synth", {}))
    if args.spec:
        text = Path(args.spec).read_text(encoding="utf-8")
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ParseError(f"invalid spec file: {exc}", path=args.spec) from None
        if not isinstance(loaded, dict):
            raise ConfigError("spec file must hold a mapping")
        d.update(loaded)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.clutter:
        d["clutter"] = True
    return d


def cmd_synth(args):
    d = _synth_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.plants:
        seed = d.pop("seed", 0)
        for k in ("height_cm", "width1_cm", "width2_cm"):
            d.pop(k, None)
        specs = plant_batch(args.plants, seed, **d)
        plant_dir = out / "plants"
        plant_dir.mkdir(exist_ok=True)
        produced, rows = [], []
        for i, spec in enumerate(specs):
            pid = f"plant_{i:02d}"
            path = plant_dir / f"{pid}.ply"
            export_ply(generate_scene(spec).scene, path)
            produced.append(path)
            rows.append((pid, repr(spec.height_cm), repr(spec.width1_cm), repr(spec.width2_cm)))
        truth = out / "truth.csv"
        with open(truth, "w", encoding="utf-8") as fh:
            emit(rows, TRUTH_COLUMNS, _CsvOut(fh))
        produced.append(truth)
        record_artifacts(out, "synth", produced)
        emit(rows, TRUTH_COLUMNS)
        return 0
    spec = SynthSpec.from_dict(d)
    data = generate_dataset(spec)
    manifest = write_dataset(data, out)
    produced = [p for p in sorted(out.rglob("*")) if p.is_file() and p.name != "artifacts.json"]
    record_artifacts(out, "synth", produced)
    n_train = data.split.count("train")
    emit([(str(manifest), len(data.views), n_train, len(data.views) - n_train)],
         ("manifest", "frames", "train", "test"))
    return 0


class _CsvOut:
    """Adapter so ``emit`` writes comma-separated rows."""

    def __init__(self, fh):
        self.fh = fh

    def write(self, text):
        self.fh.write(text.replace("\t", ","))


# parser

def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="YAML config file")
    parser.add_argument("--seed", type=int, default=default)
    parser.add_argument("--threads", type=int, default=default,
                        help="worker threads (default: all cores)")
    parser.add_argument("--mode", choices=MODES, default=default)
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plantsplat",
        description="Object-centric Gaussian splatting and plant trait extraction")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="build a dataset manifest")
    p.add_argument("images", help="directory of RGBA PNG frames")
    p.add_argument("colmap", help="COLMAP text export directory")
    p.add_argument("out", help="output directory")
    p.add_argument("--factor", type=int, default=4, help="downsample factor")
    p.add_argument("--train-fraction", type=float, default=0.6)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="optimize a scene")
    p.add_argument("manifest")
    p.add_argument("out", help="run directory")
    p.add_argument("--iterations", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--resume", help="checkpoint to continue from (.ply path)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", parents=[common], help="render views of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("out")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--background", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    p.set_defaults(func=cmd_render)

    for name, func, help_ in (("eval", cmd_eval, "score held-out views"),
                              ("pbr", cmd_pbr, "score with masks applied after training")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("checkpoint")
        p.add_argument("manifest")
        p.add_argument("out")
        p.add_argument("--features", help="directory of precomputed LPIPS feature stacks")
        p.add_argument("--no-figure", action="store_true")
        if name == "eval":
            p.add_argument("--unmasked-prediction", action="store_true",
                           help="score the raw render instead of render times mask")
        else:
            p.add_argument("--opacity-min", type=float, default=0.5)
        p.set_defaults(func=func)

    p = sub.add_parser("traits", parents=[common], help="measure plant traits")
    p.add_argument("input", help="scene or point-cloud PLY, or a directory of them")
    p.add_argument("out")
    p.add_argument("--truth", help="CSV with plant_id,height_cm,width1_cm,width2_cm")
    p.add_argument("--manifest", help="camera poses for --up-mode cube")
    p.add_argument("--up-axis", type=float, nargs=3)
    p.add_argument("--up-mode", choices=("fixed", "cube"))
    p.add_argument("--eps", type=float)
    p.add_argument("--min-pts", type=int)
    p.add_argument("--opacity-min", type=float)
    p.set_defaults(func=cmd_traits)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("out")
    p.add_argument("--spec", help="YAML or JSON scene description")
    p.add_argument("--clutter", action="store_true", help="add background clutter")
    p.add_argument("--plants", type=int, default=0,
                   help="write this many ground-truth plant scenes and truth.csv instead")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.config_data = load_config_file(args.config)
        set_threads(args.threads)
        return args.func(args)
    except SplatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
