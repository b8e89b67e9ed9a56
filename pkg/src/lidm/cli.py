"""``lidm`` command-line entry point.

Exit codes: 0 success, 1 invalid configuration, 2 I/O error, 3 malformed
file, 4 training divergence, 5 checkpoint mismatch, 6 insufficient data.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io as _io
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from lidm import io
from lidm.codec import PointCloud, project_with_stats, unproject, unproject_float32
from lidm.config import RunConfig, load_config
from lidm.errors import CheckpointError, ConfigError, DataError, DivergenceError, FormatError

logger = logging.getLogger("lidm")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_FORMAT, EXIT_DIVERGENCE, EXIT_CHECKPOINT, EXIT_DATA = 0, 1, 2, 3, 4, 5, 6


def _emit(pairs) -> None:
    for k, v in pairs:
        print(f"{k}={v}")


def _fmt(x: float) -> str:
    return repr(float(x))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _lri_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: not a directory")
    return sorted(d.glob("*.lri"))


def _load_images(directory):
    files = _lri_files(directory)
    return files, [io.read_lri(f) for f in files]


def _ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    seed = getattr(args, "seed", None)
    return cfg.with_overrides(seed=seed)


# --- synth -----------------------------------------------------------------

def cmd_synth(args) -> int:
    from lidm.synth import make_random_scene, raycast_labels, scene_seed

    cfg = _config(args).with_overrides(beams=args.beams)
    sensor = cfg.sensor()
    out = _ensure_dir(args.out)
    params = cfg.scene_params()
    manifest = []
    for i in range(args.count):
        scene = make_random_scene(scene_seed(cfg.seed, i), params)
        img, labels = raycast_labels(scene, sensor, params.depth_jitter)
        path = out / f"scene_{i:05d}.lri"
        io.write_lri(path, img)
        manifest.append(f"{path.name} {_sha256(path)}")
        if args.bin:
            io.write_bin(out / f"scene_{i:05d}.bin", PointCloud(unproject_float32(img)[0].astype(np.float64)))
        if args.labels:
            buf = _io.BytesIO()
            np.save(buf, labels.astype(np.uint8))
            io.atomic_write(out / f"scene_{i:05d}.labels.npy", buf.getvalue())
    io.atomic_write(out / "manifest.txt", "".join(line + "\n" for line in manifest).encode())
    _emit([("count", args.count), ("height", sensor.height), ("width", sensor.width), ("seed", cfg.seed),
           ("out", out)])
    return EXIT_OK


# --- convert ---------------------------------------------------------------

def cmd_convert(args) -> int:
    cfg = _config(args).with_overrides(beams=args.beams)
    src = Path(args.inp)
    if not src.exists():
        raise FileNotFoundError(f"{src}: no such file or directory")
    files = [src] if src.is_file() else sorted(src.glob("*.bin" if args.to == "lri" else "*.lri"))
    out = _ensure_dir(args.out)
    totals = {"out_of_fov": 0, "degenerate": 0, "clamped": 0, "collisions": 0}
    for f in files:
        if args.to == "lri":
            cloud = io.read_bin(f)
            img, stats = project_with_stats(cloud, cfg.sensor())
            io.write_lri(out / (f.stem + ".lri"), img)
            kept = int(img.mask.sum())
            collisions = len(cloud) - stats.dropped - kept
            totals["out_of_fov"] += stats.dropped_out_of_fov
            totals["degenerate"] += stats.dropped_degenerate
            totals["clamped"] += stats.clamped
            totals["collisions"] += collisions
            print(f"file={f.name} points={len(cloud)} pixels={kept} out_of_fov={stats.dropped_out_of_fov} "
                  f"degenerate={stats.dropped_degenerate} clamped={stats.clamped} collisions={collisions}")
        else:
            img = io.read_lri(f)
            points, inexact = unproject_float32(img)
            io.write_bin(out / (f.stem + ".bin"), PointCloud(points.astype(np.float64)))
            print(f"file={f.name} points={len(points)} inexact={inexact}")
    _emit([("files", len(files)), *((f"total_{k}", v) for k, v in totals.items())])
    return EXIT_OK


# --- training --------------------------------------------------------------

def _write_csv(path: Path, history: dict, keys) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", *keys])
    for i in range(len(history[keys[0]])):
        writer.writerow([i, *(repr(history[k][i]) for k in keys)])
    io.atomic_write(path, buf.getvalue().encode())


def _dump_diagnostics(path: Path, trainer, exc) -> None:
    lines = [f"error={exc}", f"step={trainer.step}"]
    for k, v in trainer.history.items():
        lines.append(f"last_{k}={v[-5:]}")
    io.atomic_write(path.with_suffix(".diag.txt"), ("\n".join(lines) + "\n").encode())


def cmd_train_ae(args) -> int:
    from lidm.compression.train import LOSS_KEYS, AETrainer, images_to_tensor

    cfg = _config(args)
    files, images = _load_images(args.data)
    if not images:
        raise DataError(f"{args.data}: no .lri files")
    sensor = images[0].config
    if any(img.config != sensor for img in images):
        raise DataError("dataset mixes sensor configurations")
    out = Path(args.out)
    if args.resume:
        trainer = AETrainer.load(args.resume)
        if trainer.cfg != cfg.compression() or trainer.sensor != sensor or trainer.seed != cfg.seed:
            raise CheckpointError(f"{args.resume}: configuration, sensor or seed differs from this run")
    else:
        trainer = AETrainer(cfg.compression(), sensor, cfg.seed)
    try:
        trainer.run(images_to_tensor(images), args.steps, log_every=cfg.log_every)
    except DivergenceError as exc:
        _dump_diagnostics(out, trainer, exc)
        raise
    trainer.save(out)
    _write_csv(Path(args.csv) if args.csv else out.with_suffix(".csv"), trainer.history, list(LOSS_KEYS))
    last = {k: v[-1] for k, v in trainer.history.items()} if trainer.step else {}
    _emit([("steps", trainer.step), ("scenes", len(images)), ("checkpoint", out),
           *((f"final_{k}", _fmt(v)) for k, v in last.items())])
    return EXIT_OK


def _match_conditions(files, cond_dir, kind: str, num_classes: int, ae_cfg):
    from lidm.diffusion import encode_condition_map

    d = Path(cond_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: not a directory")
    out = []
    for f in files:
        stem = f.name[:-len(f.suffix)]
        if kind == "map":
            cands = [d / f"{stem}.labels.npy", d / f"{stem}.npy"]
            path = next((c for c in cands if c.exists()), None)
            if path is None:
                raise DataError(f"no condition map for {f.name} in {d}")
            out.append(encode_condition_map(np.load(path), num_classes, ae_cfg.f_c, ae_cfg.f_p))
        else:
            path = d / f"{stem}.tok"
            if not path.exists():
                raise DataError(f"no token file for {f.name} in {d}")
            out.append(torch.from_numpy(io.read_tokens(path)))
    if kind == "tokens" and len({t.shape for t in out}) != 1:
        raise DataError("token files differ in shape; training batches need equal token counts")
    return torch.stack(out)


def cmd_train_dm(args) -> int:
    from lidm import checkpoint
    from lidm.compression.train import AE_KIND
    from lidm.diffusion.train import DMTrainer

    cfg = _config(args)
    files, images = _load_images(args.data)
    if not images:
        raise DataError(f"{args.data}: no .lri files")
    out = Path(args.out)
    if args.resume:
        trainer = DMTrainer.load(args.resume)
        if trainer.cfg != cfg.diffusion() or trainer.seed != cfg.seed:
            raise CheckpointError(f"{args.resume}: configuration or seed differs from this run")
    else:
        if not args.ae:
            raise ConfigError("--ae is required unless resuming")
        trainer = DMTrainer(checkpoint.load(args.ae, AE_KIND), cfg.diffusion(), cfg.seed)
    ctx = None
    mode = trainer.cfg.condition_mode
    if mode == "concat_image":
        if not args.cond_map:
            raise ConfigError("condition_mode=concat_image needs --cond-map")
        ctx = _match_conditions(files, args.cond_map, "map", cfg.num_classes, trainer.ae.cfg)
    elif mode == "cross_attention_tokens":
        if not args.cond_tokens:
            raise ConfigError("condition_mode=cross_attention_tokens needs --cond-tokens")
        ctx = _match_conditions(files, args.cond_tokens, "tokens", 0, trainer.ae.cfg)
    z0, ctx = trainer.prepare(images, ctx)
    try:
        trainer.run(z0, args.steps, ctx, log_every=cfg.log_every)
    except DivergenceError as exc:
        _dump_diagnostics(out, trainer, exc)
        raise
    trainer.save(out)
    _write_csv(Path(args.csv) if args.csv else out.with_suffix(".csv"), trainer.history, ["loss"])
    _emit([("steps", trainer.step), ("scenes", len(images)), ("latent_std", _fmt(trainer.latent_std)),
           ("checkpoint", out)] + ([("final_loss", _fmt(trainer.history["loss"][-1]))] if trainer.step else []))
    return EXIT_OK


# --- sampling --------------------------------------------------------------

def cmd_sample(args) -> int:
    from lidm import checkpoint
    from lidm.diffusion import encode_condition_map
    from lidm.diffusion.train import DM_KIND, DMTrainer

    trainer = DMTrainer.from_state(checkpoint.load(args.checkpoint, DM_KIND))
    mode = trainer.cfg.condition_mode
    ctx = None
    if args.cond_map:
        if mode != "concat_image":
            raise CheckpointError(f"checkpoint condition mode is {mode!r}; --cond-map needs concat_image")
        maps = sorted(Path(args.cond_map).glob("*.npy"))
        if not maps:
            raise DataError(f"{args.cond_map}: no .npy condition maps")
        if len(maps) not in (1, args.count):
            raise DataError(f"{len(maps)} condition maps for {args.count} samples; give 1 or --count")
        k = trainer.cfg.condition_channels
        ctx = torch.stack([encode_condition_map(np.load(m), k, trainer.ae.cfg.f_c, trainer.ae.cfg.f_p)
                           for m in maps])
    elif args.cond_tokens:
        if mode != "cross_attention_tokens":
            raise CheckpointError(f"checkpoint condition mode is {mode!r}; --cond-tokens needs token mode")
        tokens = io.read_tokens(args.cond_tokens)
        if tokens.shape[1] != trainer.cfg.token_dim:
            raise CheckpointError(f"token dim {tokens.shape[1]} differs from checkpoint's {trainer.cfg.token_dim}")
        ctx = torch.from_numpy(tokens)[None]
    elif mode == "concat_image":
        raise ConfigError("this checkpoint is conditioned on semantic maps; pass --cond-map")
    out = _ensure_dir(args.out)
    images = trainer.generate(args.count, steps=args.steps, eta=args.eta, ctx=ctx, seed=args.seed,
                              sampler=args.sampler)
    for i, img in enumerate(images):
        img.validate()
        io.write_lri(out / f"sample_{i:05d}.lri", img)
    _emit([("count", len(images)), ("sampler", args.sampler or trainer.cfg.sampler), ("steps", args.steps),
           ("eta", args.eta), ("seed", args.seed), ("out", out)])
    return EXIT_OK


# --- evaluation ------------------------------------------------------------

def _subsample(points: np.ndarray, n: int, seed: int, index: int) -> np.ndarray:
    if not n or len(points) <= n:
        return points
    rng = np.random.default_rng([seed, index])
    return points[np.sort(rng.choice(len(points), n, replace=False))]


def cmd_eval(args) -> int:
    from lidm import metrics
    from lidm.metrics.extractors import DEFAULT_EXTRACTOR

    cfg = _config(args)
    partitions = args.partitions if args.partitions is not None else cfg.partitions
    agg = args.agg or cfg.agg
    ref_files = _lri_files(args.ref)
    gen_files = _lri_files(args.gen)
    pairs = [("metric", args.metric)]
    if args.metric in ("frid", "fsvd", "fpvd"):
        name = args.extractor or DEFAULT_EXTRACTOR[args.metric]
        kwargs = {"voxel_size": cfg.voxel_size} if name in ("toy-voxel", "toy-pointvoxel") else {}
        extractor = metrics.get_extractor(name, external=args.external, **kwargs)
        ref = metrics.set_stats(ref_files, extractor, partitions, agg, cache=args.stats_cache)
        gen = metrics.set_stats(gen_files, extractor, partitions, agg)
        for label, s in (("ref", ref), ("gen", gen)):
            for path, err in s.errors.items():
                print(f"error_{label}={path}: {err}", file=sys.stderr)
            if s.stats is None:
                raise DataError(f"{label} set has {s.usable} usable scene(s); at least 2 are required")
        d2, clamp = metrics.frechet_report(ref.stats, gen.stats)
        pairs += [("value", _fmt(d2)), ("ref_count", ref.stats.n), ("gen_count", gen.stats.n),
                  ("feature_dim", ref.stats.dim), ("extractor", name), ("partitions", partitions),
                  ("agg", agg), ("eigen_clamp", _fmt(clamp)),
                  ("ref_errors", len(ref.errors)), ("gen_errors", len(gen.errors))]
    else:
        ref_clouds = [unproject(io.read_lri(f)) for f in ref_files]
        gen_clouds = [unproject(io.read_lri(f)) for f in gen_files]
        if not ref_clouds or not gen_clouds:
            raise DataError("both --ref and --gen need at least one .lri file")
        if args.metric == "jsd":
            value = metrics.jsd(ref_clouds, gen_clouds)
        elif args.metric == "mmd":
            value = metrics.mmd(ref_clouds, gen_clouds)
        else:
            if len(ref_clouds) != len(gen_clouds):
                raise DataError(f"{args.metric} pairs scenes by sorted name; got {len(ref_clouds)} and "
                                f"{len(gen_clouds)} files")
            vals = []
            for i, (a, b) in enumerate(zip(ref_clouds, gen_clouds)):
                pa = _subsample(a.points, args.subsample, cfg.seed, i)
                pb = _subsample(b.points, args.subsample, cfg.seed, i)
                if args.metric == "cd":
                    vals.append(metrics.chamfer(pa, pb))
                else:
                    n = min(len(pa), len(pb))
                    vals.append(metrics.emd(pa[:n], pb[:n], approximate=args.approximate))
            value = float(np.mean(vals))
        pairs += [("value", _fmt(value)), ("ref_count", len(ref_clouds)), ("gen_count", len(gen_clouds))]
    _emit(pairs)
    return EXIT_OK


def cmd_curves(args) -> int:
    from lidm.curves import CurveCloud, curve_stats, extract_curves

    src = Path(args.inp)
    files = [src] if src.is_file() else _lri_files(src)
    curves = []
    width = 0
    for f in files:
        cc = extract_curves(io.read_lri(f))
        curves.extend(cc.curves)
        width = cc.width
    print(f"files={len(files)}")
    print(curve_stats(CurveCloud(curves, width)).report())
    return EXIT_OK


def cmd_bench(args) -> int:
    from lidm.bench import run_benchmarks

    _emit(run_benchmarks(quick=args.quick, checkpoint=args.checkpoint, count=args.count, steps=args.steps))
    return EXIT_OK


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lidm", description="Range-image latent diffusion toolkit")
    p.add_argument("--workers", type=int, default=1, help="torch threads; 1 gives bit-stable output")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="key = value run configuration file")
        if seed:
            sp.add_argument("--seed", type=int)

    sp = sub.add_parser("synth", help="raycast random synthetic scenes")
    common(sp)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--beams", type=int, choices=(32, 64))
    sp.add_argument("--out", required=True)
    sp.add_argument("--labels", action="store_true", help="also write per-pixel label maps (.labels.npy)")
    sp.add_argument("--bin", action="store_true", help="also export each scene as a .bin point file")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("convert", help="convert between .bin point files and LRI1 range images")
    common(sp, seed=False)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--to", choices=("lri", "bin"), required=True)
    sp.add_argument("--beams", type=int, choices=(32, 64))
    sp.set_defaults(func=cmd_convert)

    for name, func, help_ in (("train-ae", cmd_train_ae, "train the autoencoder"),
                              ("train-dm", cmd_train_dm, "train the latent diffusion model")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--data", required=True, help="directory of .lri files")
        sp.add_argument("--out", required=True, help="checkpoint path")
        sp.add_argument("--steps", type=int, required=True, help="total optimisation steps")
        sp.add_argument("--resume", help="checkpoint to continue from")
        sp.add_argument("--csv", help="loss-curve CSV (default: checkpoint path with .csv)")
        if name == "train-dm":
            sp.add_argument("--ae", help="autoencoder checkpoint")
            sp.add_argument("--cond-map", help="directory of per-scene label maps")
            sp.add_argument("--cond-tokens", help="directory of per-scene token files (.tok)")
        sp.set_defaults(func=func)

    sp = sub.add_parser("sample", help="generate range images from a diffusion checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--eta", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sampler", choices=("ddim", "ddpm"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--cond-map", help="directory of .npy label maps (one shared or one per sample)")
    sp.add_argument("--cond-tokens", help="token file shared by all samples")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="compare a generated set against a reference set")
    common(sp)
    sp.add_argument("--metric", choices=("jsd", "mmd", "cd", "emd", "frid", "fsvd", "fpvd"), required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--gen", required=True)
    sp.add_argument("--partitions", type=int)
    sp.add_argument("--agg", choices=("depth", "angle"))
    sp.add_argument("--stats-cache", help="LFS1 file caching the reference statistics")
    sp.add_argument("--extractor", choices=("toy-range", "toy-voxel", "toy-pointvoxel", "external"))
    sp.add_argument("--external", help="'module:factory' for --extractor external")
    sp.add_argument("--subsample", type=int, default=0, help="cd/emd: points per cloud (0 = all)")
    sp.add_argument("--approximate", action="store_true", help="emd: entropic estimate for large sets")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("curves", help="curve statistics of range images")
    sp.add_argument("--in", dest="inp", required=True)
    sp.set_defaults(func=cmd_curves)

    sp = sub.add_parser("bench", help="kernel and model throughput")
    sp.add_argument("--quick", action="store_true")
    sp.add_argument("--checkpoint", help="diffusion checkpoint to time instead of an untrained model")
    sp.add_argument("--count", type=int, default=4)
    sp.add_argument("--steps", type=int, default=10)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(max(1, args.workers))
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
