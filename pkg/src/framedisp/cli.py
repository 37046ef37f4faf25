"""Command-line entry point: ``framedisp <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
failure. Every command writes a ``*.run.json`` manifest next to its output
holding the effective configuration, its hash, the seed and versions.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import displacement_at, dominant_frequency, fft_spectrum
from .config import RunConfig
from .dataset import generate_dataset, load_arrays, read_manifest, split
from .errors import (ConfigError, FormatError, IngestionError, ShapeError, SingularBasisError,
                     StorageError)
from .flow import apply_mask, dense_flow, flow_to_color, write_flo
from .model import build_frame_mesh, write_obj
from .nn import RegressorSpec, load_regressor, save_regressor, train
from .pipeline import SequenceSpec, list_frames, poses_csv, read_poses_csv, run_sequence
from .render import read_mask, read_pnm, scaled_camera, write_pnm
from .scene import Scene

log = logging.getLogger("framedisp")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _scene(cfg: RunConfig) -> Scene:
    ds = cfg.build("dataset")
    layout = cfg.build("layout").layout()
    camera = ds.camera if ds.resolution == 1 else scaled_camera(ds.camera, ds.resolution)
    return Scene(build_frame_mesh(ds.frame, layout), camera, ds.pad_multiple)


def _parse_pose(text: str, n: int) -> np.ndarray:
    try:
        H = np.array([float(t) for t in text.replace(",", " ").split()])
    except ValueError:
        raise ConfigError(f"cannot parse pose {text!r}", "pose") from None
    if H.size != n:
        raise ConfigError(f"pose needs {n} values, got {H.size}", "pose")
    return H


def _manifest(path: Path, args, cfg: RunConfig, extra=None) -> None:
    record = {
        "command": args.command,
        "argv": args.argv,
        "config": cfg.values,
        "config_sha256": cfg.digest(),
        "seed": args.seed,
        "workers": args.workers,
        "versions": {"framedisp": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    if extra:
        record.update(extra)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _run_path(out: Path) -> Path:
    # directory outputs hold their manifest, file outputs get a sibling
    return out / "run.json" if out.is_dir() else out.with_name(out.name + ".run.json")


def cmd_render(args, cfg: RunConfig) -> None:
    scene = _scene(cfg)
    out = Path(args.out)
    if args.pose_csv:
        _, poses = read_poses_csv(args.pose_csv)
        out.mkdir(parents=True, exist_ok=True)
        for t, H in enumerate(poses):
            write_pnm(out / f"frame_{t:06d}.ppm", scene.render(H))
    else:
        H = _parse_pose(args.pose, scene.layout.n) if args.pose else np.zeros(scene.layout.n)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_pnm(out, scene.render(H))
    if args.mask_out:
        write_pnm(args.mask_out, scene.mask)
    if args.obj_out:
        write_obj(scene.mesh, args.obj_out)
    _manifest(_run_path(out), args, cfg)


def cmd_flow(args, cfg: RunConfig) -> None:
    flow_cfg = cfg.build("flow")
    I1, I2 = read_pnm(args.frame1), read_pnm(args.frame2)
    K = dense_flow(I1, I2, flow_cfg)
    if args.mask:
        K = apply_mask(K, read_mask(args.mask))
    out = Path(args.out)
    write_flo(out, K)
    if args.color_out:
        mag = args.max_mag or max(float(np.hypot(K[..., 0], K[..., 1]).max()), 1e-6)
        write_pnm(args.color_out, flow_to_color(K, mag))
    _manifest(_run_path(out), args, cfg)


def cmd_generate(args, cfg: RunConfig) -> None:
    ds = cfg.build("dataset")
    out = Path(args.out)
    rows = generate_dataset(ds, out, workers=args.workers)
    (out / "dataset.cfg").write_text(cfg.to_text())
    _manifest(out / "run.json", args, cfg, {"samples": len(rows)})
    log.info("wrote %d samples to %s", len(rows), out)


def cmd_train(args, cfg: RunConfig) -> None:
    data = Path(args.data)
    ds = cfg.build("dataset")
    tc = cfg.build("train")
    rows = read_manifest(data / "manifest.csv")
    train_rows, test_rows = split(rows, ds.test_fraction, ds.seed)
    K_train, H_train = load_arrays(train_rows, data)
    test = load_arrays(test_rows, data) if test_rows else None
    bound = float(np.abs(H_train).max()) or 1.0
    flow_scale = float(np.abs(K_train).max()) or 1.0
    spec = RegressorSpec(K_train.shape[1:3], n_out=H_train.shape[1],
                         flow_scale=flow_scale, label_scale=bound)
    result = train((K_train, H_train), tc, spec, test)
    out = Path(args.out)
    save_regressor(result.model, out)
    curve = Path(args.curve) if args.curve else out.with_suffix(".csv")
    curve.write_text(result.curve_csv())
    final = result.history[-1] if result.history else (0, float("nan"), float("nan"))
    _manifest(_run_path(out), args, cfg, {"final_train_loss": final[1], "final_test_loss": final[2]})
    log.info("trained %d epochs, final train loss %.4g test loss %.4g", *final)


def cmd_estimate(args, cfg: RunConfig) -> None:
    scene = _scene(cfg)
    ana = cfg.build("analysis")
    frames = list_frames(args.frames)
    if len(frames) < 2:
        raise IngestionError(f"{args.frames} holds fewer than two frames", 0)
    spec = SequenceSpec(frames, args.initial, args.last, ana.fps)
    mask = read_mask(args.mask) if args.mask else None
    estimator = "lsq" if args.estimator == "lsq" else load_regressor(args.estimator)
    H = run_sequence(spec, scene, estimator, cfg.build("flow"), mask=mask, workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(poses_csv(H, ana.fps))
    _manifest(_run_path(out), args, cfg, {"frames": len(frames)})


def cmd_analyze(args, cfg: RunConfig) -> None:
    ana = cfg.build("analysis")
    layout = cfg.build("layout").layout()
    times, H = read_poses_csv(args.poses)
    series = displacement_at(H, layout, None, ana.y0, ana.fps)
    spec = fft_spectrum(series, ana.window)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "displacement.csv").write_text(series.to_csv())
    (out / "spectrum.csv").write_text(spec.to_csv())
    peak = dominant_frequency(spec)
    _manifest(out / "run.json", args, cfg, {"dominant_frequency_hz": peak})
    print(f"dominant frequency {peak:.4f} Hz (bin width {spec.bin_width:.4f} Hz)")


COMMANDS = {
    "render": cmd_render,
    "flow": cmd_flow,
    "generate": cmd_generate,
    "train": cmd_train,
    "estimate": cmd_estimate,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key/value config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    common.add_argument("--seed", type=int, help="overrides dataset.seed and train.seed")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="framedisp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", parents=[common], help="render the frame model")
    r.add_argument("--pose", help="comma-separated offsets H_1..H_N (default all zero)")
    r.add_argument("--pose-csv", help="render one frame per row of a pose CSV into --out dir")
    r.add_argument("--out", required=True)
    r.add_argument("--mask-out")
    r.add_argument("--obj-out")

    f = sub.add_parser("flow", parents=[common], help="dense flow between two frames")
    f.add_argument("frame1")
    f.add_argument("frame2")
    f.add_argument("--out", required=True, help=".flo output")
    f.add_argument("--mask", help="structure mask (PGM)")
    f.add_argument("--color-out", help="color-wheel visualization (PPM)")
    f.add_argument("--max-mag", type=float, help="flow magnitude at full saturation")

    g = sub.add_parser("generate", parents=[common], help="synthetic training corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int)
    g.add_argument("--bound", type=float)

    t = sub.add_parser("train", parents=[common], help="train the flow regressor")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="weights file")
    t.add_argument("--curve", help="loss curve CSV (default: weights path with .csv)")

    e = sub.add_parser("estimate", parents=[common], help="per-frame offsets of a sequence")
    e.add_argument("--frames", required=True, help="directory of numbered PGM/PPM frames")
    e.add_argument("--initial", type=int, default=0)
    e.add_argument("--last", type=int)
    e.add_argument("--estimator", default="lsq", help="'lsq' or a weights file")
    e.add_argument("--mask", help="structure mask (PGM); default: rendered silhouette")
    e.add_argument("--out", required=True, help="pose CSV")

    a = sub.add_parser("analyze", parents=[common], help="displacement history and spectrum")
    a.add_argument("--poses", required=True, help="pose CSV from estimate")
    a.add_argument("--out", required=True, help="output directory")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides += [f"dataset.seed={args.seed}", f"train.seed={args.seed}"]
        if getattr(args, "count", None) is not None:
            overrides.append(f"dataset.count={args.count}")
        if getattr(args, "bound", None) is not None:
            overrides.append(f"dataset.bound={args.bound}")
        cfg = RunConfig.load(args.config, overrides)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1", "workers")
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StorageError, IngestionError, FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SingularBasisError, ShapeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
