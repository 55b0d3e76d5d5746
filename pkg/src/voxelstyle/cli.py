"""Command-line interface.

Every subcommand accepts ``--config FILE``: a plain-text file of ``key = value``
lines (``#`` starts a comment). Keys are the subcommand's long flag names with
dashes or underscores. Explicit flags override config values, which override
built-in defaults. Outputs go under ``--out``.

Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .checkpoint import CheckpointError, read_checkpoint, save_checkpoint
from .consistency import DEPTH_TOLERANCE, OPACITY_THRESHOLD, consistency_score, write_report
from .datasets import DatasetError, ViewDataset, load_dataset, load_poses, read_image, save_dataset
from .hash_encoder import HashGridSpec
from .radiance_model import BranchId, ModelSpec, RadianceModel
from .style_builder import (
    ColoredCube,
    ColoredSphere,
    make_style_scene_dataset,
    make_synthetic_dataset,
    orbit_poses,
    procedural_style_image,
)
from .stylizer import (
    DEFAULT_MASK_THRESHOLD,
    Direction,
    StyleBlend,
    VoxelGridSpec,
    compute_moments_pair,
    extract_voxel_features,
    load_moments,
    render_stylized,
    save_moments,
)
from .trainer import TrainConfig, train
from .volume_renderer import BLACK, WHITE, RenderConfig, render_image

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


class UsageError(Exception):
    """A validation failure reported as a one-line message with exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config(path) -> dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _positive(kind):
    def conv(s):
        v = kind(s)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {s}")
        return v
    conv.__name__ = kind.__name__
    return conv


def _unit_interval(s):
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {s}")
    return v


def _gaps(s):
    try:
        gaps = tuple(int(g) for g in str(s).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"gaps must be comma-separated integers, got {s!r}")
    if not gaps or min(gaps) < 1:
        raise argparse.ArgumentTypeError("gaps must be positive")
    return gaps


def _opt(p, flag, type=str, default=None, help=None, **kw):
    """Register a config-overridable option; ``default`` is applied after config merge."""
    action = p.add_argument(flag, type=type, default=None, help=help, **kw)
    p._config_types = getattr(p, "_config_types", {})
    p._config_types[action.dest] = (type, default)
    return action


def _add_orbit(p):
    _opt(p, "--poses", Path, help="poses file (manifest layout with top-level w/h)")
    _opt(p, "--orbit", _positive(int), help="render an N-view orbit instead of --poses")
    _opt(p, "--orbit-radius", _positive(float), 2.0)
    _opt(p, "--elevation", float, 30.0, help="orbit elevation in degrees")
    _opt(p, "--step", float, 5.0, help="orbit azimuth step in degrees")
    _opt(p, "--resolution", _positive(int), 64)
    _opt(p, "--fov", _positive(float), 0.7, help="horizontal field of view, radians")
    _opt(p, "--samples", _positive(int), 128, help="samples per ray")
    _opt(p, "--background", str, "white", choices=("white", "black"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="voxelstyle", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        return p

    p = command("make-synthetic", "render an analytic scene into a posed dataset")
    _opt(p, "--scene", str, "cube", choices=("cube", "sphere"))
    _opt(p, "--views", _positive(int), 32)
    _opt(p, "--test-views", int, 8)
    _opt(p, "--resolution", _positive(int), 64)
    _opt(p, "--radius", _positive(float), 2.0)
    _opt(p, "--fov", _positive(float), 0.7)
    _opt(p, "--seed", int, 0)

    p = command("make-style-scene", "turn a style image into a voxel-plane dataset")
    _opt(p, "--image", Path, help="style image (a built-in pattern when omitted)")
    _opt(p, "--views", _positive(int), 64)
    _opt(p, "--test-views", int, 8)
    _opt(p, "--resolution", _positive(int), 64)
    _opt(p, "--radius", _positive(float), 1.2)
    _opt(p, "--fov", _positive(float), 0.7)
    _opt(p, "--max-voxels", _positive(int), 128, help="long-edge voxel count cap")
    _opt(p, "--seed", int, 0)

    p = command("train", "jointly train the content and style branches")
    _opt(p, "--content", Path, help="content dataset directory")
    _opt(p, "--style", Path, help="style dataset directory or a single style image")
    _opt(p, "--iterations", _positive(int), 20000)
    _opt(p, "--rays-per-batch", _positive(int), 4096, help="rays per scene per step")
    _opt(p, "--samples", _positive(int), 128)
    _opt(p, "--lr-hash", _positive(float), 1e-2)
    _opt(p, "--lr-mlp", _positive(float), 1e-3)
    _opt(p, "--huber-delta", _positive(float), 0.1)
    _opt(p, "--log-every", _positive(int), 100)
    _opt(p, "--checkpoint-every", int, 0)
    _opt(p, "--style-views", _positive(int), 64, help="views rendered for a style image")
    _opt(p, "--levels", _positive(int), 8)
    _opt(p, "--log2-table-size", _positive(int), 14)
    _opt(p, "--seed", int, 0)
    _opt(p, "--threads", _positive(int), help="worker threads (default $VOXELSTYLE_THREADS or 1)")

    p = command("render", "render posed views of one branch")
    _opt(p, "--checkpoint", Path)
    _opt(p, "--branch", str, "content", choices=("content", "style"))
    _add_orbit(p)
    _opt(p, "--threads", _positive(int))

    p = command("stylize", "render stylized views with AdaIN on voxel-grid statistics")
    _opt(p, "--checkpoint", Path)
    _opt(p, "--alpha", _unit_interval, 1.0, help="content-style trade-off in [0, 1]")
    _opt(p, "--direction", str, "content-to-style", choices=[d.value for d in Direction])
    _opt(p, "--voxel-res", _positive(int), 128)
    p.add_argument("--density-mask", type=float, nargs="?", const=DEFAULT_MASK_THRESHOLD,
                   default=None, help="only voxels with density above THRESHOLD feed the moments")
    _opt(p, "--moments", Path, help="reuse a moments file from extract-features")
    _add_orbit(p)
    _opt(p, "--threads", _positive(int))

    p = command("extract-features", "compute voxel-grid feature moments for both branches")
    _opt(p, "--checkpoint", Path)
    _opt(p, "--voxel-res", _positive(int), 128)
    p.add_argument("--density-mask", type=float, nargs="?", const=DEFAULT_MASK_THRESHOLD,
                   default=None)
    p.add_argument("--save-grid", action="store_true", help="also write the full feature grids")

    p = command("eval-consistency", "warped consistency scores of a rendered sequence")
    _opt(p, "--renders", Path, help="output directory of render or stylize")
    _opt(p, "--reference", Path, help="optional unstylized sequence to report alongside")
    _opt(p, "--gaps", _gaps, (5, 15))
    _opt(p, "--tolerance", _positive(float), DEPTH_TOLERANCE)
    _opt(p, "--opacity-threshold", float, OPACITY_THRESHOLD)
    return parser


def _merge_config(parser, args):
    sub = parser._subparsers._group_actions[0].choices[args.command]
    types = getattr(sub, "_config_types", {})
    config = read_config(args.config) if args.config else {}
    for key, raw in config.items():
        if key == "density_mask":
            args.density_mask = _convert(key, float, raw) if args.density_mask is None else args.density_mask
            continue
        if key not in types:
            raise UsageError(f"config key {key!r} is not valid for '{args.command}'")
        if getattr(args, key) is None:
            kind = types[key][0]
            setattr(args, key, _convert(key, kind, raw))
            action = next(a for a in sub._actions if a.dest == key)
            if action.choices is not None and getattr(args, key) not in action.choices:
                raise UsageError(f"config {key}: {raw!r} is not one of {list(action.choices)}")
    for key, (_, default) in types.items():
        if getattr(args, key) is None:
            setattr(args, key, default)
    return args


def _convert(key, kind, raw):
    try:
        return kind(raw)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"config {key}: {exc}") from exc


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required (flag or config key)")


def _threads(args):
    if getattr(args, "threads", None):
        os.environ["VOXELSTYLE_THREADS"] = str(args.threads)
    return max(1, int(os.environ.get("VOXELSTYLE_THREADS", "1")))


def _cameras(args):
    if args.poses is not None and args.orbit is not None:
        raise UsageError("give either --poses or --orbit, not both")
    if args.orbit is not None:
        return orbit_poses(args.orbit, args.orbit_radius, elevation_deg=args.elevation,
                           step_deg=args.step, width=args.resolution, camera_angle_x=args.fov)
    if args.poses is None:
        raise UsageError("--poses or --orbit is required")
    if not args.poses.is_file():
        raise UsageError(f"poses file not found: {args.poses}")
    return load_poses(args.poses)[0]


def _load_model(path):
    if path is None:
        raise UsageError("--checkpoint is required")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return read_checkpoint(path).model


def _render_config(args):
    return RenderConfig(n_samples=args.samples,
                        background=WHITE if args.background == "white" else BLACK)


def cmd_make_synthetic(args):
    rng = np.random.default_rng(args.seed)
    scene = ColoredCube() if args.scene == "cube" else ColoredSphere()
    ds = make_synthetic_dataset(scene, args.views + args.test_views, args.resolution, rng,
                                radius=args.radius, camera_angle_x=args.fov)
    _write_split(ds, args.views, args.out)


def _write_split(ds: ViewDataset, n_train, out):
    save_dataset(ds.subset(range(n_train)), out)
    if len(ds) > n_train:
        save_dataset(ds.subset(range(n_train, len(ds))), out, "transforms_test.json",
                     prefix="test")
    print(f"wrote {len(ds)} views to {out}")


def _style_image(path):
    if path is None:
        return procedural_style_image()
    if not Path(path).is_file():
        raise UsageError(f"style image not found: {path}")
    return read_image(Path(path), WHITE)


def cmd_make_style_scene(args):
    rng = np.random.default_rng(args.seed)
    ds = make_style_scene_dataset(_style_image(args.image), args.views + args.test_views,
                                  args.resolution, rng, radius=args.radius,
                                  camera_angle_x=args.fov, max_size=args.max_voxels)
    _write_split(ds, args.views, args.out)


def cmd_train(args):
    _require(args, "content", "style")
    if not args.content.is_dir():
        raise UsageError(f"content dataset directory not found: {args.content}")
    content = load_dataset(args.content)
    if args.style.is_dir():
        style = load_dataset(args.style)
    elif args.style.suffix.lower() in IMAGE_SUFFIXES:
        w, _ = content.resolution
        style = make_style_scene_dataset(_style_image(args.style), args.style_views, w,
                                         np.random.default_rng(args.seed))
        save_dataset(style, args.out / "style_scene")
    else:
        raise UsageError(f"--style must be a dataset directory or an image file: {args.style}")
    config = TrainConfig(iterations=args.iterations, rays_per_batch_per_scene=args.rays_per_batch,
                         lr_hash=args.lr_hash, lr_mlp=args.lr_mlp, huber_delta=args.huber_delta,
                         seed=args.seed, n_samples=args.samples, workers=_threads(args),
                         log_every=args.log_every, checkpoint_every=args.checkpoint_every)
    hash_spec = HashGridSpec(levels=args.levels, table_size=2**args.log2_table_size)
    model = RadianceModel.create(ModelSpec(), hash_spec, np.random.default_rng(args.seed))
    args.out.mkdir(parents=True, exist_ok=True)
    echo = {k: v for k, v in vars(config).items()}
    ckpt = args.out / "checkpoint.vxs"

    def checkpoint(m, it):
        save_checkpoint(m, ckpt, it, echo)

    print("iter, loss_content, loss_style, elapsed_s")
    result = train(model, content, style, config, progress=print, checkpoint=checkpoint)
    save_checkpoint(result.model, ckpt, config.iterations, echo)
    with open(args.out / "loss_log.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "loss_content", "loss_style", "elapsed_s"])
        w.writerows(result.history)
    print(f"wrote {ckpt}")


def cmd_render(args):
    _threads(args)
    model = _load_model(args.checkpoint)
    cams = _cameras(args)
    cfg = _render_config(args)
    outs = [render_image(model, BranchId(args.branch), c, cfg) for c in cams]
    artifacts.save_render_sequence(artifacts.posed(cams, outs), args.out)
    print(f"wrote {len(outs)} views to {args.out}")


def _moments(args, model):
    if args.moments is not None:
        if not args.moments.is_file():
            raise UsageError(f"moments file not found: {args.moments}")
        return load_moments(args.moments)
    return compute_moments_pair(model, VoxelGridSpec(args.voxel_res), args.density_mask)


def cmd_stylize(args):
    _threads(args)
    model = _load_model(args.checkpoint)
    cams = _cameras(args)
    blend = StyleBlend(args.alpha, Direction(args.direction))
    moments = _moments(args, model)
    args.out.mkdir(parents=True, exist_ok=True)
    save_moments(moments, args.out / "moments.json")
    cfg = _render_config(args)
    outs = [render_stylized(model, c, blend, moments, cfg) for c in cams]
    artifacts.save_render_sequence(artifacts.posed(cams, outs), args.out)
    print(f"wrote {len(outs)} stylized views to {args.out}")


def cmd_extract_features(args):
    model = _load_model(args.checkpoint)
    spec = VoxelGridSpec(args.voxel_res)
    args.out.mkdir(parents=True, exist_ok=True)
    moments = compute_moments_pair(model, spec, args.density_mask)
    save_moments(moments, args.out / "moments.json")
    if args.save_grid:
        for b in (BranchId.CONTENT, BranchId.STYLE):
            grid = extract_voxel_features(model, b, spec)
            np.savez(args.out / f"features_{b.value}.npz", features=grid.features,
                     densities=grid.densities, voxel_res=spec.resolution)
    print(f"wrote {args.out / 'moments.json'}")


def cmd_eval_consistency(args):
    _require(args, "renders")
    runs = [("renders", args.renders)]
    if args.reference is not None:
        runs.append(("reference", args.reference))
    for name, path in runs:
        seq = artifacts.load_render_sequence(path)
        try:
            scores = consistency_score(seq, args.gaps, args.tolerance, args.opacity_threshold)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        txt, _ = write_report(scores, args.out, stem=f"consistency_{name}", title=str(path))
        print(txt.read_text(), end="")


COMMANDS = {
    "make-synthetic": cmd_make_synthetic,
    "make-style-scene": cmd_make_style_scene,
    "train": cmd_train,
    "render": cmd_render,
    "stylize": cmd_stylize,
    "extract-features": cmd_extract_features,
    "eval-consistency": cmd_eval_consistency,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _merge_config(parser, args)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"voxelstyle: error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, CheckpointError) as exc:
        print(f"voxelstyle: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError, OSError) as exc:
        print(f"voxelstyle: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
