"""Command-line front end: ``canopy-height <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CanopyError
from .evaluation import (compare_to_product, compute_metrics, format_text, landscape_stats, match_resolution,
                         render_png, scatter_sample, write_records_csv, write_scatter)
from .lidar import ivf_denoise, read_point_cloud, write_point_cloud
from .predict import PAD_MODES, predict_image
from .raster import (aggregate_block, apply_mask, common_extent, rasterize_footprints, read_footprints, read_raster,
                     resample_nearest, retile, write_footprints, write_raster)
from .synth import learning_scene, make_scene
from .tin import PitfreeParams, build_chm, build_dsm_pitfree, build_dtm, grid_for_cloud
from .training import TrainConfig, read_manifest, train, write_patches
from .unet.checkpoint import load_weights
from .unet.model import UNetConfig

log = logging.getLogger("canopy_height")

PRESETS = {
    "paper": {"epochs": 5000, "depth": 4, "base_channels": 64, "patch": 256, "tile": 1152, "margin": 64},
    "desk": {"epochs": 500, "depth": 3, "base_channels": 8, "patch": 32, "tile": 192, "margin": 32},
}


@dataclass
class RunManifest:
    subcommand: str
    parameters: dict
    inputs: list[str]
    outputs: list[str]
    seed: int | None
    version: str = __version__
    duration_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _preset(args, key):
    v = getattr(args, key, None)
    return PRESETS[args.preset][key] if v is None else v


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- subcommands

def cmd_chm(args):
    cloud = read_point_cloud(args.cloud, args.format)
    n_in = len(cloud)
    if not args.no_denoise:
        cloud = ivf_denoise(cloud, args.voxel_res, args.max_other)
    grid = grid_for_cloud(cloud, args.res)
    params = PitfreeParams(args.pitfree_thresholds, args.max_edge_base, args.max_edge_layers)
    dtm = build_dtm(cloud, grid)
    dsm = build_dsm_pitfree(cloud, grid, params)
    chm = build_chm(dsm, dtm)
    if args.out_res != args.res:
        chm = resample_nearest(chm, args.out_res)
    out = _outdir(args.out)
    for name, r in (("dtm", dtm), ("dsm", dsm), ("chm", chm)):
        write_raster(r, out / name)
    return [args.cloud], [str(out / n) for n in ("dtm", "dsm", "chm")], {"points_in": n_in,
                                                                        "points_kept": len(cloud)}


def cmd_mask(args):
    chm = read_raster(args.chm)
    mask = rasterize_footprints(read_footprints(args.footprints), chm.grid, args.buffer)
    write_raster(apply_mask(chm, mask), args.out)
    return [args.chm, args.footprints], [args.out], {"masked_pixels": int(mask.data.sum()),
                                                     "skipped_rings": mask.meta["skipped_rings"]}


def cmd_tile(args):
    image, chm = common_extent(read_raster(args.image), read_raster(args.chm))
    pairs = retile(image, chm, _preset(args, "patch"), args.source_id)
    out = _outdir(args.out)
    manifest = Path(args.manifest) if args.manifest else out / "manifest.csv"
    write_patches(pairs, out, args.role, manifest, append=args.append, prefix=args.prefix)
    return [args.image, args.chm], [str(manifest)], {"patches": len(pairs)}


def cmd_train(args):
    ds = read_manifest(args.manifest)
    ucfg = UNetConfig(depth=_preset(args, "depth"), base_channels=_preset(args, "base_channels"), seed=args.seed)
    tcfg = TrainConfig(epochs=_preset(args, "epochs"), batch_size=args.batch, learning_rate=args.lr,
                       val_fraction=args.val_fraction, seed=args.seed, augment=not args.no_augment)
    out = _outdir(args.out)
    res = train(ds, ucfg, tcfg, out)
    return [args.manifest], [str(out / "best.ckpt"), str(out / "train_log.csv")], {
        "best_epoch": res.best_epoch, "best_val_loss": None if not res.log_rows else res.best_val_loss,
        "clamped_targets": res.clamped, "patches": len(ds)}


def cmd_predict(args):
    ck = load_weights(args.checkpoint)
    image = read_raster(args.image)
    r = predict_image(image, ck.weights, ck.config, _preset(args, "tile"), _preset(args, "margin"),
                      args.pad_mode, args.jobs, args.quantize)
    write_raster(r, args.out)
    return [args.image, args.checkpoint], [args.out], {"config": ck.config.to_dict()}


def cmd_eval(args):
    obs, pred = match_resolution(read_raster(args.obs), read_raster(args.pred))
    mask = None
    if args.mask:
        m = read_raster(args.mask)
        mask = m.band(0) == 0  # footprint masks mark excluded pixels with 1
    out = _outdir(args.out)
    report = compute_metrics(pred, obs, mask, args.site_id)
    write_records_csv([report], out / "report.csv")
    (out / "report.txt").write_text(format_text(report), encoding="utf-8")
    write_scatter(scatter_sample(pred, obs, args.sample_n, args.seed, mask), out / "scatter.csv")
    outputs = [str(out / n) for n in ("report.csv", "report.txt", "scatter.csv")]
    inputs = [args.pred, args.obs]
    if args.product:
        inputs.append(args.product)
        pr, mr = compare_to_product(pred, read_raster(args.product), obs, args.stat, args.site_id)
        write_records_csv([pr, mr], out / "product_report.csv")
        outputs.append(str(out / "product_report.csv"))
    print(format_text(report), end="")
    return inputs, outputs, {"mae": report.mae, "rmse": report.rmse}


def cmd_stats(args):
    r = read_raster(args.raster)
    agg = aggregate_block(r, args.factor, "median") if args.factor > 1 else r
    st = landscape_stats(agg)
    out = _outdir(args.out)
    write_records_csv([st], out / "landscape.csv")
    (out / "landscape.txt").write_text(format_text(st), encoding="utf-8")
    if args.factor > 1:
        write_raster(agg, out / "median")
    print(format_text(st), end="")
    return [args.raster], [str(out / "landscape.csv"), str(out / "landscape.txt")], {}


def cmd_render(args):
    render_png(read_raster(args.raster), args.out, args.max_height, args.band)
    return [args.raster], [args.out], {}


def cmd_synth(args):
    out = _outdir(args.out)
    if args.kind == "learning":
        image, chm, _ = learning_scene(args.size_px, args.seed, args.noise)
        write_raster(image, out / "image")
        write_raster(chm, out / "chm")
        return [], [str(out / "image"), str(out / "chm")], {}
    scene = make_scene(args.seed, args.size, args.trees)
    cloud_path = out / f"cloud.{args.format}"
    write_point_cloud(scene.cloud, cloud_path)
    write_raster(scene.image, out / "image")
    write_raster(scene.truth, out / "truth")
    write_footprints(scene.footprints, out / "footprints.json")
    return [], [str(cloud_path), str(out / "image"), str(out / "truth"), str(out / "footprints.json")], {
        "points": len(scene.cloud), "trees": len(scene.trees)}


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    def common(parser, default):
        parser.add_argument("--preset", choices=sorted(PRESETS), default=default("paper"),
                            help="default sizes for patches, network, tiling and epochs")
        parser.add_argument("--jobs", type=int, default=default(1), help="worker cap for parallel stages")
        parser.add_argument("--log-level", default=default("WARNING"))
        parser.add_argument("--run-manifest", default=default(None),
                            help="where to write the run manifest JSON (default: next to outputs)")

    p = argparse.ArgumentParser(prog="canopy-height", description="LiDAR-to-CHM processing and U-Net canopy height mapping.")
    p.add_argument("--version", action="version", version=__version__)
    common(p, lambda v: v)
    # the same options are accepted after the subcommand; SUPPRESS keeps top-level values unless given
    shared = argparse.ArgumentParser(add_help=False)
    common(shared, lambda v: argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_sub_parser(shared))

    s = sub.add_parser("chm", help="point cloud -> DTM, pit-free DSM and quantized CHM")
    s.add_argument("cloud")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--format", choices=["csv", "las"])
    s.add_argument("--res", type=float, default=1.0)
    s.add_argument("--out-res", type=float, default=0.6)
    s.add_argument("--pitfree-thresholds", type=_floats, default=(0.0, 2.0, 5.0, 10.0, 15.0))
    s.add_argument("--max-edge-base", type=float, default=0.0)
    s.add_argument("--max-edge-layers", type=float, default=1.5)
    s.add_argument("--voxel-res", type=float, default=1.0)
    s.add_argument("--max-other", type=int, default=5)
    s.add_argument("--no-denoise", action="store_true")
    s.set_defaults(func=cmd_chm)

    s = sub.add_parser("mask", help="zero CHM pixels under buffered building footprints")
    s.add_argument("chm")
    s.add_argument("footprints")
    s.add_argument("--out", required=True)
    s.add_argument("--buffer", type=float, default=2.0)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("tile", help="cut image/CHM into patch pairs and list them in a manifest")
    s.add_argument("image")
    s.add_argument("chm")
    s.add_argument("--out", required=True)
    s.add_argument("--patch", type=int)
    s.add_argument("--role", choices=["pair", "empty"], default="pair")
    s.add_argument("--manifest")
    s.add_argument("--append", action="store_true")
    s.add_argument("--prefix", default="patch")
    s.add_argument("--source-id", default="")
    s.set_defaults(func=cmd_tile)

    s = sub.add_parser("train", help="train the U-Net from a patch manifest")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--depth", type=int)
    s.add_argument("--base-channels", type=int)
    s.add_argument("--val-fraction", type=float, default=0.1)
    s.add_argument("--no-augment", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="tiled height prediction for a 4-band image")
    s.add_argument("image")
    s.add_argument("checkpoint")
    s.add_argument("--out", required=True)
    s.add_argument("--tile", type=int)
    s.add_argument("--margin", type=int)
    s.add_argument("--pad-mode", choices=PAD_MODES, default="edge")
    s.add_argument("--quantize", action="store_true", help="write u8 codes (meters x 2.5)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="metrics, scatter sample and optional product comparison")
    s.add_argument("pred")
    s.add_argument("obs")
    s.add_argument("--out", required=True)
    s.add_argument("--product")
    s.add_argument("--mask", help="footprint mask raster; pixels equal to 1 are excluded")
    s.add_argument("--sample-n", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stat", choices=["mean", "median"], default="mean")
    s.add_argument("--site-id", default="site")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", help="landscape height statistics on a block-median raster")
    s.add_argument("raster")
    s.add_argument("--out", required=True)
    s.add_argument("--factor", type=int, default=50)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("render", help="grayscale PNG of a height raster")
    s.add_argument("raster")
    s.add_argument("--out", required=True)
    s.add_argument("--band", type=int, default=0)
    s.add_argument("--max-height", type=float, default=102.0)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("synth", help="write a seeded synthetic scene")
    s.add_argument("--out", required=True)
    s.add_argument("--kind", choices=["forest", "learning"], default="forest")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=float, default=60.0, help="forest side length in meters")
    s.add_argument("--size-px", type=int, default=384, help="learning scene side in pixels")
    s.add_argument("--trees", type=int, default=10)
    s.add_argument("--noise", type=float, default=0.5, help="learning scene height noise (m)")
    s.add_argument("--format", choices=["csv", "las"], default="csv")
    s.set_defaults(func=cmd_synth)
    return p


def _sub_parser(shared):
    class SubParser(argparse.ArgumentParser):
        def __init__(self, *a, **k):
            k.setdefault("parents", [shared])
            super().__init__(*a, **k)
    return SubParser


def _manifest_path(args, outputs) -> Path:
    if args.run_manifest:
        return Path(args.run_manifest)
    out = Path(args.out)
    if out.is_dir():
        return out / f"{args.command}.run.json"
    return out.with_name(out.name + ".run.json")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        inputs, outputs, extra = args.func(args)
    except (CanopyError, OSError) as exc:
        print(f"canopy-height {args.command}: error: {exc}", file=sys.stderr)
        return 1
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k != "func"}
    RunManifest(args.command, params, list(inputs), list(outputs), getattr(args, "seed", None),
                duration_s=round(time.perf_counter() - t0, 3),
                extra=json.loads(json.dumps(extra, default=_json_default))).write(_manifest_path(args, outputs))
    return 0


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
