"""Canopy height mapping: LiDAR point clouds to quantized CHMs, U-Net training and tiled prediction."""

__version__ = "0.1.0"

from .errors import CanopyError  # noqa: E402
from .lidar import PointCloud, ivf_denoise, read_point_cloud, write_point_cloud  # noqa: E402
from .raster import (FootprintSet, GridSpec, PatchPair, Raster, aggregate_block, apply_mask,  # noqa: E402
                     rasterize_footprints, read_raster, resample_nearest, retile, write_raster)
from .tin import (PitfreeParams, build_chm, build_dsm_pitfree, build_dtm, delaunay,  # noqa: E402
                  quantize_heights, unscale_chm)
from .unet import UNetConfig, init_weights, load_weights, save_weights  # noqa: E402
from .training import TrainConfig, assemble_dataset, augment, split, train  # noqa: E402
from .predict import TilePlan, plan_tiles, predict_image  # noqa: E402
from .evaluation import LandscapeStats, SiteReport, compare_to_product, compute_metrics, landscape_stats  # noqa: E402

__all__ = [
    "CanopyError", "FootprintSet", "GridSpec", "LandscapeStats", "PatchPair", "PitfreeParams", "PointCloud", "Raster",
    "SiteReport", "TilePlan", "TrainConfig", "UNetConfig", "aggregate_block", "apply_mask", "assemble_dataset",
    "augment", "build_chm", "build_dsm_pitfree", "build_dtm", "compare_to_product", "compute_metrics", "delaunay",
    "init_weights", "ivf_denoise", "landscape_stats", "load_weights", "plan_tiles", "predict_image",
    "quantize_heights", "rasterize_footprints", "read_point_cloud", "read_raster", "resample_nearest", "retile",
    "save_weights", "split", "train", "unscale_chm", "write_point_cloud", "write_raster",
]
