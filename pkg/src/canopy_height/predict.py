"""Overlapping-tile inference over arbitrarily large 4-band images."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .raster import NODATA_F32, Raster
from .tin import quantize_heights
from .training import HEIGHT_SCALE, scale_inputs
from .unet.model import UNetConfig, forward

log = logging.getLogger(__name__)

PAD_MODES = ("edge", "zero")


@dataclass(frozen=True)
class TilePlan:
    width: int
    height: int
    tile: int
    margin: int
    padded_width: int
    padded_height: int
    col_origins: tuple[int, ...]
    row_origins: tuple[int, ...]

    @property
    def core(self) -> int:
        return self.tile - 2 * self.margin

    @property
    def n_tiles(self) -> int:
        return len(self.col_origins) * len(self.row_origins)


def plan_tiles(width: int, height: int, tile: int = 1152, margin: int = 64, depth: int = 4) -> TilePlan:
    """Tile layout for a ``width`` x ``height`` image.

    Per axis, the smallest ``k`` with ``k * core >= dim`` is used and the padded
    size is ``2 * margin + k * core``. Tile origins are multiples of ``core`` in
    padded coordinates; the source image sits at offset ``margin``.
    """
    if width < 1 or height < 1:
        raise ParameterError(f"image size must be positive, got {width}x{height}")
    if margin < 0 or tile <= 2 * margin:
        raise ParameterError(f"tile {tile} must exceed twice the margin {margin}")
    m = 2 ** depth
    core = tile - 2 * margin
    if core % m:
        raise ParameterError(f"tile core {core} must be divisible by 2**depth = {m}")
    if margin % m:
        raise ParameterError(f"margin {margin} must be divisible by 2**depth = {m}")

    def axis(dim):
        k = -(-dim // core)
        return 2 * margin + k * core, tuple(i * core for i in range(k))

    pw, cols = axis(width)
    ph, rows = axis(height)
    return TilePlan(width, height, tile, margin, pw, ph, cols, rows)


def pad_image(data: np.ndarray, plan: TilePlan, mode: str = "edge") -> np.ndarray:
    """Place ``(C, H, W)`` data at offset ``margin`` in the padded canvas."""
    if mode not in PAD_MODES:
        raise ParameterError(f"pad mode must be one of {PAD_MODES}, got {mode!r}")
    _, h, w = data.shape
    if (h, w) != (plan.height, plan.width):
        raise ShapeError(f"image {w}x{h} does not match plan {plan.width}x{plan.height}")
    m = plan.margin
    widths = ((0, 0), (m, plan.padded_height - m - h), (m, plan.padded_width - m - w))
    if mode == "edge":
        return np.pad(data, widths, mode="edge")
    return np.pad(data, widths, mode="constant", constant_values=0)


def predict_array(image: np.ndarray, weights, config: UNetConfig, plan: TilePlan, pad_mode: str = "edge",
                  jobs: int = 1, return_coverage: bool = False):
    """Predicted heights in meters for a ``(4, H, W)`` u8 array."""
    if image.ndim != 3 or image.shape[0] != config.in_channels:
        raise ShapeError(f"expected ({config.in_channels}, H, W) image, got {image.shape}")
    if plan.tile % config.multiple or plan.margin % config.multiple:
        raise ParameterError(f"tile and margin must be multiples of {config.multiple} for depth {config.depth}")
    padded = pad_image(image, plan, pad_mode)
    out = np.zeros((plan.height, plan.width), np.float32)
    coverage = np.zeros((plan.height, plan.width), np.int32)
    T, m, c = plan.tile, plan.margin, plan.core

    def run(origin):
        r0, c0 = origin
        x = scale_inputs(padded[None, :, r0:r0 + T, c0:c0 + T])
        y = forward(weights, config, x)[0][0, 0]
        return origin, y[m:m + c, m:m + c]

    def place(origin, core):
        r0, c0 = origin  # core starts at padded r0 + m, i.e. source row r0
        h = min(c, plan.height - r0)
        w = min(c, plan.width - c0)
        out[r0:r0 + h, c0:c0 + w] = core[:h, :w] * np.float32(HEIGHT_SCALE)
        coverage[r0:r0 + h, c0:c0 + w] += 1

    origins = [(r, cc) for r in plan.row_origins for cc in plan.col_origins]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            for origin, core in ex.map(run, origins):
                place(origin, core)
    else:
        for origin in origins:
            place(*run(origin))
    if not np.all(coverage == 1):
        raise AssertionError("tile cores do not partition the image")  # layout bug, not user error
    log.info("predicted %d tiles for %dx%d image", len(origins), plan.width, plan.height)
    return (out, coverage) if return_coverage else out


def predict_image(image: Raster, weights, config: UNetConfig, tile: int = 1152, margin: int = 64,
                  pad_mode: str = "edge", jobs: int = 1, quantize: bool = False) -> Raster:
    """Tile-predict a 4-band u8 raster; f32 meters, or u8 codes when ``quantize``."""
    if image.dtype != "u8" or image.bands != config.in_channels:
        raise ShapeError(f"expected {config.in_channels}-band u8 image, got {image.bands}-band {image.dtype}")
    plan = plan_tiles(image.width, image.height, tile, margin, config.depth)
    heights = predict_array(np.asarray(image.data), weights, config, plan, pad_mode, jobs)
    meta = {"tile": tile, "margin": margin, "pad_mode": pad_mode}
    if quantize:
        return Raster(image.grid, quantize_heights(heights)[None], None, image.crs, meta)
    return Raster(image.grid, heights[None], NODATA_F32, image.crs, meta)
