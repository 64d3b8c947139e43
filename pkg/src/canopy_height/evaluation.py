"""Validation metrics, scatter samples, product comparison and landscape statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import AlignmentError, EmptyInputError, ParameterError
from .raster import Raster, aggregate_block, common_extent, require_same_grid, resample_nearest
from .tin import unscale_chm

RENDER_MAX_M = 102.0
FOREST_M = 5.0


@dataclass(frozen=True)
class SiteReport:
    site_id: str
    n_pixels: int
    mae: float
    rmse: float
    rel_mae: float | None
    mean_obs_height: float

    def to_row(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LandscapeStats:
    frac_ge_2m: float
    frac_ge_5m: float
    median_forest_height_m: float | None
    frac_forest_ge_40m: float
    frac_forest_ge_50m: float
    max_median_height_m: float
    n_pixels: int


def _as_m(r: Raster) -> tuple[np.ndarray, np.ndarray]:
    """Band 0 in meters (u8 rasters hold quantized codes) and its validity."""
    if r.dtype == "u8":
        return unscale_chm(r.band(0)), r.valid(0)
    return r.band(0).astype(np.float64), r.valid(0)


def _mask_array(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, bool)
    m = mask.band(0) if isinstance(mask, Raster) else np.asarray(mask)
    if m.shape != shape:
        raise AlignmentError(f"mask shape {m.shape} does not match {shape}")
    return m.astype(bool)


def metrics_from_arrays(pred: np.ndarray, obs: np.ndarray, site_id: str = "") -> SiteReport:
    pred = np.asarray(pred, np.float64).ravel()
    obs = np.asarray(obs, np.float64).ravel()
    if pred.size == 0:
        raise EmptyInputError(f"site {site_id or '?'}: no valid pixels")
    err = pred - obs
    mae = float(np.mean(np.abs(err)))
    rmse = float(math.sqrt(np.mean(err * err)))
    rmse = max(rmse, mae)  # fp noise can put sqrt(mean e^2) a ulp below mean |e| when |e| is constant
    mean_obs = float(np.mean(obs))
    return SiteReport(site_id, int(pred.size), mae, rmse, mae / mean_obs if mean_obs > 0 else None, mean_obs)


def compute_metrics(pred: Raster, obs: Raster, mask=None, site_id: str = "") -> SiteReport:
    """MAE, RMSE and relative MAE over pixels valid in both rasters and the mask."""
    require_same_grid(pred, obs, "prediction and observation")
    p, pv = _as_m(pred)
    o, ov = _as_m(obs)
    keep = pv & ov & _mask_array(mask, p.shape)
    return metrics_from_arrays(p[keep], o[keep], site_id)


def match_resolution(obs: Raster, pred: Raster) -> tuple[Raster, Raster]:
    """Nearest-neighbor resample ``obs`` to the prediction's pixel size, then crop both to the shared extent."""
    if not math.isclose(obs.grid.pixel_size, pred.grid.pixel_size):
        obs = resample_nearest(obs, pred.grid.pixel_size)
    pred, obs = common_extent(pred, obs)
    return obs, pred


def scatter_sample(pred: Raster, obs: Raster, n: int = 100_000, seed: int = 0, mask=None) -> np.ndarray:
    """``(k, 2)`` array of (obs_m, pred_m), sampled without replacement over valid pixels."""
    require_same_grid(pred, obs, "prediction and observation")
    p, pv = _as_m(pred)
    o, ov = _as_m(obs)
    idx = np.flatnonzero(pv & ov & _mask_array(mask, p.shape))
    if n < idx.size:
        idx = np.sort(np.random.default_rng(seed).choice(idx, size=n, replace=False))
    return np.column_stack([o.ravel()[idx], p.ravel()[idx]])


def write_scatter(sample: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["obs_m", "pred_m"])
        w.writerows([repr(float(a)), repr(float(b))] for a, b in sample)


def _factor(fine: Raster, coarse: Raster) -> int:
    ratio = coarse.grid.pixel_size / fine.grid.pixel_size
    f = round(ratio)
    if f < 1 or not math.isclose(ratio, f, rel_tol=1e-9):
        raise AlignmentError(f"product resolution {coarse.grid.pixel_size} is not an integer multiple of {fine.grid.pixel_size}")
    return f


def compare_to_product(pred_fine: Raster, product: Raster, obs_fine: Raster, stat: str = "mean",
                       site_id: str = "") -> tuple[SiteReport, SiteReport]:
    """(product vs obs, aggregated prediction vs obs) on the product grid's common valid pixels."""
    require_same_grid(pred_fine, obs_fine, "prediction and observation")
    f = _factor(pred_fine, product)
    pa = aggregate_block(pred_fine, f, stat) if f > 1 else pred_fine
    oa = aggregate_block(obs_fine, f, stat) if f > 1 else obs_fine
    h, w = min(pa.height, product.height), min(pa.width, product.width)
    if abs(pa.grid.origin_x - product.grid.origin_x) > 1e-6 * product.grid.pixel_size or \
            abs(pa.grid.origin_y - product.grid.origin_y) > 1e-6 * product.grid.pixel_size:
        raise AlignmentError("product grid origin does not match the fine grid")
    p, pv = _as_m(pa)
    o, ov = _as_m(oa)
    q, qv = _as_m(product)
    p, pv, o, ov, q, qv = (a[:h, :w] for a in (p, pv, o, ov, q, qv))
    keep = pv & ov & qv
    return (metrics_from_arrays(q[keep], o[keep], f"{site_id}:product"),
            metrics_from_arrays(p[keep], o[keep], f"{site_id}:model"))


def landscape_stats(median_30m: Raster) -> LandscapeStats:
    """Height-threshold fractions over valid pixels; tall fractions are relative to forest pixels."""
    h, valid = _as_m(median_30m)
    v = h[valid]
    if v.size == 0:
        raise EmptyInputError("no valid pixels")
    forest = v[v >= FOREST_M]
    n = v.size
    nf = forest.size
    return LandscapeStats(
        frac_ge_2m=float(np.count_nonzero(v >= 2.0) / n),
        frac_ge_5m=float(nf / n),
        median_forest_height_m=float(np.median(forest)) if nf else None,
        frac_forest_ge_40m=float(np.count_nonzero(forest >= 40.0) / nf) if nf else 0.0,
        frac_forest_ge_50m=float(np.count_nonzero(forest >= 50.0) / nf) if nf else 0.0,
        max_median_height_m=float(v.max()),
        n_pixels=int(n),
    )


def _fmt(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def write_records_csv(records, path) -> None:
    records = list(records)
    if not records:
        raise ParameterError("nothing to write")
    names = [f.name for f in fields(records[0])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in records:
            w.writerow([_fmt(getattr(r, k)) for k in names])


def format_text(record) -> str:
    lines = []
    for f in fields(record):
        v = getattr(record, f.name)
        if isinstance(v, float):
            v = f"{v:.4f}"
        elif v is None:
            v = "n/a"
        lines.append(f"{f.name:<24} {v}")
    return "\n".join(lines) + "\n"


def render_png(r: Raster, path, max_m: float = RENDER_MAX_M, band: int = 0) -> None:
    """8-bit grayscale with a linear 0..max_m ramp; u8 rasters are read as quantized codes."""
    from PIL import Image

    data = r.band(band)
    h = unscale_chm(data) if r.dtype == "u8" else data.astype(np.float64)
    g = np.clip(np.round(h / max_m * 255.0), 0, 255).astype(np.uint8)
    g[~r.valid(band)] = 0
    Image.fromarray(g).save(path, format="PNG")
