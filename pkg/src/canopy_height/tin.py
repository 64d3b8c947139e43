"""Delaunay TIN surfaces and the DTM / pit-free DSM / CHM rasters built from them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, QhullError

from . import kernels
from .errors import DegenerateInputError, EmptyCloudError, ParameterError
from .lidar import GROUND, PointCloud
from .raster import NODATA_F32, GridSpec, Raster, fill_nearest, require_same_grid

CHM_SCALE = 2.5


@dataclass(frozen=True)
class PitfreeParams:
    thresholds: tuple = (0.0, 2.0, 5.0, 10.0, 15.0)
    max_edge_base: float = 0.0
    max_edge_layers: float = 1.5

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        if not t or t[0] != 0.0 or any(b <= a for a, b in zip(t, t[1:])):
            raise ParameterError(f"thresholds must start at 0 and strictly increase, got {t}")
        if self.max_edge_base < 0 or self.max_edge_layers < 0:
            raise ParameterError("max edge lengths must be >= 0")
        object.__setattr__(self, "thresholds", t)


@dataclass(frozen=True, eq=False)
class Tin:
    vertices: np.ndarray  # (n, 3) float64
    triangles: np.ndarray  # (m, 3) int64, counter-clockwise
    _locator: object = field(default=None, repr=False)
    _simplex_map: np.ndarray | None = field(default=None, repr=False)

    def edge_lengths(self) -> np.ndarray:
        """(m, 3) 2-D lengths of each triangle's edges."""
        xy = self.vertices[:, :2]
        p = xy[self.triangles]
        return np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)


def merge_duplicates(points: np.ndarray, keep: str = "max") -> np.ndarray:
    """Collapse points sharing an exact (x, y), keeping the max (or min) z."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if keep not in ("max", "min"):
        raise ParameterError(f"keep must be 'max' or 'min', got {keep!r}")
    z = pts[:, 2] if keep == "min" else -pts[:, 2]
    order = np.lexsort((z, pts[:, 1], pts[:, 0]))
    s = pts[order]
    first = np.ones(len(s), dtype=bool)
    first[1:] = (s[1:, 0] != s[:-1, 0]) | (s[1:, 1] != s[:-1, 1])
    return s[first]


def delaunay(points, keep: str = "max") -> Tin:
    """Delaunay triangulation of the (x, y) projection, carrying z."""
    pts = merge_duplicates(points, keep)
    if len(pts) < 3:
        raise DegenerateInputError(f"need >= 3 distinct (x, y) points, got {len(pts)}")
    xy = pts[:, :2]
    centered = xy - xy.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-12 * max(1.0, np.abs(centered).max())) < 2:
        raise DegenerateInputError("all points are collinear in (x, y)")
    try:
        tri = Delaunay(xy)
    except QhullError as exc:
        raise DegenerateInputError(f"triangulation failed: {exc}") from None
    simp = tri.simplices.astype(np.int64)
    p = xy[simp]
    area2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    good = area2 != 0
    # orient counter-clockwise
    flip = area2 < 0
    simp[flip] = simp[flip][:, [0, 2, 1]]
    smap = np.full(len(simp), -1, dtype=np.int64)
    smap[good] = np.arange(good.sum())
    if not good.any():
        raise DegenerateInputError("no non-degenerate triangles")
    return Tin(pts, simp[good], tri, smap)


def _barycentric(tin: Tin, tri_idx: np.ndarray, x: np.ndarray, y: np.ndarray):
    v = tin.vertices
    t = tin.triangles[tri_idx]
    x0, y0 = v[t[:, 0], 0], v[t[:, 0], 1]
    x1, y1 = v[t[:, 1], 0], v[t[:, 1], 1]
    x2, y2 = v[t[:, 2], 0], v[t[:, 2], 1]
    det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
    l0 = ((y1 - y2) * (x - x2) + (x2 - x1) * (y - y2)) / det
    l1 = ((y2 - y0) * (x - x2) + (x0 - x2) * (y - y2)) / det
    return l0, l1, 1.0 - l0 - l1


def _interp(tin: Tin, tri_idx, x, y):
    l0, l1, l2 = _barycentric(tin, tri_idx, x, y)
    z = tin.vertices[:, 2][tin.triangles[tri_idx]]
    return l0 * z[:, 0] + l1 * z[:, 1] + l2 * z[:, 2], np.minimum(np.minimum(l0, l1), l2)


def _brute_locate(tin: Tin, x: float, y: float) -> int:
    n = len(tin.triangles)
    l0, l1, l2 = _barycentric(tin, np.arange(n), np.full(n, x), np.full(n, y))
    inside = np.flatnonzero((l0 >= -kernels.BARY_EPS) & (l1 >= -kernels.BARY_EPS) & (l2 >= -kernels.BARY_EPS))
    return int(inside[0]) if inside.size else -1


def tin_interpolate_many(tin: Tin, x, y, nodata: float = np.nan) -> np.ndarray:
    """Linear interpolation at many points; ``nodata`` outside the hull."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    out = np.full(x.shape, nodata, dtype=np.float64)
    if tin._locator is not None:
        s = tin._locator.find_simplex(np.column_stack([x, y]))
        idx = np.where(s >= 0, tin._simplex_map[np.maximum(s, 0)], -1)
    else:
        idx = np.full(x.shape, -1, dtype=np.int64)
    ok = idx >= 0
    if ok.any():
        z, lmin = _interp(tin, idx[ok], x[ok], y[ok])
        good = lmin >= -kernels.BARY_EPS
        sel = np.flatnonzero(ok)
        out[sel[good]] = z[good]
        idx[sel[~good]] = -1
    for k in np.flatnonzero(idx < 0):
        t = _brute_locate(tin, x[k], y[k])
        if t >= 0:
            out[k] = _interp(tin, np.array([t]), x[k:k + 1], y[k:k + 1])[0][0]
    return out


def tin_interpolate(tin: Tin, x: float, y: float) -> float | None:
    """Elevation at (x, y), or ``None`` outside the convex hull."""
    v = tin_interpolate_many(tin, [x], [y])[0]
    return None if np.isnan(v) else float(v)


def tin_surface(tin: Tin, grid: GridSpec, max_edge: float = 0.0):
    """Float64 pixel-center samples and their validity mask (see :func:`rasterize_tin`)."""
    if max_edge < 0:
        raise ParameterError("max_edge must be >= 0")
    keep = np.ones(len(tin.triangles), dtype=np.bool_)
    if max_edge > 0:
        keep = tin.edge_lengths().max(axis=1) <= max_edge
    v = tin.vertices
    return kernels.rasterize_triangles(
        np.ascontiguousarray(v[:, 0]), np.ascontiguousarray(v[:, 1]), np.ascontiguousarray(v[:, 2]),
        tin.triangles, keep, grid.origin_x, grid.origin_y, grid.pixel_size, grid.width, grid.height)


def _to_raster(grid: GridSpec, vals: np.ndarray, valid: np.ndarray) -> Raster:
    return Raster(grid, np.where(valid, vals, NODATA_F32).astype(np.float32), NODATA_F32)


def rasterize_tin(tin: Tin, grid: GridSpec, max_edge: float = 0.0) -> Raster:
    """Sample the TIN at pixel centers; triangles with an edge > ``max_edge`` leave no-data."""
    return _to_raster(grid, *tin_surface(tin, grid, max_edge))


def _fill(vals: np.ndarray, valid: np.ndarray) -> np.ndarray:
    if not valid.any():
        raise DegenerateInputError("surface has no valid pixels on this grid")
    return fill_nearest(vals, valid)


def _ground_points(cloud: PointCloud) -> np.ndarray:
    if len(cloud) == 0:
        raise EmptyCloudError("empty point cloud")
    g = cloud.classification == GROUND
    if g.sum() < 3:
        raise DegenerateInputError(f"need >= 3 ground points (class {GROUND}), got {int(g.sum())}")
    return cloud.xyz[g]


def ground_tin(cloud: PointCloud) -> Tin:
    return delaunay(_ground_points(cloud), keep="min")


def dtm_surface(cloud: PointCloud, grid: GridSpec, tin: Tin | None = None) -> np.ndarray:
    tin = tin or ground_tin(cloud)
    return _fill(*tin_surface(tin, grid, 0.0))


def build_dtm(cloud: PointCloud, grid: GridSpec) -> Raster:
    """Ground-return TIN rasterized without edge filtering, gaps filled by nearest pixel."""
    vals = dtm_surface(cloud, grid)
    return _to_raster(grid, vals, np.ones(vals.shape, dtype=bool))


def height_above_ground(x, y, z, dtm_tin: Tin, dtm: np.ndarray, grid: GridSpec) -> np.ndarray:
    """z minus terrain; the filled DTM grid covers points off the ground hull."""
    ground = tin_interpolate_many(dtm_tin, x, y)
    off = np.isnan(ground)
    if off.any():
        cols = np.clip(np.floor((x[off] - grid.origin_x) / grid.pixel_size).astype(int), 0, grid.width - 1)
        rows = np.clip(np.floor((grid.origin_y - y[off]) / grid.pixel_size).astype(int), 0, grid.height - 1)
        ground[off] = dtm[rows, cols]
    return z - ground


def pitfree_layer_points(cloud: PointCloud, params: PitfreeParams, grid: GridSpec):
    """``[(points, max_edge), ...]`` feeding each pit-free layer, base layer first."""
    if len(cloud) == 0:
        raise EmptyCloudError("empty point cloud")
    first = cloud.return_number == 1
    if first.sum() < 3:
        raise DegenerateInputError(f"need >= 3 first returns, got {int(first.sum())}")
    pts = cloud.xyz[first]
    out = [(pts, params.max_edge_base)]
    positive = [t for t in params.thresholds if t > 0]
    if positive:
        dtm_tin = ground_tin(cloud)
        dtm = dtm_surface(cloud, grid, dtm_tin)
        hag = height_above_ground(pts[:, 0], pts[:, 1], pts[:, 2], dtm_tin, dtm, grid)
        out.extend((pts[hag >= t], params.max_edge_layers) for t in positive)
    return out


def pitfree_surface(cloud: PointCloud, grid: GridSpec, params: PitfreeParams | None = None) -> np.ndarray:
    """Float64 pit-free DSM (filled); layers with fewer than 3 usable points are skipped."""
    params = params or PitfreeParams()
    best = np.full((grid.height, grid.width), -np.inf)
    for k, (pts, max_edge) in enumerate(pitfree_layer_points(cloud, params, grid)):
        try:
            tin = delaunay(pts, keep="max")
        except DegenerateInputError:
            if k == 0:
                raise
            continue
        vals, valid = tin_surface(tin, grid, max_edge)
        np.maximum(best, np.where(valid, vals, -np.inf), out=best)
    valid = np.isfinite(best)
    return _fill(np.where(valid, best, 0.0), valid)


def build_dsm_pitfree(cloud: PointCloud, grid: GridSpec, params: PitfreeParams | None = None) -> Raster:
    """Per-pixel max over the base first-return TIN and height-thresholded partial TINs."""
    vals = pitfree_surface(cloud, grid, params)
    return _to_raster(grid, vals, np.ones(vals.shape, dtype=bool))


def quantize_heights(h: np.ndarray) -> np.ndarray:
    """Heights in meters to 8-bit codes: round(h * 2.5) clamped to [0, 255]."""
    return np.clip(np.round(np.asarray(h, dtype=np.float64) * CHM_SCALE), 0, 255).astype(np.uint8)


def unscale_chm(q):
    """8-bit CHM codes back to meters."""
    return np.asarray(q, dtype=np.float64) / CHM_SCALE


def build_chm(dsm: Raster, dtm: Raster) -> Raster:
    """Quantized canopy height: clamp(round((dsm - dtm) * 2.5), 0, 255); no-data -> 0."""
    require_same_grid(dsm, dtm, "DSM and DTM")
    diff = dsm.data[0].astype(np.float64) - dtm.data[0].astype(np.float64)
    q = quantize_heights(diff)
    q[~(dsm.valid() & dtm.valid())] = 0
    return Raster(dsm.grid, q, None, dsm.crs)


def grid_for_cloud(cloud: PointCloud, res: float) -> GridSpec:
    (xmin, ymin, _), (xmax, ymax, _) = cloud.bounds
    return GridSpec.covering(xmin, ymin, xmax, ymax, res)
