"""Raster model, flat binary persistence and raster-to-raster operations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import AlignmentError, CorruptFileError, ParameterError, UnsupportedFormatError

NODATA_F32 = -9999.0

_DTYPES = {"u8": np.dtype("u1"), "f32": np.dtype("<f4")}


@dataclass(frozen=True)
class GridSpec:
    """Square-pixel north-up grid; ``origin`` is the top-left outer corner."""

    origin_x: float
    origin_y: float
    pixel_size: float
    width: int
    height: int

    def __post_init__(self):
        if not self.pixel_size > 0:
            raise ParameterError(f"pixel_size must be > 0, got {self.pixel_size}")
        if self.width < 1 or self.height < 1:
            raise ParameterError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    def centers(self):
        """Pixel-center coordinate vectors ``(xs[width], ys[height])``."""
        xs = self.origin_x + (np.arange(self.width) + 0.5) * self.pixel_size
        ys = self.origin_y - (np.arange(self.height) + 0.5) * self.pixel_size
        return xs, ys

    def center(self, col: int, row: int) -> tuple[float, float]:
        return (self.origin_x + (col + 0.5) * self.pixel_size,
                self.origin_y - (row + 0.5) * self.pixel_size)

    def translated(self, dx: float, dy: float) -> "GridSpec":
        return replace(self, origin_x=self.origin_x + dx, origin_y=self.origin_y + dy)

    @classmethod
    def covering(cls, xmin, ymin, xmax, ymax, pixel_size) -> "GridSpec":
        """Smallest grid snapped to multiples of ``pixel_size`` that contains the box."""
        ox = math.floor(xmin / pixel_size) * pixel_size
        oy = math.ceil(ymax / pixel_size) * pixel_size
        width = max(1, math.ceil((xmax - ox) / pixel_size - 1e-9))
        height = max(1, math.ceil((oy - ymin) / pixel_size - 1e-9))
        # a point exactly on the far edge still needs a pixel
        if ox + width * pixel_size <= xmax:
            width += 1
        if oy - height * pixel_size >= ymin:
            height += 1
        return cls(ox, oy, pixel_size, width, height)


@dataclass(frozen=True, eq=False)
class Raster:
    """Band-sequential grid of u8 or f32 values, shape ``(bands, height, width)``."""

    grid: GridSpec
    data: np.ndarray
    nodata: float | None = None
    crs: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.dtype not in (np.uint8, np.float32):
            raise UnsupportedFormatError(f"raster dtype must be uint8 or float32, got {data.dtype}")
        if data.ndim != 3 or data.shape[1:] != (self.grid.height, self.grid.width):
            raise AlignmentError(f"data shape {data.shape} does not match grid {self.grid.height}x{self.grid.width}")
        if data.dtype == np.float32 and not np.all(np.isfinite(data)):
            raise ParameterError("f32 raster values must be finite")
        view = data.view()
        view.flags.writeable = False
        object.__setattr__(self, "data", view)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.grid.width

    @property
    def height(self) -> int:
        return self.grid.height

    @property
    def dtype(self) -> str:
        return "u8" if self.data.dtype == np.uint8 else "f32"

    def band(self, i: int = 0) -> np.ndarray:
        return self.data[i]

    def valid(self, band: int = 0) -> np.ndarray:
        if self.nodata is None:
            return np.ones((self.height, self.width), dtype=bool)
        return self.data[band] != self.nodata

    def with_data(self, data, nodata="keep") -> "Raster":
        return Raster(self.grid, data, self.nodata if nodata == "keep" else nodata, self.crs)

    def equals(self, other: "Raster") -> bool:
        return (self.grid == other.grid and self.data.dtype == other.data.dtype
                and np.array_equal(self.data, other.data) and self.nodata == other.nodata
                and self.crs == other.crs)


def require_same_grid(a: Raster, b: Raster, what: str = "rasters") -> None:
    if a.grid != b.grid:
        raise AlignmentError(f"{what} do not share a grid: {a.grid} vs {b.grid}")


# ---------------------------------------------------------------- persistence

def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".hdr", ".bin"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".hdr"), p.with_name(p.name + ".bin")


def write_raster(raster: Raster, path) -> None:
    hdr, binp = _paths(path)
    g = raster.grid
    lines = [
        f"width = {g.width}",
        f"height = {g.height}",
        f"bands = {raster.bands}",
        f"dtype = {raster.dtype}",
        f"origin_x = {g.origin_x!r}",
        f"origin_y = {g.origin_y!r}",
        f"pixel_size = {g.pixel_size!r}",
        f"nodata = {'none' if raster.nodata is None else repr(float(raster.nodata))}",
        f"crs = {raster.crs}",
    ]
    hdr.write_text("\n".join(lines) + "\n", encoding="utf-8")
    binp.write_bytes(raster.data.astype(_DTYPES[raster.dtype], copy=False).tobytes())


def read_raster(path) -> Raster:
    hdr, binp = _paths(path)
    fields = {}
    for line in hdr.read_text(encoding="utf-8").splitlines():
        if "=" not in line:
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        dtype_name = fields["dtype"]
        width, height, bands = int(fields["width"]), int(fields["height"]), int(fields["bands"])
        grid = GridSpec(float(fields["origin_x"]), float(fields["origin_y"]), float(fields["pixel_size"]),
                        width, height)
    except KeyError as exc:
        raise CorruptFileError(f"{hdr}: missing header key {exc}") from None
    except ValueError as exc:
        raise CorruptFileError(f"{hdr}: {exc}") from None
    if dtype_name not in _DTYPES:
        raise UnsupportedFormatError(f"{hdr}: unknown dtype {dtype_name!r}")
    dt = _DTYPES[dtype_name]
    payload = binp.read_bytes()
    expected = bands * width * height * dt.itemsize
    if len(payload) != expected:
        raise CorruptFileError(f"{binp}: payload is {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype=dt).reshape(bands, height, width).astype(dt.newbyteorder("="))
    nd = fields.get("nodata", "none")
    nodata = None if nd.lower() in ("none", "") else float(nd)
    return Raster(grid, data, nodata, fields.get("crs", ""))


# ---------------------------------------------------------------- resampling

def resample_nearest(r: Raster, target_pixel_size: float) -> Raster:
    """Nearest-neighbor resampling onto a grid sharing ``r``'s origin."""
    if not target_pixel_size > 0:
        raise ParameterError(f"target pixel size must be > 0, got {target_pixel_size}")
    g = r.grid
    if target_pixel_size == g.pixel_size:
        return Raster(g, r.data.copy(), r.nodata, r.crs)
    ratio = g.pixel_size / target_pixel_size
    width = math.ceil(g.width * ratio - 1e-9)
    height = math.ceil(g.height * ratio - 1e-9)
    step = target_pixel_size / g.pixel_size
    cols = np.minimum(np.floor((np.arange(width) + 0.5) * step).astype(np.int64), g.width - 1)
    rows = np.minimum(np.floor((np.arange(height) + 0.5) * step).astype(np.int64), g.height - 1)
    out = r.data[:, rows[:, None], cols[None, :]]
    return Raster(GridSpec(g.origin_x, g.origin_y, target_pixel_size, width, height), out, r.nodata, r.crs)


def crop(r: Raster, row: int, col: int, height: int, width: int) -> Raster:
    g = r.grid
    if row < 0 or col < 0 or row + height > g.height or col + width > g.width:
        raise AlignmentError("crop window outside raster")
    return Raster(crop_grid(g, row, col, width, height),
                  r.data[:, row:row + height, col:col + width].copy(), r.nodata, r.crs)


def common_extent(a: Raster, b: Raster) -> tuple[Raster, Raster]:
    """Crop two rasters with the same origin and pixel size to their shared rows and columns."""
    ga, gb = a.grid, b.grid
    if (ga.origin_x, ga.origin_y, ga.pixel_size) != (gb.origin_x, gb.origin_y, gb.pixel_size):
        raise AlignmentError(f"rasters differ in origin or pixel size: {ga} vs {gb}")
    h, w = min(ga.height, gb.height), min(ga.width, gb.width)
    return crop(a, 0, 0, h, w), crop(b, 0, 0, h, w)


def crop_grid(g: GridSpec, row: int, col: int, width: int, height: int) -> GridSpec:
    return GridSpec(g.origin_x + col * g.pixel_size, g.origin_y - row * g.pixel_size, g.pixel_size, width, height)


# ---------------------------------------------------------------- patches

@dataclass(frozen=True, eq=False)
class PatchPair:
    """Aligned 4-band image patch and 1-band quantized CHM patch."""

    image: np.ndarray  # (4, P, P) uint8
    target: np.ndarray  # (P, P) uint8
    offset: tuple[int, int] = (0, 0)
    source_id: str = ""
    grid: GridSpec | None = None

    @property
    def size(self) -> int:
        return self.target.shape[-1]


def retile(image: Raster, chm: Raster, patch: int = 256, source_id: str = "") -> list[PatchPair]:
    """Cut non-overlapping full-size patches, row-major; partial edge patches are dropped."""
    require_same_grid(image, chm, "image and CHM")
    if patch < 1:
        raise ParameterError("patch size must be >= 1")
    pairs = []
    for r in range(0, image.height - patch + 1, patch):
        for c in range(0, image.width - patch + 1, patch):
            pairs.append(PatchPair(
                image.data[:, r:r + patch, c:c + patch].copy(),
                chm.data[0, r:r + patch, c:c + patch].copy(),
                (r, c),
                source_id,
                crop_grid(image.grid, r, c, patch, patch),
            ))
    return pairs


# ---------------------------------------------------------------- footprints

@dataclass(frozen=True)
class FootprintSet:
    polygons: tuple = ()

    @classmethod
    def from_rings(cls, rings) -> "FootprintSet":
        return cls(tuple(np.asarray(r, dtype=np.float64).reshape(-1, 2) for r in rings))


def read_footprints(path) -> FootprintSet:
    """Load rings from ``{"polygons": [[[x, y], ...], ...]}`` or a GeoJSON FeatureCollection.

    For GeoJSON polygons only the exterior ring is used: a courtyard inside a
    building is masked along with the building.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    rings = []
    if isinstance(doc, dict) and "polygons" in doc:
        rings = doc["polygons"]
    else:
        feats = doc.get("features", [doc]) if isinstance(doc, dict) else doc
        for f in feats:
            geom = f.get("geometry", f)
            kind, coords = geom.get("type"), geom.get("coordinates", [])
            if kind == "Polygon" and coords:
                rings.append(coords[0])
            elif kind == "MultiPolygon":
                rings.extend(p[0] for p in coords if p)
    return FootprintSet.from_rings(rings)


def write_footprints(fps: FootprintSet, path) -> None:
    Path(path).write_text(json.dumps({"polygons": [np.asarray(r).tolist() for r in fps.polygons]}),
                          encoding="utf-8")


def _clean_ring(ring: np.ndarray):
    ring = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(np.unique(ring, axis=0)) < 3:
        return None
    x, y = ring[:, 0], ring[:, 1]
    area2 = np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))
    if area2 == 0.0:
        return None
    return ring


def rasterize_footprints(fps: FootprintSet, grid: GridSpec, buffer: float = 2.0) -> Raster:
    """u8 mask: 1 where a pixel center is inside a ring (even-odd) or within ``buffer`` of it."""
    if buffer < 0:
        raise ParameterError(f"buffer must be >= 0, got {buffer}")
    rings = []
    skipped = 0
    for ring in fps.polygons:
        clean = _clean_ring(ring)
        if clean is None:
            skipped += 1
        else:
            rings.append(clean)
    if rings:
        xs = np.concatenate([r[:, 0] for r in rings])
        ys = np.concatenate([r[:, 1] for r in rings])
        starts = np.concatenate([[0], np.cumsum([len(r) for r in rings])]).astype(np.int64)
        mask = kernels.footprint_mask(xs, ys, starts, grid.origin_x, grid.origin_y, grid.pixel_size,
                                      grid.width, grid.height, float(buffer))
    else:
        mask = np.zeros((grid.height, grid.width), dtype=np.uint8)
    return Raster(grid, mask, None, meta={"skipped_rings": skipped})


def apply_mask(chm: Raster, mask: Raster) -> Raster:
    """Zero every band of ``chm`` where ``mask`` is 1."""
    require_same_grid(chm, mask, "CHM and mask")
    hit = mask.data[0] == 1
    out = chm.data.copy()
    out[:, hit] = 0
    return Raster(chm.grid, out, chm.nodata, chm.crs)


# ---------------------------------------------------------------- aggregation

def aggregate_block(r: Raster, factor: int, stat: str = "median") -> Raster:
    """Per-block median or mean over ``factor`` x ``factor`` blocks; partial blocks dropped."""
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"factor must be an integer >= 1, got {factor}")
    if stat not in ("median", "mean"):
        raise ParameterError(f"unknown statistic {stat!r}")
    factor = int(factor)
    g = r.grid
    oh, ow = g.height // factor, g.width // factor
    if oh < 1 or ow < 1:
        raise ParameterError(f"raster {g.width}x{g.height} smaller than one {factor}x{factor} block")
    fill = r.nodata if r.nodata is not None else NODATA_F32
    bands = [kernels.block_stat(r.data[b], factor, r.valid(b), stat, fill) for b in range(r.bands)]
    out = np.stack(bands).astype(np.float32)
    grid = GridSpec(g.origin_x, g.origin_y, g.pixel_size * factor, ow, oh)
    empty = any((~r.valid(b)).any() for b in range(r.bands))
    nodata = r.nodata if r.nodata is not None else (NODATA_F32 if empty else None)
    return Raster(grid, out, nodata, r.crs)


# ---------------------------------------------------------------- gap filling

def fill_nearest(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Copy each invalid pixel from the nearest valid pixel.

    Distance is Euclidean in pixel units; ties go to the smallest row, then the
    smallest column.
    """
    if valid.all():
        return values.copy()
    if not valid.any():
        raise ParameterError("cannot fill a raster without valid pixels")
    vr, vc = np.nonzero(valid)
    width = valid.shape[1]
    tree = cKDTree(np.column_stack([vr, vc]).astype(np.float64))
    hr, hc = np.nonzero(~valid)
    holes = np.column_stack([hr, hc]).astype(np.float64)
    k = min(8, vr.size)
    _, idx = tree.query(holes, k=k)
    idx = idx.reshape(len(holes), k)
    # squared integer distances are exact, so ties are detected exactly
    d2 = (vr[idx] - hr[:, None]) ** 2 + (vc[idx] - hc[:, None]) ** 2
    dmin = d2.min(axis=1)
    keys = np.where(d2 == dmin[:, None], vr[idx] * width + vc[idx], np.iinfo(np.int64).max)
    choice = idx[np.arange(len(holes)), keys.argmin(axis=1)]
    # with k neighbors all tied, further tied candidates may exist
    unsure = (d2[:, -1] == dmin) & (k < vr.size)
    for h in np.flatnonzero(unsure):
        cand = np.asarray(tree.query_ball_point(holes[h], np.sqrt(dmin[h]) + 1e-6))
        cd2 = (vr[cand] - hr[h]) ** 2 + (vc[cand] - hc[h]) ** 2
        best = cand[cd2 == cd2.min()]
        choice[h] = best[np.argmin(vr[best] * width + vc[best])]
    out = values.copy()
    out[hr, hc] = values[vr[choice], vc[choice]]
    return out
