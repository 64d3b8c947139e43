"""Point-cloud container, CSV/LAS readers and writers, isolated-voxel denoising."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import EmptyCloudError, ParameterError, ParseError, UnsupportedFormatError

CSV_HEADER = ["x", "y", "z", "classification", "return_number"]
GROUND = 2


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Columnar LiDAR returns.

    Columns are read-only numpy arrays of equal length; ``meta`` carries format
    hints (e.g. LAS scale/offset) that writers may reuse.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    classification: np.ndarray
    return_number: np.ndarray
    crs_tag: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = {}
        for name, dtype in (("x", np.float64), ("y", np.float64), ("z", np.float64),
                            ("classification", np.uint8), ("return_number", np.uint8)):
            arr = np.array(getattr(self, name), dtype=dtype).ravel()
            arr.flags.writeable = False
            cols[name] = arr
            object.__setattr__(self, name, arr)
        n = cols["x"].size
        if any(a.size != n for a in cols.values()):
            raise ParameterError("point cloud columns differ in length")
        if not np.all(np.isfinite(cols["x"])) or not np.all(np.isfinite(cols["y"])) \
                or not np.all(np.isfinite(cols["z"])):
            raise ParameterError("point coordinates must be finite")
        if n and cols["return_number"].min() < 1:
            raise ParameterError("return_number must be >= 1")

    def __len__(self) -> int:
        return self.x.size

    @property
    def xyz(self) -> np.ndarray:
        return np.column_stack([self.x, self.y, self.z])

    @property
    def bounds(self) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
        """``((xmin, ymin, zmin), (xmax, ymax, zmax))``."""
        if len(self) == 0:
            raise EmptyCloudError("empty point cloud has no bounds")
        return ((float(self.x.min()), float(self.y.min()), float(self.z.min())),
                (float(self.x.max()), float(self.y.max()), float(self.z.max())))

    def subset(self, keep: np.ndarray) -> "PointCloud":
        return PointCloud(self.x[keep], self.y[keep], self.z[keep], self.classification[keep],
                          self.return_number[keep], self.crs_tag, dict(self.meta))

    def translated(self, dx: float = 0.0, dy: float = 0.0, dz: float = 0.0) -> "PointCloud":
        return PointCloud(self.x + dx, self.y + dy, self.z + dz, self.classification,
                          self.return_number, self.crs_tag, dict(self.meta))

    def equals(self, other: "PointCloud") -> bool:
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in CSV_HEADER)


def concat(clouds) -> PointCloud:
    clouds = list(clouds)
    return PointCloud(*(np.concatenate([getattr(c, col) for c in clouds]) for col in CSV_HEADER),
                      crs_tag=clouds[0].crs_tag if clouds else "")


# ---------------------------------------------------------------- CSV

def read_csv(path) -> PointCloud:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyCloudError(f"{path}: empty file")
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}", line=1)
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}", line=lineno)
            try:
                x, y, z = (float(v) for v in row[:3])
                cls, ret = int(row[3]), int(row[4])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(z)):
                raise ParseError("non-finite coordinate", line=lineno)
            if not 0 <= cls <= 255:
                raise ParseError(f"classification {cls} outside [0, 255]", line=lineno)
            if not 1 <= ret <= 255:
                raise ParseError(f"return_number {ret} outside [1, 255]", line=lineno)
            rows.append((x, y, z, cls, ret))
    if not rows:
        raise EmptyCloudError(f"{path}: no points")
    cols = list(zip(*rows))
    return PointCloud(*cols)


def write_csv(cloud: PointCloud, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for x, y, z, c, r in zip(cloud.x.tolist(), cloud.y.tolist(), cloud.z.tolist(),
                                 cloud.classification.tolist(), cloud.return_number.tolist()):
            w.writerow([repr(x), repr(y), repr(z), c, r])


# ---------------------------------------------------------------- LAS

_HEADER_SIZE = {2: 227, 3: 235, 4: 375}
_RECORD_LEN = {0: 20, 1: 28, 6: 30}

_LEGACY_FIELDS = [("X", "<i4"), ("Y", "<i4"), ("Z", "<i4"), ("intensity", "<u2"), ("bits", "u1"),
                  ("classification", "u1"), ("scan_angle", "i1"), ("user_data", "u1"), ("source_id", "<u2")]
_FMT6_FIELDS = [("X", "<i4"), ("Y", "<i4"), ("Z", "<i4"), ("intensity", "<u2"), ("bits", "u1"),
                ("flags", "u1"), ("classification", "u1"), ("user_data", "u1"), ("scan_angle", "<i2"),
                ("source_id", "<u2"), ("gps_time", "<f8")]


def _point_dtype(fmt: int, record_len: int) -> np.dtype:
    fields = _FMT6_FIELDS if fmt == 6 else list(_LEGACY_FIELDS)
    if fmt == 1:
        fields = fields + [("gps_time", "<f8")]
    base = np.dtype(fields)
    if record_len < base.itemsize:
        raise UnsupportedFormatError(f"record length {record_len} too short for point format {fmt}")
    return np.dtype({"names": base.names, "formats": [base.fields[n][0] for n in base.names],
                     "offsets": [base.fields[n][1] for n in base.names], "itemsize": record_len})


def read_las(path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) == 0:
        raise EmptyCloudError(f"{path}: empty file")
    if len(raw) < 227 or raw[:4] != b"LASF":
        raise UnsupportedFormatError(f"{path}: not a LAS file")
    major, minor = raw[24], raw[25]
    if major != 1 or minor not in (2, 3, 4):
        raise UnsupportedFormatError(f"{path}: LAS {major}.{minor} not supported (need 1.2-1.4)")
    (offset_to_points,) = struct.unpack_from("<I", raw, 96)
    fmt_byte, record_len, legacy_count = struct.unpack_from("<BHI", raw, 104)
    if fmt_byte & 0xC0:
        raise UnsupportedFormatError(f"{path}: compressed (LAZ) point data")
    fmt = fmt_byte & 0x3F
    if fmt not in _RECORD_LEN:
        raise UnsupportedFormatError(f"{path}: point data format {fmt} not supported (need 0, 1 or 6)")
    scale = struct.unpack_from("<3d", raw, 131)
    offset = struct.unpack_from("<3d", raw, 155)
    count = legacy_count
    if minor == 4 and len(raw) >= 375:
        (count64,) = struct.unpack_from("<Q", raw, 247)
        if count64:
            count = count64
    if count == 0:
        raise EmptyCloudError(f"{path}: no points")
    dtype = _point_dtype(fmt, record_len)
    end = offset_to_points + count * record_len
    if end > len(raw):
        raise ParseError(f"{path}: point block truncated ({len(raw)} bytes, need {end})")
    pts = np.frombuffer(raw, dtype=dtype, count=count, offset=offset_to_points)
    if fmt == 6:
        ret = pts["bits"] & 0x0F
        cls = pts["classification"]
    else:
        ret = pts["bits"] & 0x07
        cls = pts["classification"] & 0x1F
    if np.any(ret == 0):
        bad = int(np.flatnonzero(ret == 0)[0])
        raise ParseError(f"{path}: point {bad} has return_number 0")
    return PointCloud(
        pts["X"] * scale[0] + offset[0],
        pts["Y"] * scale[1] + offset[1],
        pts["Z"] * scale[2] + offset[2],
        cls,
        ret,
        meta={"las_scale": tuple(scale), "las_offset": tuple(offset), "las_format": fmt},
    )


def write_las(cloud: PointCloud, path, point_format: int | None = None, scale=None, offset=None) -> None:
    """Write an uncompressed LAS file (1.2 for formats 0/1, 1.4 for format 6)."""
    if len(cloud) == 0:
        raise EmptyCloudError("refusing to write an empty cloud")
    fmt = point_format if point_format is not None else cloud.meta.get("las_format", 0)
    if fmt not in _RECORD_LEN:
        raise UnsupportedFormatError(f"point data format {fmt} not supported")
    scale = tuple(scale or cloud.meta.get("las_scale") or (0.001, 0.001, 0.001))
    if offset is None:
        offset = cloud.meta.get("las_offset") or tuple(float(np.floor(v.min())) for v in (cloud.x, cloud.y, cloud.z))
    offset = tuple(offset)
    if fmt != 6:
        if cloud.classification.max() > 31:
            raise UnsupportedFormatError("classification > 31 needs point format 6")
        if cloud.return_number.max() > 7:
            raise UnsupportedFormatError("return_number > 7 needs point format 6")
    elif cloud.return_number.max() > 15:
        raise UnsupportedFormatError("return_number > 15 not representable")

    minor = 4 if fmt == 6 else 2
    header_size = _HEADER_SIZE[minor]
    record_len = _RECORD_LEN[fmt]
    n = len(cloud)
    ints = []
    for v, s, o in zip((cloud.x, cloud.y, cloud.z), scale, offset):
        q = np.round((v - o) / s)
        if q.min() < -2**31 or q.max() >= 2**31:
            raise ParameterError("coordinates overflow int32 at this scale/offset")
        ints.append(q.astype("<i4"))
    pts = np.zeros(n, dtype=_point_dtype(fmt, record_len))
    pts["X"], pts["Y"], pts["Z"] = ints
    pts["bits"] = cloud.return_number
    pts["classification"] = cloud.classification
    # coordinates as actually stored, for the header extent
    xs = [q * s + o for q, s, o in zip(ints, scale, offset)]

    by_return = np.bincount(cloud.return_number, minlength=16)[1:16]
    h = bytearray(header_size)
    h[0:4] = b"LASF"
    h[24], h[25] = 1, minor
    h[26:58] = b"canopy_height".ljust(32, b"\0")
    h[58:90] = b"canopy_height".ljust(32, b"\0")
    struct.pack_into("<H", h, 94, header_size)
    struct.pack_into("<I", h, 96, header_size)
    struct.pack_into("<I", h, 100, 0)
    legacy = n if n < 2**32 else 0
    struct.pack_into("<BHI", h, 104, fmt, record_len, legacy)
    struct.pack_into("<5I", h, 111, *[int(c) if n < 2**32 else 0 for c in by_return[:5]])
    struct.pack_into("<3d", h, 131, *scale)
    struct.pack_into("<3d", h, 155, *offset)
    struct.pack_into("<6d", h, 179, xs[0].max(), xs[0].min(), xs[1].max(), xs[1].min(), xs[2].max(), xs[2].min())
    if minor == 4:
        struct.pack_into("<Q", h, 247, n)
        struct.pack_into("<15Q", h, 255, *[int(c) for c in by_return])
    with open(path, "wb") as fh:
        fh.write(bytes(h))
        fh.write(pts.tobytes())


def read_point_cloud(path, format: str | None = None) -> PointCloud:
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    if fmt == "csv":
        return read_csv(path)
    if fmt == "las":
        return read_las(path)
    raise UnsupportedFormatError(f"unknown point-cloud format {fmt!r}")


def write_point_cloud(cloud: PointCloud, path, format: str | None = None) -> None:
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    if fmt == "csv":
        write_csv(cloud, path)
    elif fmt == "las":
        write_las(cloud, path)
    else:
        raise UnsupportedFormatError(f"unknown point-cloud format {fmt!r}")


# ---------------------------------------------------------------- denoising

def voxel_indices(cloud: PointCloud, voxel_res: float) -> np.ndarray:
    """Integer voxel coordinates on a lattice anchored at the cloud's min corner."""
    lo = np.array(cloud.bounds[0])
    return np.floor((cloud.xyz - lo) / voxel_res).astype(np.int64)


def ivf_denoise(cloud: PointCloud, voxel_res: float = 1.0, max_other: int = 5) -> PointCloud:
    """Drop points with at most ``max_other`` other points in their 3x3x3 voxel neighborhood."""
    if not voxel_res > 0:
        raise ParameterError(f"voxel_res must be > 0, got {voxel_res}")
    if max_other < 0:
        raise ParameterError(f"max_other must be >= 0, got {max_other}")
    if len(cloud) == 0:
        raise EmptyCloudError("cannot denoise an empty cloud")
    others = kernels.voxel_other_counts(voxel_indices(cloud, voxel_res))
    return cloud.subset(others > max_other)
