"""Hot inner loops, each as a numba kernel plus a numpy fallback.

The public name (e.g. ``voxel_other_counts``) is bound to whichever
implementation :mod:`canopy_height._accel` selects; both variants stay
importable under ``*_numba`` / ``*_numpy`` for testing and benchmarking.
"""

from __future__ import annotations

import warnings

import numpy as np

from ._accel import njit, pick

# Relative slack on barycentric coordinates so pixel centers lying exactly on
# a triangle edge are claimed by the triangle. Pixel bounding boxes below are
# widened by one pixel on purpose; the exact test decides membership.
BARY_EPS = 1e-10


# --------------------------------------------------------------------------
# isolated voxel filter: number of *other* points in the 3x3x3 neighborhood
# --------------------------------------------------------------------------

def _encode_voxels(ijk: np.ndarray):
    # pad by one voxel on each side so neighbor offsets never wrap
    dims = ijk.max(axis=0) + 3
    keys = (ijk[:, 0] + 1) + dims[0] * ((ijk[:, 1] + 1) + dims[1] * (ijk[:, 2] + 1))
    offsets = np.array(
        [dx + dims[0] * (dy + dims[1] * dz) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)],
        dtype=np.int64,
    )
    return keys.astype(np.int64), offsets


def voxel_other_counts_numpy(ijk: np.ndarray) -> np.ndarray:
    keys, offsets = _encode_voxels(ijk)
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    total = np.zeros(uniq.size, dtype=np.int64)
    for off in offsets:
        nb = uniq + off
        pos = np.searchsorted(uniq, nb)
        pos_c = np.minimum(pos, uniq.size - 1)
        hit = uniq[pos_c] == nb
        total[hit] += counts[pos_c[hit]]
    return total[inverse.ravel()] - 1


@njit
def _voxel_totals(uniq, counts, offsets):
    n = uniq.size
    total = np.zeros(n, dtype=np.int64)
    for i in range(n):
        acc = 0
        for k in range(offsets.size):
            target = uniq[i] + offsets[k]
            lo, hi = 0, n
            while lo < hi:
                mid = (lo + hi) >> 1
                if uniq[mid] < target:
                    lo = mid + 1
                else:
                    hi = mid
            if lo < n and uniq[lo] == target:
                acc += counts[lo]
        total[i] = acc
    return total


def voxel_other_counts_numba(ijk: np.ndarray) -> np.ndarray:
    keys, offsets = _encode_voxels(ijk)
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    total = _voxel_totals(uniq, counts.astype(np.int64), offsets)
    return total[inverse.ravel()] - 1


voxel_other_counts = pick(voxel_other_counts_numba, voxel_other_counts_numpy)


# --------------------------------------------------------------------------
# triangle rasterization (barycentric at pixel centers)
# --------------------------------------------------------------------------

@njit
def _rasterize_triangles_nb(vx, vy, vz, tris, keep, ox, oy, px, width, height, out, filled):
    for t in range(tris.shape[0]):
        if not keep[t]:
            continue
        a, b, c = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0, x1, y1, x2, y2 = vx[a], vy[a], vx[b], vy[b], vx[c], vy[c]
        det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if det == 0.0:
            continue
        xmin = min(x0, x1, x2)
        xmax = max(x0, x1, x2)
        ymin = min(y0, y1, y2)
        ymax = max(y0, y1, y2)
        c0 = max(0, int(np.floor((xmin - ox) / px - 0.5)))
        c1 = min(width - 1, int(np.ceil((xmax - ox) / px - 0.5)))
        r0 = max(0, int(np.floor((oy - ymax) / px - 0.5)))
        r1 = min(height - 1, int(np.ceil((oy - ymin) / px - 0.5)))
        for r in range(r0, r1 + 1):
            y = oy - (r + 0.5) * px
            for col in range(c0, c1 + 1):
                if filled[r, col]:
                    continue
                x = ox + (col + 0.5) * px
                l0 = ((y1 - y2) * (x - x2) + (x2 - x1) * (y - y2)) / det
                l1 = ((y2 - y0) * (x - x2) + (x0 - x2) * (y - y2)) / det
                l2 = 1.0 - l0 - l1
                if l0 >= -BARY_EPS and l1 >= -BARY_EPS and l2 >= -BARY_EPS:
                    out[r, col] = l0 * vz[a] + l1 * vz[b] + l2 * vz[c]
                    filled[r, col] = True


def rasterize_triangles_numba(vx, vy, vz, tris, keep, ox, oy, px, width, height):
    out = np.zeros((height, width), dtype=np.float64)
    filled = np.zeros((height, width), dtype=np.bool_)
    _rasterize_triangles_nb(vx, vy, vz, tris.astype(np.int64), keep, float(ox), float(oy), float(px),
                            int(width), int(height), out, filled)
    return out, filled


def rasterize_triangles_numpy(vx, vy, vz, tris, keep, ox, oy, px, width, height):
    out = np.zeros((height, width), dtype=np.float64)
    filled = np.zeros((height, width), dtype=bool)
    for t in np.flatnonzero(keep):
        a, b, c = tris[t]
        x0, y0, x1, y1, x2, y2 = vx[a], vy[a], vx[b], vy[b], vx[c], vy[c]
        det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if det == 0.0:
            continue
        c0 = max(0, int(np.floor((min(x0, x1, x2) - ox) / px - 0.5)))
        c1 = min(width - 1, int(np.ceil((max(x0, x1, x2) - ox) / px - 0.5)))
        r0 = max(0, int(np.floor((oy - max(y0, y1, y2)) / px - 0.5)))
        r1 = min(height - 1, int(np.ceil((oy - min(y0, y1, y2)) / px - 0.5)))
        if c1 < c0 or r1 < r0:
            continue
        y = (oy - (np.arange(r0, r1 + 1) + 0.5) * px)[:, None]
        x = (ox + (np.arange(c0, c1 + 1) + 0.5) * px)[None, :]
        l0 = ((y1 - y2) * (x - x2) + (x2 - x1) * (y - y2)) / det
        l1 = ((y2 - y0) * (x - x2) + (x0 - x2) * (y - y2)) / det
        l2 = 1.0 - l0 - l1
        inside = (l0 >= -BARY_EPS) & (l1 >= -BARY_EPS) & (l2 >= -BARY_EPS)
        block = filled[r0:r1 + 1, c0:c1 + 1]
        write = inside & ~block
        out[r0:r1 + 1, c0:c1 + 1][write] = (l0 * vz[a] + l1 * vz[b] + l2 * vz[c])[write]
        block |= write
    return out, filled


rasterize_triangles = pick(rasterize_triangles_numba, rasterize_triangles_numpy)


# --------------------------------------------------------------------------
# footprint mask: even-odd inside test OR distance to ring <= buffer
# --------------------------------------------------------------------------

@njit
def _footprint_mask_nb(xs, ys, starts, ox, oy, px, width, height, buffer, mask):
    b2 = buffer * buffer
    for ri in range(starts.size - 1):
        s, e = starts[ri], starts[ri + 1]
        xmin = xs[s]
        xmax = xs[s]
        ymin = ys[s]
        ymax = ys[s]
        for k in range(s, e):
            xmin = min(xmin, xs[k])
            xmax = max(xmax, xs[k])
            ymin = min(ymin, ys[k])
            ymax = max(ymax, ys[k])
        c0 = max(0, int(np.floor((xmin - buffer - ox) / px - 0.5)))
        c1 = min(width - 1, int(np.ceil((xmax + buffer - ox) / px - 0.5)))
        r0 = max(0, int(np.floor((oy - ymax - buffer) / px - 0.5)))
        r1 = min(height - 1, int(np.ceil((oy - ymin + buffer) / px - 0.5)))
        n = e - s
        for r in range(r0, r1 + 1):
            y = oy - (r + 0.5) * px
            for col in range(c0, c1 + 1):
                if mask[r, col]:
                    continue
                x = ox + (col + 0.5) * px
                inside = False
                near = False
                for k in range(n):
                    ax, ay = xs[s + k], ys[s + k]
                    bx, by = xs[s + (k + 1) % n], ys[s + (k + 1) % n]
                    if (ay > y) != (by > y):
                        xc = ax + (y - ay) * (bx - ax) / (by - ay)
                        if x < xc:
                            inside = not inside
                    if not near:
                        dx, dy = bx - ax, by - ay
                        ll = dx * dx + dy * dy
                        t = 0.0
                        if ll > 0.0:
                            t = ((x - ax) * dx + (y - ay) * dy) / ll
                            t = min(1.0, max(0.0, t))
                        qx = ax + t * dx - x
                        qy = ay + t * dy - y
                        if qx * qx + qy * qy <= b2:
                            near = True
                if inside or near:
                    mask[r, col] = 1


def footprint_mask_numba(xs, ys, starts, ox, oy, px, width, height, buffer):
    mask = np.zeros((height, width), dtype=np.uint8)
    _footprint_mask_nb(np.asarray(xs, np.float64), np.asarray(ys, np.float64), np.asarray(starts, np.int64),
                       float(ox), float(oy), float(px), int(width), int(height), float(buffer), mask)
    return mask


def footprint_mask_numpy(xs, ys, starts, ox, oy, px, width, height, buffer):
    mask = np.zeros((height, width), dtype=np.uint8)
    b2 = buffer * buffer
    for ri in range(len(starts) - 1):
        rx = np.asarray(xs[starts[ri]:starts[ri + 1]], np.float64)
        ry = np.asarray(ys[starts[ri]:starts[ri + 1]], np.float64)
        c0 = max(0, int(np.floor((rx.min() - buffer - ox) / px - 0.5)))
        c1 = min(width - 1, int(np.ceil((rx.max() + buffer - ox) / px - 0.5)))
        r0 = max(0, int(np.floor((oy - ry.max() - buffer) / px - 0.5)))
        r1 = min(height - 1, int(np.ceil((oy - ry.min() + buffer) / px - 0.5)))
        if c1 < c0 or r1 < r0:
            continue
        y = (oy - (np.arange(r0, r1 + 1) + 0.5) * px)[:, None]
        x = (ox + (np.arange(c0, c1 + 1) + 0.5) * px)[None, :]
        inside = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
        near = np.zeros_like(inside)
        n = rx.size
        for k in range(n):
            ax, ay, bx, by = rx[k], ry[k], rx[(k + 1) % n], ry[(k + 1) % n]
            if by != ay:
                crosses = (ay > y) != (by > y)
                xc = ax + (y - ay) * (bx - ax) / (by - ay)
                inside ^= crosses & (x < xc)
            dx, dy = bx - ax, by - ay
            ll = dx * dx + dy * dy
            if ll > 0.0:
                t = np.clip(((x - ax) * dx + (y - ay) * dy) / ll, 0.0, 1.0)
            else:
                t = np.zeros(np.broadcast_shapes(x.shape, y.shape))
            qx = ax + t * dx - x
            qy = ay + t * dy - y
            near |= qx * qx + qy * qy <= b2
        mask[r0:r1 + 1, c0:c1 + 1] |= (inside | near).astype(np.uint8)
    return mask


footprint_mask = pick(footprint_mask_numba, footprint_mask_numpy)


# --------------------------------------------------------------------------
# block aggregation (median / mean) with nodata exclusion
# --------------------------------------------------------------------------

@njit
def _block_stat_nb(data, factor, valid, use_median, fill):
    oh = data.shape[0] // factor
    ow = data.shape[1] // factor
    out = np.empty((oh, ow), dtype=np.float64)
    buf = np.empty(factor * factor, dtype=np.float64)
    for i in range(oh):
        for j in range(ow):
            n = 0
            for a in range(factor):
                for b in range(factor):
                    r = i * factor + a
                    c = j * factor + b
                    if valid[r, c]:
                        buf[n] = data[r, c]
                        n += 1
            if n == 0:
                out[i, j] = fill
            elif use_median:
                v = np.sort(buf[:n])
                if n % 2 == 1:
                    out[i, j] = v[n // 2]
                else:
                    out[i, j] = 0.5 * (v[n // 2 - 1] + v[n // 2])
            else:
                acc = 0.0
                for k in range(n):
                    acc += buf[k]
                out[i, j] = acc / n
    return out


def block_stat_numba(data, factor, valid, stat, fill):
    return _block_stat_nb(np.asarray(data, np.float64), int(factor), np.asarray(valid, np.bool_),
                          stat == "median", float(fill))


def block_stat_numpy(data, factor, valid, stat, fill):
    oh, ow = data.shape[0] // factor, data.shape[1] // factor
    d = np.asarray(data, np.float64)[:oh * factor, :ow * factor]
    v = np.asarray(valid, bool)[:oh * factor, :ow * factor]
    d = np.where(v, d, np.nan)
    blocks = d.reshape(oh, factor, ow, factor).transpose(0, 2, 1, 3).reshape(oh, ow, factor * factor)
    empty = ~v.reshape(oh, factor, ow, factor).any(axis=(1, 3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-nodata blocks
        out = np.nanmedian(blocks, axis=-1) if stat == "median" else np.nanmean(blocks, axis=-1)
    out[empty] = fill
    return out


block_stat = pick(block_stat_numba, block_stat_numpy)
