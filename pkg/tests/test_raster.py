import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon

from canopy_height import kernels
from canopy_height.errors import AlignmentError, CorruptFileError, ParameterError, UnsupportedFormatError
from canopy_height.raster import (NODATA_F32, FootprintSet, GridSpec, Raster, aggregate_block, apply_mask,
                                  common_extent, crop, fill_nearest, rasterize_footprints, read_footprints,
                                  read_raster, resample_nearest, retile, write_footprints, write_raster)

import oracles


def grid(w, h, px=1.0, ox=0.0, oy=None):
    return GridSpec(ox, float(h * px) if oy is None else oy, px, w, h)


# ---------------------------------------------------------------- model + persistence

def test_gridspec_centers_and_validation():
    g = GridSpec(10.0, 20.0, 0.5, 4, 3)
    assert g.center(0, 0) == (10.25, 19.75)
    assert g.center(3, 2) == (11.75, 18.75)
    for bad in [(0, 0, 0.0, 1, 1), (0, 0, 1.0, 0, 1), (0, 0, -1.0, 1, 1)]:
        with pytest.raises(ParameterError):
            GridSpec(*bad)


def test_covering_contains_extremes():
    g = GridSpec.covering(0.3, 0.2, 10.0, 7.0, 1.0)
    assert (g.origin_x, g.origin_y) == (0.0, 7.0)
    assert g.origin_x + g.width * g.pixel_size > 10.0
    assert g.origin_y - g.height * g.pixel_size < 0.2


def test_raster_invariants():
    with pytest.raises(UnsupportedFormatError):
        Raster(grid(2, 2), np.zeros((1, 2, 2), np.int16))
    with pytest.raises(AlignmentError):
        Raster(grid(2, 2), np.zeros((1, 3, 2), np.uint8))
    with pytest.raises(ParameterError):
        Raster(grid(2, 2), np.full((1, 2, 2), np.nan, np.float32))
    r = Raster(grid(2, 2), np.zeros((2, 2), np.uint8))
    assert r.bands == 1
    with pytest.raises(ValueError):
        r.data[0, 0, 0] = 1


def test_minimal_u8_round_trip(tmp_path):
    r = Raster(grid(2, 2), np.array([[0, 1], [2, 3]], np.uint8))
    write_raster(r, tmp_path / "r")
    assert (tmp_path / "r.bin").read_bytes() == bytes([0, 1, 2, 3])
    assert read_raster(tmp_path / "r").equals(r)


def test_f32_payload_little_endian(tmp_path):
    r = Raster(grid(2, 1), np.array([[0.0, 1.5]], np.float32))
    write_raster(r, tmp_path / "f")
    assert (tmp_path / "f.bin").read_bytes()[4:8] == bytes.fromhex("0000C03F")


def test_random_round_trip_and_header_keys(tmp_path):
    rng = np.random.default_rng(0)
    r = Raster(GridSpec(523000.25, 4100000.75, 0.6, 64, 64), rng.integers(0, 256, (4, 64, 64), dtype=np.uint8),
               None, "EPSG:26910")
    write_raster(r, tmp_path / "img")
    with open(tmp_path / "img.hdr", "a") as fh:
        fh.write("unknown_key = whatever\n")
    assert read_raster(tmp_path / "img.hdr").equals(r)
    f = Raster(grid(5, 3), rng.normal(size=(2, 3, 5)).astype(np.float32), NODATA_F32)
    write_raster(f, tmp_path / "f")
    assert read_raster(tmp_path / "f").equals(f)


def test_persistence_errors(tmp_path):
    r = Raster(grid(3, 3), np.zeros((1, 3, 3), np.uint8))
    write_raster(r, tmp_path / "r")
    (tmp_path / "r.bin").write_bytes(b"\0" * 8)
    with pytest.raises(CorruptFileError):
        read_raster(tmp_path / "r")
    write_raster(r, tmp_path / "r")
    hdr = (tmp_path / "r.hdr").read_text().replace("dtype = u8", "dtype = i16")
    (tmp_path / "r.hdr").write_text(hdr)
    with pytest.raises(UnsupportedFormatError):
        read_raster(tmp_path / "r")
    (tmp_path / "r.hdr").write_text("width = 3\n")
    with pytest.raises(CorruptFileError):
        read_raster(tmp_path / "r")


# ---------------------------------------------------------------- resampling

def test_resample_identity_and_constant():
    rng = np.random.default_rng(0)
    r = Raster(grid(7, 5), rng.integers(0, 256, (1, 5, 7), dtype=np.uint8))
    assert resample_nearest(r, 1.0).equals(r)
    c = Raster(grid(10, 10), np.full((1, 10, 10), 7.5, np.float32))
    out = resample_nearest(c, 0.6)
    assert out.width == 17 and np.all(out.band() == 7.5)


def test_resample_checkerboard_per_pixel_oracle():
    w = h = 11
    board = ((np.arange(h)[:, None] + np.arange(w)[None]) % 2).astype(np.uint8) * 200
    r = Raster(GridSpec(100.0, 50.0, 1.0, w, h), board)
    out = resample_nearest(r, 0.6)
    assert (out.width, out.height) == (19, 19)
    for row in range(out.height):
        for col in range(out.width):
            x, y = out.grid.center(col, row)
            # the ceil'd last row/column can have its center past the source edge: clamp
            sc = min(int(np.floor(x - 100.0)), w - 1)
            sr = min(int(np.floor(50.0 - y)), h - 1)
            assert out.band()[row, col] == board[sr, sc]


@settings(max_examples=30, deadline=None)
@given(w=st.integers(1, 30), h=st.integers(1, 30), target=st.floats(0.2, 3.0), seed=st.integers(0, 999))
def test_resample_introduces_no_new_values(w, h, target, seed):
    r = Raster(grid(w, h), np.random.default_rng(seed).integers(0, 256, (1, h, w), dtype=np.uint8))
    out = resample_nearest(r, target)
    assert set(np.unique(out.data)) <= set(np.unique(r.data))
    assert out.grid.origin_x == r.grid.origin_x and out.grid.origin_y == r.grid.origin_y


# ---------------------------------------------------------------- retile

@pytest.mark.parametrize("w, h, n", [(512, 512, 4), (1000, 1000, 9), (255, 512, 0)])
def test_retile_counts(w, h, n):
    img = Raster(grid(w, h), np.zeros((4, h, w), np.uint8))
    chm = Raster(grid(w, h), np.zeros((1, h, w), np.uint8))
    assert len(retile(img, chm, 256)) == n


def test_retile_reconstructs_cropped_region():
    rng = np.random.default_rng(1)
    img = Raster(grid(70, 50), rng.integers(0, 256, (4, 50, 70), dtype=np.uint8))
    chm = Raster(grid(70, 50), rng.integers(0, 256, (1, 50, 70), dtype=np.uint8))
    pairs = retile(img, chm, 16)
    assert [p.offset for p in pairs[:5]] == [(0, 0), (0, 16), (0, 32), (0, 48), (16, 0)]
    rebuilt = np.zeros((4, 48, 64), np.uint8)
    target = np.zeros((48, 64), np.uint8)
    for p in pairs:
        r, c = p.offset
        rebuilt[:, r:r + 16, c:c + 16] = p.image
        target[r:r + 16, c:c + 16] = p.target
        assert p.grid == crop(img, r, c, 16, 16).grid
    assert np.array_equal(rebuilt, img.data[:, :48, :64])
    assert np.array_equal(target, chm.data[0, :48, :64])


def test_retile_grid_mismatch():
    with pytest.raises(AlignmentError):
        retile(Raster(grid(32, 32), np.zeros((4, 32, 32), np.uint8)),
               Raster(grid(32, 32, ox=1.0), np.zeros((1, 32, 32), np.uint8)), 16)


def test_common_extent():
    a = Raster(grid(10, 8, oy=8.0), np.zeros((1, 8, 10), np.uint8))
    b = Raster(grid(9, 9, oy=8.0), np.ones((4, 9, 9), np.uint8))
    ca, cb = common_extent(a, b)
    assert ca.grid == cb.grid and (ca.width, ca.height) == (9, 8)
    with pytest.raises(AlignmentError):
        common_extent(a, Raster(grid(9, 9, px=0.5), np.ones((1, 9, 9), np.uint8)))


# ---------------------------------------------------------------- footprints

def square(x0, y0, s):
    return [(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]


def test_square_no_buffer_area():
    g = grid(30, 30)
    m = rasterize_footprints(FootprintSet.from_rings([square(10, 10, 10)]), g, 0.0)
    assert int(m.data.sum()) == 100


def brute_mask(rings, g, buffer):
    polys = [Polygon(r) for r in rings]
    out = np.zeros((g.height, g.width), np.uint8)
    for row in range(g.height):
        for col in range(g.width):
            pt = Point(*g.center(col, row))
            for poly in polys:
                if poly.contains(pt) or poly.exterior.distance(pt) <= buffer:
                    out[row, col] = 1
    return out


def test_square_buffer_matches_distance_oracle():
    g = grid(30, 30)
    rings = [square(10, 10, 10)]
    m = rasterize_footprints(FootprintSet.from_rings(rings), g, 2.0)
    assert np.array_equal(m.band(), brute_mask(rings, g, 2.0))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), buffer=st.floats(0.0, 4.0), px=st.sampled_from([0.6, 1.0, 1.3]))
def test_random_polygons_match_oracle(seed, buffer, px):
    rng = np.random.default_rng(seed)
    rings = []
    for _ in range(3):
        cx, cy = rng.uniform(5, 25, 2)
        k = int(rng.integers(3, 8))
        ang = np.sort(rng.uniform(0, 2 * np.pi, k))
        rad = rng.uniform(1, 6, k)
        rings.append(list(zip(cx + rad * np.cos(ang), cy + rad * np.sin(ang))))
    g = GridSpec(0.0, 30.0, px, int(30 / px), int(30 / px))
    m = rasterize_footprints(FootprintSet.from_rings(rings), g, buffer)
    ref = brute_mask(rings, g, buffer)
    # centers within 1e-9 of the buffer boundary may legitimately differ
    diff = np.argwhere(m.band() != ref)
    for row, col in diff:
        pt = Point(*g.center(col, row))
        d = min(Polygon(r).exterior.distance(pt) for r in rings)
        assert abs(d - buffer) < 1e-9


def test_footprint_backends_agree():
    rng = np.random.default_rng(3)
    rings = [np.array(square(*rng.uniform(0, 40, 2), rng.uniform(2, 8))) for _ in range(6)]
    xs = np.concatenate([r[:, 0] for r in rings])
    ys = np.concatenate([r[:, 1] for r in rings])
    starts = np.arange(0, 25, 4, dtype=np.int64)
    args = (xs, ys, starts, 0.0, 50.0, 0.5, 100, 100, 2.0)
    assert np.array_equal(kernels.footprint_mask_numba(*args), kernels.footprint_mask_numpy(*args))


def test_empty_and_degenerate_footprints():
    g = grid(10, 10)
    assert rasterize_footprints(FootprintSet(), g).data.sum() == 0
    m = rasterize_footprints(FootprintSet.from_rings([[(0, 0), (1, 1), (2, 2)], [(1, 1), (1, 1), (1, 1)],
                                                      square(2, 2, 3)]), g, 0.0)
    assert m.meta["skipped_rings"] == 2
    assert m.data.sum() == 9
    with pytest.raises(ParameterError):
        rasterize_footprints(FootprintSet(), g, -1.0)


def test_footprint_json_formats(tmp_path):
    fps = FootprintSet.from_rings([square(0, 0, 2)])
    write_footprints(fps, tmp_path / "f.json")
    back = read_footprints(tmp_path / "f.json")
    assert np.array_equal(back.polygons[0], fps.polygons[0])
    gj = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [square(0, 0, 2) + [(0, 0)],
                                                                            square(0.5, 0.5, 1)]}},
        {"type": "Feature", "geometry": {"type": "MultiPolygon", "coordinates": [[square(5, 5, 1)]]}}]}
    (tmp_path / "g.json").write_text(json.dumps(gj))
    assert len(read_footprints(tmp_path / "g.json").polygons) == 2


# ---------------------------------------------------------------- mask

def test_apply_mask_examples():
    rng = np.random.default_rng(0)
    chm = Raster(grid(8, 8), rng.integers(1, 256, (1, 8, 8), dtype=np.uint8))
    ones = Raster(grid(8, 8), np.ones((1, 8, 8), np.uint8))
    zeros = Raster(grid(8, 8), np.zeros((1, 8, 8), np.uint8))
    assert apply_mask(chm, ones).data.sum() == 0
    assert apply_mask(chm, zeros).equals(chm)
    m = Raster(grid(8, 8), rng.integers(0, 2, (1, 8, 8), dtype=np.uint8))
    out = apply_mask(chm, m)
    assert np.array_equal(out.data, np.where(m.data == 1, 0, chm.data))
    assert apply_mask(out, m).equals(out)
    with pytest.raises(AlignmentError):
        apply_mask(chm, Raster(grid(8, 8, ox=1.0), np.zeros((1, 8, 8), np.uint8)))


# ---------------------------------------------------------------- aggregation

def test_aggregate_examples():
    r = Raster(grid(2, 2), np.array([[1, 2], [3, 100]], np.float32))
    assert aggregate_block(r, 2, "median").band()[0, 0] == 2.5
    assert aggregate_block(r, 2, "mean").band()[0, 0] == 26.5
    c = Raster(grid(6, 6), np.full((1, 6, 6), 4.0, np.float32))
    for stat in ("median", "mean"):
        out = aggregate_block(c, 3, stat)
        assert out.grid.pixel_size == 3.0 and np.all(out.band() == 4.0)
    with pytest.raises(ParameterError):
        aggregate_block(c, 0)
    with pytest.raises(ParameterError):
        aggregate_block(c, 2, "max")


@pytest.mark.parametrize("stat", ["median", "mean"])
def test_aggregate_matches_sort_oracle(stat):
    rng = np.random.default_rng(5)
    data = rng.normal(10, 5, (100, 100)).astype(np.float32)
    data[rng.random((100, 100)) < 0.1] = NODATA_F32
    data[50:, :50] = NODATA_F32  # whole block empty
    r = Raster(grid(100, 100), data, NODATA_F32)
    out = aggregate_block(r, 50, stat)
    ref = oracles.block_stat(data, data != NODATA_F32, 50, stat)
    assert out.band()[1, 0] == NODATA_F32
    ok = ~np.isnan(ref)
    assert np.allclose(out.band()[ok], ref[ok], rtol=1e-6)


def test_aggregate_drops_partial_blocks():
    r = Raster(grid(11, 7), np.ones((1, 7, 11), np.float32))
    out = aggregate_block(r, 3)
    assert (out.width, out.height) == (3, 2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), factor=st.sampled_from([1, 3, 5]))
def test_median_commutes_with_monotone_map(seed, factor):
    data = np.random.default_rng(seed).integers(-100, 100, (15, 15)).astype(np.float32)
    a = aggregate_block(Raster(grid(15, 15), 2 * data + 1), factor, "median").band()
    b = 2 * aggregate_block(Raster(grid(15, 15), data), factor, "median").band() + 1
    assert np.array_equal(a, b)


def test_block_stat_backends_agree():
    rng = np.random.default_rng(2)
    data = rng.random((60, 60)).astype(np.float32)
    valid = rng.random((60, 60)) > 0.2
    valid[:20, :20] = False
    for stat in ("median", "mean"):
        a = kernels.block_stat_numba(data, 20, valid, stat, -1.0)
        b = kernels.block_stat_numpy(data, 20, valid, stat, -1.0)
        assert np.allclose(a, b, rtol=1e-6)


# ---------------------------------------------------------------- gap fill

@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), h=st.integers(1, 14), w=st.integers(1, 14), frac=st.floats(0.05, 0.9))
def test_fill_nearest_oracle(seed, h, w, frac):
    rng = np.random.default_rng(seed)
    vals = rng.integers(0, 50, (h, w)).astype(float)
    valid = rng.random((h, w)) < frac
    if not valid.any():
        valid[rng.integers(h), rng.integers(w)] = True
    assert np.array_equal(fill_nearest(vals, valid), oracles.nearest_fill(vals, valid))


def test_fill_nearest_tie_break():
    vals = np.array([[1.0, 0.0, 2.0]])
    valid = np.array([[True, False, True]])
    assert fill_nearest(vals, valid)[0, 1] == 1.0
    v = np.zeros((5, 5))
    ok = np.zeros((5, 5), bool)
    for k, (r, c) in enumerate([(0, 2), (2, 0), (2, 4), (4, 2)]):
        ok[r, c] = True
        v[r, c] = k + 1
    assert fill_nearest(v, ok)[2, 2] == 1.0  # four equidistant: smallest row wins
    with pytest.raises(ParameterError):
        fill_nearest(v, np.zeros((5, 5), bool))
