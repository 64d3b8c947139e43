import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from canopy_height.errors import AlignmentError, EmptyInputError
from canopy_height.evaluation import (compare_to_product, compute_metrics, format_text, landscape_stats,
                                      match_resolution, render_png, scatter_sample, write_records_csv,
                                      write_scatter)
from canopy_height.raster import NODATA_F32, GridSpec, Raster

from oracles import block_stat


def f32(a, px=0.6, ox=500000.0, oy=4100000.0, nodata=None):
    a = np.asarray(a, np.float32)
    return Raster(GridSpec(ox, oy, px, a.shape[1], a.shape[0]), a, nodata)


def rand(h=20, w=30, seed=0, scale=40.0):
    return np.random.default_rng(seed).random((h, w)).astype(np.float32) * scale


# ---------------------------------------------------------------- site metrics

def test_identity_metrics():
    a = f32(rand())
    r = compute_metrics(a, a, site_id="s1")
    assert (r.mae, r.rmse, r.n_pixels, r.site_id) == (0.0, 0.0, 600, "s1")


def test_constant_offset():
    o = rand(seed=1)
    r = compute_metrics(f32(o + 3.0), f32(o))
    assert r.mae == pytest.approx(3.0, abs=1e-5) and r.rmse == pytest.approx(3.0, abs=1e-5)
    assert r.rmse >= r.mae


def test_direct_summation_oracle():
    p, o = rand(seed=2), rand(seed=3)
    r = compute_metrics(f32(p), f32(o))
    pl, ol = p.astype(np.float64).ravel().tolist(), o.astype(np.float64).ravel().tolist()
    n = len(pl)
    mae = math.fsum(abs(a - b) for a, b in zip(pl, ol)) / n
    rmse = math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(pl, ol)) / n)
    mean_o = math.fsum(ol) / n
    assert r.mae == pytest.approx(mae, rel=1e-12)
    assert r.rmse == pytest.approx(rmse, rel=1e-12)
    assert r.rel_mae == pytest.approx(mae / mean_o, rel=1e-12)
    assert r.mean_obs_height == pytest.approx(mean_o, rel=1e-12)


def test_nodata_and_mask_exclusion():
    p, o = rand(seed=4), rand(seed=5)
    o[0, :5] = NODATA_F32
    mask = np.ones(p.shape, bool)
    mask[1] = False
    r = compute_metrics(f32(p), f32(o, nodata=NODATA_F32), mask=mask)
    keep = mask.copy()
    keep[0, :5] = False
    assert r.n_pixels == keep.sum()
    assert r.mae == pytest.approx(np.mean(np.abs(p[keep].astype(float) - o[keep])), rel=1e-12)


def test_u8_rasters_read_as_codes():
    codes = np.array([[0, 25, 50]], np.uint8)
    obs = Raster(GridSpec(0, 3, 1, 3, 1), codes)
    pred = f32([[0.0, 10.0, 21.0]], px=1, ox=0, oy=3)
    r = compute_metrics(pred, obs)
    assert r.mae == pytest.approx(1 / 3)


def test_empty_site_and_zero_mean():
    a = f32(rand())
    with pytest.raises(EmptyInputError):
        compute_metrics(a, a, mask=np.zeros(a.data.shape[1:], bool))
    z = f32(np.zeros((3, 3)))
    assert compute_metrics(z, z).rel_mae is None


def test_grid_mismatch():
    with pytest.raises(AlignmentError):
        compute_metrics(f32(rand()), f32(rand(), ox=1.0))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), h=st.integers(1, 12), w=st.integers(1, 12))
def test_metric_laws(seed, h, w):
    r = np.random.default_rng(seed)
    p = r.random((h, w)).astype(np.float32) * 50
    o = r.random((h, w)).astype(np.float32) * 50
    rep = compute_metrics(f32(p), f32(o))
    assert rep.rmse >= rep.mae >= 0
    perm = r.permutation(h * w)
    rep2 = compute_metrics(f32(p.ravel()[perm].reshape(h, w)), f32(o.ravel()[perm].reshape(h, w)))
    assert rep2.mae == pytest.approx(rep.mae, rel=1e-12, abs=1e-12)
    assert rep2.rmse == pytest.approx(rep.rmse, rel=1e-12, abs=1e-12)
    mask = r.random((h, w)) > 0.3
    if mask.any():
        once = compute_metrics(f32(p), f32(o), mask=mask)
        twice = compute_metrics(f32(p), f32(o), mask=mask & mask)
        assert once == twice


# ---------------------------------------------------------------- resolution matching

def test_match_resolution_nearest():
    obs = Raster(GridSpec(0.0, 6.0, 1.0, 6, 6), np.arange(36, dtype=np.float32).reshape(6, 6))
    pred = Raster(GridSpec(0.0, 6.0, 0.6, 10, 10), np.zeros((10, 10), np.float32))
    o2, p2 = match_resolution(obs, pred)
    assert o2.grid == p2.grid
    assert o2.grid.pixel_size == pytest.approx(0.6)
    # pixel (r, c) center at 0.3 + 0.6 k falls in source cell floor(0.3 + 0.6 k)
    k = np.arange(o2.width)
    src = np.floor(0.3 + 0.6 * k).astype(int)
    assert np.array_equal(o2.band(0)[0], obs.band(0)[0, src])


# ---------------------------------------------------------------- scatter

def test_scatter_exhaustive_and_deterministic(tmp_path):
    p, o = f32(rand(seed=6)), f32(rand(seed=7))
    full = scatter_sample(p, o, n=10_000)
    assert full.shape == (600, 2)
    assert np.array_equal(full[:, 0], o.band(0).ravel()) and np.array_equal(full[:, 1], p.band(0).ravel())
    a, b = scatter_sample(p, o, n=100, seed=3), scatter_sample(p, o, n=100, seed=3)
    assert np.array_equal(a, b) and len(np.unique(a[:, 0])) == 100
    write_scatter(a, tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["obs_m", "pred_m"] and len(rows) == 101
    assert float(rows[1][0]) == a[0, 0]


def test_scatter_statistically_consistent():
    o = rand(200, 200, seed=8)
    s = scatter_sample(f32(o), f32(o), n=2000, seed=1)
    se = o.std() / math.sqrt(2000)
    assert abs(s[:, 0].mean() - o.mean()) <= 3 * se


# ---------------------------------------------------------------- product comparison

def test_product_self_and_bias():
    obs = rand(50, 50, seed=9)
    pred = obs + rand(50, 50, seed=10, scale=2.0)
    agg = block_stat(obs, np.ones_like(obs, bool), 5, "mean").astype(np.float32)
    prod = f32(agg, px=3.0)
    rp, rm = compare_to_product(f32(pred), prod, f32(obs))
    assert rp.mae == pytest.approx(0.0, abs=1e-5)
    rp, _ = compare_to_product(f32(pred), f32(agg + 4.0, px=3.0), f32(obs))
    assert rp.mae == pytest.approx(4.0, abs=1e-4)


def test_product_two_stage_oracle():
    obs, pred = rand(40, 45, seed=11), rand(40, 45, seed=12)
    prod = rand(8, 9, seed=13)
    rp, rm = compare_to_product(f32(pred), f32(prod, px=3.0), f32(obs), site_id="x")
    ones = np.ones_like(obs, bool)
    pa = block_stat(pred, ones, 5, "mean")
    oa = block_stat(obs, ones, 5, "mean")
    assert rm.mae == pytest.approx(np.mean(np.abs(pa - oa)), rel=1e-6)
    assert rp.mae == pytest.approx(np.mean(np.abs(prod - oa)), rel=1e-6)
    assert (rp.site_id, rm.site_id) == ("x:product", "x:model")


def test_product_factor_one_reduces_to_site_metrics():
    obs, pred = rand(seed=14), rand(seed=15)
    _, rm = compare_to_product(f32(pred), f32(rand(seed=16)), f32(obs))
    direct = compute_metrics(f32(pred), f32(obs))
    assert (rm.mae, rm.rmse, rm.n_pixels) == (direct.mae, direct.rmse, direct.n_pixels)


def test_product_non_integer_ratio():
    with pytest.raises(AlignmentError):
        compare_to_product(f32(rand()), f32(rand(5, 5), px=1.0), f32(rand()))


# ---------------------------------------------------------------- landscape statistics

def test_landscape_uniform():
    s = landscape_stats(f32(np.full((10, 10), 10.0)))
    assert (s.frac_ge_2m, s.frac_ge_5m, s.median_forest_height_m) == (1.0, 1.0, 10.0)
    assert (s.frac_forest_ge_40m, s.frac_forest_ge_50m, s.n_pixels) == (0.0, 0.0, 100)


def test_landscape_bimodal():
    a = np.zeros((10, 10))
    a[:, 5:] = 6.0
    s = landscape_stats(f32(a))
    assert s.frac_ge_5m == 0.5 and s.median_forest_height_m == 6.0


def test_landscape_counting_oracle():
    v = rand(30, 30, seed=17, scale=70.0)
    v[0, :4] = NODATA_F32
    s = landscape_stats(f32(v, nodata=NODATA_F32))
    vals = sorted(float(x) for x in v.ravel() if x != NODATA_F32)
    forest = [x for x in vals if x >= 5]
    n, nf = len(vals), len(forest)
    med = forest[nf // 2] if nf % 2 else (forest[nf // 2 - 1] + forest[nf // 2]) / 2
    assert s.n_pixels == n
    assert s.frac_ge_2m == sum(x >= 2 for x in vals) / n
    assert s.frac_ge_5m == nf / n
    assert s.median_forest_height_m == pytest.approx(med, rel=1e-12)
    assert s.frac_forest_ge_40m == sum(x >= 40 for x in forest) / nf
    assert s.max_median_height_m == max(vals)
    assert 1 >= s.frac_ge_2m >= s.frac_ge_5m >= s.frac_ge_5m * s.frac_forest_ge_40m >= \
        s.frac_ge_5m * s.frac_forest_ge_50m >= 0


def test_landscape_no_forest_and_empty():
    s = landscape_stats(f32(np.ones((3, 3))))
    assert s.median_forest_height_m is None and s.frac_forest_ge_40m == 0.0
    with pytest.raises(EmptyInputError):
        landscape_stats(f32(np.full((2, 2), NODATA_F32), nodata=NODATA_F32))


# ---------------------------------------------------------------- outputs

def test_records_csv_and_text(tmp_path):
    r = compute_metrics(f32(rand(seed=1)), f32(rand(seed=2)), site_id="a")
    write_records_csv([r, r], tmp_path / "m.csv")
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert len(rows) == 2 and float(rows[0]["mae"]) == r.mae and rows[0]["site_id"] == "a"
    txt = format_text(r)
    assert "mae" in txt and f"{r.mae:.4f}" in txt


def test_render_png(tmp_path):
    a = np.array([[0.0, 51.0, 102.0, 200.0]], np.float32)
    render_png(f32(a), tmp_path / "r.png")
    img = np.asarray(Image.open(tmp_path / "r.png"))
    assert img.dtype == np.uint8 and img.tolist() == [[0, 128, 255, 255]]
    codes = Raster(GridSpec(0, 1, 1, 2, 1), np.array([[0, 255]], np.uint8))
    render_png(codes, tmp_path / "c.png")
    assert np.asarray(Image.open(tmp_path / "c.png")).tolist() == [[0, 255]]
