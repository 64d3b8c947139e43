import numpy as np
import pytest

from canopy_height.lidar import GROUND
from canopy_height.synth import (BUILDING, Tree, cone_height, height_function, learning_scene, make_scene,
                                 single_conifer)
from canopy_height.tin import unscale_chm


def test_cone_profile():
    t = Tree(0.0, 0.0, 20.0, 6.0, 6.0)
    assert cone_height(t, 0.0, 0.0) == 20.0
    assert cone_height(t, 6.0, 0.0) == pytest.approx(6.0)
    assert cone_height(t, 3.0, 0.0) == pytest.approx(13.0)
    assert cone_height(t, 6.01, 0.0) == 0.0


def test_single_conifer_layout():
    cloud, tree = single_conifer(height=20.0, base_z=50.0, seed=1)
    assert tree.x == tree.y == 15.5
    assert cloud.z.max() == pytest.approx(70.0)
    g = cloud.classification == GROUND
    assert np.all(cloud.z[g] == 50.0)
    assert np.all(cloud.return_number[g & (cone_height(tree, cloud.x, cloud.y) > 0)] == 2)


def test_make_scene_seeded_and_consistent():
    a, b = make_scene(seed=5, size=40, n_trees=5), make_scene(seed=5, size=40, n_trees=5)
    assert a.cloud.equals(b.cloud) and np.array_equal(a.image.data, b.image.data)
    assert len(a.trees) == 5
    assert a.image.grid == a.truth.grid and a.image.bands == 4
    assert (a.cloud.classification == BUILDING).any()
    assert len(a.footprints.polygons) == 1
    # no tree crown reaches into the building footprint
    xs, ys = np.meshgrid(*a.truth.grid.centers())
    ring = np.asarray(a.footprints.polygons[0])
    inside = (xs >= ring[:, 0].min()) & (xs <= ring[:, 0].max()) & (ys >= ring[:, 1].min()) & (ys <= ring[:, 1].max())
    assert not a.truth.band(0)[inside].any()
    # NIR band rises with canopy height
    h = a.truth.band(0).ravel()
    assert np.corrcoef(h[~inside.ravel()], a.image.band(3).ravel()[~inside.ravel()])[0, 1] > 0.8


def test_learning_scene():
    img, chm, h = learning_scene(64, seed=2, noise_m=0.0)
    assert img.bands == 4 and chm.dtype == "u8" and img.grid == chm.grid
    expect = height_function(img.data.astype(np.float64) / 255)
    assert np.allclose(h, expect)
    assert np.max(np.abs(unscale_chm(chm.band(0)) - np.clip(expect, 0, 102))) <= 0.2 + 1e-9
    assert 0 <= h.min() and h.max() <= 45.0
