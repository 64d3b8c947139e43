"""Seeded synthetic scenes: cone-tree point clouds with matching imagery, and a learnable band-to-height field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .lidar import GROUND, PointCloud, concat
from .raster import FootprintSet, GridSpec, Raster
from .tin import quantize_heights

VEGETATION = 5
BUILDING = 6


@dataclass(frozen=True)
class Tree:
    x: float
    y: float
    height: float
    crown_radius: float
    crown_base: float  # meters above ground where the cone starts


@dataclass
class SynthScene:
    cloud: PointCloud
    image: Raster  # 4-band u8
    truth: Raster  # f32 canopy height in meters on the image grid
    footprints: FootprintSet
    trees: list[Tree]
    ground: tuple[float, float, float]  # z = a + b*x + c*y


def ground_z(ground, x, y):
    a, b, c = ground
    return a + b * np.asarray(x) + c * np.asarray(y)


def cone_height(tree: Tree, x, y) -> np.ndarray:
    """Canopy height of a single cone crown (0 outside the crown)."""
    r = np.hypot(np.asarray(x) - tree.x, np.asarray(y) - tree.y)
    h = tree.height - (tree.height - tree.crown_base) * r / tree.crown_radius
    return np.where(r <= tree.crown_radius, h, 0.0)


def _disk(rng, n, radius):
    r = radius * np.sqrt(rng.random(n))
    t = rng.random(n) * 2 * np.pi
    return r * np.cos(t), r * np.sin(t)


def conifer_points(tree: Tree, ground, density: float, rng) -> PointCloud:
    """First-return crown hits on a cone surface, plus the apex itself."""
    n = max(int(density * np.pi * tree.crown_radius ** 2), 8)
    dx, dy = _disk(rng, n, tree.crown_radius)
    x = np.append(tree.x + dx, tree.x)
    y = np.append(tree.y + dy, tree.y)
    z = ground_z(ground, x, y) + cone_height(tree, x, y)
    return PointCloud(x, y, z, np.full(x.size, VEGETATION), np.ones(x.size))


def single_conifer(height: float = 20.0, base_z: float = 50.0, seed: int = 0, size: float = 30.0,
                   crown_density: float = 30.0, ground_density: float = 4.0) -> tuple[PointCloud, Tree]:
    """One cone tree over flat ground at ``base_z``; the apex sits on a 1 m pixel center."""
    rng = np.random.default_rng(seed)
    c = np.floor(size / 2) + 0.5
    tree = Tree(c, c, height, 0.3 * height, 0.3 * height)
    ground = (base_z, 0.0, 0.0)
    crown = conifer_points(tree, ground, crown_density, rng)
    n = int(ground_density * size * size)
    gx, gy = rng.random(n) * size, rng.random(n) * size
    under = cone_height(tree, gx, gy) > 0
    ground_pts = PointCloud(gx, gy, np.full(n, base_z), np.full(n, GROUND), np.where(under, 2, 1))
    corners = PointCloud([0, size, 0, size], [0, 0, size, size], np.full(4, base_z), np.full(4, GROUND), np.ones(4))
    return concat([ground_pts, corners, crown]), tree


def make_scene(seed: int = 0, size: float = 60.0, n_trees: int = 10, image_res: float = 0.6,
               ground_density: float = 4.0, crown_density: float = 12.0, n_noise: int = 6,
               building: bool = True) -> SynthScene:
    """Cone-tree forest on a tilted plane, an optional flat-roof building and isolated noise returns.

    The 4-band image is derived from the true canopy height on the image grid so
    that bands correlate with height (NIR rises with height, visible bands fall).
    """
    rng = np.random.default_rng(seed)
    ground = (100.0, 0.02, -0.01)
    bld = (0.05 * size, 0.05 * size, 0.25 * size, 0.2 * size) if building else None  # xmin, ymin, xmax, ymax

    trees: list[Tree] = []
    while len(trees) < n_trees:
        h = float(rng.uniform(8.0, 30.0))
        rad = 0.25 * h
        x, y = rng.uniform(rad, size - rad, 2)
        if bld and bld[0] - rad - 3 < x < bld[2] + rad + 3 and bld[1] - rad - 3 < y < bld[3] + rad + 3:
            continue
        trees.append(Tree(float(x), float(y), h, rad, 0.35 * h))

    parts = []
    n = int(ground_density * size * size)
    gx, gy = rng.random(n) * size, rng.random(n) * size
    canopy = np.zeros(n)
    for t in trees:
        canopy = np.maximum(canopy, cone_height(t, gx, gy))
    if bld:
        in_bld = (gx >= bld[0]) & (gx <= bld[2]) & (gy >= bld[1]) & (gy <= bld[3])
        gx, gy, canopy = gx[~in_bld], gy[~in_bld], canopy[~in_bld]
    parts.append(PointCloud(gx, gy, ground_z(ground, gx, gy), np.full(gx.size, GROUND),
                            np.where(canopy > 0, 2, 1)))
    cx = np.array([0.0, size, 0.0, size])
    cy = np.array([0.0, 0.0, size, size])
    parts.append(PointCloud(cx, cy, ground_z(ground, cx, cy), np.full(4, GROUND), np.ones(4)))
    for t in trees:
        parts.append(conifer_points(t, ground, crown_density, rng))
    if bld:
        area = (bld[2] - bld[0]) * (bld[3] - bld[1])
        m = int(ground_density * 2 * area)
        bx = rng.uniform(bld[0], bld[2], m)
        by = rng.uniform(bld[1], bld[3], m)
        bz = ground_z(ground, (bld[0] + bld[2]) / 2, (bld[1] + bld[3]) / 2) + 6.0
        parts.append(PointCloud(bx, by, np.full(m, bz), np.full(m, BUILDING), np.ones(m)))
    if n_noise:
        nx, ny = rng.uniform(0, size, n_noise), rng.uniform(0, size, n_noise)
        nz = ground_z(ground, nx, ny) + rng.choice([-25.0, 60.0], n_noise) + rng.uniform(-5, 5, n_noise)
        parts.append(PointCloud(nx, ny, nz, np.ones(n_noise), np.ones(n_noise)))
    cloud = concat(parts)

    w = int(round(size / image_res))
    grid = GridSpec(0.0, size, image_res, w, w)
    xs, ys = np.meshgrid(*grid.centers())
    h = np.zeros((w, w))
    for t in trees:
        h = np.maximum(h, cone_height(t, xs, ys))
    noise = rng.normal(0, 3.0, (4, w, w))
    bands = np.stack([110 - 2.0 * h, 100 - 1.2 * h, 90 - 1.0 * h, 40 + 4.5 * h]) + noise
    if bld:
        roof = (xs >= bld[0]) & (xs <= bld[2]) & (ys >= bld[1]) & (ys <= bld[3])
        bands[:, roof] = np.array([180.0, 175.0, 170.0, 120.0])[:, None]
    image = Raster(grid, np.clip(np.round(bands), 0, 255).astype(np.uint8))
    truth = Raster(grid, h.astype(np.float32))
    fps = FootprintSet.from_rings([[(bld[0], bld[1]), (bld[2], bld[1]), (bld[2], bld[3]), (bld[0], bld[3])]]) \
        if bld else FootprintSet.from_rings([])
    return SynthScene(cloud, image, truth, fps, trees, ground)


def learning_scene(size: int = 384, seed: int = 0, noise_m: float = 0.5, pixel_size: float = 0.6):
    """Smooth random 4-band field whose height is a fixed function of the bands plus noise.

    Returns ``(image Raster u8, chm Raster u8, heights)`` with ``heights`` in meters.
    """
    rng = np.random.default_rng(seed)
    bands = []
    for k in range(4):
        f = gaussian_filter(rng.normal(size=(size, size)), 3 + k)
        bands.append((f - f.min()) / (f.max() - f.min()))
    b = np.stack(bands)
    img = np.round(b * 255).astype(np.uint8)
    bq = img.astype(np.float64) / 255
    heights = height_function(bq) + rng.normal(0, noise_m, (size, size))
    grid = GridSpec(0.0, size * pixel_size, pixel_size, size, size)
    return Raster(grid, img), Raster(grid, quantize_heights(heights)), heights


def height_function(b: np.ndarray) -> np.ndarray:
    """Noise-free height (m) for bands scaled to [0, 1]: tall where NIR is high and red is low."""
    return 45.0 * np.clip(b[3] - 0.5 * b[0] + 0.1, 0.0, 1.0)
