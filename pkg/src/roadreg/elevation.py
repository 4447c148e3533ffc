"""Vertical registration against a reference terrain grid."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidInput, NoGroundFound, NoOverlap, TooFewPoints
from .model import NODATA, ElevationGrid, GeoTransform, PointCloud

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElevParams:
    tau_h: float = 0.05
    tau_min: float = 0.02
    cell_size: float = 1.0
    ransac_iters: int = 500
    outlier_k: float = 2.5
    tile_size: float = 25.0
    tiling: bool = True
    min_inlier_ratio: float = 0.2
    confidence: float = 0.99
    max_slope_deg: float = 30.0
    seed: int = 0
    sampling: str = "bilinear"  # or "nearest"
    filter_before_match: bool = True

    def __post_init__(self) -> None:
        if not (0 < self.tau_min <= self.tau_h):
            raise InvalidInput("need 0 < tau_min <= tau_h")
        if not self.cell_size > 0 or not self.tile_size > 0:
            raise InvalidInput("cell_size and tile_size must be positive")
        if self.ransac_iters < 1:
            raise InvalidInput("ransac_iters must be >= 1")
        if self.sampling not in ("bilinear", "nearest"):
            raise InvalidInput("sampling must be 'bilinear' or 'nearest'")
        if not 0 < self.confidence < 1:
            raise InvalidInput("confidence must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class GroundModel:
    grid: ElevationGrid
    ground_index: np.ndarray  # bool per source point

    def __post_init__(self) -> None:
        g = np.array(self.ground_index, dtype=bool).reshape(-1)
        g.flags.writeable = False
        object.__setattr__(self, "ground_index", g)

    def cell_of(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.geo.world_to_pixel(x, y)

    def local_ground_height(self, x, y) -> np.ndarray:
        """Cell mean ground height, taken from the nearest occupied cell when the cell is empty."""
        r, c = self.cell_of(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        h, w = self.grid.heights.shape
        r = np.clip(r, 0, h - 1)
        c = np.clip(c, 0, w - 1)
        filled = nearest_filled(self.grid)
        return filled[r, c]


def nearest_filled(grid: ElevationGrid) -> np.ndarray:
    valid = grid.valid
    if valid.all():
        return np.asarray(grid.heights)
    if not valid.any():
        raise NoGroundFound("ground grid has no occupied cells")
    _, (ri, ci) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return np.asarray(grid.heights)[ri, ci]


def grid_geo(xy: np.ndarray, cell: float) -> tuple[GeoTransform, tuple[int, int]]:
    xmin, ymin = xy.min(axis=0)
    xmax, ymax = xy.max(axis=0)
    geo = GeoTransform(float(xmin), float(ymax), cell)
    ncols = int(math.floor((xmax - xmin) / cell)) + 1
    nrows = int(math.floor((ymax - ymin) / cell)) + 1
    return geo, (nrows, ncols)


def build_ground_model(cloud: PointCloud, ground: np.ndarray, cell_size: float) -> GroundModel:
    """Per-cell mean height of the flagged ground points; other cells hold NODATA."""
    ground = np.asarray(ground, dtype=bool)
    if len(ground) != len(cloud):
        raise InvalidInput("ground flags must match the cloud length")
    if len(cloud) == 0:
        raise TooFewPoints("empty cloud")
    geo, (nr, nc) = grid_geo(cloud.xy, cell_size)
    heights = np.full((nr, nc), NODATA)
    if ground.any():
        r, c = geo.world_to_pixel(cloud.xy[ground, 0], cloud.xy[ground, 1])
        r = np.clip(r, 0, nr - 1)
        c = np.clip(c, 0, nc - 1)
        flat = r * nc + c
        cnt = np.bincount(flat, minlength=nr * nc)
        tot = np.bincount(flat, weights=cloud.z[ground], minlength=nr * nc)
        occ = cnt > 0
        hv = heights.reshape(-1)
        hv[occ] = tot[occ] / cnt[occ]
    return GroundModel(ElevationGrid(heights, geo), ground)


# --------------------------------------------------------------------------
# RANSAC ground extraction


def _planes_from_triples(p: np.ndarray, tri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b, c = p[tri[:, 0]], p[tri[:, 1]], p[tri[:, 2]]
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1)
    ok = norm > 0
    n[ok] /= norm[ok, None]
    n[~ok] = 0.0
    # orient normals upward so the slope test is sign-free
    n[n[:, 2] < 0] *= -1
    d = -(n * a).sum(axis=1)
    return n, d


def fit_plane_lsq(p: np.ndarray) -> tuple[np.ndarray, float]:
    """Total least-squares plane through ``p``: unit normal (z >= 0) and offset."""
    m = p.mean(axis=0)
    _, _, vt = np.linalg.svd(p - m, full_matrices=False)
    n = vt[-1]
    if n[2] < 0:
        n = -n
    return n, float(-n @ m)


def ransac_plane(p: np.ndarray, tau: float, params: ElevParams, rng: np.random.Generator) -> np.ndarray | None:
    """Inlier mask of the best near-horizontal plane, or None when no valid plane exists."""
    n_pts = len(p)
    if n_pts < 3:
        return None
    min_nz = math.cos(math.radians(params.max_slope_deg))
    best_count, best_mask = 0, None
    needed = params.ransac_iters
    done = 0
    batch = 25
    while done < min(needed, params.ransac_iters):
        k = min(batch, params.ransac_iters - done)
        tri = np.stack([rng.choice(n_pts, 3, replace=False) for _ in range(k)])
        normals, offs = _planes_from_triples(p, tri)
        done += k
        good = normals[:, 2] >= min_nz
        if good.any():
            dist = np.abs(p @ normals[good].T + offs[good])  # (n, g)
            inl = dist < tau
            counts = inl.sum(axis=0)
            j = int(np.argmax(counts))
            if counts[j] > best_count:
                best_count = int(counts[j])
                best_mask = inl[:, j].copy()
                w = best_count / n_pts
                if w >= 1.0:
                    needed = 0
                else:
                    needed = int(math.ceil(math.log(1 - params.confidence) / math.log(1 - w**3))) if w > 0 else needed
    if best_mask is None or best_count < 3:
        return None
    return best_mask


def _tile_ground(p: np.ndarray, params: ElevParams, rng: np.random.Generator) -> np.ndarray | None:
    tau = params.tau_h
    mask = ransac_plane(p, tau, params, rng)
    if mask is None:
        return None
    n_pts = len(p)
    while True:
        normal, off = fit_plane_lsq(p[mask])
        if tau <= params.tau_min:
            refit = np.abs(p @ normal + off) < tau
            return refit if refit.sum() >= 3 else mask
        nxt = max(tau / 2.0, params.tau_min)
        cand = np.abs(p @ normal + off) < nxt
        if cand.sum() < 3 or cand.sum() / n_pts < params.min_inlier_ratio:
            return mask
        mask, tau = cand, nxt


def tile_ids(xy: np.ndarray, tile: float) -> np.ndarray:
    keys = np.floor((xy - xy.min(axis=0)) / tile).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    return inverse.reshape(-1)


def extract_ground_ransac(cloud: PointCloud, params: ElevParams = ElevParams()) -> GroundModel:
    """Flag ground points with per-tile RANSAC planes and grid their mean heights.

    Each tile starts at ``tau_h`` and halves the threshold down to ``tau_min``,
    stopping early when the inlier ratio would fall below ``min_inlier_ratio``.
    Tiles are seeded from ``params.seed`` and the tile index, so results do
    not depend on processing order.
    """
    if len(cloud) < 3:
        raise TooFewPoints("ground extraction needs at least 3 points")
    xyz = cloud.xyz
    tiles = tile_ids(cloud.xy, params.tile_size) if params.tiling else np.zeros(len(cloud), dtype=np.int64)
    ground = np.zeros(len(cloud), dtype=bool)
    order = np.argsort(tiles, kind="stable")
    bounds = np.flatnonzero(np.diff(tiles[order])) + 1
    for members in np.split(order, bounds):
        tid = int(tiles[members[0]])
        rng = np.random.default_rng([params.seed, tid])
        mask = _tile_ground(xyz[members], params, rng)
        if mask is not None:
            ground[members[mask]] = True
    if not ground.any():
        raise NoGroundFound("no tile produced a plane with at least 3 inliers")
    log.info("ground extraction: %d / %d points", ground.sum(), len(cloud))
    return build_ground_model(cloud, ground, params.cell_size)


# --------------------------------------------------------------------------
# terrain matching and outlier suppression


def sample_terrain(terrain: ElevationGrid, x: np.ndarray, y: np.ndarray, sampling: str = "bilinear") -> np.ndarray:
    if sampling == "nearest":
        return terrain.sample_nearest(x, y)
    return terrain.sample_bilinear(x, y)


def match_terrain(
    cloud: PointCloud,
    gm: GroundModel,
    terrain: ElevationGrid,
    sampling: str = "bilinear",
) -> tuple[PointCloud, int]:
    """Snap ground to terrain and carry non-ground heights above the local ground.

    Returns the corrected cloud and the number of points left unchanged
    because the terrain has no value under them.
    """
    if len(gm.ground_index) != len(cloud):
        raise InvalidInput("ground model does not belong to this cloud")
    x, y = cloud.xy[:, 0], cloud.xy[:, 1]
    t = sample_terrain(terrain, x, y, sampling)
    ok = np.isfinite(t)
    if not ok.any():
        raise NoOverlap("cloud does not overlap the terrain grid")
    z = cloud.z.copy()
    g = gm.ground_index
    z[ok & g] = t[ok & g]
    ng = ok & ~g
    if ng.any():
        h = gm.local_ground_height(x[ng], y[ng])
        z[ng] = t[ng] + (cloud.z[ng] - h)
    skipped = int((~ok).sum())
    if skipped:
        log.warning("%d points over terrain no-data left unchanged", skipped)
    return cloud.with_z(z), skipped


def vertical_outlier_mask(cloud: PointCloud, gm: GroundModel, params: ElevParams = ElevParams()) -> np.ndarray:
    """True for ground points whose height departs from the rest of their cell.

    For each ground point the cell mean and standard deviation are taken over
    the other ground points of the same cell (sample std), so a single spike
    cannot inflate its own yardstick. Cells with fewer than three ground points are exempt.
    """
    g = gm.ground_index
    out = np.zeros(len(cloud), dtype=bool)
    idx = np.flatnonzero(g)
    if len(idx) == 0:
        return out
    r, c = gm.cell_of(cloud.xy[idx, 0], cloud.xy[idx, 1])
    h, w = gm.grid.heights.shape
    cell = np.clip(r, 0, h - 1) * w + np.clip(c, 0, w - 1)
    z = cloud.z[idx]
    n = np.bincount(cell, minlength=h * w).astype(np.float64)
    # centre per cell before summing squares to avoid cancellation at large z
    s1 = np.bincount(cell, weights=z, minlength=h * w)
    ref = np.divide(s1, n, out=np.zeros_like(s1), where=n > 0)
    zc = z - ref[cell]
    s1c = np.bincount(cell, weights=zc, minlength=h * w)
    s2c = np.bincount(cell, weights=zc * zc, minlength=h * w)
    m = n[cell] - 1.0
    eligible = n[cell] >= 3
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = (s1c[cell] - zc) / m
        # sample variance (ddof=1) of the other points
        var = ((s2c[cell] - zc * zc) / m - mu * mu) * m / (m - 1.0)
    sigma = np.sqrt(np.clip(var, 0.0, None))
    bound = params.outlier_k * np.maximum(sigma, params.tau_min / 2.0)
    flag = eligible & (np.abs(zc - mu) > bound)
    out[idx[flag]] = True
    return out


def suppress_vertical_outliers(cloud: PointCloud, gm: GroundModel, params: ElevParams = ElevParams()) -> tuple[PointCloud, GroundModel]:
    """Drop flagged ground points and return the cloud with its rebuilt ground model."""
    mask = vertical_outlier_mask(cloud, gm, params)
    keep = ~mask
    kept = cloud.subset(keep)
    log.info("vertical outliers removed: %d", mask.sum())
    return kept, build_ground_model(kept, gm.ground_index[keep], gm.grid.cell_size)


def correct_elevation(
    cloud: PointCloud,
    terrain: ElevationGrid,
    params: ElevParams = ElevParams(),
) -> tuple[PointCloud, GroundModel, dict]:
    """Ground extraction, outlier suppression and terrain matching in configured order."""
    gm = extract_ground_ransac(cloud, params)
    removed = 0
    if params.filter_before_match:
        n0 = len(cloud)
        cloud, gm = suppress_vertical_outliers(cloud, gm, params)
        removed = n0 - len(cloud)
    out, skipped = match_terrain(cloud, gm, terrain, params.sampling)
    if not params.filter_before_match:
        n0 = len(out)
        gm_after = build_ground_model(out, gm.ground_index, params.cell_size)
        out, gm = suppress_vertical_outliers(out, gm_after, params)
        removed = n0 - len(out)
    info = {"ground_points": int(gm.ground_index.sum()), "outliers_removed": removed, "nodata_skipped": skipped}
    return out, gm, info
