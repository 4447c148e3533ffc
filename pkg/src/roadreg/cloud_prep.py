"""Road point cloud cleaning and XY rasterization.

Turns a labeled LiDAR cloud into a downsampled, de-noised road cloud and a
binary road image ready for skeletonization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import AllFiltered, EmptyCloud, EmptyResult, InvalidInput, NoLabels, TooFewPoints
from .model import NON_ROAD_LABEL, ROAD_LABEL, BinaryRaster, GeoTransform, PointCloud

log = logging.getLogger(__name__)

RASTER_PAD = 2


@dataclass(frozen=True)
class PrepParams:
    alpha: float = 0.25
    k_neighbors: int = 20
    beta_std: float = 2.5
    gamma_eps: float = 1.8
    min_pts: int = 17
    raster_mpp: float = 1.0
    # outlier threshold multiplier on the neighbourhood median statistic
    tau_factor: float = 2.0

    def __post_init__(self) -> None:
        for name in ("alpha", "beta_std", "gamma_eps", "raster_mpp", "tau_factor"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"PrepParams.{name} must be positive")
        if self.k_neighbors < 2:
            raise InvalidInput("PrepParams.k_neighbors must be >= 2")
        if self.min_pts < 1:
            raise InvalidInput("PrepParams.min_pts must be >= 1")


def select_road_points(cloud: PointCloud, road_label: int = ROAD_LABEL) -> PointCloud:
    if cloud.labels is None:
        raise NoLabels("cloud carries no per-point labels")
    keep = cloud.labels == road_label
    if not keep.any():
        raise EmptyResult(f"no points labeled {road_label}")
    return cloud.subset(keep)


def label_roads_by_ground(cloud: PointCloud, tolerance: float = 0.3, road_label: int = ROAD_LABEL) -> PointCloud:
    """Stand-in segmenter for unlabelled synthetic clouds: ground-plane points are road.

    Only meant for scenes where every ground point lies on a road surface.
    """
    from .elevation import ElevParams, extract_ground_ransac

    params = ElevParams(tau_h=tolerance, tau_min=min(tolerance, ElevParams().tau_min))
    ground = extract_ground_ransac(cloud, params).ground_index
    labels = np.where(ground, road_label, NON_ROAD_LABEL).astype(np.int32)
    return PointCloud(cloud.xyz, labels, cloud.intensities)


def adaptive_voxel_size(cloud: PointCloud, alpha: float, min_extent: float = 1e-3) -> float:
    """``alpha * (bbox volume / point count) ** (1/3)``.

    Zero-extent axes (e.g. a perfectly flat cloud) are padded to ``min_extent``
    so the volume never degenerates.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot size voxels for an empty cloud")
    ext = cloud.xyz.max(axis=0) - cloud.xyz.min(axis=0)
    ext = np.where(ext > 0, ext, max(min_extent, 1e-3))
    return float(alpha * (np.prod(ext) / len(cloud)) ** (1.0 / 3.0))


def voxel_keys(xyz: np.ndarray, s: float, anchor: np.ndarray | None = None) -> np.ndarray:
    """Integer voxel index per point for a grid of side ``s`` anchored at ``anchor``."""
    if anchor is None:
        anchor = xyz.min(axis=0)
    return np.floor((xyz - anchor) / s).astype(np.int64)


def lattice_anchor(xyz: np.ndarray, s: float) -> np.ndarray:
    return np.floor(xyz.min(axis=0) / s) * s


def voxel_downsample(cloud: PointCloud, s: float) -> PointCloud:
    """Keep one point per occupied voxel: the member nearest the voxel centroid.

    The grid is anchored at the lattice corner ``floor(min / s) * s`` below the
    cloud's min corner, which makes a second pass a no-op. Kept points stay in
    input order.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot downsample an empty cloud")
    if not s > 0:
        raise InvalidInput("voxel size must be positive")
    keys = voxel_keys(cloud.xyz, s, lattice_anchor(cloud.xyz, s))
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    nvox = int(inverse.max()) + 1
    counts = np.bincount(inverse, minlength=nvox).astype(np.float64)
    centroid = np.column_stack(
        [np.bincount(inverse, weights=cloud.xyz[:, d], minlength=nvox) for d in range(3)]
    ) / counts[:, None]
    d2 = ((cloud.xyz - centroid[inverse]) ** 2).sum(axis=1)
    # per voxel: smallest distance, ties to the lowest input index
    order = np.lexsort((np.arange(len(cloud)), d2, inverse))
    first = np.ones(len(order), dtype=bool)
    first[1:] = inverse[order[1:]] != inverse[order[:-1]]
    chosen = np.sort(order[first])
    return cloud.subset(chosen)


def knn(xyz: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbours excluding the query point itself."""
    tree = cKDTree(xyz)
    d, idx = tree.query(xyz, k=k + 1)
    # a duplicate point may come back before the query itself; drop the self index
    n = len(xyz)
    self_hit = idx == np.arange(n)[:, None]
    drop = np.where(self_hit.any(axis=1), self_hit.argmax(axis=1), k)
    keep = np.ones_like(idx, dtype=bool)
    keep[np.arange(n), drop] = False
    return d[keep].reshape(n, k), idx[keep].reshape(n, k)


def outlier_statistics(cloud: PointCloud, params: PrepParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-point ``mu + beta * sigma`` and its adaptive threshold."""
    d, idx = knn(cloud.xyz, params.k_neighbors)
    stat = d.mean(axis=1) + params.beta_std * d.std(axis=1)
    tau = params.tau_factor * np.median(stat[idx], axis=1)
    return stat, tau


def remove_statistical_outliers(cloud: PointCloud, params: PrepParams = PrepParams()) -> PointCloud:
    """Drop points whose kNN spread is large compared with their neighbours'.

    A point is kept iff ``mu_i + beta * sigma_i < tau_i`` where ``mu_i`` and
    ``sigma_i`` are the mean and std of distances to its ``k`` nearest
    neighbours and ``tau_i`` is ``tau_factor`` times the median of the same
    statistic over those neighbours.
    """
    if len(cloud) <= params.k_neighbors:
        raise TooFewPoints(f"need more than {params.k_neighbors} points, got {len(cloud)}")
    stat, tau = outlier_statistics(cloud, params)
    keep = stat < tau
    log.debug("outlier removal kept %d / %d", keep.sum(), len(cloud))
    return cloud.subset(keep)


def adaptive_radii(xyz: np.ndarray, k: int, gamma: float) -> np.ndarray:
    d, _ = knn(xyz, k)
    return gamma * d.mean(axis=1)


def dbscan_labels(xyz: np.ndarray, radii: np.ndarray, min_pts: int) -> np.ndarray:
    """Cluster id per point (-1 for noise) with per-point neighbourhood radii.

    ``q`` lies in the neighbourhood of ``p`` iff ``|p - q| <= radii[p]``; ``p``
    is core when its neighbourhood (itself included) holds ``min_pts`` points.
    Two core points are linked only when each lies in the other's
    neighbourhood. One-way reach would let a sparse point with a huge radius
    swallow a dense cluster, and the outcome of classic expansion would then
    depend on input order. A non-core point joins the cluster of the nearest
    core point whose neighbourhood contains it.
    """
    n = len(xyz)
    tree = cKDTree(xyz)
    nbrs = tree.query_ball_point(xyz, r=radii, return_sorted=False)
    counts = np.fromiter((len(v) for v in nbrs), dtype=np.int64, count=n)
    core = counts >= min_pts

    src = np.repeat(np.arange(n), counts)
    dst = np.fromiter((j for v in nbrs for j in v), dtype=np.int64, count=int(counts.sum()))
    dist = np.linalg.norm(xyz[src] - xyz[dst], axis=1)
    labels = np.full(n, -1, dtype=np.int64)
    if not core.any():
        return labels

    cc = core[src] & core[dst] & (dist <= radii[dst])
    graph = coo_matrix((np.ones(int(cc.sum())), (src[cc], dst[cc])), shape=(n, n))
    _, comp = connected_components(graph, directed=True, connection="weak")
    core_idx = np.flatnonzero(core)
    # renumber clusters by their smallest member index for stability
    roots = {}
    for i in core_idx:
        roots.setdefault(comp[i], len(roots))
    labels[core_idx] = [roots[comp[i]] for i in core_idx]

    border = core[src] & ~core[dst]
    if border.any():
        b_src, b_dst, b_dist = src[border], dst[border], dist[border]
        # nearest containing core wins; ties broken by core coordinates
        cx, cy, cz = xyz[b_src, 0], xyz[b_src, 1], xyz[b_src, 2]
        order = np.lexsort((cz, cy, cx, b_dist, b_dst))
        first = np.ones(len(order), dtype=bool)
        first[1:] = b_dst[order[1:]] != b_dst[order[:-1]]
        sel = order[first]
        labels[b_dst[sel]] = labels[b_src[sel]]
    return labels


def filter_clusters_dbscan(cloud: PointCloud, params: PrepParams = PrepParams()) -> PointCloud:
    """Keep only DBSCAN clusters with at least ``min_pts`` members."""
    if len(cloud) < 2:
        raise TooFewPoints(f"cloud of {len(cloud)} points is too small for DBSCAN filtering")
    if len(cloud) < params.min_pts:
        raise AllFiltered(f"{len(cloud)} points cannot form a cluster of {params.min_pts}")
    k = min(params.k_neighbors, len(cloud) - 1)
    radii = adaptive_radii(cloud.xyz, k, params.gamma_eps)
    labels = dbscan_labels(cloud.xyz, radii, params.min_pts)
    keep = np.zeros(len(cloud), dtype=bool)
    if (labels >= 0).any():
        sizes = np.bincount(labels[labels >= 0])
        keep = (labels >= 0) & (sizes[np.maximum(labels, 0)] >= params.min_pts)
    if not keep.any():
        raise AllFiltered("every cluster is smaller than min_pts")
    return cloud.subset(keep)


def rasterize_xy(cloud: PointCloud, mpp: float) -> BinaryRaster:
    """Binary occupancy image of the XY projection, padded by two pixels."""
    if len(cloud) == 0:
        raise EmptyCloud("cannot rasterize an empty cloud")
    if not mpp > 0:
        raise InvalidInput("mpp must be positive")
    xy = cloud.xy
    xmin, ymin = xy.min(axis=0)
    xmax, ymax = xy.max(axis=0)
    ncols = int(np.floor((xmax - xmin) / mpp)) + 1 + 2 * RASTER_PAD
    nrows = int(np.floor((ymax - ymin) / mpp)) + 1 + 2 * RASTER_PAD
    cols = np.floor((xy[:, 0] - xmin) / mpp).astype(np.int64) + RASTER_PAD
    # north-up: row 0 holds the largest y
    rows = np.floor((ymax - xy[:, 1]) / mpp).astype(np.int64) + RASTER_PAD
    bits = np.zeros((nrows, ncols), dtype=bool)
    bits[rows, cols] = True
    geo = GeoTransform(xmin - RASTER_PAD * mpp, ymax + RASTER_PAD * mpp, mpp)
    return BinaryRaster(bits, geo)


def prepare_road_cloud(cloud: PointCloud, params: PrepParams = PrepParams(), road_label: int | None = ROAD_LABEL) -> PointCloud:
    """Label selection, adaptive voxel downsampling, outlier and cluster filtering."""
    road = cloud if road_label is None else select_road_points(cloud, road_label)
    s = adaptive_voxel_size(road, params.alpha, min_extent=params.raster_mpp)
    road = voxel_downsample(road, s)
    log.info("voxel size %.3f m -> %d points", s, len(road))
    road = remove_statistical_outliers(road, params)
    road = filter_clusters_dbscan(road, params)
    return road
