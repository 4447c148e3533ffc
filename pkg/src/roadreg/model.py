"""Core domain types shared by all pipeline stages.

Coordinate conventions
----------------------
World coordinates are a local planar frame in meters: ``x`` east, ``y`` north,
``z`` up. Rasters are stored row-major with row 0 at the north edge. A
:class:`GeoTransform` records the world position of the raster's top-left
*corner* and an isotropic pixel size, so the center of pixel ``(row, col)`` is
``(origin_x + (col + 0.5) * mpp, origin_y - (row + 0.5) * mpp)``.

All types are immutable once constructed; array fields are flagged read-only.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInput

#: no-data sentinel for elevation grids: the most negative finite float64
NODATA = float(-np.finfo(np.float64).max)

ROAD_LABEL = 1
NON_ROAD_LABEL = 0


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def wrap_angle(theta: float) -> float:
    """Map an angle onto (-pi, pi]."""
    t = math.fmod(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    elif t > math.pi:
        t -= 2.0 * math.pi
    return t


class Point3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D points with optional per-point class labels and intensities."""

    xyz: np.ndarray
    labels: np.ndarray | None = None
    intensities: np.ndarray | None = None

    def __post_init__(self) -> None:
        xyz = np.array(self.xyz, dtype=np.float64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(xyz)):
            raise InvalidInput("point coordinates must be finite")
        object.__setattr__(self, "xyz", _frozen(xyz))
        n = len(xyz)
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
            if len(labels) != n:
                raise InvalidInput(f"{len(labels)} labels for {n} points")
            object.__setattr__(self, "labels", _frozen(labels))
        if self.intensities is not None:
            inten = np.array(self.intensities, dtype=np.float64, copy=True).reshape(-1)
            if len(inten) != n:
                raise InvalidInput(f"{len(inten)} intensities for {n} points")
            object.__setattr__(self, "intensities", _frozen(inten))

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]], labels=None, intensities=None) -> PointCloud:
        return cls(np.asarray(points, dtype=np.float64).reshape(-1, 3), labels, intensities)

    def __len__(self) -> int:
        return len(self.xyz)

    def __iter__(self) -> Iterator[Point3]:
        for x, y, z in self.xyz:
            yield Point3(float(x), float(y), float(z))

    @property
    def xy(self) -> np.ndarray:
        return self.xyz[:, :2]

    @property
    def z(self) -> np.ndarray:
        return self.xyz[:, 2]

    def subset(self, index: np.ndarray) -> PointCloud:
        """Points selected by a boolean mask or an integer index array, order kept."""
        index = np.asarray(index)
        return PointCloud(
            self.xyz[index],
            None if self.labels is None else self.labels[index],
            None if self.intensities is None else self.intensities[index],
        )

    def with_xy(self, xy: np.ndarray) -> PointCloud:
        xyz = np.column_stack([np.asarray(xy, dtype=np.float64).reshape(-1, 2), self.xyz[:, 2]])
        return PointCloud(xyz, self.labels, self.intensities)

    def with_z(self, z: np.ndarray) -> PointCloud:
        xyz = np.column_stack([self.xyz[:, :2], np.asarray(z, dtype=np.float64).reshape(-1)])
        return PointCloud(xyz, self.labels, self.intensities)

    def equals(self, other: PointCloud) -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.array_equal(a, b))

        return (
            same(self.xyz, other.xyz)
            and same(self.labels, other.labels)
            and same(self.intensities, other.intensities)
        )


@dataclass(frozen=True)
class GeoTransform:
    origin_x: float
    origin_y: float
    meters_per_pixel: float

    def __post_init__(self) -> None:
        if not (self.meters_per_pixel > 0 and math.isfinite(self.meters_per_pixel)):
            raise InvalidInput("meters_per_pixel must be positive and finite")

    @property
    def mpp(self) -> float:
        return self.meters_per_pixel

    def pixel_to_world(self, rows, cols) -> tuple[np.ndarray, np.ndarray]:
        """World coordinates of pixel centers. Fractional indices are allowed."""
        rows = np.asarray(rows, dtype=np.float64)
        cols = np.asarray(cols, dtype=np.float64)
        x = self.origin_x + (cols + 0.5) * self.meters_per_pixel
        y = self.origin_y - (rows + 0.5) * self.meters_per_pixel
        return x, y

    def world_to_pixel(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Integer (row, col) of the pixel containing each world point."""
        rf, cf = self.world_to_pixel_float(x, y)
        return np.floor(rf + 0.5).astype(np.int64), np.floor(cf + 0.5).astype(np.int64)

    def world_to_pixel_float(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Fractional (row, col) such that integers fall on pixel centers."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        cols = (x - self.origin_x) / self.meters_per_pixel - 0.5
        rows = (self.origin_y - y) / self.meters_per_pixel - 0.5
        return rows, cols

    def pixels_to_world_xy(self, rc: np.ndarray) -> np.ndarray:
        """(K, 2) array of (row, col) -> (K, 2) array of world (x, y)."""
        rc = np.asarray(rc, dtype=np.float64).reshape(-1, 2)
        x, y = self.pixel_to_world(rc[:, 0], rc[:, 1])
        return np.column_stack([x, y])

    def shifted(self, dx: float, dy: float) -> GeoTransform:
        return GeoTransform(self.origin_x + dx, self.origin_y + dy, self.meters_per_pixel)


@dataclass(frozen=True, eq=False)
class BinaryRaster:
    """Row-major boolean grid with its geo-transform."""

    bits: np.ndarray
    geo: GeoTransform = field(default_factory=lambda: GeoTransform(0.0, 0.0, 1.0))

    def __post_init__(self) -> None:
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 2:
            raise InvalidInput("raster bits must be 2-D")
        object.__setattr__(self, "bits", _frozen(bits))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def with_bits(self, bits: np.ndarray) -> BinaryRaster:
        return BinaryRaster(bits, self.geo)

    def set_pixels(self) -> np.ndarray:
        """(K, 2) array of (row, col) for set pixels, in raster order."""
        return np.argwhere(self.bits)

    def set_pixels_world(self) -> np.ndarray:
        return self.geo.pixels_to_world_xy(self.set_pixels())

    def corners_world(self) -> np.ndarray:
        """World coordinates of the four outer corners: NW, NE, SE, SW."""
        g = self.geo
        w = self.width * g.mpp
        h = self.height * g.mpp
        return np.array(
            [
                [g.origin_x, g.origin_y],
                [g.origin_x + w, g.origin_y],
                [g.origin_x + w, g.origin_y - h],
                [g.origin_x, g.origin_y - h],
            ]
        )


class NodeKind(str, enum.Enum):
    ENDPOINT = "endpoint"
    BRANCH = "branch"  # anchor on a node-free closed loop
    INTERSECTION = "intersection"


@dataclass(frozen=True, eq=False)
class SkeletonNode:
    id: int
    kind: NodeKind
    members: np.ndarray  # (K, 2) int (row, col) pixels merged into this node

    @property
    def pixel(self) -> np.ndarray:
        """Node position in fractional pixel coordinates (centroid of members)."""
        return self.members.mean(axis=0)


@dataclass(frozen=True, eq=False)
class SkeletonEdge:
    u: int
    v: int
    pixels: np.ndarray  # (K, 2) int (row, col), first/last pixel belong to u/v

    @property
    def length(self) -> float:
        if len(self.pixels) < 2:
            return 0.0
        steps = np.diff(self.pixels.astype(np.float64), axis=0)
        return float(np.hypot(steps[:, 0], steps[:, 1]).sum())


@dataclass(frozen=True, eq=False)
class SkeletonGraph:
    nodes: tuple[SkeletonNode, ...]
    edges: tuple[SkeletonEdge, ...]
    geo: GeoTransform
    shape: tuple[int, int]

    def degree(self, node_id: int) -> int:
        return sum((e.u == node_id) + (e.v == node_id) for e in self.edges)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(len(self.nodes), dtype=np.int64)
        for e in self.edges:
            deg[e.u] += 1
            deg[e.v] += 1
        return deg

    def nodes_of_kind(self, kind: NodeKind) -> list[SkeletonNode]:
        return [n for n in self.nodes if n.kind == kind]

    def node_world(self, kind: NodeKind | None = None) -> np.ndarray:
        sel = [n for n in self.nodes if kind is None or n.kind == kind]
        if not sel:
            return np.zeros((0, 2))
        return self.geo.pixels_to_world_xy(np.array([n.pixel for n in sel]))

    def intersections_world(self) -> np.ndarray:
        return self.node_world(NodeKind.INTERSECTION)

    def to_raster(self) -> BinaryRaster:
        bits = np.zeros(self.shape, dtype=bool)
        for n in self.nodes:
            bits[n.members[:, 0], n.members[:, 1]] = True
        for e in self.edges:
            if len(e.pixels):
                bits[e.pixels[:, 0], e.pixels[:, 1]] = True
        return BinaryRaster(bits, self.geo)


@dataclass(frozen=True)
class SimilarityTransform2D:
    """Planar similarity ``p -> s * R(theta) @ (p - pivot) + pivot + translation``."""

    scale: float = 1.0
    rotation_rad: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    pivot: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise InvalidInput(f"scale must be positive and finite, got {self.scale}")
        vals = (self.rotation_rad, *self.translation, *self.pivot)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInput("transform parameters must be finite")
        object.__setattr__(self, "rotation_rad", wrap_angle(float(self.rotation_rad)))
        object.__setattr__(self, "translation", (float(self.translation[0]), float(self.translation[1])))
        object.__setattr__(self, "pivot", (float(self.pivot[0]), float(self.pivot[1])))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls) -> SimilarityTransform2D:
        return cls()

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.rotation_rad), math.sin(self.rotation_rad)
        return np.array([[c, -s], [s, c]])

    def linear(self) -> np.ndarray:
        return self.scale * self.matrix

    def offset(self) -> np.ndarray:
        """Constant term of the equivalent map ``p -> linear() @ p + offset()``."""
        piv = np.array(self.pivot)
        return piv + np.array(self.translation) - self.linear() @ piv

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        single = p.ndim == 1
        p = p.reshape(-1, 2)
        piv = np.array(self.pivot)
        out = (p - piv) @ self.linear().T + piv + np.array(self.translation)
        return out[0] if single else out

    def inverse(self) -> SimilarityTransform2D:
        image_of_pivot = (self.pivot[0] + self.translation[0], self.pivot[1] + self.translation[1])
        return SimilarityTransform2D(
            1.0 / self.scale,
            -self.rotation_rad,
            (-self.translation[0], -self.translation[1]),
            image_of_pivot,
        )

    def compose(self, other: SimilarityTransform2D) -> SimilarityTransform2D:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        piv = np.array(other.pivot)
        img = piv + np.array(other.translation)
        t = self.apply(img) - piv
        return SimilarityTransform2D(
            self.scale * other.scale,
            self.rotation_rad + other.rotation_rad,
            (float(t[0]), float(t[1])),
            other.pivot,
        )

    def about(self, pivot) -> SimilarityTransform2D:
        """The same mapping re-expressed with a different pivot."""
        piv = np.asarray(pivot, dtype=np.float64)
        t = self.apply(piv) - piv
        return SimilarityTransform2D(self.scale, self.rotation_rad, (float(t[0]), float(t[1])), (float(piv[0]), float(piv[1])))

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation_rad": self.rotation_rad,
            "translation": list(self.translation),
            "pivot": list(self.pivot),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SimilarityTransform2D:
        return cls(
            float(d["scale"]),
            float(d["rotation_rad"]),
            tuple(float(v) for v in d["translation"]),
            tuple(float(v) for v in d.get("pivot", (0.0, 0.0))),
        )


def compose(a: SimilarityTransform2D, b: SimilarityTransform2D) -> SimilarityTransform2D:
    """Transform equal to applying ``b`` then ``a``."""
    return a.compose(b)


def apply_transform(t: SimilarityTransform2D, p) -> np.ndarray:
    return t.apply(p)


@dataclass(frozen=True, eq=False)
class RbfWarp:
    """Smooth plane displacement field: multiquadric kernels plus an affine term.

    ``f(x) = sum_i w_i * sqrt(|x - c_i|^2 + eps^2) + A @ [1, x, y]``. Queries
    farther than ``guard_radius`` from every center fall back to the affine
    term alone.
    """

    centers: np.ndarray
    weights: np.ndarray  # (n, 2): columns are the x and y displacement weights
    affine: np.ndarray  # (2, 3): rows give x/y displacement as c0 + c1*x + c2*y
    epsilon: float
    targets: np.ndarray | None = None
    guard_radius: float | None = None

    def __post_init__(self) -> None:
        centers = np.array(self.centers, dtype=np.float64).reshape(-1, 2)
        weights = np.array(self.weights, dtype=np.float64).reshape(-1, 2)
        affine = np.array(self.affine, dtype=np.float64).reshape(2, 3)
        if len(centers) != len(weights):
            raise InvalidInput("centers and weights differ in length")
        if not self.epsilon > 0:
            raise InvalidInput("epsilon must be positive")
        object.__setattr__(self, "centers", _frozen(centers))
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "affine", _frozen(affine))
        if self.targets is not None:
            targets = np.array(self.targets, dtype=np.float64).reshape(-1, 2)
            if len(targets) != len(centers):
                raise InvalidInput("targets and centers differ in length")
            object.__setattr__(self, "targets", _frozen(targets))

    @property
    def weights_x(self) -> np.ndarray:
        return self.weights[:, 0]

    @property
    def weights_y(self) -> np.ndarray:
        return self.weights[:, 1]

    @classmethod
    def zero(cls, epsilon: float = 1.0) -> RbfWarp:
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((2, 3)), epsilon)

    def _affine_part(self, p: np.ndarray) -> np.ndarray:
        return self.affine[:, 0] + p @ self.affine[:, 1:].T

    def _guarded(self, p: np.ndarray) -> np.ndarray:
        """Boolean mask of query points outside the guard radius."""
        if self.guard_radius is None or len(self.centers) == 0:
            return np.zeros(len(p), dtype=bool)
        from scipy.spatial import cKDTree

        d, _ = cKDTree(self.centers).query(p, k=1)
        return d > self.guard_radius

    def displacement(self, points, chunk: int = 4096) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        out = self._affine_part(p)
        if len(self.centers) == 0 or len(p) == 0:
            return out
        inside = ~self._guarded(p)
        eps2 = self.epsilon**2
        idx = np.flatnonzero(inside)
        for start in range(0, len(idx), chunk):
            sel = idx[start : start + chunk]
            diff = p[sel, None, :] - self.centers[None, :, :]
            phi = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff) + eps2)
            out[sel] += phi @ self.weights
        return out

    def jacobian(self, points, chunk: int = 4096) -> np.ndarray:
        """Analytic (K, 2, 2) Jacobian of the displacement: ``J[k, i, j] = d f_i / d x_j``."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        jac = np.broadcast_to(self.affine[:, 1:], (len(p), 2, 2)).copy()
        if len(self.centers) == 0 or len(p) == 0:
            return jac
        inside = ~self._guarded(p)
        eps2 = self.epsilon**2
        idx = np.flatnonzero(inside)
        for start in range(0, len(idx), chunk):
            sel = idx[start : start + chunk]
            diff = p[sel, None, :] - self.centers[None, :, :]
            phi = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff) + eps2)
            dphi = diff / phi[:, :, None]  # (k, n, 2)
            jac[sel] += np.einsum("kni,nj->kji", dphi, self.weights)
        return jac

    def apply_points(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return p + self.displacement(p)

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "weights_x": self.weights_x.tolist(),
            "weights_y": self.weights_y.tolist(),
            "affine": self.affine.tolist(),
            "epsilon": self.epsilon,
            "targets": None if self.targets is None else self.targets.tolist(),
            "guard_radius": self.guard_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RbfWarp:
        centers = np.asarray(d["centers"], dtype=np.float64).reshape(-1, 2)
        weights = np.column_stack(
            [np.asarray(d["weights_x"], dtype=np.float64), np.asarray(d["weights_y"], dtype=np.float64)]
        ).reshape(-1, 2)
        return cls(
            centers,
            weights,
            np.asarray(d["affine"], dtype=np.float64),
            float(d["epsilon"]),
            None if d.get("targets") is None else np.asarray(d["targets"], dtype=np.float64),
            d.get("guard_radius"),
        )


@dataclass(frozen=True, eq=False)
class ElevationGrid:
    """Row-major height grid. Cells equal to :data:`NODATA` carry no value."""

    heights: np.ndarray
    geo: GeoTransform

    def __post_init__(self) -> None:
        h = np.array(self.heights, dtype=np.float64, copy=True)
        if h.ndim != 2:
            raise InvalidInput("heights must be 2-D")
        valid = h != NODATA
        if not np.all(np.isfinite(h[valid])):
            raise InvalidInput("non-sentinel heights must be finite")
        object.__setattr__(self, "heights", _frozen(h))

    @property
    def height(self) -> int:
        return self.heights.shape[0]

    @property
    def width(self) -> int:
        return self.heights.shape[1]

    @property
    def cell_size(self) -> float:
        return self.geo.mpp

    @property
    def valid(self) -> np.ndarray:
        return self.heights != NODATA

    def contains(self, x, y) -> np.ndarray:
        g = self.geo
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return (
            (x >= g.origin_x)
            & (x <= g.origin_x + self.width * g.mpp)
            & (y <= g.origin_y)
            & (y >= g.origin_y - self.height * g.mpp)
        )

    def sample_nearest(self, x, y) -> np.ndarray:
        """Value of the containing cell; NaN outside the grid or over no-data."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        g = self.geo
        col = np.floor((x - g.origin_x) / g.mpp).astype(np.int64)
        row = np.floor((g.origin_y - y) / g.mpp).astype(np.int64)
        # points exactly on the far edge belong to the last cell
        col = np.where(col == self.width, self.width - 1, col)
        row = np.where(row == self.height, self.height - 1, row)
        ok = (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)
        out = np.full(x.shape, np.nan)
        vals = self.heights[row[ok], col[ok]]
        out[ok] = np.where(vals == NODATA, np.nan, vals)
        return out

    def sample_bilinear(self, x, y, nodata_fallback: str | None = "nearest") -> np.ndarray:
        """Bilinear interpolation between cell centers.

        Inside the half-cell border the index is clamped, which amounts to
        constant extrapolation from the edge cells. Where any of the four
        neighbours is no-data, ``nodata_fallback='nearest'`` substitutes the
        containing cell's value; otherwise the result is NaN. Points outside
        the grid are always NaN.
        """
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        rf, cf = self.geo.world_to_pixel_float(x, y)
        inside = self.contains(x, y)
        rf = np.clip(rf, 0.0, self.height - 1.0)
        cf = np.clip(cf, 0.0, self.width - 1.0)
        r0 = np.minimum(np.floor(rf).astype(np.int64), max(self.height - 2, 0))
        c0 = np.minimum(np.floor(cf).astype(np.int64), max(self.width - 2, 0))
        r1 = np.minimum(r0 + 1, self.height - 1)
        c1 = np.minimum(c0 + 1, self.width - 1)
        fr = rf - r0
        fc = cf - c0
        h = self.heights
        q00, q01, q10, q11 = h[r0, c0], h[r0, c1], h[r1, c0], h[r1, c1]
        bad = (q00 == NODATA) | (q01 == NODATA) | (q10 == NODATA) | (q11 == NODATA)
        val = (q00 * (1 - fc) + q01 * fc) * (1 - fr) + (q10 * (1 - fc) + q11 * fc) * fr
        val = np.where(bad, np.nan, val)
        if nodata_fallback == "nearest" and np.any(bad):
            near = self.sample_nearest(x, y)
            val = np.where(bad, near, val)
        return np.where(inside, val, np.nan)


@dataclass
class AlignmentReport:
    centerline_mu: float
    centerline_sigma: float
    outlier_threshold: float
    outlier_count: int
    intersection_offset_mean: float | None
    matched_intersections: int
    elevation_sigma_before: float | None = None
    elevation_sigma_after: float | None = None
    elevation_corr_before: float | None = None
    elevation_corr_after: float | None = None
    raw_distances: list[float] = field(default_factory=list)
    raw_mean: float | None = None
    halfnormal_mean: float | None = None
    stages: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.centerline_sigma < 0:
            raise InvalidInput("centerline_sigma must be non-negative")
        expected = self.centerline_mu + 2.0 * self.centerline_sigma
        if not math.isclose(self.outlier_threshold, expected, rel_tol=1e-9, abs_tol=1e-12):
            raise InvalidInput("outlier_threshold must equal centerline_mu + 2 * centerline_sigma")
        for r in (self.elevation_corr_before, self.elevation_corr_after):
            if r is not None and not -1.0 - 1e-12 <= r <= 1.0 + 1e-12:
                raise InvalidInput("correlation outside [-1, 1]")

    def to_dict(self, include_distances: bool = False) -> dict:
        d = {
            "centerline_mu": self.centerline_mu,
            "centerline_sigma": self.centerline_sigma,
            "outlier_threshold": self.outlier_threshold,
            "outlier_count": self.outlier_count,
            "intersection_offset_mean": self.intersection_offset_mean,
            "matched_intersections": self.matched_intersections,
            "elevation_sigma_before": self.elevation_sigma_before,
            "elevation_sigma_after": self.elevation_sigma_after,
            "elevation_corr_before": self.elevation_corr_before,
            "elevation_corr_after": self.elevation_corr_after,
            "raw_mean": self.raw_mean,
            "halfnormal_mean": self.halfnormal_mean,
            "n_distances": len(self.raw_distances),
            "stages": self.stages,
        }
        if include_distances:
            d["raw_distances"] = list(self.raw_distances)
        return d
