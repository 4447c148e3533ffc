"""Synthetic paired scenes: colour map, labelled cloud and their exact relation.

The map frame is metric with its origin at the lower-left corner of the map
image. The cloud frame is reached from the map frame by the inverse of the
ground-truth similarity, then a smooth sinusoidal displacement, then noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidSpec
from .model import NON_ROAD_LABEL, ROAD_LABEL, BinaryRaster, ElevationGrid, GeoTransform, PointCloud, SimilarityTransform2D, SkeletonGraph
from .raster_skeleton import build_skeleton_graph, thin

ROAD_RGB = (255, 255, 255)
BACKGROUND_RGB = (205, 225, 190)


@dataclass(frozen=True)
class TerrainSpec:
    kind: str = "flat"  # flat | ramp | sine
    base: float = 0.0
    gradient: tuple[float, float] = (0.0, 0.0)
    amplitude: float = 0.0
    wavelength: tuple[float, float] = (300.0, 300.0)

    def __post_init__(self) -> None:
        if self.kind not in ("flat", "ramp", "sine"):
            raise InvalidSpec(f"unknown terrain kind {self.kind!r}")
        if self.kind == "sine" and min(self.wavelength) <= 0:
            raise InvalidSpec("terrain wavelengths must be positive")

    @property
    def wavenumbers(self) -> tuple[float, float]:
        return 2 * math.pi / self.wavelength[0], 2 * math.pi / self.wavelength[1]

    def height(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "flat":
            return np.full(np.broadcast(x, y).shape, self.base)
        if self.kind == "ramp":
            return self.base + self.gradient[0] * x + self.gradient[1] * y
        kx, ky = self.wavenumbers
        return self.base + self.amplitude * np.sin(kx * x) * np.cos(ky * y)

    def bilinear_error_bound(self, cell: float) -> float:
        """Worst-case bilinear interpolation error on a grid of spacing ``cell``.

        Uses ``h^2 / 8 * (max|f_xx| + max|f_yy|)``; planes interpolate exactly.
        """
        if self.kind != "sine":
            return 0.0
        kx, ky = self.wavenumbers
        return cell * cell / 8.0 * self.amplitude * (kx * kx + ky * ky)

    def to_grid(self, xmin: float, ymin: float, xmax: float, ymax: float, cell: float) -> ElevationGrid:
        """Terrain sampled at cell centres over a grid covering the box with one spare cell per side."""
        ox = xmin - cell
        oy = ymax + cell
        ncols = int(math.ceil((xmax - ox) / cell)) + 1
        nrows = int(math.ceil((oy - ymin) / cell)) + 1
        geo = GeoTransform(ox, oy, cell)
        r, c = np.mgrid[0:nrows, 0:ncols]
        x, y = geo.pixel_to_world(r, c)
        return ElevationGrid(self.height(x, y), geo)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "base": self.base,
            "gradient": list(self.gradient),
            "amplitude": self.amplitude,
            "wavelength": list(self.wavelength),
        }

    @classmethod
    def from_dict(cls, d: dict) -> TerrainSpec:
        return cls(d["kind"], d["base"], tuple(d["gradient"]), d["amplitude"], tuple(d["wavelength"]))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    grid_blocks: tuple[int, int] = (3, 3)
    block_size: float = 80.0
    road_width: float = 8.0
    point_density: float = 8.0
    noise_xy: float = 0.0
    gt_transform: SimilarityTransform2D = field(default_factory=SimilarityTransform2D)
    deform_amp: float = 0.0
    deform_wavelength: float = 200.0
    terrain: TerrainSpec = field(default_factory=TerrainSpec)
    z_bias: float = 0.0
    noise_z: float = 0.0
    z_tilt: float = 0.0
    map_mpp: float = 1.0
    margin: float = 20.0
    extension: float = 30.0
    jitter: float = 0.15
    buildings: bool = False
    layout: str = "grid"  # grid | winding
    terrain_cell: float = 30.0

    def __post_init__(self) -> None:
        nx, ny = self.grid_blocks
        if nx < 1 or ny < 1:
            raise InvalidSpec("grid_blocks must be at least (1, 1)")
        for name in ("block_size", "road_width", "point_density", "map_mpp", "deform_wavelength", "terrain_cell"):
            if not getattr(self, name) > 0:
                raise InvalidSpec(f"{name} must be positive")
        for name in ("noise_xy", "deform_amp", "noise_z", "margin", "extension"):
            if getattr(self, name) < 0:
                raise InvalidSpec(f"{name} must be non-negative")
        if not self.deform_wavelength > 4 * self.deform_amp:
            raise InvalidSpec("deform_wavelength must exceed 4 * deform_amp")
        if not 0 <= self.jitter < 0.5:
            raise InvalidSpec("jitter must lie in [0, 0.5)")
        if self.road_width >= 0.5 * self.block_size:
            raise InvalidSpec("road_width must be well below block_size")
        if self.layout not in ("grid", "winding"):
            raise InvalidSpec(f"unknown layout {self.layout!r}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["grid_blocks"] = list(self.grid_blocks)
        d["gt_transform"] = self.gt_transform.to_dict()
        d["terrain"] = self.terrain.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        d = dict(d)
        if "grid_blocks" in d:
            d["grid_blocks"] = tuple(d["grid_blocks"])
        if "gt_transform" in d:
            d["gt_transform"] = SimilarityTransform2D.from_dict(d["gt_transform"])
        if "terrain" in d:
            d["terrain"] = TerrainSpec.from_dict(d["terrain"])
        return cls(**d)


@dataclass(frozen=True)
class Deformation:
    """``p -> p + amp * (sin(2 pi y / L + phase_x), sin(2 pi x / L + phase_y))``."""

    amp: float
    wavelength: float
    phase: tuple[float, float] = (0.0, 0.0)

    def displacement(self, xy) -> np.ndarray:
        p = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        k = 2 * math.pi / self.wavelength
        return self.amp * np.column_stack([np.sin(k * p[:, 1] + self.phase[0]), np.sin(k * p[:, 0] + self.phase[1])])

    def forward(self, xy) -> np.ndarray:
        p = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return p + self.displacement(p)

    def inverse(self, xy, iters: int = 200, tol: float = 1e-12) -> np.ndarray:
        """Newton iteration; the Jacobian is invertible whenever ``2 pi amp / L < 1``."""
        q = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        p = q.copy()
        k = 2 * math.pi / self.wavelength
        for _ in range(iters):
            r = self.forward(p) - q
            if np.abs(r).max(initial=0.0) < tol:
                break
            # J = [[1, a], [b, 1]] with a = d dx / dy, b = d dy / dx
            a = self.amp * k * np.cos(k * p[:, 1] + self.phase[0])
            b = self.amp * k * np.cos(k * p[:, 0] + self.phase[1])
            det = 1.0 - a * b
            p = p - np.column_stack([(r[:, 0] - a * r[:, 1]) / det, (r[:, 1] - b * r[:, 0]) / det])
        return p

    def to_dict(self) -> dict:
        return {"amp": self.amp, "wavelength": self.wavelength, "phase": list(self.phase)}


@dataclass(frozen=True, eq=False)
class SceneTruth:
    map_xy: np.ndarray  # exact map-frame position of every cloud point
    map_intersections: np.ndarray
    cloud_intersections: np.ndarray  # noise-free cloud-frame position of the intersections
    centerlines: np.ndarray  # (M, 2, 2) map-frame road centerline segments
    gt_transform: SimilarityTransform2D
    deformation: Deformation
    terrain: TerrainSpec
    z_bias: float
    z_tilt: float
    tilt_origin: tuple[float, float]
    extent: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax of the map frame

    def cloud_to_map(self, xy) -> np.ndarray:
        """Exact map-frame position of noise-free cloud-frame coordinates."""
        return self.gt_transform.apply(self.deformation.inverse(xy))

    def map_to_cloud(self, xy) -> np.ndarray:
        return self.deformation.forward(self.gt_transform.inverse().apply(xy))

    def true_terrain(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return self.terrain.height(xy[:, 0], xy[:, 1])

    def to_dict(self) -> dict:
        return {
            "map_intersections": self.map_intersections.tolist(),
            "cloud_intersections": self.cloud_intersections.tolist(),
            "centerlines": self.centerlines.tolist(),
            "gt_transform": self.gt_transform.to_dict(),
            "deformation": self.deformation.to_dict(),
            "terrain": self.terrain.to_dict(),
            "z_bias": self.z_bias,
            "z_tilt": self.z_tilt,
            "tilt_origin": list(self.tilt_origin),
            "extent": list(self.extent),
        }


class Scene(NamedTuple):
    map_rgb: np.ndarray
    map_geo: GeoTransform
    truth_skeleton: SkeletonGraph
    cloud: PointCloud
    truth: SceneTruth
    terrain_grid: ElevationGrid


# --------------------------------------------------------------------------
# road layout


def _street_positions(n_blocks: int, block: float, start: float, jitter: float, rng: np.random.Generator) -> np.ndarray:
    widths = block * (1.0 + rng.uniform(-jitter, jitter, n_blocks))
    return start + np.concatenate([[0.0], np.cumsum(widths)])


def _grid_layout(spec: SceneSpec, rng: np.random.Generator):
    nx, ny = spec.grid_blocks
    start = spec.margin + spec.extension
    xs = _street_positions(nx, spec.block_size, start, spec.jitter, rng)
    ys = _street_positions(ny, spec.block_size, start, spec.jitter, rng)
    x0, x1 = xs[0] - spec.extension, xs[-1] + spec.extension
    y0, y1 = ys[0] - spec.extension, ys[-1] + spec.extension
    segs = [((x, y0), (x, y1)) for x in xs] + [((x0, y), (x1, y)) for y in ys]
    inter = np.array([(x, y) for y in ys for x in xs])
    width = x1 + spec.margin
    height = y1 + spec.margin
    return np.array(segs, dtype=np.float64), inter, (width, height), (xs, ys)


def _winding_layout(spec: SceneSpec, rng: np.random.Generator):
    nx, _ = spec.grid_blocks
    length = max(nx, 2) * spec.block_size
    amp = 0.25 * spec.block_size
    phase = rng.uniform(0, 2 * math.pi)
    t = np.linspace(0.0, length, int(length / 2) + 1)
    y = spec.margin + amp + amp * (1 + np.sin(2 * math.pi * t / length * 1.5 + phase)) / 2
    x = spec.margin + t
    pts = np.column_stack([x, y])
    segs = np.stack([pts[:-1], pts[1:]], axis=1)
    width = x[-1] + spec.margin
    height = y.max() + amp + spec.margin
    return segs, np.zeros((0, 2)), (width, height), None


def _dist_to_segments(p: np.ndarray, segs: np.ndarray, chunk: int = 20000) -> np.ndarray:
    out = np.empty(len(p))
    a, b = segs[:, 0], segs[:, 1]
    ab = b - a
    L2 = np.maximum((ab * ab).sum(axis=1), 1e-300)
    for s in range(0, len(p), chunk):
        q = p[s : s + chunk]
        ap = q[:, None, :] - a[None]
        lam = np.clip((ap * ab[None]).sum(axis=-1) / L2, 0.0, 1.0)
        d = ap - lam[..., None] * ab[None]
        out[s : s + chunk] = np.sqrt((d * d).sum(axis=-1)).min(axis=1)
    return out


def _rasterize_centerlines(segs: np.ndarray, geo: GeoTransform, shape: tuple[int, int]) -> np.ndarray:
    bits = np.zeros(shape, dtype=bool)
    for a, b in segs:
        n = int(math.ceil(np.linalg.norm(b - a) / (0.25 * geo.mpp))) + 1
        t = np.linspace(0.0, 1.0, n)[:, None]
        pts = a + t * (b - a)
        r, c = geo.world_to_pixel(pts[:, 0], pts[:, 1])
        ok = (r >= 0) & (r < shape[0]) & (c >= 0) & (c < shape[1])
        bits[r[ok], c[ok]] = True
    return bits


def _sample_roads(spec: SceneSpec, segs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples over the union of road strips (each strip a segment buffered by half the width)."""
    half = spec.road_width / 2.0
    pts = []
    for k, (a, b) in enumerate(segs):
        d = b - a
        L = float(np.linalg.norm(d))
        if L == 0:
            continue
        u = d / L
        nrm = np.array([-u[1], u[0]])
        area = L * spec.road_width
        n = rng.poisson(spec.point_density * area)
        s = rng.uniform(0.0, L, n)
        w = rng.uniform(-half, half, n)
        p = a + s[:, None] * u + w[:, None] * nrm
        if k and len(p):
            # keep a point only if no earlier strip already covers it
            prev = segs[:k]
            p = p[_dist_to_segments(p, prev) > half]
        pts.append(p)
    return np.concatenate(pts) if pts else np.zeros((0, 2))


def _sample_roofs(spec: SceneSpec, grid, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if grid is None:
        return np.zeros((0, 2)), np.zeros(0)
    xs, ys = grid
    pts, heights = [], []
    inset = spec.road_width
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            x0, x1 = xs[i] + inset, xs[i + 1] - inset
            y0, y1 = ys[j] + inset, ys[j + 1] - inset
            if x1 <= x0 or y1 <= y0:
                continue
            n = rng.poisson(0.5 * spec.point_density * (x1 - x0) * (y1 - y0) * 0.25)
            p = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
            pts.append(p)
            heights.append(np.full(n, rng.uniform(8.0, 25.0)))
    if not pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(heights)


def generate_scene(spec: SceneSpec) -> Scene:
    """Build map image, truth skeleton, cloud, truth record and terrain grid for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    if spec.layout == "grid":
        segs, inter, (W, H), grid = _grid_layout(spec, rng)
    else:
        segs, inter, (W, H), grid = _winding_layout(spec, rng)

    mpp = spec.map_mpp
    ncols = int(math.ceil(W / mpp))
    nrows = int(math.ceil(H / mpp))
    geo = GeoTransform(0.0, nrows * mpp, mpp)
    r, c = np.mgrid[0:nrows, 0:ncols]
    px, py = geo.pixel_to_world(r.ravel(), c.ravel())
    road = (_dist_to_segments(np.column_stack([px, py]), segs) <= spec.road_width / 2.0).reshape(nrows, ncols)
    rgb = np.empty((nrows, ncols, 3), dtype=np.uint8)
    rgb[...] = BACKGROUND_RGB
    rgb[road] = ROAD_RGB

    center_bits = _rasterize_centerlines(segs, geo, (nrows, ncols))
    truth_skeleton = build_skeleton_graph(thin(BinaryRaster(center_bits, geo)))

    road_xy = _sample_roads(spec, segs, rng)
    roof_xy, roof_h = _sample_roofs(spec, grid, rng) if spec.buildings else (np.zeros((0, 2)), np.zeros(0))
    map_xy = np.concatenate([road_xy, roof_xy])
    labels = np.concatenate([np.full(len(road_xy), ROAD_LABEL), np.full(len(roof_xy), NON_ROAD_LABEL)]).astype(np.int64)

    phase = tuple(rng.uniform(0, 2 * math.pi, 2))
    deform = Deformation(spec.deform_amp, spec.deform_wavelength, phase)
    inv = spec.gt_transform.inverse()
    cloud_xy = deform.forward(inv.apply(map_xy)) if len(map_xy) else np.zeros((0, 2))
    if spec.noise_xy > 0:
        cloud_xy = cloud_xy + rng.normal(0.0, spec.noise_xy, cloud_xy.shape)

    tilt_origin = (W / 2.0, H / 2.0)
    z = spec.terrain.height(map_xy[:, 0], map_xy[:, 1]) + spec.z_bias
    z = z + spec.z_tilt * (map_xy[:, 0] - tilt_origin[0])
    z = z + np.concatenate([np.zeros(len(road_xy)), roof_h])
    if spec.noise_z > 0:
        z = z + rng.normal(0.0, spec.noise_z, len(z))
    cloud = PointCloud(np.column_stack([cloud_xy, z]), labels)

    cloud_inter = deform.forward(inv.apply(inter)) if len(inter) else np.zeros((0, 2))
    truth = SceneTruth(
        map_xy=map_xy,
        map_intersections=inter,
        cloud_intersections=cloud_inter,
        centerlines=segs,
        gt_transform=spec.gt_transform,
        deformation=deform,
        terrain=spec.terrain,
        z_bias=spec.z_bias,
        z_tilt=spec.z_tilt,
        tilt_origin=tilt_origin,
        extent=(0.0, 0.0, ncols * mpp, nrows * mpp),
    )
    terrain_grid = spec.terrain.to_grid(0.0, 0.0, ncols * mpp, nrows * mpp, spec.terrain_cell)
    return Scene(rgb, geo, truth_skeleton, cloud, truth, terrain_grid)


def benchmark_spec(seed: int = 7) -> SceneSpec:
    """The standard end-to-end benchmark scene."""
    return SceneSpec(
        seed=seed,
        grid_blocks=(4, 4),
        block_size=80.0,
        road_width=8.0,
        point_density=8.0,
        noise_xy=0.2,
        gt_transform=SimilarityTransform2D(1.1, 0.25, (20.0, -15.0)),
        deform_amp=3.0,
        deform_wavelength=200.0,
        terrain=TerrainSpec("sine", base=40.0, amplitude=5.0, wavelength=(400.0, 400.0)),
        z_bias=30.0,
        noise_z=0.01,
        z_tilt=0.01,
    )
