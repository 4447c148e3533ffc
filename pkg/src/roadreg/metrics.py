"""Registration quality measures that need no positioning ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateSegment, EmptyInput, InvalidInput, NoMatches, TooFewSamples, ZeroVariance
from .model import SkeletonGraph


@dataclass(frozen=True, eq=False)
class CenterlineSet:
    """Road centerline segments, array of shape (M, 2, 2): ``segments[j] = (a_j, b_j)``."""

    segments: np.ndarray

    def __post_init__(self) -> None:
        s = np.array(self.segments, dtype=np.float64).reshape(-1, 2, 2)
        if len(s) and (np.linalg.norm(s[:, 1] - s[:, 0], axis=1) == 0).any():
            raise DegenerateSegment("centerline contains a zero-length segment")
        s.flags.writeable = False
        object.__setattr__(self, "segments", s)

    def __len__(self) -> int:
        return len(self.segments)


@dataclass(frozen=True, eq=False)
class DistanceStats:
    mu_hat: float
    sigma_hat: float
    tau_outlier: float
    distances: np.ndarray

    @property
    def raw_mean(self) -> float:
        return float(np.mean(self.distances)) if len(self.distances) else 0.0

    @property
    def halfnormal_mean(self) -> float:
        """Mean of the half-normal with scale ``sigma_hat``."""
        return self.sigma_hat * math.sqrt(2.0 / math.pi)

    @property
    def outlier_count(self) -> int:
        return int((self.distances > self.tau_outlier).sum())


def point_to_segment_distance(p, seg) -> float:
    p = np.asarray(p, dtype=np.float64)
    a, b = (np.asarray(v, dtype=np.float64) for v in seg)
    ab = b - a
    L2 = float(ab @ ab)
    if L2 == 0:
        raise DegenerateSegment("segment endpoints coincide")
    lam = float((p - a) @ ab) / L2
    if 0.0 <= lam <= 1.0:
        cross = ab[0] * (p[1] - a[1]) - ab[1] * (p[0] - a[0])
        return abs(cross) / math.sqrt(L2)
    return float(min(np.linalg.norm(p - a), np.linalg.norm(p - b)))


def _distances_block(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, m) distances evaluated with the same branch rule as the scalar form."""
    ab = b - a  # (m, 2)
    L2 = (ab * ab).sum(axis=1)
    ap = p[:, None, :] - a[None, :, :]
    lam = (ap * ab[None]).sum(axis=-1) / L2
    cross = np.abs(ab[None, :, 0] * ap[..., 1] - ab[None, :, 1] * ap[..., 0]) / np.sqrt(L2)
    da = np.sqrt((ap * ap).sum(axis=-1))
    bp = p[:, None, :] - b[None, :, :]
    db = np.sqrt((bp * bp).sum(axis=-1))
    return np.where((lam >= 0) & (lam <= 1), cross, np.minimum(da, db))


def centerline_distances(traj, centerlines: CenterlineSet, chunk: int = 2048) -> np.ndarray:
    """Minimum distance from each trajectory point to any centerline segment."""
    p = np.asarray(traj, dtype=np.float64).reshape(-1, 2)
    segs = centerlines.segments
    if len(p) == 0 or len(segs) == 0:
        raise EmptyInput("trajectory and centerlines must be non-empty")
    a, b = segs[:, 0], segs[:, 1]
    out = np.empty(len(p))
    if len(segs) <= 256:
        for s in range(0, len(p), chunk):
            out[s : s + chunk] = _distances_block(p[s : s + chunk], a, b).min(axis=1)
        return out
    # prune with a bound: the true minimum is at most the distance to the nearest
    # segment midpoint's segment, and any segment whose bounding circle lies further
    # away cannot win
    mid = 0.5 * (a + b)
    half = 0.5 * np.linalg.norm(b - a, axis=1)
    tree = cKDTree(mid)
    _, j0 = tree.query(p, k=1)
    upper = _distances_pairs(p, a[j0], b[j0])
    rmax = float(half.max())
    for i in range(len(p)):
        cand = tree.query_ball_point(p[i], upper[i] + rmax)
        cand = np.asarray(cand, dtype=np.int64)
        out[i] = _distances_block(p[i : i + 1], a[cand], b[cand]).min()
    return out


def _distances_pairs(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    L2 = (ab * ab).sum(axis=1)
    ap = p - a
    lam = (ap * ab).sum(axis=1) / L2
    cross = np.abs(ab[:, 0] * ap[:, 1] - ab[:, 1] * ap[:, 0]) / np.sqrt(L2)
    da = np.linalg.norm(ap, axis=1)
    db = np.linalg.norm(p - b, axis=1)
    return np.where((lam >= 0) & (lam <= 1), cross, np.minimum(da, db))


def fit_mirrored_normal(distances) -> DistanceStats:
    """Zero-mean normal fit to the distances together with their negatives."""
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if len(d) < 2:
        raise TooFewSamples("need at least two distances")
    if (d < 0).any():
        raise InvalidInput("distances must be non-negative")
    # scale by the largest value so squaring neither underflows nor overflows
    top = float(d.max())
    sigma = top * float(np.sqrt(np.mean((d / top) ** 2))) if top > 0 else 0.0
    mu = 0.0
    return DistanceStats(mu, sigma, mu + 2.0 * sigma, d.copy())


def intersection_offset(pc_int, map_int, delta: float = 15.0) -> tuple[float, int]:
    """Mean distance over mutual-nearest-neighbour pairs closer than ``delta``."""
    a = np.asarray(pc_int, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(map_int, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("both intersection sets must be non-empty")
    dab, jab = cKDTree(b).query(a, k=1)
    _, jba = cKDTree(a).query(b, k=1)
    mutual = jba[jab] == np.arange(len(a))
    ok = mutual & (dab <= delta)
    if not ok.any():
        raise NoMatches(f"no mutual nearest neighbours within {delta}")
    return float(dab[ok].mean()), int(ok.sum())


def elevation_correlation(sample_z, reference_z) -> float:
    x = np.asarray(sample_z, dtype=np.float64).reshape(-1)
    y = np.asarray(reference_z, dtype=np.float64).reshape(-1)
    if len(x) != len(y) or len(x) < 2:
        raise InvalidInput("need two equal-length sequences of at least 2 values")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(xc @ xc)), math.sqrt(float(yc @ yc))
    if sx == 0 or sy == 0:
        raise ZeroVariance("correlation undefined for constant input")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


# --------------------------------------------------------------------------
# centerlines from skeletons


def simplify_polyline(points: np.ndarray, tol: float) -> np.ndarray:
    """Douglas-Peucker simplification keeping both ends."""
    p = np.asarray(points, dtype=np.float64)
    if len(p) <= 2:
        return p
    keep = np.zeros(len(p), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(p) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = p[i], p[j]
        seg = b - a
        L = float(np.hypot(*seg))
        mid = p[i + 1 : j]
        if L == 0:
            d = np.linalg.norm(mid - a, axis=1)
        else:
            d = np.abs(seg[0] * (mid[:, 1] - a[1]) - seg[1] * (mid[:, 0] - a[0])) / L
        k = int(np.argmax(d))
        if d[k] > tol:
            m = i + 1 + k
            keep[m] = True
            stack.append((i, m))
            stack.append((m, j))
    return p[keep]


def centerlines_from_graph(g: SkeletonGraph, tol_px: float = 1.0) -> CenterlineSet:
    segs = []
    for e in g.edges:
        pix = simplify_polyline(e.pixels.astype(np.float64), tol_px)
        w = g.geo.pixels_to_world_xy(pix)
        for a, b in zip(w[:-1], w[1:]):
            if np.any(a != b):
                segs.append((a, b))
    return CenterlineSet(np.array(segs).reshape(-1, 2, 2))
