"""Global similarity alignment of a cloud skeleton onto a map skeleton.

Candidate transforms come from pairing two keypoints on the map side with
two on the cloud side. Each candidate is scored by how many map keypoints
have a transformed cloud keypoint within ``match_epsilon``, and the best one
wins under a fixed tie-break order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegeneratePair, EmptyCloud, InsufficientKeypoints, InvalidInput, NoViableCandidate
from .model import PointCloud, SimilarityTransform2D
from .raster_skeleton import KeypointSet

log = logging.getLogger(__name__)

CLOSURE_TOL = 1e-9


@dataclass(frozen=True)
class RigidParams:
    match_epsilon: float = 8.0  # map pixels
    weight_primary: float = 1.0
    weight_aux: float = 0.3
    scale_bounds: tuple[float, float] = (0.25, 4.0)
    max_candidates: int = 200_000
    log_scale_bin: float = 0.05
    refine: bool = True

    def __post_init__(self) -> None:
        if not self.match_epsilon > 0:
            raise InvalidInput("match_epsilon must be positive")
        if self.weight_primary < 0 or self.weight_aux < 0:
            raise InvalidInput("weights must be non-negative")
        lo, hi = self.scale_bounds
        if not (0 < lo <= hi):
            raise InvalidInput("scale_bounds must satisfy 0 < min <= max")
        if self.max_candidates < 1:
            raise InvalidInput("max_candidates must be >= 1")
        if not self.log_scale_bin > 0:
            raise InvalidInput("log_scale_bin must be positive")


@dataclass(frozen=True)
class ScoredTransform:
    transform: SimilarityTransform2D
    score: float
    matched_primary: int
    matched_aux: int
    low_confidence: bool = False
    candidates: int = 0

    def to_dict(self) -> dict:
        d = self.transform.to_dict()
        d.update(
            score=self.score,
            matched_primary=self.matched_primary,
            matched_aux=self.matched_aux,
            low_confidence=self.low_confidence,
            candidates=self.candidates,
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ScoredTransform:
        return cls(
            SimilarityTransform2D.from_dict(d),
            float(d["score"]),
            int(d["matched_primary"]),
            int(d["matched_aux"]),
            bool(d.get("low_confidence", False)),
            int(d.get("candidates", 0)),
        )


def printed_rotation(p1a, p1b, p2a, p2b) -> float:
    """Rotation with the leading minus sign applied to the orientation difference."""
    d1 = np.subtract(p1b, p1a)
    d2 = np.subtract(p2b, p2a)
    return -(math.atan2(d1[1], d1[0]) - math.atan2(d2[1], d2[0]))


def _closes(t: SimilarityTransform2D, p2b, p1b) -> bool:
    err = np.linalg.norm(t.apply(np.asarray(p2b, dtype=np.float64)) - np.asarray(p1b, dtype=np.float64))
    return err <= CLOSURE_TOL * (1.0 + np.linalg.norm(p1b))


def candidate_from_pairs(p1a, p1b, p2a, p2b) -> SimilarityTransform2D:
    """Similarity mapping ``p2a -> p1a`` and ``p2b -> p1b`` (the ``2`` side is the source).

    The sign-flipped orientation difference is tried first; when it does not
    carry ``p2b`` onto ``p1b`` the plain difference is used instead.
    """
    p1a, p1b, p2a, p2b = (np.asarray(p, dtype=np.float64) for p in (p1a, p1b, p2a, p2b))
    l1 = float(np.linalg.norm(p1b - p1a))
    l2 = float(np.linalg.norm(p2b - p2a))
    if l1 == 0 or l2 == 0:
        raise DegeneratePair("pair endpoints coincide")
    scale = l1 / l2
    translation = tuple(p1a - p2a)
    pivot = tuple(p2a)
    t = SimilarityTransform2D(scale, printed_rotation(p1a, p1b, p2a, p2b), translation, pivot)
    if _closes(t, p2b, p1b):
        return t
    d1, d2 = p1b - p1a, p2b - p2a
    theta = math.atan2(d1[1], d1[0]) - math.atan2(d2[1], d2[0])
    return SimilarityTransform2D(scale, theta, translation, pivot)


def _as_points(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).reshape(-1, 2)


def _count_matched(t: SimilarityTransform2D, target: np.ndarray, source: np.ndarray, eps: float) -> int:
    """Target points whose nearest transformed source point is closer than ``eps``."""
    if len(target) == 0 or len(source) == 0:
        return 0
    d, _ = cKDTree(t.apply(source)).query(target, k=1)
    return int((d < eps).sum())


def score_transform(
    t: SimilarityTransform2D,
    primary1,
    primary2,
    aux1,
    aux2,
    params: RigidParams = RigidParams(),
    mpp: float = 1.0,
) -> ScoredTransform:
    """Score ``t`` (mapping set 2 into the frame of set 1) by proximity counts."""
    eps = params.match_epsilon * mpp
    mp = _count_matched(t, _as_points(primary1), _as_points(primary2), eps)
    ma = _count_matched(t, _as_points(aux1), _as_points(aux2), eps)
    score = params.weight_primary * mp + params.weight_aux * ma
    return ScoredTransform(t, score, mp, ma)


# --------------------------------------------------------------------------
# search


def _pair_table(pts: np.ndarray, ordered: bool) -> tuple[np.ndarray, np.ndarray]:
    n = len(pts)
    i, k = np.nonzero(~np.eye(n, dtype=bool)) if ordered else np.triu_indices(n, 1)
    keep = np.linalg.norm(pts[k] - pts[i], axis=1) > 0
    return i[keep], k[keep]


def _select_by_scale_bins(logs1: np.ndarray, logs2: np.ndarray, valid_range, bin_w: float, cap: int):
    """Choose log-scale bins holding the most candidates until ``cap`` is reached.

    Candidate log-scale is ``logs1[a] - logs2[b]``. Returns the selected
    (lo, hi) intervals in log space; correct correspondences agree on the
    scale, so they concentrate in a few bins.
    """
    lo, hi = valid_range
    edges = np.arange(lo, hi + bin_w, bin_w)
    hist = np.zeros(len(edges) - 1, dtype=np.int64)
    for start in range(0, len(logs1), 512):
        diff = (logs1[start : start + 512, None] - logs2[None, :]).ravel()
        hist += np.histogram(diff, bins=edges)[0]
    order = np.lexsort((np.abs(0.5 * (edges[:-1] + edges[1:])), -hist))
    chosen, total = [], 0
    for b in order:
        if hist[b] == 0 or total >= cap:
            break
        chosen.append((edges[b], edges[b + 1]))
        total += hist[b]
    return chosen


def _enumerate_candidates(p1: np.ndarray, p2: np.ndarray, params: RigidParams):
    """Arrays describing candidate transforms from map pairs x cloud pairs."""
    i1, k1 = _pair_table(p1, ordered=False)
    i2, k2 = _pair_table(p2, ordered=True)
    if len(i1) == 0 or len(i2) == 0:
        return None
    d1 = p1[k1] - p1[i1]
    d2 = p2[k2] - p2[i2]
    log1 = np.log(np.hypot(d1[:, 0], d1[:, 1]))
    log2 = np.log(np.hypot(d2[:, 0], d2[:, 1]))
    lo, hi = np.log(params.scale_bounds[0]), np.log(params.scale_bounds[1])

    a_idx, b_idx = [], []
    total = len(log1) * len(log2)
    bins = None
    if total > params.max_candidates:
        bins = _select_by_scale_bins(log1, log2, (lo, hi), params.log_scale_bin, params.max_candidates)
        log.info("candidate prefilter: %d raw candidates, keeping %d log-scale bins", total, len(bins))
    for start in range(0, len(log1), 512):
        diff = log1[start : start + 512, None] - log2[None, :]
        ok = (diff >= lo - 1e-12) & (diff <= hi + 1e-12)
        if bins is not None:
            in_bin = np.zeros_like(ok)
            for blo, bhi in bins:
                in_bin |= (diff >= blo) & (diff < bhi)
            ok &= in_bin
        a, b = np.nonzero(ok)
        a_idx.append(a + start)
        b_idx.append(b)
    a = np.concatenate(a_idx)
    b = np.concatenate(b_idx)
    if len(a) > params.max_candidates:
        # trim inside the last bins by closeness to unit scale (stable)
        ls = np.abs(log1[a] - log2[b])
        keep = np.sort(np.argsort(ls, kind="stable")[: params.max_candidates])
        a, b = a[keep], b[keep]
    if len(a) == 0:
        return None
    scale = np.exp(log1[a] - log2[b])
    theta = np.arctan2(d1[a, 1], d1[a, 0]) - np.arctan2(d2[b, 1], d2[b, 0])
    theta = np.mod(theta + np.pi, 2 * np.pi) - np.pi
    theta[theta == -np.pi] = np.pi
    src_a = p2[i2[b]]
    dst_a = p1[i1[a]]
    c, s = np.cos(theta), np.sin(theta)
    # linear part A and offset so that T(x) = A x + off
    A = np.empty((len(a), 2, 2))
    A[:, 0, 0] = scale * c
    A[:, 0, 1] = -scale * s
    A[:, 1, 0] = scale * s
    A[:, 1, 1] = scale * c
    off = dst_a - np.einsum("nij,nj->ni", A, src_a)
    index = np.column_stack([i1[a], k1[a], i2[b], k2[b]])
    return scale, theta, A, off, src_a, dst_a, index


def _primary_counts(A: np.ndarray, off: np.ndarray, p1: np.ndarray, p2: np.ndarray, eps: float) -> np.ndarray:
    n1, n2 = len(p1), len(p2)
    # centre on the map points to keep the expanded squared distances well conditioned
    mid = p1.mean(axis=0)
    q = p1 - mid
    qq = (q * q).sum(axis=1)
    chunk = max(1, 4_000_000 // max(1, n1 * n2))
    out = np.empty(len(A), dtype=np.int64)
    for start in range(0, len(A), chunk):
        sl = slice(start, start + chunk)
        y = np.einsum("cij,nj->cni", A[sl], p2) + (off[sl] - mid)[:, None, :]
        d2 = (y * y).sum(axis=-1)[:, :, None] + qq[None, None, :] - 2.0 * (y @ q.T)
        out[sl] = (d2.min(axis=1) < eps * eps).sum(axis=1)
    return out


def _tie_key(score: float, scale: float, theta: float, off: np.ndarray, index) -> tuple:
    # equal scores: least rotation first, which settles the half-turn symmetry of grid layouts
    return (-score, abs(theta), abs(math.log(scale)), float(np.hypot(*off)), tuple(int(v) for v in index))


def _better(a: tuple, b: tuple | None) -> bool:
    if b is None:
        return True
    sa, sb = -a[0], -b[0]
    if abs(sa - sb) > 1e-12 * max(1.0, abs(sa), abs(sb)):
        return sa > sb
    return a[1:] < b[1:]


def fit_similarity(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform2D:
    """Least-squares similarity mapping ``src`` onto ``dst`` (at least two distinct points)."""
    src, dst = _as_points(src), _as_points(dst)
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    w = (src[:, 0] - ms[0]) + 1j * (src[:, 1] - ms[1])
    z = (dst[:, 0] - md[0]) + 1j * (dst[:, 1] - md[1])
    denom = float(np.sum(np.abs(w) ** 2))
    if denom == 0:
        raise DegeneratePair("source points coincide")
    a = np.sum(np.conj(w) * z) / denom
    if abs(a) == 0:
        raise DegeneratePair("degenerate correspondence")
    return SimilarityTransform2D(float(abs(a)), float(np.angle(a)), tuple(md - ms), tuple(ms))


def _refine(best: ScoredTransform, p1, p2, a1, a2, params: RigidParams, mpp: float) -> ScoredTransform:
    eps = params.match_epsilon * mpp
    current = best
    for _ in range(5):
        moved = current.transform.apply(p2)
        d, j = cKDTree(moved).query(p1, k=1)
        ok = d < eps
        if ok.sum() < 2:
            break
        try:
            t = fit_similarity(p2[j[ok]], p1[ok])
        except DegeneratePair:
            break
        lo, hi = params.scale_bounds
        if not lo <= t.scale <= hi:
            break
        cand = score_transform(t, p1, p2, a1, a2, params, mpp)
        # the fit may trade an auxiliary hit for accuracy, but never a primary one
        if cand.matched_primary < current.matched_primary:
            break
        if np.allclose(cand.transform.apply(p2), moved, atol=1e-12, rtol=0):
            current = cand
            break
        current = cand
    return current


def _fallback_points(kp: KeypointSet) -> np.ndarray:
    pts = [kp.corners]
    cp = kp.control_points
    if len(cp) >= 2:
        d = np.linalg.norm(cp[:, None, :] - cp[None, :, :], axis=-1)
        i, k = np.unravel_index(np.argmax(d), d.shape)
        pts.append(cp[[min(i, k), max(i, k)]])
    return np.concatenate(pts)


def search_rigid(
    kp_cloud: KeypointSet,
    kp_map: KeypointSet,
    params: RigidParams = RigidParams(),
    mpp: float = 1.0,
) -> ScoredTransform:
    """Best-scoring similarity taking cloud keypoints onto map keypoints.

    ``mpp`` converts the pixel threshold ``match_epsilon`` into the world units
    of the keypoints. Intersections are the primary set and control points
    the auxiliary set. With fewer than two intersections on either side the
    raster corners and the two most distant control points stand in for the
    primary set and the result is flagged ``low_confidence``.
    """
    p1 = kp_map.intersections
    p2 = kp_cloud.intersections
    a1 = kp_map.control_points
    a2 = kp_cloud.control_points
    low_conf = False
    if len(p1) < 2 or len(p2) < 2:
        p1, p2 = _fallback_points(kp_map), _fallback_points(kp_cloud)
        low_conf = True
        log.warning("fewer than two intersections; falling back to corner/control keypoints")
        if len(p1) < 2 or len(p2) < 2:
            raise InsufficientKeypoints("not enough keypoints for a pair-based search")

    eps = params.match_epsilon * mpp
    cands = _enumerate_candidates(p1, p2, params)
    if cands is None:
        raise NoViableCandidate("no candidate transform satisfies the scale bounds")
    scale, theta, A, off, src_a, dst_a, index = cands
    prim = _primary_counts(A, off, p1, p2, eps)
    alpha, beta = params.weight_primary, params.weight_aux

    order = np.lexsort(
        (index[:, 3], index[:, 2], index[:, 1], index[:, 0], np.hypot(off[:, 0], off[:, 1]), np.abs(np.log(scale)), np.abs(theta), -prim)
    )
    tree_a2 = cKDTree(a2) if len(a2) and beta > 0 else None
    best_key = None
    best = None
    for ci in order:
        bound = alpha * prim[ci] + (beta * len(a1) if tree_a2 is not None else 0.0)
        if best_key is not None and bound < -best_key[0] - 1e-12 * max(1.0, abs(best_key[0])):
            break
        ma = 0
        if tree_a2 is not None and len(a1):
            # map aux points pulled back into the cloud frame; distances scale by 1/s
            inv = np.linalg.inv(A[ci])
            back = (a1 - off[ci]) @ inv.T
            d, _ = tree_a2.query(back, k=1, distance_upper_bound=eps / scale[ci])
            ma = int((d < eps / scale[ci]).sum())
        sc = alpha * prim[ci] + beta * ma
        key = _tie_key(sc, scale[ci], theta[ci], off[ci], index[ci])
        if _better(key, best_key):
            best_key = key
            best = (ci, int(prim[ci]), ma, sc)
    ci, mp, ma, sc = best
    t = SimilarityTransform2D(float(scale[ci]), float(theta[ci]), tuple(dst_a[ci] - src_a[ci]), tuple(src_a[ci]))
    # recount exactly with the object-level scorer so reported numbers are self-consistent
    result = score_transform(t, p1, p2, a1, a2, params, mpp)
    if params.refine:
        result = _refine(result, p1, p2, a1, a2, params, mpp)
    log.info(
        "rigid search: %d candidates, score %.3f (%d primary, %d aux), s=%.4f theta=%.4f",
        len(scale), result.score, result.matched_primary, result.matched_aux, result.transform.scale, result.transform.rotation_rad,
    )
    return ScoredTransform(result.transform, result.score, result.matched_primary, result.matched_aux, low_conf, len(scale))


# --------------------------------------------------------------------------
# applying the winner to a cloud


def centroid_parameters(t: SimilarityTransform2D, c) -> tuple[float, float, np.ndarray]:
    """``(s*, theta*, t*)`` such that ``t(p) == R(s* (p - c)) + c - t*``."""
    c = np.asarray(c, dtype=np.float64)
    t_star = c - t.apply(c)
    return t.scale, t.rotation_rad, t_star


def apply_global(cloud: PointCloud, t: SimilarityTransform2D) -> PointCloud:
    """Map every point's XY through ``t`` using the centroid-centred form; z is untouched."""
    if len(cloud) == 0:
        raise EmptyCloud("cannot transform an empty cloud")
    c = cloud.xy.mean(axis=0)
    s, theta, t_star = centroid_parameters(t, c)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    xy = (s * (cloud.xy - c)) @ rot.T + c - t_star
    return cloud.with_xy(xy)
