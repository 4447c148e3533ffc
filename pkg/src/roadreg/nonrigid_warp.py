"""Residual local correction with a multiquadric RBF displacement field."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, InvalidInput, NoPairs, SingularSystem
from .model import PointCloud, RbfWarp

log = logging.getLogger(__name__)

COINCIDENT = 1e-9
GUARD_FACTOR = 3.0


@dataclass(frozen=True)
class WarpParams:
    epsilon: float = 0.6  # kernel shape, map pixels
    tau_match: float = 30.0  # correspondence radius, map pixels
    include_affine: bool = True
    control_targets: str = "skeleton"  # or "keypoints"

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise InvalidInput("epsilon must be positive")
        if not self.tau_match > 0:
            raise InvalidInput("tau_match must be positive")
        if self.control_targets not in ("skeleton", "keypoints"):
            raise InvalidInput("control_targets must be 'skeleton' or 'keypoints'")


@dataclass(frozen=True, eq=False)
class ControlPairSet:
    sources: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        s = np.array(self.sources, dtype=np.float64).reshape(-1, 2)
        t = np.array(self.targets, dtype=np.float64).reshape(-1, 2)
        if len(s) != len(t):
            raise InvalidInput("sources and targets differ in length")
        s.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "sources", s)
        object.__setattr__(self, "targets", t)

    def __len__(self) -> int:
        return len(self.sources)

    @property
    def displacements(self) -> np.ndarray:
        return self.targets - self.sources


def dedupe_sources(sources: np.ndarray, targets: np.ndarray, tol: float = COINCIDENT) -> tuple[np.ndarray, np.ndarray]:
    """Merge sources closer than ``tol``; merged sources take the mean of their targets."""
    s = np.asarray(sources, dtype=np.float64).reshape(-1, 2)
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if len(s) < 2:
        return s, t
    pairs = cKDTree(s).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return s, t
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(s), len(s)))
    _, comp = connected_components(g, directed=False)
    _, first, inverse = np.unique(comp, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    group = rank[inverse]
    cnt = np.bincount(group).astype(np.float64)
    tt = np.column_stack([np.bincount(group, weights=t[:, d]) for d in range(2)]) / cnt[:, None]
    return s[np.sort(first)], tt


def match_control_points(cloud_kp, map_kp, tau: float) -> ControlPairSet:
    """Pair each cloud keypoint with its nearest map keypoint closer than ``tau``."""
    src = np.asarray(cloud_kp, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(map_kp, dtype=np.float64).reshape(-1, 2)
    if len(src) == 0 or len(dst) == 0:
        raise InvalidInput("both keypoint sets must be non-empty")
    d, j = cKDTree(dst).query(src, k=1)
    ok = d < tau
    if not ok.any():
        raise NoPairs(f"no keypoint pair closer than {tau}")
    s, t = dedupe_sources(src[ok], dst[j[ok]])
    return ControlPairSet(s, t)


def multiquadric(r2: np.ndarray, epsilon: float) -> np.ndarray:
    return np.sqrt(r2 + epsilon * epsilon)


def fit_rbf(pairs: ControlPairSet, params: WarpParams = WarpParams(), mpp: float = 1.0) -> RbfWarp:
    """Solve for kernel weights (and affine part) interpolating the pair displacements.

    ``mpp`` converts the pixel-unit kernel parameter into the point units.
    With the affine part, the weights are constrained to be orthogonal to
    ``[1, x, y]`` so that affine displacement fields are reproduced by the
    polynomial alone.
    """
    src, dst = dedupe_sources(pairs.sources, pairs.targets)
    n = len(src)
    eps = params.epsilon * mpp
    need = 3 if params.include_affine else 1
    if n < need:
        raise SingularSystem(f"need at least {need} distinct control pairs, got {n}")
    disp = dst - src
    mid = src.mean(axis=0)
    c = src - mid
    diff = c[:, None, :] - c[None, :, :]
    phi = multiquadric(np.einsum("ijk,ijk->ij", diff, diff), eps)
    if params.include_affine:
        P = np.column_stack([np.ones(n), c])
        if np.linalg.matrix_rank(P) < 3:
            raise SingularSystem("control points are collinear; the affine part is undetermined")
        M = np.zeros((n + 3, n + 3))
        M[:n, :n] = phi
        M[:n, n:] = P
        M[n:, :n] = P.T
        rhs = np.zeros((n + 3, 2))
        rhs[:n] = disp
    else:
        M, rhs = phi, disp
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("solution is not finite")
    weights = sol[:n]
    affine = np.zeros((2, 3))
    if params.include_affine:
        coef = sol[n:]  # rows: const, x, y ; columns: displacement x, y
        lin = coef[1:].T  # (2, 2): lin[i, j] = d f_i / d x_j
        affine[:, 1:] = lin
        affine[:, 0] = coef[0] - lin @ mid
    diag = float(np.linalg.norm(src.max(axis=0) - src.min(axis=0)))
    guard = GUARD_FACTOR * diag if diag > 0 else None
    w = RbfWarp(src, weights, affine, eps, targets=dst, guard_radius=guard)
    resid = np.abs(w.apply_points(src) - dst).max()
    log.debug("fit_rbf: %d centers, max residual %.3g", n, resid)
    return w


def apply_warp(cloud: PointCloud, w: RbfWarp) -> PointCloud:
    if len(cloud) == 0:
        raise EmptyCloud("cannot warp an empty cloud")
    return cloud.with_xy(w.apply_points(cloud.xy))


def skeleton_control_pairs(
    cloud_intersections: np.ndarray,
    cloud_controls: np.ndarray,
    map_intersections: np.ndarray,
    map_skeleton_xy: np.ndarray,
    tau: float,
) -> ControlPairSet:
    """Pairs for the warp: intersections to map intersections, control points onto the map skeleton.

    Snapping control points to the nearest map skeleton pixel (rather than to a
    map control point, whose arc-length sampling is unrelated) corrects the
    across-road offset that dominates residual error.
    """
    srcs, dsts = [], []
    for src, dst in ((cloud_intersections, map_intersections), (cloud_controls, map_skeleton_xy)):
        src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
        dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
        if len(src) == 0 or len(dst) == 0:
            continue
        d, j = cKDTree(dst).query(src, k=1)
        ok = d < tau
        srcs.append(src[ok])
        dsts.append(dst[j[ok]])
    if not srcs or sum(len(s) for s in srcs) == 0:
        raise NoPairs(f"no control pair closer than {tau}")
    s, t = dedupe_sources(np.concatenate(srcs), np.concatenate(dsts))
    return ControlPairSet(s, t)
