"""Road skeletons and keypoints from binary road masks.

The same code path serves rasterized point clouds and segmented reference
maps: mask -> component filtering -> thinning -> skeleton graph -> pruning ->
keypoints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .errors import EmptyImage, InvalidInput
from .model import BinaryRaster, GeoTransform, NodeKind, SkeletonEdge, SkeletonGraph, SkeletonNode

log = logging.getLogger(__name__)

STRUCT8 = np.ones((3, 3), dtype=bool)
STRUCT4 = ndimage.generate_binary_structure(2, 1)

# ring order used for 8-bit neighbourhood codes: N, NE, E, SE, S, SW, W, NW
RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass(frozen=True)
class HsvThresholds:
    h_min: float = 0.0
    h_max: float = 360.0
    s_max: float = 0.1
    v_min: float = 0.9

    def __post_init__(self) -> None:
        if not (0 <= self.h_min <= self.h_max <= 360):
            raise InvalidInput("need 0 <= h_min <= h_max <= 360")
        if not (0 <= self.s_max <= 1 and 0 <= self.v_min <= 1):
            raise InvalidInput("s_max and v_min must lie in [0, 1]")


HOLE_REFERENCES = ("enclosed", "all")


@dataclass(frozen=True)
class SkeletonParams:
    min_branch_len: float = 20.0
    curvature_threshold: float = 0.25
    component_beta: float = 0.5
    control_point_spacing: float = 20.0
    hole_reference: str = "enclosed"  # enclosed | all: which background components set the hole mean

    def __post_init__(self) -> None:
        for name in ("min_branch_len", "curvature_threshold", "component_beta", "control_point_spacing"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"SkeletonParams.{name} must be positive")
        if self.hole_reference not in HOLE_REFERENCES:
            raise InvalidInput(f"hole_reference must be one of {HOLE_REFERENCES}")


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """World-coordinate keypoints of one skeleton."""

    intersections: np.ndarray
    control_points: np.ndarray
    corners: np.ndarray

    def __post_init__(self) -> None:
        for name in ("intersections", "control_points", "corners"):
            a = np.array(getattr(self, name), dtype=np.float64).reshape(-1, 2)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def to_dict(self) -> dict:
        return {
            "intersections": self.intersections.tolist(),
            "control_points": self.control_points.tolist(),
            "corners": self.corners.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> KeypointSet:
        return cls(d["intersections"], d["control_points"], d["corners"])


# --------------------------------------------------------------------------
# map segmentation and mask cleaning


def rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hexcone HSV: hue in degrees [0, 360), saturation and value in [0, 1]."""
    a = np.asarray(rgb, dtype=np.float64)
    if a.dtype != np.float64 or a.max(initial=0) > 1.0:
        a = a / 255.0
    r, g, b = a[..., 0], a[..., 1], a[..., 2]
    v = a[..., :3].max(axis=-1)
    c = v - a[..., :3].min(axis=-1)
    s = np.divide(c, v, out=np.zeros_like(v), where=v > 0)
    safe = np.where(c > 0, c, 1.0)
    h = np.zeros_like(v)
    rmax = (v == r) & (c > 0)
    gmax = (v == g) & (c > 0) & ~rmax
    bmax = (c > 0) & ~rmax & ~gmax
    h[rmax] = (60.0 * ((g - b) / safe) % 360.0)[rmax]
    h[gmax] = (60.0 * ((b - r) / safe + 2.0))[gmax]
    h[bmax] = (60.0 * ((r - g) / safe + 4.0))[bmax]
    return h % 360.0, s, v


def segment_map_hsv(rgb: np.ndarray, t: HsvThresholds = HsvThresholds(), geo: GeoTransform | None = None) -> BinaryRaster:
    """Road mask of pixels inside the hue window with low saturation and high value."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise EmptyImage("expected a non-empty (H, W, 3) color image")
    rgb_in = rgb.astype(np.float64) / 255.0 if np.issubdtype(rgb.dtype, np.integer) else rgb
    h, s, v = rgb_to_hsv(rgb_in)
    mask = (h >= t.h_min) & (h <= t.h_max) & (s <= t.s_max) & (v >= t.v_min)
    return BinaryRaster(mask, geo if geo is not None else GeoTransform(0.0, float(rgb.shape[0]), 1.0))


def _filter_once(bits: np.ndarray, beta: float, hole_reference: str) -> np.ndarray:
    out = bits.copy()
    lab, n = ndimage.label(out, structure=STRUCT8)
    if n:
        areas = np.bincount(lab.ravel())[1:]
        small = np.flatnonzero(areas < beta * areas.mean()) + 1
        if len(small):
            out[np.isin(lab, small)] = False
    lab, n = ndimage.label(~out, structure=STRUCT4)
    if n:
        border = np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))
        areas = np.bincount(lab.ravel(), minlength=n + 1)
        holes = np.setdiff1d(np.arange(1, n + 1), border)
        if len(holes):
            ref = areas[holes] if hole_reference == "enclosed" else areas[1:]
            small = holes[areas[holes] < beta * ref.mean()]
            if len(small):
                out[np.isin(lab, small)] = True
    return out


def filter_components_bidirectional(
    mask: BinaryRaster, beta: float = 0.5, max_rounds: int = 50, hole_reference: str = "enclosed"
) -> BinaryRaster:
    """Clear small road components and fill small holes, repeated to a fixpoint.

    Foreground components (8-connected) smaller than ``beta`` times the mean
    foreground component area are removed. Enclosed background components
    (4-connected, not touching the border) smaller than ``beta`` times a mean
    background area are filled. With ``hole_reference="enclosed"`` that mean
    runs over the enclosed components only; ``"all"`` also counts the
    border-touching ones, whose large area then lets whole city blocks count
    as holes.
    """
    if hole_reference not in HOLE_REFERENCES:
        raise InvalidInput(f"hole_reference must be one of {HOLE_REFERENCES}")
    bits = np.asarray(mask.bits)
    for _ in range(max_rounds):
        nxt = _filter_once(bits, beta, hole_reference)
        if np.array_equal(nxt, bits):
            break
        bits = nxt
    return mask.with_bits(bits)


# --------------------------------------------------------------------------
# thinning


def _neighbour_stack(b: np.ndarray) -> np.ndarray:
    """(8, H, W) array of ring neighbours with zero padding outside."""
    p = np.pad(b, 1)
    h, w = b.shape
    return np.stack([p[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] for dr, dc in RING])


def neighbour_count(bits: np.ndarray) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint8)
    return ndimage.convolve(b, STRUCT8.astype(np.uint8), mode="constant") - b


def _zs_deletable(b: np.ndarray, first: bool) -> np.ndarray:
    n = _neighbour_stack(b).astype(np.int8)
    p2, p3, p4, p5, p6, p7, p8, p9 = n
    count = n.sum(axis=0)
    ring = np.concatenate([n, n[:1]])
    transitions = ((ring[:-1] == 0) & (ring[1:] == 1)).sum(axis=0)
    if first:
        c1 = p2 * p4 * p6 == 0
        c2 = p4 * p6 * p8 == 0
    else:
        c1 = p2 * p4 * p8 == 0
        c2 = p2 * p6 * p8 == 0
    return b & (count >= 2) & (count <= 6) & (transitions == 1) & c1 & c2


def _guard_vanishing(b: np.ndarray, delete: np.ndarray) -> np.ndarray:
    """Keep one pixel of any component that a parallel pass would erase entirely."""
    lab, n = ndimage.label(b, structure=STRUCT8)
    if n == 0:
        return delete
    total = np.bincount(lab.ravel(), minlength=n + 1)
    hit = np.bincount(lab[delete], minlength=n + 1)
    doomed = np.flatnonzero((total == hit) & (total > 0))
    doomed = doomed[doomed > 0]
    if len(doomed) == 0:
        return delete
    delete = delete.copy()
    flat = lab.ravel()
    for comp in doomed:
        first = np.flatnonzero(flat == comp)[0]
        delete.ravel()[first] = False
    return delete


def zhang_suen(bits: np.ndarray) -> np.ndarray:
    """Parallel two-subiteration Zhang-Suen thinning that never erases a component."""
    b = np.asarray(bits, dtype=bool).copy()
    while True:
        changed = False
        for first in (True, False):
            delete = _zs_deletable(b, first)
            if delete.any():
                delete = _guard_vanishing(b, delete)
                if delete.any():
                    b[delete] = False
                    changed = True
        if not changed:
            return b


def _ring_offsets_coords() -> list[tuple[int, int]]:
    return list(RING)


@lru_cache(maxsize=1)
def simple_point_table() -> np.ndarray:
    """Lookup over 8-bit ring codes: True where the centre pixel is simple.

    Simple means removing the pixel changes neither the 8-connected
    foreground nor the 4-connected background topology of its neighbourhood.
    """
    coords = _ring_offsets_coords()
    table = np.zeros(256, dtype=bool)
    for code in range(256):
        on = [(code >> i) & 1 for i in range(8)]
        fg = [i for i in range(8) if on[i]]
        bg = [i for i in range(8) if not on[i]]
        table[code] = _count_components(fg, coords, 8) == 1 and _count_bg4(bg, coords) == 1
    return table


def _count_components(idx: list[int], coords, conn: int) -> int:
    seen: set[int] = set()
    comps = 0
    for start in idx:
        if start in seen:
            continue
        comps += 1
        stack = [start]
        seen.add(start)
        while stack:
            i = stack.pop()
            for j in idx:
                if j in seen:
                    continue
                dr = abs(coords[i][0] - coords[j][0])
                dc = abs(coords[i][1] - coords[j][1])
                adj = max(dr, dc) == 1 if conn == 8 else dr + dc == 1
                if adj:
                    seen.add(j)
                    stack.append(j)
    return comps


def _count_bg4(bg: list[int], coords) -> int:
    """Background 4-components that touch a 4-neighbour of the centre."""
    seen: set[int] = set()
    comps = 0
    for start in bg:
        if start in seen:
            continue
        members = []
        stack = [start]
        seen.add(start)
        while stack:
            i = stack.pop()
            members.append(i)
            for j in bg:
                if j not in seen and abs(coords[i][0] - coords[j][0]) + abs(coords[i][1] - coords[j][1]) == 1:
                    seen.add(j)
                    stack.append(j)
        if any(abs(coords[m][0]) + abs(coords[m][1]) == 1 for m in members):
            comps += 1
    return comps


def ring_codes(b: np.ndarray) -> np.ndarray:
    n = _neighbour_stack(b).astype(np.uint16)
    weights = (1 << np.arange(8, dtype=np.uint16))[:, None, None]
    return (n * weights).sum(axis=0)


def _pixel_code(b: np.ndarray, r: int, c: int) -> int:
    h, w = b.shape
    code = 0
    for i, (dr, dc) in enumerate(RING):
        rr, cc = r + dr, c + dc
        if 0 <= rr < h and 0 <= cc < w and b[rr, cc]:
            code |= 1 << i
    return code


def remove_redundant_pixels(bits: np.ndarray) -> np.ndarray:
    """Sequentially delete simple pixels with two or more neighbours.

    Cleans the staircase corners and junction lumps that parallel thinning
    leaves behind, so that ordinary path pixels have exactly two neighbours.
    Pixels are visited in raster order and passes repeat until stable.
    """
    b = np.asarray(bits, dtype=bool).copy()
    table = simple_point_table()
    while True:
        codes = ring_codes(b)
        deg = neighbour_count(b)
        cand = np.argwhere(b & table[codes] & (deg >= 2))
        removed = 0
        for r, c in cand:
            code = _pixel_code(b, r, c)
            if table[code] and bin(code).count("1") >= 2:
                b[r, c] = False
                removed += 1
        if not removed:
            return b


def thin(mask: BinaryRaster) -> BinaryRaster:
    """Single-pixel-wide skeleton preserving 8-connected components."""
    skel = zhang_suen(mask.bits)
    skel = remove_redundant_pixels(skel)
    return mask.with_bits(skel)


# --------------------------------------------------------------------------
# skeleton graph


def intersection_pixels(bits: np.ndarray) -> np.ndarray:
    """Skeleton pixels with more than two skeleton neighbours in their 3x3 window."""
    b = np.asarray(bits, dtype=bool)
    return b & (neighbour_count(b) > 2)


def _neighbours(b: np.ndarray, r: int, c: int) -> list[tuple[int, int]]:
    h, w = b.shape
    out = []
    for dr, dc in RING:
        rr, cc = r + dr, c + dc
        if 0 <= rr < h and 0 <= cc < w and b[rr, cc]:
            out.append((rr, cc))
    return out


def build_skeleton_graph(skel: BinaryRaster) -> SkeletonGraph:
    """Nodes are merged junction clusters and endpoints; edges are the paths between them."""
    b = np.asarray(skel.bits, dtype=bool)
    h, w = b.shape
    deg = neighbour_count(b)
    junction = b & (deg > 2)
    lab, nj = ndimage.label(junction, structure=STRUCT8)

    node_of = np.full((h, w), -1, dtype=np.int64)
    members: list[np.ndarray] = []
    kinds: list[NodeKind] = []
    if nj:
        pix = np.argwhere(junction)
        groups = lab[pix[:, 0], pix[:, 1]] - 1
        order = np.argsort(groups, kind="stable")
        pix, groups = pix[order], groups[order]
        bounds = np.flatnonzero(np.diff(groups)) + 1
        for grp in np.split(pix, bounds):
            node_of[grp[:, 0], grp[:, 1]] = len(members)
            members.append(grp)
            kinds.append(NodeKind.INTERSECTION)
    for r, c in np.argwhere(b & (deg == 1)):
        node_of[r, c] = len(members)
        members.append(np.array([[r, c]]))
        kinds.append(NodeKind.ENDPOINT)

    visited = np.zeros((h, w), dtype=bool)
    edges: list[tuple[int, int, np.ndarray]] = []
    direct_seen: set[tuple] = set()

    def walk(start_node: int, m: tuple[int, int], n: tuple[int, int]) -> None:
        path = [m, n]
        prev, cur = m, n
        visited[cur] = True
        while True:
            nxt = [q for q in _neighbours(b, *cur) if q != prev]
            # prefer stepping onto a node pixel so clusters absorb adjacent paths
            onto_node = [q for q in nxt if node_of[q] >= 0]
            free = [q for q in nxt if node_of[q] < 0 and not visited[q]]
            if onto_node:
                q = onto_node[0]
                path.append(q)
                end = int(node_of[q])
                break
            if not free:
                # dead end without a node (should not happen on a clean skeleton)
                end = start_node
                break
            q = free[0]
            visited[q] = True
            path.append(q)
            prev, cur = cur, q
        if end == start_node and len(path) <= 3:
            return
        edges.append((start_node, end, np.array(path, dtype=np.int64)))

    for nid, mem in enumerate(members):
        for r, c in mem:
            for q in _neighbours(b, int(r), int(c)):
                other = int(node_of[q])
                if other == nid:
                    continue
                if other >= 0:
                    key = tuple(sorted([(int(r), int(c)), q]))
                    if key not in direct_seen:
                        direct_seen.add(key)
                        edges.append((nid, other, np.array([(int(r), int(c)), q], dtype=np.int64)))
                    continue
                if visited[q]:
                    continue
                walk(nid, (int(r), int(c)), q)

    # closed loops without any node: anchor a branch node at the first pixel
    rest = b & ~visited & (node_of < 0) & (deg == 2)
    while rest.any():
        r, c = map(int, np.argwhere(rest)[0])
        nid = len(members)
        members.append(np.array([[r, c]]))
        kinds.append(NodeKind.BRANCH)
        node_of[r, c] = nid
        visited[r, c] = True
        nb = [q for q in _neighbours(b, r, c) if not visited[q]]
        if nb:
            walk(nid, (r, c), nb[0])
            # the closing step lands back on the anchor
        rest = b & ~visited & (node_of < 0) & (deg == 2)

    deg_nodes = np.zeros(len(members), dtype=np.int64)
    for u, v, _ in edges:
        deg_nodes[u] += 1
        deg_nodes[v] += 1
    final_kinds = [
        NodeKind.BRANCH if k == NodeKind.INTERSECTION and deg_nodes[i] < 3 else k for i, k in enumerate(kinds)
    ]
    nodes = tuple(SkeletonNode(i, k, m) for i, (k, m) in enumerate(zip(final_kinds, members)))
    edge_objs = tuple(SkeletonEdge(u, v, p) for u, v, p in edges)
    return SkeletonGraph(nodes, edge_objs, skel.geo, (h, w))


# --------------------------------------------------------------------------
# pruning


def three_point_curvature(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Inverse circumradius of triangles (a, b, c); collinear points give 0."""
    ab = np.linalg.norm(b - a, axis=-1)
    bc = np.linalg.norm(c - b, axis=-1)
    ca = np.linalg.norm(a - c, axis=-1)
    cross = np.abs((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))
    denom = ab * bc * ca
    return np.divide(2.0 * cross, denom, out=np.zeros_like(denom), where=denom > 0)


def edge_curvature(pixels: np.ndarray, half_window: int = 2) -> np.ndarray:
    """Local curvature at each pixel from the pixels ``half_window`` steps away.

    Near the ends of short paths the offset shrinks to what is available;
    pixels with no neighbour on one side get no estimate.
    """
    p = np.asarray(pixels, dtype=np.float64)
    n = len(p)
    out = []
    for i in range(n):
        k = min(half_window, i, n - 1 - i)
        if k == 0:
            continue
        out.append(float(three_point_curvature(p[i - k], p[i], p[i + k])))
    return np.array(out)


def mean_curvature(pixels: np.ndarray) -> float:
    k = edge_curvature(pixels)
    return float(k.mean()) if len(k) else 0.0


def prune_branches(g: SkeletonGraph, params: SkeletonParams = SkeletonParams(), max_rounds: int = 100) -> SkeletonGraph:
    """Remove short, nearly straight spurs until nothing more qualifies."""
    for _ in range(max_rounds):
        deg = g.degrees()
        bits = np.array(g.to_raster().bits)
        removed = False
        for e in g.edges:
            if not (deg[e.u] == 1 or deg[e.v] == 1):
                continue
            if e.length >= params.min_branch_len:
                continue
            if mean_curvature(e.pixels) >= params.curvature_threshold:
                continue
            keep = set()
            for nid in (e.u, e.v):
                node = g.nodes[nid]
                if deg[nid] != 1:
                    keep.update(map(tuple, node.members.tolist()))
            for r, c in e.pixels:
                if (int(r), int(c)) not in keep:
                    bits[r, c] = False
            removed = True
        if not removed:
            return g
        bits = remove_redundant_pixels(bits)
        g = build_skeleton_graph(BinaryRaster(bits, g.geo))
    log.warning("prune_branches stopped after %d rounds", max_rounds)
    return g


# --------------------------------------------------------------------------
# keypoints


def sample_polyline(points: np.ndarray, spacing: float) -> np.ndarray:
    """Points at arc length ``spacing, 2*spacing, ...`` strictly inside the polyline."""
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 2:
        return np.zeros((0, 2))
    seg = np.hypot(*np.diff(p, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    n = int(np.floor(total / spacing))
    s = spacing * np.arange(1, n + 1)
    s = s[s < total - 1e-9]
    if len(s) == 0:
        return np.zeros((0, 2))
    x = np.interp(s, cum, p[:, 0])
    y = np.interp(s, cum, p[:, 1])
    return np.column_stack([x, y])


def extract_keypoints(g: SkeletonGraph, params: SkeletonParams = SkeletonParams()) -> KeypointSet:
    inter = g.intersections_world()
    ctrl = []
    for e in g.edges:
        pts = sample_polyline(e.pixels, params.control_point_spacing)
        if len(pts):
            ctrl.append(g.geo.pixels_to_world_xy(pts))
    control = np.concatenate(ctrl) if ctrl else np.zeros((0, 2))
    h, w = g.shape
    corners = BinaryRaster(np.zeros((h, w), dtype=bool), g.geo).corners_world()
    return KeypointSet(inter, control, corners)


def skeletonize_mask(mask: BinaryRaster, params: SkeletonParams = SkeletonParams(), filter_components: bool = True) -> SkeletonGraph:
    """Full mask -> pruned skeleton graph path shared by cloud and map inputs."""
    if filter_components:
        mask = filter_components_bidirectional(mask, params.component_beta, hole_reference=params.hole_reference)
    skel = thin(mask)
    g = build_skeleton_graph(skel)
    return prune_branches(g, params)


def graph_to_dict(g: SkeletonGraph) -> dict:
    return {
        "shape": list(g.shape),
        "geo": {"origin_x": g.geo.origin_x, "origin_y": g.geo.origin_y, "meters_per_pixel": g.geo.mpp},
        "nodes": [{"id": n.id, "kind": n.kind.value, "members": n.members.tolist()} for n in g.nodes],
        "edges": [{"u": e.u, "v": e.v, "pixels": e.pixels.tolist()} for e in g.edges],
    }


def graph_from_dict(d: dict) -> SkeletonGraph:
    geo = GeoTransform(**d["geo"])
    nodes = tuple(
        SkeletonNode(int(n["id"]), NodeKind(n["kind"]), np.asarray(n["members"], dtype=np.int64).reshape(-1, 2))
        for n in d["nodes"]
    )
    edges = tuple(
        SkeletonEdge(int(e["u"]), int(e["v"]), np.asarray(e["pixels"], dtype=np.int64).reshape(-1, 2)) for e in d["edges"]
    )
    return SkeletonGraph(nodes, edges, geo, tuple(d["shape"]))
