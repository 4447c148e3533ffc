"""In-memory runs of the XY stages on synthetic scenes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from roadreg.cloud_prep import prepare_road_cloud, rasterize_xy
from roadreg.config import PipelineConfig
from roadreg.metrics import centerline_distances, centerlines_from_graph
from roadreg.model import RbfWarp, SkeletonGraph
from roadreg.nonrigid_warp import fit_rbf, skeleton_control_pairs, ControlPairSet
from roadreg.raster_skeleton import KeypointSet, extract_keypoints, segment_map_hsv, skeletonize_mask
from roadreg.rigid_align import ScoredTransform, search_rigid
from roadreg.synth import Scene


@dataclass
class XYRun:
    g_cloud: SkeletonGraph
    kp_cloud: KeypointSet
    g_map: SkeletonGraph
    kp_map: KeypointSet
    rigid: ScoredTransform
    pairs: ControlPairSet | None = None
    warp: RbfWarp | None = None


def cloud_side(scene: Scene, cfg: PipelineConfig = PipelineConfig()) -> tuple[SkeletonGraph, KeypointSet]:
    road = prepare_road_cloud(scene.cloud, cfg.prep, cfg.options.road_label)
    g = skeletonize_mask(rasterize_xy(road, cfg.prep.raster_mpp), cfg.skeleton)
    return g, extract_keypoints(g, cfg.skeleton)


def map_side(scene: Scene, cfg: PipelineConfig = PipelineConfig()) -> tuple[SkeletonGraph, KeypointSet]:
    g = skeletonize_mask(segment_map_hsv(scene.map_rgb, cfg.hsv, scene.map_geo), cfg.skeleton)
    return g, extract_keypoints(g, cfg.skeleton)


def run_xy(scene: Scene, cfg: PipelineConfig = PipelineConfig(), warp: bool = True) -> XYRun:
    g_c, kp_c = cloud_side(scene, cfg)
    g_m, kp_m = map_side(scene, cfg)
    mpp = g_m.geo.mpp
    st = search_rigid(kp_c, kp_m, cfg.rigid, mpp=mpp)
    run = XYRun(g_c, kp_c, g_m, kp_m, st)
    if warp:
        t = st.transform
        run.pairs = skeleton_control_pairs(
            t.apply(kp_c.intersections),
            t.apply(kp_c.control_points),
            kp_m.intersections,
            g_m.to_raster().set_pixels_world(),
            cfg.warp.tau_match * mpp,
        )
        run.warp = fit_rbf(run.pairs, cfg.warp, mpp)
    return run


def truth_rms(t, truth) -> float:
    """RMS distance between mapped noise-free cloud intersections and the map intersections."""
    d = t.apply(truth.cloud_intersections) - truth.map_intersections
    return float(np.sqrt((d * d).sum(axis=1).mean()))


def mean_centerline_distance(points: np.ndarray, truth) -> float:
    segs = np.asarray(truth.centerlines)
    from roadreg.metrics import CenterlineSet

    return float(centerline_distances(points, CenterlineSet(segs)).mean())


def trajectory(run: XYRun, warped: bool) -> np.ndarray:
    p = run.rigid.transform.apply(run.g_cloud.to_raster().set_pixels_world())
    return run.warp.apply_points(p) if warped else p


__all__ = ["XYRun", "cloud_side", "map_side", "run_xy", "truth_rms", "mean_centerline_distance", "trajectory", "centerlines_from_graph"]
