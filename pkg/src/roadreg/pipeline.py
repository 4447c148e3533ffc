"""Stage orchestration with persisted, resumable artifacts."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import formats
from .cloud_prep import label_roads_by_ground, prepare_road_cloud, rasterize_xy
from .config import PipelineConfig
from .elevation import build_ground_model, extract_ground_ransac, match_terrain, sample_terrain, suppress_vertical_outliers
from .errors import RoadRegError, StageError, ZeroVariance
from .metrics import centerline_distances, centerlines_from_graph, elevation_correlation, fit_mirrored_normal, intersection_offset
from .model import AlignmentReport, GeoTransform, PointCloud, RbfWarp, SkeletonGraph
from .nonrigid_warp import apply_warp, fit_rbf, match_control_points, skeleton_control_pairs
from .raster_skeleton import KeypointSet, extract_keypoints, graph_from_dict, graph_to_dict, segment_map_hsv, skeletonize_mask
from .rigid_align import ScoredTransform, apply_global, search_rigid

log = logging.getLogger(__name__)

ARTIFACTS = {
    "prep": "01_prep.ply",
    "cloud_mask": "02_cloud_mask.pgm",
    "cloud_skeleton": "02_cloud_skeleton.json",
    "cloud_keypoints": "02_cloud_keypoints.json",
    "map_mask": "03_map_mask.pgm",
    "map_skeleton": "03_map_skeleton.json",
    "map_keypoints": "03_map_keypoints.json",
    "rigid": "04_rigid.json",
    "rigid_cloud": "05_rigid.ply",
    "warp": "06_warp.json",
    "warped_cloud": "07_warped.ply",
    "elevated_cloud": "08_elevated.ply",
    "elevation": "08_elevation.json",
    "report": "09_report.json",
    "distances": "09_distances.csv",
}

STAGE_ORDER = ("prep", "skel-cloud", "skel-map", "align", "warp", "elevate", "evaluate")


class Pipeline:
    """Runs stages against one output directory.

    With ``resume`` the artifacts already on disk are reused, except for the
    stages listed in ``fresh``, which are always recomputed.
    """

    def __init__(self, cfg: PipelineConfig, resume: bool = False, fresh: tuple[str, ...] = ()):
        self.cfg = cfg
        self.resume = resume
        self.fresh = frozenset(fresh)
        self.out = cfg.output_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self._cloud: PointCloud | None = None
        self._map: tuple[np.ndarray, GeoTransform] | None = None
        self._memo: dict[str, object] = {}

    # ---------------------------------------------------------------- helpers

    def path(self, key: str) -> Path:
        return self.out / ARTIFACTS[key]

    def _have(self, stage: str, *keys: str) -> bool:
        if not self.resume or stage in self.fresh:
            return False
        return all(self.path(k).exists() for k in keys)

    def _stage(self, name: str, fn):
        if name in self._memo:
            return self._memo[name]
        try:
            result = fn()
        except StageError:
            raise
        except (RoadRegError, OSError, ValueError) as exc:
            raise StageError(name, exc) from exc
        self._memo[name] = result
        return result

    def input_cloud(self) -> PointCloud:
        if self._cloud is None:
            self._cloud = formats.read_point_cloud(self.cfg.paths.cloud)
        return self._cloud

    def map_image(self) -> tuple[np.ndarray, GeoTransform]:
        if self._map is None:
            self._map = formats.read_color_raster(self.cfg.paths.map, self.cfg.options.map_mpp)
        return self._map

    # ---------------------------------------------------------------- stages

    def prep(self) -> PointCloud:
        if self._have("prep", "prep"):
            return self._stage("prep", lambda: formats.read_point_cloud(self.path("prep")))

        def run():
            cloud = self.input_cloud()
            opts = self.cfg.options
            if cloud.labels is None and opts.ground_fallback and opts.road_label is not None:
                cloud = label_roads_by_ground(cloud, road_label=opts.road_label)
            road = prepare_road_cloud(cloud, self.cfg.prep, opts.road_label)
            formats.write_point_cloud(road, self.path("prep"))
            return road

        return self._stage("prep", run)

    def skel_cloud(self) -> tuple[SkeletonGraph, KeypointSet]:
        if self._have("skel-cloud", "cloud_skeleton", "cloud_keypoints"):
            return self._stage("skel-cloud", lambda: self._load_graph("cloud_skeleton", "cloud_keypoints"))
        road = self.prep()

        def run():
            mask = rasterize_xy(road, self.cfg.prep.raster_mpp)
            g = skeletonize_mask(mask, self.cfg.skeleton)
            kp = extract_keypoints(g, self.cfg.skeleton)
            if self.cfg.options.debug:
                formats.write_raster(mask, self.path("cloud_mask"))
            self._save_graph(g, kp, "cloud_skeleton", "cloud_keypoints")
            return g, kp

        return self._stage("skel-cloud", run)

    def skel_map(self) -> tuple[SkeletonGraph, KeypointSet]:
        if self._have("skel-map", "map_skeleton", "map_keypoints"):
            return self._stage("skel-map", lambda: self._load_graph("map_skeleton", "map_keypoints"))

        def run():
            rgb, geo = self.map_image()
            mask = segment_map_hsv(rgb, self.cfg.hsv, geo)
            g = skeletonize_mask(mask, self.cfg.skeleton)
            kp = extract_keypoints(g, self.cfg.skeleton)
            if self.cfg.options.debug:
                formats.write_raster(mask, self.path("map_mask"))
            self._save_graph(g, kp, "map_skeleton", "map_keypoints")
            return g, kp

        return self._stage("skel-map", run)

    def align(self) -> ScoredTransform:
        if self._have("align", "rigid", "rigid_cloud"):
            return self._stage("align", lambda: ScoredTransform.from_dict(formats.read_json(self.path("rigid"))))
        _, kp_cloud = self.skel_cloud()
        g_map, kp_map = self.skel_map()

        def run():
            st = search_rigid(kp_cloud, kp_map, self.cfg.rigid, mpp=g_map.geo.mpp)
            formats.write_json(st.to_dict(), self.path("rigid"))
            formats.write_point_cloud(apply_global(self.input_cloud(), st.transform), self.path("rigid_cloud"))
            return st

        return self._stage("align", run)

    def warp(self) -> RbfWarp:
        if self._have("warp", "warp", "warped_cloud"):
            return self._stage("warp", lambda: RbfWarp.from_dict(formats.read_json(self.path("warp"))))
        st = self.align()
        g_cloud, kp_cloud = self.skel_cloud()
        g_map, kp_map = self.skel_map()

        def run():
            if self.cfg.options.nonrigid:
                w = self._fit_warp(st, kp_cloud, g_map, kp_map)
            else:
                w = RbfWarp.zero(self.cfg.warp.epsilon * g_map.geo.mpp)
            formats.write_json(w.to_dict(), self.path("warp"))
            rigid_cloud = formats.read_point_cloud(self.path("rigid_cloud"))
            formats.write_point_cloud(apply_warp(rigid_cloud, w), self.path("warped_cloud"))
            return w

        return self._stage("warp", run)

    def _fit_warp(self, st: ScoredTransform, kp_cloud: KeypointSet, g_map: SkeletonGraph, kp_map: KeypointSet) -> RbfWarp:
        t = st.transform
        mpp = g_map.geo.mpp
        tau = self.cfg.warp.tau_match * mpp
        ci = t.apply(kp_cloud.intersections) if len(kp_cloud.intersections) else np.zeros((0, 2))
        cc = t.apply(kp_cloud.control_points) if len(kp_cloud.control_points) else np.zeros((0, 2))
        if self.cfg.warp.control_targets == "skeleton":
            pairs = skeleton_control_pairs(ci, cc, kp_map.intersections, g_map.to_raster().set_pixels_world(), tau)
        else:
            pairs = match_control_points(
                np.concatenate([ci, cc]), np.concatenate([kp_map.intersections, kp_map.control_points]), tau
            )
        log.info("warp: %d control pairs", len(pairs))
        return fit_rbf(pairs, self.cfg.warp, mpp)

    def elevate(self) -> PointCloud:
        if self._have("elevate", "elevated_cloud", "elevation"):
            return self._stage("elevate", lambda: formats.read_point_cloud(self.path("elevated_cloud")))
        self.warp()

        def run():
            terrain_path = self.cfg.paths.terrain
            if not terrain_path:
                raise FileNotFoundError("paths.terrain is not set")
            terrain = formats.read_ascii_grid(terrain_path)
            cloud = formats.read_point_cloud(self.path("warped_cloud"))
            p = self.cfg.elevation
            gm = extract_ground_ransac(cloud, p)
            before = _elevation_stats(cloud, gm.ground_index, terrain, p.sampling)
            removed = 0
            if p.filter_before_match:
                n0 = len(cloud)
                cloud, gm = suppress_vertical_outliers(cloud, gm, p)
                removed = n0 - len(cloud)
            out, skipped = match_terrain(cloud, gm, terrain, p.sampling)
            ground = gm.ground_index
            if not p.filter_before_match:
                n0 = len(out)
                out, gm = suppress_vertical_outliers(out, build_ground_model(out, ground, p.cell_size), p)
                removed = n0 - len(out)
                ground = gm.ground_index
            after = _elevation_stats(out, ground, terrain, p.sampling)
            info = {
                "ground_points": int(ground.sum()),
                "outliers_removed": int(removed),
                "nodata_skipped": int(skipped),
                "before": before,
                "after": after,
            }
            formats.write_point_cloud(out, self.path("elevated_cloud"))
            formats.write_json(info, self.path("elevation"))
            return out

        return self._stage("elevate", run)

    def evaluate(self) -> AlignmentReport:
        st = self.align()
        w = self.warp()
        g_cloud, kp_cloud = self.skel_cloud()
        g_map, kp_map = self.skel_map()

        def run():
            rep = evaluate_alignment(st, w, g_cloud, kp_cloud, g_map, kp_map, self.cfg)
            if self.path("elevation").exists() and self.cfg.options.elevation:
                info = formats.read_json(self.path("elevation"))
                rep.elevation_corr_before = info["before"]["corr"]
                rep.elevation_corr_after = info["after"]["corr"]
                rep.elevation_sigma_before = info["before"]["rms"]
                rep.elevation_sigma_after = info["after"]["rms"]
                rep.stages["elevation"] = {k: info[k] for k in ("ground_points", "outliers_removed", "nodata_skipped")}
            formats.write_json(rep.to_dict(include_distances=True), self.path("report"))
            formats.write_distances_csv(rep.raw_distances, self.path("distances"))
            return rep

        return self._stage("evaluate", run)

    def run(self) -> AlignmentReport:
        self.prep()
        self.skel_cloud()
        self.skel_map()
        self.align()
        self.warp()
        if self.cfg.options.elevation:
            self.elevate()
        return self.evaluate()

    # ---------------------------------------------------------------- persistence

    def _save_graph(self, g: SkeletonGraph, kp: KeypointSet, gkey: str, kkey: str) -> None:
        formats.write_json(graph_to_dict(g), self.path(gkey))
        formats.write_json(kp.to_dict(), self.path(kkey))

    def _load_graph(self, gkey: str, kkey: str) -> tuple[SkeletonGraph, KeypointSet]:
        g = graph_from_dict(formats.read_json(self.path(gkey)))
        kp = KeypointSet.from_dict(formats.read_json(self.path(kkey)))
        return g, kp


def _elevation_stats(cloud: PointCloud, ground: np.ndarray, terrain, sampling: str) -> dict:
    ref = sample_terrain(terrain, cloud.xy[:, 0], cloud.xy[:, 1], sampling)
    ok = ground & np.isfinite(ref)
    if ok.sum() < 2:
        return {"corr": None, "rms": None, "n": int(ok.sum())}
    z = cloud.z[ok]
    try:
        r = elevation_correlation(z, ref[ok])
    except ZeroVariance:
        r = None
    return {"corr": r, "rms": float(np.sqrt(np.mean((z - ref[ok]) ** 2))), "n": int(ok.sum())}


def skeleton_trajectory(g: SkeletonGraph) -> np.ndarray:
    """World positions of all skeleton pixels, the evaluation trajectory of a cloud."""
    return g.to_raster().set_pixels_world()


def evaluate_alignment(
    st: ScoredTransform,
    w: RbfWarp,
    g_cloud: SkeletonGraph,
    kp_cloud: KeypointSet,
    g_map: SkeletonGraph,
    kp_map: KeypointSet,
    cfg: PipelineConfig,
) -> AlignmentReport:
    lines = centerlines_from_graph(g_map, cfg.metrics.simplify_tol_px)
    traj_rigid = st.transform.apply(skeleton_trajectory(g_cloud))
    traj = w.apply_points(traj_rigid)
    d_rigid = centerline_distances(traj_rigid, lines)
    d = centerline_distances(traj, lines)
    s_rigid = fit_mirrored_normal(d_rigid)
    s = fit_mirrored_normal(d)

    def offsets(points):
        if len(points) == 0 or len(kp_map.intersections) == 0:
            return None, 0
        try:
            return intersection_offset(points, kp_map.intersections, cfg.metrics.delta)
        except RoadRegError:
            return None, 0

    ci = kp_cloud.intersections
    e_rigid, m_rigid = offsets(st.transform.apply(ci) if len(ci) else ci)
    e_final, m_final = offsets(w.apply_points(st.transform.apply(ci)) if len(ci) else ci)
    stages = {
        "rigid": {
            "transform": st.to_dict(),
            "centerline_sigma": s_rigid.sigma_hat,
            "raw_mean": s_rigid.raw_mean,
            "intersection_offset_mean": e_rigid,
            "matched_intersections": m_rigid,
        },
        "warp": {"control_points": int(len(w.centers))},
    }
    return AlignmentReport(
        centerline_mu=s.mu_hat,
        centerline_sigma=s.sigma_hat,
        outlier_threshold=s.tau_outlier,
        outlier_count=s.outlier_count,
        intersection_offset_mean=e_final,
        matched_intersections=m_final,
        raw_distances=[float(v) for v in d],
        raw_mean=s.raw_mean,
        halfnormal_mean=s.halfnormal_mean,
        stages=stages,
    )


def run_pipeline(cfg: PipelineConfig, resume: bool = False) -> AlignmentReport:
    return Pipeline(cfg, resume).run()


def run_stage(cfg: PipelineConfig, stage: str, resume: bool = True):
    """Recompute one stage, reusing upstream artifacts when ``resume`` is set."""
    if stage not in STAGE_ORDER:
        raise ValueError(f"unknown stage {stage!r}")
    p = Pipeline(cfg, resume=resume, fresh=(stage,))
    method = {"skel-cloud": p.skel_cloud, "skel-map": p.skel_map}.get(stage) or getattr(p, stage)
    return method()


def write_scene(scene, out_dir) -> dict:
    """Write a synthetic scene in the pipeline's input formats; returns the file paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "cloud": out / "cloud.ply",
        "map": out / "map.png",
        "terrain": out / "terrain.asc",
        "truth": out / "truth.json",
    }
    formats.write_point_cloud(scene.cloud, paths["cloud"])
    formats.write_color_raster(scene.map_rgb, scene.map_geo, paths["map"])
    formats.write_ascii_grid(scene.terrain_grid, paths["terrain"])
    formats.write_json(scene.truth.to_dict(), paths["truth"])
    return {k: str(v) for k, v in paths.items()}
