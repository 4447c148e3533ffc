from __future__ import annotations

import pytest

from roadreg import formats
from roadreg.config import load_config
from roadreg.errors import StageError
from roadreg.model import SimilarityTransform2D
from roadreg.nonrigid_warp import apply_warp
from roadreg.pipeline import ARTIFACTS, Pipeline, run_pipeline, run_stage, write_scene
from roadreg.raster_skeleton import graph_from_dict, KeypointSet
from roadreg.rigid_align import ScoredTransform
from roadreg.model import RbfWarp
from roadreg.synth import SceneSpec, TerrainSpec, generate_scene


def _cfg(paths: dict, out, *extra):
    over = [f"paths.cloud=\"{paths['cloud']}\"", f"paths.map=\"{paths['map']}\"", f"paths.output=\"{out}\""]
    if "terrain" in paths:
        over.append(f"paths.terrain=\"{paths['terrain']}\"")
    return load_config(overrides=over + list(extra))


@pytest.fixture(scope="module")
def identity_paths(tmp_path_factory):
    return write_scene(generate_scene(SceneSpec(seed=1, grid_blocks=(2, 2))), tmp_path_factory.mktemp("ident"))


@pytest.fixture(scope="module")
def deformed_paths(tmp_path_factory):
    spec = SceneSpec(
        seed=9,
        grid_blocks=(3, 3),
        noise_xy=0.2,
        gt_transform=SimilarityTransform2D(1.1, 0.2, (15.0, -10.0)),
        deform_amp=3.0,
        terrain=TerrainSpec("sine", base=40.0, amplitude=5.0, wavelength=(400.0, 400.0)),
        z_bias=30.0,
    )
    return write_scene(generate_scene(spec), tmp_path_factory.mktemp("deformed"))


@pytest.fixture(scope="module")
def deformed_run(deformed_paths, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = _cfg(deformed_paths, out)
    return cfg, run_pipeline(cfg)


def test_identity_scene(identity_paths, tmp_path):
    rep = run_pipeline(_cfg(identity_paths, tmp_path))
    assert rep.intersection_offset_mean < 1.0
    assert rep.centerline_sigma < 1.0
    assert rep.stages["rigid"]["transform"]["scale"] == pytest.approx(1.0, abs=0.01)


def test_deformed_scene_improves(deformed_run):
    _, rep = deformed_run
    rigid = rep.stages["rigid"]
    assert rep.centerline_sigma < rigid["centerline_sigma"]
    assert rep.intersection_offset_mean * 4 <= rigid["intersection_offset_mean"]
    assert rep.matched_intersections >= 12
    assert rep.elevation_corr_after > rep.elevation_corr_before


def test_artifacts_chain(deformed_run):
    cfg, rep = deformed_run
    out = cfg.output_dir
    for key in ("prep", "cloud_skeleton", "map_skeleton", "rigid", "rigid_cloud", "warp", "warped_cloud", "elevated_cloud", "report", "distances"):
        assert (out / ARTIFACTS[key]).exists(), key
    # each artifact is readable by the next stage's reader
    graph_from_dict(formats.read_json(out / ARTIFACTS["cloud_skeleton"]))
    KeypointSet.from_dict(formats.read_json(out / ARTIFACTS["map_keypoints"]))
    st = ScoredTransform.from_dict(formats.read_json(out / ARTIFACTS["rigid"]))
    w = RbfWarp.from_dict(formats.read_json(out / ARTIFACTS["warp"]))
    rigid_cloud = formats.read_point_cloud(out / ARTIFACTS["rigid_cloud"])
    warped = formats.read_point_cloud(out / ARTIFACTS["warped_cloud"])
    assert (apply_warp(rigid_cloud, w).xyz == warped.xyz).all()
    assert st.transform.scale > 0
    assert len(formats.read_distances_csv(out / ARTIFACTS["distances"])) == len(rep.raw_distances)


def test_missing_terrain_keeps_xy(deformed_paths, tmp_path):
    paths = dict(deformed_paths, terrain=str(tmp_path / "missing.asc"))
    with pytest.raises(StageError) as ei:
        run_pipeline(_cfg(paths, tmp_path))
    assert ei.value.stage == "elevate"
    for key in ("prep", "rigid", "warp", "warped_cloud"):
        assert (tmp_path / ARTIFACTS[key]).exists()
    assert not (tmp_path / ARTIFACTS["report"]).exists()


def test_elevation_disabled(deformed_paths, tmp_path):
    paths = {k: v for k, v in deformed_paths.items() if k != "terrain"}
    rep = run_pipeline(_cfg(paths, tmp_path, "options.elevation=false"))
    assert rep.elevation_corr_after is None


def test_resume_is_byte_identical(deformed_run):
    cfg, _ = deformed_run
    report = cfg.output_dir / ARTIFACTS["report"]
    first = report.read_bytes()
    stamp = (cfg.output_dir / ARTIFACTS["prep"]).stat().st_mtime_ns
    run_pipeline(cfg, resume=True)
    assert report.read_bytes() == first
    assert (cfg.output_dir / ARTIFACTS["prep"]).stat().st_mtime_ns == stamp


def test_fresh_runs_are_byte_identical(deformed_run, deformed_paths, tmp_path):
    cfg, _ = deformed_run
    run_pipeline(_cfg(deformed_paths, tmp_path))
    assert (tmp_path / ARTIFACTS["report"]).read_bytes() == (cfg.output_dir / ARTIFACTS["report"]).read_bytes()


def test_stage_recomputes_only_itself(deformed_run):
    cfg, _ = deformed_run
    out = cfg.output_dir
    before = (out / ARTIFACTS["prep"]).stat().st_mtime_ns
    run_stage(cfg, "align")
    assert (out / ARTIFACTS["prep"]).stat().st_mtime_ns == before
    assert (out / ARTIFACTS["rigid"]).stat().st_mtime_ns > before


def test_stage_error_names_stage(tmp_path):
    cfg = load_config(overrides=[f"paths.cloud=\"{tmp_path / 'x.ply'}\"", f"paths.output=\"{tmp_path}\""])
    with pytest.raises(StageError) as ei:
        Pipeline(cfg).prep()
    assert ei.value.stage == "prep"
