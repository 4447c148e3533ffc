from __future__ import annotations

import json

import pytest

from roadreg import formats
from roadreg.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from roadreg.config import PipelineConfig, config_from_dict, load_config, parse_override, validate_paths
from roadreg.errors import ConfigError
from roadreg.model import PointCloud


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg == PipelineConfig()
        assert cfg.rigid.match_epsilon == 8.0 and cfg.warp.tau_match == 30.0

    def test_file_then_override(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"rigid": {"match_epsilon": 5.0, "weight_aux": 0.1}, "metrics": {"delta": 9}}))
        cfg = load_config(p, ["rigid.match_epsilon=6", "paths.output=elsewhere"])
        assert cfg.rigid.match_epsilon == 6 and cfg.rigid.weight_aux == 0.1
        assert cfg.metrics.delta == 9 and cfg.paths.output == "elsewhere"

    def test_list_becomes_tuple(self):
        cfg = load_config(overrides=["rigid.scale_bounds=[0.5, 2]"])
        assert cfg.rigid.scale_bounds == (0.5, 2)

    def test_string_value(self):
        assert parse_override("paths.cloud=some/file.ply") == ("paths", "cloud", "some/file.ply")

    @pytest.mark.parametrize(
        "over",
        ["rigid.bogus=1", "nosuch.key=1", "rigid=1", "rigid.match_epsilon", "rigid.match_epsilon=-1", "warp.control_targets=\"x\""],
    )
    def test_bad_overrides(self, over):
        with pytest.raises(ConfigError):
            load_config(overrides=[over])

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            config_from_dict({"extra": {}})

    def test_bad_file(self, tmp_path):
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.json")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")

    def test_round_trip(self):
        cfg = load_config(overrides=["elevation.tau_h=0.1", "options.nonrigid=false"])
        assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_validate_paths(self, tmp_path):
        cfg = load_config(overrides=[f"paths.cloud={json.dumps(str(tmp_path / 'nope.ply'))}"])
        with pytest.raises(ConfigError):
            validate_paths(cfg, need_cloud=True, need_map=False)
        with pytest.raises(ConfigError):
            validate_paths(PipelineConfig())


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    spec = {"seed": 4, "grid_blocks": [2, 2], "point_density": 4.0, "deform_amp": 2.0, "noise_xy": 0.1,
            "terrain": {"kind": "ramp", "base": 10.0, "gradient": [0.01, 0.0], "amplitude": 0.0, "wavelength": [300, 300]},
            "z_bias": 20.0}
    (d / "spec.json").write_text(json.dumps(spec))
    assert main(["synth", str(d), "--spec", str(d / "spec.json")]) == EXIT_OK
    return d


def _args(scene_dir, out, *extra):
    return ["--cloud", str(scene_dir / "cloud.ply"), "--map", str(scene_dir / "map.png"), "--out", str(out), *extra]


class TestCli:
    def test_synth_writes_inputs(self, scene_dir):
        for name in ("cloud.ply", "map.png", "map.wld", "terrain.asc", "truth.json"):
            assert (scene_dir / name).exists()

    def test_synth_bad_spec(self, tmp_path, capsys):
        (tmp_path / "s.json").write_text(json.dumps({"grid_blocks": [0, 0]}))
        assert main(["synth", str(tmp_path / "o"), "--spec", str(tmp_path / "s.json")]) == EXIT_CONFIG

    def test_run_and_stage(self, scene_dir, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", *_args(scene_dir, out, "--terrain", str(scene_dir / "terrain.asc"))]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["centerline_sigma"] > 0 and "raw_distances" not in report
        assert report["elevation_corr_after"] > 0.95
        stamp = (out / "04_rigid.json").stat().st_mtime_ns
        assert main(["evaluate", *_args(scene_dir, out)]) == EXIT_OK
        assert (out / "04_rigid.json").stat().st_mtime_ns == stamp

    def test_no_nonrigid_flag(self, scene_dir, tmp_path, capsys):
        out = tmp_path / "rigid_only"
        assert main(["run", *_args(scene_dir, out, "--no-nonrigid", "--no-elevation")]) == EXIT_OK
        assert formats.read_json(out / "06_warp.json")["centers"] == []
        assert not (out / "08_elevated.ply").exists()

    def test_unknown_key(self, scene_dir, tmp_path, capsys):
        assert main(["run", *_args(scene_dir, tmp_path, "--set", "rigid.bogus=3")]) == EXIT_CONFIG
        assert "bogus" in capsys.readouterr().err

    def test_missing_input(self, tmp_path, capsys):
        assert main(["prep", "--cloud", str(tmp_path / "none.ply"), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_terrain_is_io(self, scene_dir, tmp_path, capsys):
        out = tmp_path / "o"
        code = main(["run", *_args(scene_dir, out, "--terrain", str(tmp_path / "absent.asc"))])
        assert code == EXIT_IO
        assert "elevate" in capsys.readouterr().err
        assert (out / "07_warped.ply").exists()

    def test_corrupt_cloud_is_io(self, tmp_path, capsys):
        (tmp_path / "bad.ply").write_text("ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n")
        assert main(["prep", "--cloud", str(tmp_path / "bad.ply"), "--out", str(tmp_path / "o")]) == EXIT_IO

    def test_stage_failure_code(self, tmp_path, capsys):
        formats.write_point_cloud(PointCloud([[0.0, 0.0, 0.0]], [0]), tmp_path / "c.ply")
        assert main(["prep", "--cloud", str(tmp_path / "c.ply"), "--out", str(tmp_path / "o")]) == 3
