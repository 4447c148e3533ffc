"""Command-line entry point: one subcommand per stage plus ``run`` and ``synth``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import formats
from .config import load_config, validate_paths
from .errors import ConfigError, ParseError, RoadRegError, StageError, UnsupportedFormat
from .pipeline import STAGE_ORDER, run_pipeline, run_stage, write_scene

log = logging.getLogger("roadreg")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_IO = 4

# stage -> (needs cloud, needs map)
_INPUTS = {
    "prep": (True, False),
    "skel-cloud": (True, False),
    "skel-map": (False, True),
    "align": (True, True),
    "warp": (True, True),
    "elevate": (True, True),
    "evaluate": (True, True),
    "run": (True, True),
}

_IO_ERRORS = (OSError, ParseError, UnsupportedFormat)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="JSON configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one configuration value (repeatable)")
    p.add_argument("--cloud", help="input point cloud (.ply)")
    p.add_argument("--map", help="map raster (.png/.ppm) with optional .wld sidecar")
    p.add_argument("--terrain", help="terrain grid (Esri ASCII)")
    p.add_argument("--out", "-o", help="output directory for stage artifacts")
    p.add_argument("--map-mpp", type=float, help="map meters per pixel when no world file is present")
    p.add_argument("--no-elevation", action="store_true", help="skip the elevation stage")
    p.add_argument("--no-nonrigid", action="store_true", help="use the rigid transform only")
    p.add_argument("--debug", action="store_true", help="also write intermediate masks")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadreg", description="Register a road point cloud to a map raster.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_ORDER:
        p = sub.add_parser(name, help=f"run the {name} stage (upstream artifacts are reused when present)")
        _add_common(p)
        p.add_argument("--no-resume", action="store_true", help="recompute upstream stages as well")
    p = sub.add_parser("run", help="run every stage")
    _add_common(p)
    p.add_argument("--resume", action="store_true", help="reuse artifacts already in the output directory")

    p = sub.add_parser("synth", help="write a synthetic scene with ground truth")
    p.add_argument("out", help="directory to write the scene into")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--spec", help="JSON scene description; defaults to the benchmark scene")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _flag_overrides(args: argparse.Namespace) -> list[str]:
    """Dedicated flags become overrides applied after ``--set`` values."""
    out = list(args.overrides)
    for flag, key in (("cloud", "paths.cloud"), ("map", "paths.map"), ("terrain", "paths.terrain"), ("out", "paths.output")):
        value = getattr(args, flag)
        if value is not None:
            out.append(f"{key}={json.dumps(value)}")
    if args.map_mpp is not None:
        out.append(f"options.map_mpp={args.map_mpp}")
    if args.no_elevation:
        out.append("options.elevation=false")
    if args.no_nonrigid:
        out.append("options.nonrigid=false")
    if args.debug:
        out.append("options.debug=true")
    return out


def _summary(result) -> dict:
    if hasattr(result, "to_dict"):
        d = result.to_dict()
        d.pop("raw_distances", None)
        return d
    return {"done": True}


def _synth(args: argparse.Namespace) -> int:
    from .synth import SceneSpec, benchmark_spec, generate_scene

    if args.spec:
        try:
            spec = SceneSpec.from_dict(json.loads(Path(args.spec).read_text()))
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ConfigError(f"cannot read scene spec {args.spec}: {exc}") from exc
    else:
        spec = benchmark_spec(args.seed)
    paths = write_scene(generate_scene(spec), args.out)
    print(json.dumps(paths, indent=2))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            return _synth(args)
        cfg = load_config(args.config, _flag_overrides(args))
        need_cloud, need_map = _INPUTS[args.command]
        validate_paths(cfg, need_cloud, need_map)
        if args.command == "run":
            result = run_pipeline(cfg, resume=args.resume)
        else:
            result = run_stage(cfg, args.command, resume=not args.no_resume)
        print(formats.dumps_json(_summary(result)))
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc.cause, _IO_ERRORS) else EXIT_STAGE
    except _IO_ERRORS as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RoadRegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
