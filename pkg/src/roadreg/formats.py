"""Readers and writers for clouds, rasters, terrain grids and JSON artifacts."""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import MissingProperty, ParseError, UnsupportedFormat
from .model import NODATA, BinaryRaster, ElevationGrid, GeoTransform, PointCloud

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}  # fmt: skip
LABEL_NAMES = ("label", "class", "classification", "scalar_label")


# --------------------------------------------------------------------------
# PLY


def _parse_ply_header(f):
    magic = f.readline()
    if magic.strip() != b"ply":
        raise ParseError("missing 'ply' magic", 1, "line")
    fmt = None
    elements: list[tuple[str, int, list]] = []
    line_no = 1
    while True:
        raw = f.readline()
        line_no += 1
        if not raw:
            raise ParseError("header ends before end_header", line_no, "line")
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "format":
            if len(parts) < 2:
                raise ParseError("malformed format line", line_no, "line")
            fmt = parts[1]
        elif key == "element":
            if len(parts) != 3:
                raise ParseError("malformed element line", line_no, "line")
            try:
                count = int(parts[2])
            except ValueError:
                raise ParseError("element count is not an integer", line_no, "line") from None
            elements.append((parts[1], count, []))
        elif key == "property":
            if not elements:
                raise ParseError("property before any element", line_no, "line")
            if parts[1] == "list":
                if len(parts) != 5:
                    raise ParseError("malformed list property", line_no, "line")
                elements[-1][2].append((parts[4], ("list", parts[2], parts[3])))
            else:
                if len(parts) != 3 or parts[1] not in PLY_TYPES:
                    raise ParseError(f"unknown property type {parts[1:]}", line_no, "line")
                elements[-1][2].append((parts[2], PLY_TYPES[parts[1]]))
        elif key == "end_header":
            break
        else:
            raise ParseError(f"unexpected header keyword {key!r}", line_no, "line")
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise UnsupportedFormat(f"PLY format {fmt!r} not supported")
    return fmt, elements, line_no


def _cloud_from_fields(names: list[str], cols: dict[str, np.ndarray]) -> PointCloud:
    for axis in ("x", "y", "z"):
        if axis not in cols:
            raise MissingProperty(f"vertex property {axis!r} missing")
    xyz = np.column_stack([cols["x"], cols["y"], cols["z"]]).astype(np.float64)
    labels = None
    for name in LABEL_NAMES:
        if name in cols:
            labels = cols[name].astype(np.int64)
            break
    intens = cols["intensity"].astype(np.float64) if "intensity" in cols else None
    return PointCloud(xyz, labels, intens)


def read_point_cloud(path) -> PointCloud:
    """Vertices of an ASCII or binary PLY file; ``label``/``class`` and ``intensity`` are optional."""
    path = Path(path)
    with open(path, "rb") as f:
        fmt, elements, header_lines = _parse_ply_header(f)
        header_bytes = f.tell()
        if not any(e[0] == "vertex" for e in elements):
            raise MissingProperty("no vertex element")
        if fmt == "ascii":
            return _read_ascii_body(f, elements, header_lines)
        return _read_binary_body(f, elements, header_bytes, "<" if fmt == "binary_little_endian" else ">")


def _read_ascii_body(f, elements, header_lines: int) -> PointCloud:
    line_no = header_lines
    for name, count, props in elements:
        if name != "vertex":
            for _ in range(count):
                if not f.readline():
                    raise ParseError(f"file ends inside element {name!r}", line_no + 1, "line")
                line_no += 1
            continue
        if any(isinstance(t, tuple) for _, t in props):
            raise UnsupportedFormat("list properties on vertices are not supported")
        rows = np.empty((count, len(props)), dtype=np.float64)
        for i in range(count):
            raw = f.readline()
            line_no += 1
            if not raw:
                raise ParseError(f"expected {count} vertices, found {i}", line_no, "line")
            parts = raw.split()
            if len(parts) < len(props):
                raise ParseError(f"vertex row has {len(parts)} values, expected {len(props)}", line_no, "line")
            try:
                rows[i] = [float(v) for v in parts[: len(props)]]
            except ValueError:
                raise ParseError("non-numeric vertex value", line_no, "line") from None
        cols = {pname: rows[:, j] for j, (pname, _) in enumerate(props)}
        return _cloud_from_fields([p for p, _ in props], cols)
    raise MissingProperty("no vertex element")


def _read_binary_body(f, elements, header_bytes: int, endian: str) -> PointCloud:
    offset = header_bytes
    for name, count, props in elements:
        if any(isinstance(t, tuple) for _, t in props):
            if name == "vertex":
                raise UnsupportedFormat("list properties on vertices are not supported")
            raise UnsupportedFormat(f"cannot skip binary list element {name!r} before the vertices")
        dtype = np.dtype([(pname, endian + t) for pname, t in props])
        nbytes = dtype.itemsize * count
        buf = f.read(nbytes)
        if len(buf) < nbytes:
            raise ParseError(
                f"element {name!r} needs {nbytes} bytes, file has {len(buf)}", offset + len(buf), "byte"
            )
        if name == "vertex":
            arr = np.frombuffer(buf, dtype=dtype, count=count)
            cols = {pname: arr[pname] for pname, _ in props}
            return _cloud_from_fields([p for p, _ in props], cols)
        offset += nbytes
    raise MissingProperty("no vertex element")


def write_point_cloud(cloud: PointCloud, path) -> None:
    """Binary little-endian PLY with double xyz, int32 label and double intensity when present."""
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if cloud.labels is not None:
        fields.append(("label", "<i4"))
    if cloud.intensities is not None:
        fields.append(("intensity", "<f8"))
    arr = np.empty(len(cloud), dtype=np.dtype(fields))
    arr["x"], arr["y"], arr["z"] = cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]
    if cloud.labels is not None:
        arr["label"] = cloud.labels
    if cloud.intensities is not None:
        arr["intensity"] = cloud.intensities
    names = {"<f8": "double", "<i4": "int"}
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property {names[t]} {n}" for n, t in fields]
    header.append("end_header")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(arr.tobytes())
    os.replace(tmp, path)


def write_point_cloud_ascii(cloud: PointCloud, path) -> None:
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += ["property double x", "property double y", "property double z"]
    if cloud.labels is not None:
        lines.append("property int label")
    lines.append("end_header")
    body = []
    for i in range(len(cloud)):
        vals = [repr(float(v)) for v in cloud.xyz[i]]
        if cloud.labels is not None:
            vals.append(str(int(cloud.labels[i])))
        body.append(" ".join(vals))
    Path(path).write_text("\n".join(lines + body) + "\n")


# --------------------------------------------------------------------------
# world files and rasters


def world_file_for(path) -> Path | None:
    p = Path(path)
    ext = p.suffix.lstrip(".")
    candidates = [p.with_suffix(".wld")]
    if ext:
        candidates.append(p.with_suffix("." + ext[0] + ext[-1] + "w"))
        candidates.append(p.with_suffix("." + ext + "w"))
    for c in candidates:
        if c.exists():
            return c
    return None


def read_world_file(path) -> GeoTransform:
    """North-up world file: six lines A, D, B, E, C, F with C, F the centre of the top-left pixel."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) != 6:
        raise ParseError(f"world file needs 6 values, found {len(lines)}", len(lines), "line")
    try:
        a, d, b, e, c, f = (float(v) for v in lines)
    except ValueError as exc:
        raise ParseError(f"non-numeric world file value: {exc}") from None
    if d != 0 or b != 0:
        raise UnsupportedFormat("rotated world files are not supported")
    if not (a > 0 and math.isclose(-e, a, rel_tol=1e-9)):
        raise UnsupportedFormat("world file must describe square north-up pixels")
    return GeoTransform(c - a / 2.0, f + a / 2.0, a)


def write_world_file(geo: GeoTransform, path) -> None:
    m = geo.mpp
    vals = [m, 0.0, 0.0, -m, geo.origin_x + m / 2.0, geo.origin_y - m / 2.0]
    Path(path).write_text("\n".join(repr(float(v)) for v in vals) + "\n")


def _open_image(path):
    from PIL import Image, UnidentifiedImageError

    try:
        img = Image.open(path)
        img.load()
    except UnidentifiedImageError as exc:
        raise UnsupportedFormat(f"unrecognised image {path}: {exc}") from None
    except (OSError, SyntaxError, ValueError) as exc:
        raise ParseError(f"cannot decode image {path}: {exc}") from None
    return img


def _geo_for(path, mpp: float) -> GeoTransform:
    wf = world_file_for(path)
    return read_world_file(wf) if wf is not None else GeoTransform(0.0, 0.0, mpp)


def read_raster(path, mpp: float = 1.0) -> BinaryRaster:
    """Binary mask from a PGM (or any grey image); non-zero pixels are set."""
    img = _open_image(path)
    a = np.asarray(img.convert("L") if img.mode not in ("L", "I", "I;16", "1") else img)
    return BinaryRaster(a != 0, _geo_for(path, mpp))


def read_color_raster(path, mpp: float = 1.0) -> tuple[np.ndarray, GeoTransform]:
    """(H, W, 3) uint8 colour image from PPM or PNG plus its georeference."""
    img = _open_image(path)
    return np.asarray(img.convert("RGB")), _geo_for(path, mpp)


def write_raster(mask: BinaryRaster, path, world_file: bool = True) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(mask.bits, dtype=np.uint8) * 255, mode="L").save(path)
    if world_file:
        write_world_file(mask.geo, Path(path).with_suffix(".wld"))


def write_color_raster(rgb: np.ndarray, geo: GeoTransform | None, path) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)
    if geo is not None:
        write_world_file(geo, Path(path).with_suffix(".wld"))


# --------------------------------------------------------------------------
# Esri ASCII grid


def read_ascii_grid(path) -> ElevationGrid:
    text = Path(path).read_text().split("\n")
    header: dict[str, str] = {}
    i = 0
    while i < len(text) and len(header) < 7:
        parts = text[i].split()
        if len(parts) == 2 and parts[0][0].isalpha():
            header[parts[0].lower()] = parts[1]
            i += 1
        else:
            break
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        cs = float(header["cellsize"])
    except KeyError as exc:
        raise ParseError(f"ASCII grid header lacks {exc.args[0]}", i + 1, "line") from None
    except ValueError:
        raise ParseError("malformed ASCII grid header", i + 1, "line") from None
    nodata = float(header["nodata_value"]) if "nodata_value" in header else None
    if "xllcorner" in header:
        x0 = float(header["xllcorner"])
    elif "xllcenter" in header:
        x0 = float(header["xllcenter"]) - cs / 2.0
    else:
        raise ParseError("ASCII grid header lacks xllcorner/xllcenter", i + 1, "line")
    if "yllcorner" in header:
        y0 = float(header["yllcorner"])
    elif "yllcenter" in header:
        y0 = float(header["yllcenter"]) - cs / 2.0
    else:
        raise ParseError("ASCII grid header lacks yllcorner/yllcenter", i + 1, "line")
    values = []
    for ln in text[i:]:
        values.extend(ln.split())
    if len(values) != ncols * nrows:
        raise ParseError(f"ASCII grid expects {ncols * nrows} values, found {len(values)}", len(text), "line")
    try:
        h = np.array(values, dtype=np.float64).reshape(nrows, ncols)
    except ValueError:
        raise ParseError("non-numeric ASCII grid value") from None
    if nodata is not None:
        h[h == nodata] = NODATA
    return ElevationGrid(h, GeoTransform(x0, y0 + nrows * cs, cs))


def write_ascii_grid(grid: ElevationGrid, path, nodata_value: float = -9999.0) -> None:
    h = np.array(grid.heights, dtype=np.float64)
    h[~grid.valid] = nodata_value
    nrows, ncols = h.shape
    cs = grid.cell_size
    lines = [
        f"ncols {ncols}",
        f"nrows {nrows}",
        f"xllcorner {grid.geo.origin_x!r}",
        f"yllcorner {grid.geo.origin_y - nrows * cs!r}",
        f"cellsize {cs!r}",
        f"NODATA_value {nodata_value!r}",
    ]
    lines += [" ".join(repr(float(v)) for v in row) for row in h]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# JSON and CSV


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def write_json(obj, path) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(dumps_json(obj))
    os.replace(tmp, path)


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc.msg}", exc.lineno, "line") from None


def write_distances_csv(distances, path) -> None:
    Path(path).write_text("".join(f"{float(d)!r}\n" for d in distances))


def read_distances_csv(path) -> np.ndarray:
    vals = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    return np.array([float(v) for v in vals], dtype=np.float64)
