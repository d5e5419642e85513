"""ASCII PLY point clouds: ``element vertex N`` with float x, y, z.

Coordinates are stored as 32-bit floats printed with six significant
digits, so write -> read -> write reproduces the file byte for byte.
"""
from __future__ import annotations

import io
import os

import numpy as np

from .errors import PlyFormatError

FLOAT_TYPES = {"float", "float32", "double", "float64"}


def format_ply(cloud) -> str:
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise PlyFormatError("refusing to write NaN/Inf coordinates")
    buf = io.StringIO()
    buf.write("ply\nformat ascii 1.0\n")
    buf.write(f"element vertex {len(pts)}\n")
    buf.write("property float x\nproperty float y\nproperty float z\nend_header\n")
    if len(pts):
        np.savetxt(buf, pts.astype(np.float32), fmt="%.6g", delimiter=" ")
    return buf.getvalue()


def write_ply(path: str | os.PathLike, cloud) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(format_ply(cloud))


def parse_ply(text: str) -> np.ndarray:
    lines = text.split("\n")
    if not lines or lines[0].strip() != "ply":
        raise PlyFormatError("missing 'ply' magic line")
    n_vertex = None
    props: list[str] = []
    in_vertex = False
    end = None
    for i, raw in enumerate(lines[1:], start=1):
        parts = raw.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "format":
            if len(parts) < 2 or parts[1] != "ascii":
                raise PlyFormatError(f"only ASCII PLY is supported, got {raw.strip()!r}")
        elif key == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n_vertex = int(parts[2])
            elif n_vertex is None:
                raise PlyFormatError("vertex element must come first")
        elif key == "property":
            if in_vertex:
                if parts[1] == "list":
                    raise PlyFormatError("list properties on vertices are not supported")
                props.append(parts[-1])
        elif key == "end_header":
            end = i
            break
        else:
            raise PlyFormatError(f"unexpected header line {raw.strip()!r}")
    if end is None:
        raise PlyFormatError("missing end_header")
    if n_vertex is None:
        raise PlyFormatError("no vertex element")
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise PlyFormatError(f"vertex properties {props} lack x, y or z") from None
    if n_vertex == 0:
        return np.empty((0, 3), dtype=np.float64)
    body = "\n".join(lines[end + 1 : end + 1 + n_vertex])
    try:
        data = np.loadtxt(io.StringIO(body), dtype=np.float64, ndmin=2, usecols=cols)
    except ValueError as exc:
        raise PlyFormatError(f"bad vertex data: {exc}") from None
    if len(data) != n_vertex:
        raise PlyFormatError(f"header declares {n_vertex} vertices, found {len(data)}")
    if not np.all(np.isfinite(data)):
        raise PlyFormatError("vertex data contains NaN or Inf")
    return data


def read_ply(path: str | os.PathLike) -> np.ndarray:
    with open(path) as f:
        return parse_ply(f.read())
