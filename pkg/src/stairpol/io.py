"""Readers and writers for the on-disk formats.

All binary formats are little-endian:

* PFM: 32-bit float rasters, scale ``-1.0``, rows stored bottom to top.
  ``Pf`` holds one channel, ``PF`` three (used for normal fields).
* PGM: binary ``P5`` masks and 8/16-bit images (16-bit samples are
  big-endian, as the format requires).
* PLY: ``binary_little_endian`` vertices as float32 ``x y z`` with an optional
  triangle face list; the ASCII variant is accepted on read.
* CSV: header row then numbers; clouds use ``x,y,z``.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .errors import InputError

logger = logging.getLogger(__name__)


def _read_token(f):
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    token = b""
    while True:
        c = f.read(1)
        if not c:
            break
        if c == b"#" and not token:
            f.readline()
            continue
        if c.isspace():
            if token:
                break
            continue
        token += c
    return token.decode("ascii")


# --- PFM ---------------------------------------------------------------------

def write_pfm(path, data) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        header = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    else:
        raise InputError(f"PFM needs an (H, W) or (H, W, 3) array, got {arr.shape}", field="data")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            kind = f.readline().strip()
            if kind not in (b"Pf", b"PF"):
                raise InputError(f"{path}: not a PFM file", stage="io", field="header")
            w, h = (int(v) for v in f.readline().split())
            scale = float(f.readline().strip())
            payload = f.read()
    except (ValueError, OSError) as exc:
        raise InputError(f"{path}: unreadable PFM ({exc})", stage="io") from exc
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    expected = w * h * channels * 4
    if len(payload) != expected:
        raise InputError(f"{path}: expected {expected} data bytes, found {len(payload)}", stage="io")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    arr = arr.reshape((h, w, 3) if channels == 3 else (h, w))
    return arr[::-1].copy()


# --- PGM ---------------------------------------------------------------------

def write_pgm(path, image, maxval: int | None = None) -> None:
    """Write an integer image; booleans are written as 0/255 masks."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise InputError(f"PGM needs a 2-D array, got {arr.shape}", field="image")
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
        maxval = 255
    if maxval is None:
        maxval = 255 if arr.max(initial=0) <= 255 else 65535
    if not 0 < maxval <= 65535:
        raise InputError("maxval must lie in (0, 65535]", field="maxval")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > maxval:
        raise InputError(f"pixel values outside [0, {maxval}]", field="image")
    dtype = np.uint8 if maxval < 256 else ">u2"
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(arr.astype(dtype).tobytes())


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        if _read_token(f) != "P5":
            raise InputError(f"{path}: not a binary PGM", stage="io", field="header")
        try:
            w, h, maxval = int(_read_token(f)), int(_read_token(f)), int(_read_token(f))
        except ValueError as exc:
            raise InputError(f"{path}: malformed PGM header", stage="io") from exc
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        payload = f.read()
    count = w * h
    itemsize = np.dtype(dtype).itemsize
    if len(payload) < count * itemsize:
        raise InputError(f"{path}: truncated PGM data", stage="io")
    return np.frombuffer(payload[: count * itemsize], dtype=dtype).reshape(h, w).astype(np.uint16 if itemsize == 2
                                                                                        else np.uint8)


def read_mask(path) -> np.ndarray:
    return read_pgm(path) > 0


# --- PLY ---------------------------------------------------------------------

def write_ply(path, points, faces=None) -> None:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InputError(f"PLY vertices must be (N, 3), got {pts.shape}", field="points")
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z"]
    tri = None
    if faces is not None:
        tri = np.asarray(faces, dtype=np.int64)
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise InputError(f"faces must be (M, 3), got {tri.shape}", field="faces")
        lines += [f"element face {len(tri)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(pts.astype("<f4").tobytes())
        if tri is not None:
            rec = np.zeros(len(tri), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            rec["n"] = 3
            rec["idx"] = tri
            f.write(rec.tobytes())


_PLY_TYPES = {"char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "i2", "int16": "i2",
              "ushort": "u2", "uint16": "u2", "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
              "float": "f4", "float32": "f4", "double": "f8", "float64": "f8"}


def read_ply(path) -> np.ndarray:
    """Vertex positions of a PLY file as an (N, 3) float array.

    Only vertex properties ``x y z`` are returned; other vertex properties are
    skipped and elements after the vertices are ignored.
    """
    path = Path(path)
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise InputError(f"{path}: not a PLY file", stage="io", field="header")
        fmt = None
        n_vertex = None
        props = []
        current = None
        while True:
            line = f.readline()
            if not line:
                raise InputError(f"{path}: PLY header has no end_header", stage="io")
            parts = line.decode("ascii", "replace").split()
            if not parts or parts[0] in ("comment", "obj_info"):
                continue
            if parts[0] == "end_header":
                break
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                current = parts[1]
                if current == "vertex":
                    n_vertex = int(parts[2])
                elif n_vertex is None:
                    raise InputError(f"{path}: elements before 'vertex' are not supported", stage="io")
            elif parts[0] == "property" and current == "vertex":
                if parts[1] == "list":
                    raise InputError(f"{path}: list properties on vertices are not supported", stage="io")
                if parts[1] not in _PLY_TYPES:
                    raise InputError(f"{path}: unknown PLY type {parts[1]!r}", stage="io")
                props.append((parts[2], _PLY_TYPES[parts[1]]))
        if n_vertex is None:
            raise InputError(f"{path}: PLY file has no vertex element", stage="io")
        names = [p[0] for p in props]
        if not {"x", "y", "z"} <= set(names):
            raise InputError(f"{path}: vertex element lacks x/y/z", stage="io")
        if fmt == "ascii":
            rows = [f.readline().split() for _ in range(n_vertex)]
            if any(len(r) < len(props) for r in rows):
                raise InputError(f"{path}: truncated ASCII PLY", stage="io")
            table = np.array([[float(v) for v in r[: len(props)]] for r in rows]).reshape(n_vertex, len(props))
            return table[:, [names.index(a) for a in "xyz"]]
        if fmt not in ("binary_little_endian", "binary_big_endian"):
            raise InputError(f"{path}: unsupported PLY format {fmt!r}", stage="io")
        order = "<" if fmt == "binary_little_endian" else ">"
        dtype = np.dtype([(n, order + t) for n, t in props])
        payload = f.read(dtype.itemsize * n_vertex)
        if len(payload) != dtype.itemsize * n_vertex:
            raise InputError(f"{path}: truncated PLY vertex data", stage="io")
        rec = np.frombuffer(payload, dtype=dtype)
        return np.column_stack([rec[a].astype(float) for a in "xyz"])


def height_mesh(z, pixel_pitch: float = 1.0):
    """Vertices and triangles of a height map on its pixel grid.

    Vertex ``(r, c)`` sits at ``(c * pitch, r * pitch, z[r, c])``; each grid
    cell is split into two triangles. Cells touching a non-finite height are
    dropped.
    """
    z = np.asarray(z, dtype=float)
    h, w = z.shape
    rows, cols = np.indices(z.shape)
    verts = np.column_stack([cols.ravel() * pixel_pitch, rows.ravel() * pixel_pitch, z.ravel()])
    idx = np.arange(h * w).reshape(h, w)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    finite = np.isfinite(z).ravel()
    ok = finite[a] & finite[b] & finite[c] & finite[d]
    faces = np.concatenate([np.column_stack([a, c, b])[ok], np.column_stack([b, c, d])[ok]])
    verts = np.where(np.isfinite(verts), verts, 0.0)
    return verts, faces


# --- CSV / clouds ------------------------------------------------------------

def write_cloud_csv(path, points) -> None:
    pts = np.asarray(points, dtype=float)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "z"])
        writer.writerows([repr(float(v)) for v in row] for row in pts)


def read_cloud_csv(path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}", stage="io") from exc
    if not rows:
        raise InputError(f"{path}: empty CSV", stage="io")
    header = [h.strip().lower() for h in rows[0]]
    if not {"x", "y", "z"} <= set(header):
        raise InputError(f"{path}: CSV header must contain x,y,z", stage="io", field="header")
    cols = [header.index(a) for a in "xyz"]
    try:
        data = [[float(r[i]) for i in cols] for r in rows[1:] if r]
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: malformed CSV row ({exc})", stage="io") from exc
    return np.asarray(data, dtype=float).reshape(-1, 3)


def read_cloud(path) -> np.ndarray:
    """Load an (N, 3) cloud from ``.ply`` or ``.csv``."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file", stage="io", field="path")
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".csv":
        return read_cloud_csv(path)
    raise InputError(f"{path}: clouds must be .ply or .csv", stage="io", field="path")


def write_trace_csv(path, trace, column: str = "best_fitness") -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", column])
        for i, v in enumerate(np.asarray(trace, dtype=float)):
            writer.writerow([i, repr(float(v))])


def read_trace_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return np.array([float(r[1]) for r in rows[1:] if r])


# --- JSON --------------------------------------------------------------------

def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(to_jsonable(obj), f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    path = Path(path)
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise InputError(f"{path}: no such file", stage="io", field="path") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})", stage="io") from exc
