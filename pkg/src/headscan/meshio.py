"""Reading and writing triangle meshes: binary/ASCII STL, ASCII PLY, ASCII OBJ.

Binary STL layout (all little-endian)::

    80 bytes   header (ignored on read)
    uint32     triangle count
    per triangle, 50 bytes:
        float32[3]  face normal
        float32[9]  three vertices
        uint16      attribute byte count (written as 0)
"""
from __future__ import annotations

import os
import re

import numpy as np

from .geometry import TriangleMesh


class MeshFormatError(ValueError):
    """A mesh file could not be parsed; the message says where."""


STL_HEADER = b"headscan binary STL".ljust(80, b"\0")

_STL_DTYPE = np.dtype(
    [("normal", "<f4", (3,)), ("vertices", "<f4", (3, 3)), ("attr", "<u2")]
)
assert _STL_DTYPE.itemsize == 50


def write_stl(mesh: TriangleMesh, path) -> None:
    if mesh.is_empty:
        raise ValueError("refusing to write an empty mesh to STL")
    tri = mesh.triangles().astype(np.float32)
    # normals from the float32 corners actually stored in the file
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]).astype(np.float64)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    rec = np.zeros(len(tri), dtype=_STL_DTYPE)
    rec["normal"] = n.astype(np.float32)
    rec["vertices"] = tri
    with open(path, "wb") as fh:
        fh.write(STL_HEADER)
        fh.write(np.uint32(len(tri)).astype("<u4").tobytes())
        fh.write(rec.tobytes())


def _weld(corners: np.ndarray) -> TriangleMesh:
    """Merge bitwise-identical corners; vertices ordered by first appearance."""
    flat = np.ascontiguousarray(corners.reshape(-1, 3))
    _, first, inverse = np.unique(flat, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    vertices = flat[first[order]]
    faces = rank[inverse].reshape(-1, 3)
    bad = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
    return TriangleMesh(vertices.astype(np.float64), faces[~bad])


def read_stl(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) >= 84:
        (count,) = np.frombuffer(data, dtype="<u4", count=1, offset=80)
        if 84 + 50 * int(count) == len(data):
            rec = np.frombuffer(data, dtype=_STL_DTYPE, count=int(count), offset=84)
            return _weld(rec["vertices"].astype(np.float64))
    if data.lstrip().startswith(b"solid"):
        return _read_ascii_stl(data.decode("ascii", errors="replace"))
    if len(data) < 84:
        raise MeshFormatError(f"{path}: truncated binary STL ({len(data)} bytes, need at least 84)")
    raise MeshFormatError(
        f"{path}: binary STL declares {int(count)} triangles (expects {84 + 50 * int(count)} bytes) "
        f"but file has {len(data)} bytes"
    )


def _read_ascii_stl(text: str) -> TriangleMesh:
    corners = []
    for lineno, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if tok and tok[0] == "vertex":
            try:
                corners.append([float(x) for x in tok[1:4]])
            except (ValueError, IndexError):
                raise MeshFormatError(f"ASCII STL line {lineno}: bad vertex record {line.strip()!r}")
    if len(corners) % 3:
        raise MeshFormatError("ASCII STL: vertex count is not a multiple of 3")
    return _weld(np.asarray(corners, dtype=np.float64).reshape(-1, 3, 3))


def write_ply(mesh: TriangleMesh, path, colors: bool | None = None) -> None:
    """ASCII PLY with x, y, z and, if available, uchar red/green/blue."""
    use_colors = mesh.colors is not None if colors is None else colors
    if use_colors and mesh.colors is None:
        raise ValueError("mesh has no vertex colors")
    lines = [
        "ply",
        "format ascii 1.0",
        "comment headscan",
        f"element vertex {len(mesh.vertices)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if use_colors:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines += [f"element face {len(mesh.faces)}", "property list uchar int vertex_indices", "end_header"]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
        if use_colors:
            c = np.clip(mesh.colors.astype(np.int64), 0, 255)
            for p, rgb in zip(mesh.vertices, c):
                fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {rgb[0]} {rgb[1]} {rgb[2]}\n")
        else:
            for p in mesh.vertices:
                fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def read_ply(path) -> TriangleMesh:
    """ASCII PLY reader; polygons with more than 3 corners are fanned."""
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError(f"{path} line 1: missing 'ply' magic")
    elements = []  # (name, count, [(prop, type)])
    i = 1
    while True:
        if i >= len(lines):
            raise MeshFormatError(f"{path}: header has no end_header")
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise MeshFormatError(f"{path} line {i}: only ASCII PLY is supported, got {tok[1]}")
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise MeshFormatError(f"{path} line {i}: property before any element")
            elements[-1][2].append((tok[-1], tok[1]))
        elif tok[0] == "end_header":
            break
        else:
            raise MeshFormatError(f"{path} line {i}: unexpected header keyword {tok[0]!r}")

    vertices = colors = None
    faces = []
    for name, count, props in elements:
        if i + count > len(lines):
            raise MeshFormatError(f"{path}: element {name!r} expects {count} lines, file ends at line {len(lines)}")
        block = lines[i:i + count]
        start = i + 1
        i += count
        if name == "vertex":
            names = [p for p, _ in props]
            try:
                arr = np.array([[float(x) for x in ln.split()] for ln in block], dtype=np.float64)
            except ValueError as exc:
                raise MeshFormatError(f"{path}: bad vertex record near line {start}: {exc}")
            arr = arr.reshape(count, -1)
            if arr.shape[1] != len(names):
                raise MeshFormatError(f"{path} line {start}: vertex has {arr.shape[1]} values, header declares {len(names)}")
            vertices = arr[:, [names.index(k) for k in ("x", "y", "z")]]
            if all(k in names for k in ("red", "green", "blue")):
                colors = arr[:, [names.index(k) for k in ("red", "green", "blue")]].astype(np.uint8)
        elif name == "face":
            for k, ln in enumerate(block):
                tok = ln.split()
                try:
                    n = int(tok[0])
                    idx = [int(x) for x in tok[1:1 + n]]
                except (ValueError, IndexError):
                    raise MeshFormatError(f"{path} line {start + k}: bad face record {ln!r}")
                if len(idx) != n or n < 3:
                    raise MeshFormatError(f"{path} line {start + k}: face declares {n} corners")
                for j in range(1, n - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
    if vertices is None:
        raise MeshFormatError(f"{path}: no vertex element")
    return TriangleMesh(vertices, np.asarray(faces, dtype=np.int64).reshape(-1, 3), colors)


def write_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w", newline="\n") as fh:
        for p in mesh.vertices:
            fh.write("v %r %r %r\n" % (float(p[0]), float(p[1]), float(p[2])))
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


_OBJ_INDEX = re.compile(r"^(-?\d+)")


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            try:
                if tok[0] == "v":
                    verts.append([float(x) for x in tok[1:4]])
                elif tok[0] == "f":
                    idx = []
                    for t in tok[1:]:
                        k = int(_OBJ_INDEX.match(t).group(1))
                        idx.append(k - 1 if k > 0 else len(verts) + k)
                    for j in range(1, len(idx) - 1):
                        faces.append((idx[0], idx[j], idx[j + 1]))
            except (ValueError, AttributeError):
                raise MeshFormatError(f"{path} line {lineno}: cannot parse {line.strip()!r}")
    return TriangleMesh(np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def read_mesh(path) -> TriangleMesh:
    ext = os.path.splitext(str(path))[1].lower()
    readers = {".stl": read_stl, ".ply": read_ply, ".obj": read_obj}
    if ext not in readers:
        raise MeshFormatError(f"{path}: unknown mesh extension {ext!r}")
    return readers[ext](path)


def write_mesh(mesh: TriangleMesh, path) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    writers = {".stl": write_stl, ".ply": write_ply, ".obj": write_obj}
    if ext not in writers:
        raise MeshFormatError(f"{path}: unknown mesh extension {ext!r}")
    writers[ext](mesh, path)
