"""OBJ and PLY readers/writers for vertex-colored triangle meshes."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .mesh import Mesh, MeshError


class MeshParseError(MeshError):
    pass


def _fan(poly: list[int]) -> list[tuple[int, int, int]]:
    return [(poly[0], poly[k], poly[k + 1]) for k in range(1, len(poly) - 1)]


def _load_obj(path: Path) -> Mesh:
    verts, colors, faces = [], [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                try:
                    vals = [float(x) for x in parts[1:]]
                except ValueError:
                    raise MeshParseError(f"{path}:{lineno}: malformed vertex record") from None
                if len(vals) not in (3, 4, 6, 7):
                    raise MeshParseError(f"{path}:{lineno}: vertex record needs 3 or 6 values")
                if not all(np.isfinite(vals)):
                    raise MeshParseError(f"{path}:{lineno}: non-finite vertex coordinate")
                verts.append(vals[:3])
                colors.append(vals[3:6] if len(vals) >= 6 else None)
            elif tag == "f":
                poly = []
                for tok in parts[1:]:
                    try:
                        idx = int(tok.split("/")[0])
                    except ValueError:
                        raise MeshParseError(f"{path}:{lineno}: malformed face index {tok!r}") from None
                    if idx == 0:
                        raise MeshParseError(f"{path}:{lineno}: face index 0 (OBJ indices are 1-based)")
                    # negative indices count back from the most recent vertex
                    idx = idx - 1 if idx > 0 else len(verts) + idx
                    if not 0 <= idx < len(verts):
                        raise MeshParseError(f"{path}:{lineno}: face index {tok} out of range")
                    poly.append(idx)
                if len(poly) < 3:
                    raise MeshParseError(f"{path}:{lineno}: face with fewer than 3 vertices")
                faces.extend(_fan(poly))
    has_colors = len(colors) > 0 and all(c is not None for c in colors)
    return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                np.array(faces, dtype=np.int64).reshape(-1, 3),
                np.clip(np.array(colors, dtype=np.float64), 0.0, 1.0) if has_colors else None)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise MeshParseError(f"{path}: missing 'ply' magic")
    fmt = None
    elements = []  # (name, count, [(prop, dtype) | (prop, count_dtype, item_dtype)])
    while True:
        line = fh.readline()
        if not line:
            raise MeshParseError(f"{path}: unterminated PLY header")
        parts = line.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshParseError(f"{path}: property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
            else:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        elif parts[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshParseError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements


def _colors_from(fields: dict, n: int):
    if not all(k in fields for k in ("red", "green", "blue")):
        return None
    cols = []
    for k in ("red", "green", "blue"):
        arr, dt = fields[k]
        arr = np.asarray(arr, dtype=np.float64)
        cols.append(arr / 255.0 if np.dtype(dt).kind in "ui" else arr)
    return np.clip(np.stack(cols, axis=1), 0.0, 1.0)


def _load_ply(path: Path) -> Mesh:
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh, path)
        verts = colors = None
        faces: list = []
        if fmt == "ascii":
            lines = iter(fh.read().decode("ascii", errors="replace").splitlines())
            for name, count, props in elements:
                rows = []
                for i in range(count):
                    try:
                        rows.append(next(lines).split())
                    except StopIteration:
                        raise MeshParseError(f"{path}: truncated {name} element at row {i}") from None
                if name == "vertex":
                    verts, colors = _ascii_vertices(rows, props, path)
                elif name == "face":
                    faces = _ascii_faces(rows, props, path)
        else:
            for name, count, props in elements:
                if name == "vertex":
                    if any(len(p) == 3 for p in props):
                        raise MeshParseError(f"{path}: list property in vertex element")
                    dt = np.dtype([(p[0], "<" + p[1]) for p in props])
                    data = np.frombuffer(fh.read(dt.itemsize * count), dtype=dt)
                    if len(data) != count:
                        raise MeshParseError(f"{path}: truncated vertex element")
                    fields = {p[0]: (data[p[0]], p[1]) for p in props}
                    verts = np.stack([data[k].astype(np.float64) for k in ("x", "y", "z")], axis=1)
                    colors = _colors_from(fields, count)
                elif name == "face":
                    faces = _binary_faces(fh, count, props, path)
                else:
                    if any(len(p) == 3 for p in props):
                        raise MeshParseError(f"{path}: cannot skip list-valued element {name!r}")
                    fh.read(sum(np.dtype(p[1]).itemsize for p in props) * count)
    if verts is None:
        raise MeshParseError(f"{path}: no vertex element")
    bad = ~np.all(np.isfinite(verts), axis=1)
    if bad.any():
        raise MeshParseError(f"{path}: vertex {int(np.argmax(bad))} has non-finite coordinates")
    tris = []
    for i, poly in enumerate(faces):
        if len(poly) < 3:
            raise MeshParseError(f"{path}: face {i} has fewer than 3 vertices")
        if min(poly) < 0 or max(poly) >= len(verts):
            raise MeshParseError(f"{path}: face {i} index out of range")
        tris.extend(_fan(list(poly)))
    return Mesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3), colors)


def _ascii_vertices(rows, props, path):
    names = [p[0] for p in props]
    try:
        table = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    except ValueError:
        raise MeshParseError(f"{path}: malformed vertex rows") from None
    fields = {n: (table[:, i], props[i][1]) for i, n in enumerate(names)}
    verts = np.stack([fields[k][0] for k in ("x", "y", "z")], axis=1)
    return verts, _colors_from(fields, len(rows))


def _ascii_faces(rows, props, path):
    out = []
    for i, row in enumerate(rows):
        try:
            n = int(row[0])
            out.append([int(x) for x in row[1:1 + n]])
        except (ValueError, IndexError):
            raise MeshParseError(f"{path}: malformed face row {i}") from None
        if len(out[-1]) != n:
            raise MeshParseError(f"{path}: face row {i} truncated")
    return out


def _binary_faces(fh, count, props, path):
    if len(props) != 1 or len(props[0]) != 3:
        raise MeshParseError(f"{path}: face element must hold a single index list")
    _, cdt, idt = props[0]
    csize, isize = np.dtype(cdt).itemsize, np.dtype(idt).itemsize
    # fast path: every face is a triangle
    pos = fh.tell()
    blob = fh.read(count * (csize + 3 * isize))
    tri_dt = np.dtype([("n", "<" + cdt), ("i", "<" + idt, (3,))])
    if len(blob) == count * tri_dt.itemsize:
        data = np.frombuffer(blob, dtype=tri_dt)
        if np.all(data["n"] == 3):
            return data["i"].astype(np.int64).tolist()
    fh.seek(pos)
    out = []
    for i in range(count):
        head = fh.read(csize)
        if len(head) != csize:
            raise MeshParseError(f"{path}: truncated face {i}")
        n = int(np.frombuffer(head, dtype="<" + cdt)[0])
        body = fh.read(n * isize)
        if len(body) != n * isize:
            raise MeshParseError(f"{path}: truncated face {i}")
        out.append(np.frombuffer(body, dtype="<" + idt).astype(np.int64).tolist())
    return out


def load_mesh(path) -> Mesh:
    """Read an OBJ or PLY file. Polygons are fan-triangulated."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mesh file not found: {path}")
    ext = path.suffix.lower()
    if ext == ".obj":
        return _load_obj(path)
    if ext == ".ply":
        return _load_ply(path)
    raise MeshParseError(f"{path}: unsupported mesh format {ext!r} (expected .obj or .ply)")


def quantize_colors(colors: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)


def save_ply(mesh: Mesh, path, binary: bool = False) -> None:
    path = Path(path)
    head = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
            f"element vertex {mesh.n_vertices}",
            "property float x", "property float y", "property float z"]
    if mesh.has_colors:
        head += ["property uchar red", "property uchar green", "property uchar blue"]
    head += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
            if mesh.has_colors:
                fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            v = np.empty(mesh.n_vertices, dtype=fields)
            v["x"], v["y"], v["z"] = mesh.vertices.T
            if mesh.has_colors:
                q = quantize_colors(mesh.vertex_colors)
                v["red"], v["green"], v["blue"] = q.T
            fh.write(v.tobytes())
            f = np.empty(mesh.n_faces, dtype=[("n", "u1"), ("i", "<i4", (3,))])
            f["n"] = 3
            f["i"] = mesh.faces
            fh.write(f.tobytes())
        else:
            q = quantize_colors(mesh.vertex_colors) if mesh.has_colors else None
            lines = []
            for i, p in enumerate(mesh.vertices):
                row = f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}"
                if q is not None:
                    row += f" {q[i, 0]} {q[i, 1]} {q[i, 2]}"
                lines.append(row)
            lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.faces)
            fh.write(("\n".join(lines) + "\n").encode("ascii"))


def save_obj(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if mesh.has_colors:
            for p, c in zip(mesh.vertices, mesh.vertex_colors):
                fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]:.6f} {c[1]:.6f} {c[2]:.6f}\n")
        else:
            for p in mesh.vertices:
                fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a} {b} {c}\n")


def save_mesh(mesh: Mesh, path, binary: bool = False) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        save_ply(mesh, path, binary=binary)
    elif ext == ".obj":
        save_obj(mesh, path)
    else:
        raise MeshParseError(f"unsupported mesh format {ext!r}")
