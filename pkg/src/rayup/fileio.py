"""Readers and writers for XYZ, PLY and OFF files."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import PointCloud, as_points


class ParseError(ValueError):
    pass


def read_xyz(path) -> PointCloud:
    pts = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
            try:
                pts.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
    return PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3), tag=Path(path).stem)


def write_xyz(path, cloud) -> None:
    np.savetxt(path, as_points(cloud), fmt="%.9g")


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _ply_type(name: str, lineno: int) -> str:
    try:
        return _PLY_TYPES[name]
    except KeyError:
        raise ParseError(f"header line {lineno}: unknown property type {name!r}") from None


def _parse_ply_header(fh):
    if fh.readline().strip() != b"ply":
        raise ParseError("missing 'ply' magic")
    fmt = None
    elements: list[dict] = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("unexpected end of file in header")
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"header line {lineno}: unsupported format {' '.join(parts[1:])!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"header line {lineno}: property before element")
            if parts[1] == "list":
                elements[-1]["props"].append((parts[4], _ply_type(parts[2], lineno),
                                              _ply_type(parts[3], lineno)))
            else:
                elements[-1]["props"].append((parts[2], _ply_type(parts[1], lineno), None))
        elif parts[0] == "end_header":
            break
        else:
            raise ParseError(f"header line {lineno}: unexpected keyword {parts[0]!r}")
    if fmt is None:
        raise ParseError("missing format line")
    return fmt, elements


def read_ply(path) -> PointCloud:
    """Vertex x/y/z from ASCII or binary little-endian PLY; other elements are skipped."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        body = fh.read()
    if not any(e["name"] == "vertex" for e in elements):
        raise ParseError("no vertex element")
    verts = None
    if fmt == "ascii":
        lines = body.decode("ascii", errors="replace").splitlines()
        pos = 0
        for el in elements:
            rows = []
            for r in range(el["count"]):
                while pos < len(lines) and not lines[pos].strip():
                    pos += 1
                if pos >= len(lines):
                    raise ParseError(f"element {el['name']!r}: expected {el['count']} rows, got {r}")
                tokens = lines[pos].split()
                pos += 1
                if el["name"] == "vertex":
                    row, t = {}, 0
                    try:
                        for name, typ, item in el["props"]:
                            if item is None:
                                row[name] = float(tokens[t])
                                t += 1
                            else:
                                t += 1 + int(tokens[t])
                    except (IndexError, ValueError):
                        raise ParseError(f"body row {pos}: malformed vertex") from None
                    rows.append(row)
            if el["name"] == "vertex":
                verts = rows
                break
        try:
            pts = np.array([[r["x"], r["y"], r["z"]] for r in verts], dtype=np.float64)
        except KeyError:
            raise ParseError("vertex element lacks x/y/z") from None
        return PointCloud(pts.reshape(-1, 3), tag=Path(path).stem)

    off = 0
    for el in elements:
        if any(item is not None for _, _, item in el["props"]):
            if el["name"] == "vertex":
                raise ParseError("list properties on vertices are not supported in binary PLY")
            for _ in range(el["count"]):
                for _, ctype, item in el["props"]:
                    if item is None:
                        off += np.dtype(ctype).itemsize
                    else:
                        n = int(np.frombuffer(body, dtype="<" + ctype, count=1, offset=off)[0])
                        off += np.dtype(ctype).itemsize + n * np.dtype(item).itemsize
            continue
        dtype = np.dtype([(name, "<" + typ) for name, typ, _ in el["props"]])
        need = dtype.itemsize * el["count"]
        if off + need > len(body):
            raise ParseError(f"element {el['name']!r}: truncated binary data")
        if el["name"] == "vertex":
            arr = np.frombuffer(body, dtype=dtype, count=el["count"], offset=off)
            if not all(n in arr.dtype.names for n in "xyz"):
                raise ParseError("vertex element lacks x/y/z")
            pts = np.column_stack([arr["x"], arr["y"], arr["z"]]).astype(np.float64)
            return PointCloud(pts, tag=Path(path).stem)
        off += need
    raise ParseError("no vertex element")


def write_ply(path, cloud, binary: bool = True) -> None:
    pts = np.ascontiguousarray(as_points(cloud), dtype="<f8")
    header = ("ply\n"
              f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
              f"element vertex {len(pts)}\n"
              "property double x\nproperty double y\nproperty double z\nend_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(pts.tobytes())
        else:
            for p in pts:
                fh.write(("%.17g %.17g %.17g\n" % tuple(p)).encode("ascii"))


def read_off(path) -> tuple[np.ndarray, np.ndarray]:
    """Vertices (V, 3) and fan-triangulated faces (F, 3)."""
    with open(path) as fh:
        lines = [(i, ln.split("#", 1)[0].split()) for i, ln in enumerate(fh, 1)]
    lines = [(i, p) for i, p in lines if p]
    if not lines:
        raise ParseError(f"{path}: empty file")
    first_no, first = lines[0]
    if first[0] != "OFF" and not first[0].endswith("OFF"):
        raise ParseError(f"{path}:{first_no}: missing OFF header")
    rest = first[1:]
    pos = 1
    if not rest:
        first_no, rest = lines[1]
        pos = 2
    try:
        nv, nf = int(rest[0]), int(rest[1])
    except (IndexError, ValueError):
        raise ParseError(f"{path}:{first_no}: bad counts line") from None
    if len(lines) < pos + nv + nf:
        raise ParseError(f"{path}: expected {nv} vertices and {nf} faces")
    verts = np.empty((nv, 3))
    for r in range(nv):
        lineno, p = lines[pos + r]
        try:
            verts[r] = [float(v) for v in p[:3]]
        except (ValueError, IndexError):
            raise ParseError(f"{path}:{lineno}: malformed vertex") from None
    faces = []
    for r in range(nf):
        lineno, p = lines[pos + nv + r]
        try:
            n = int(p[0])
            idx = [int(v) for v in p[1:1 + n]]
        except (ValueError, IndexError):
            raise ParseError(f"{path}:{lineno}: malformed face") from None
        if len(idx) != n or n < 3:
            raise ParseError(f"{path}:{lineno}: face needs at least 3 indices")
        bad = [v for v in idx if not 0 <= v < nv]
        if bad:
            raise ParseError(f"{path}:{lineno}: face index {bad[0]} out of range for {nv} vertices")
        for j in range(1, n - 1):
            faces.append((idx[0], idx[j], idx[j + 1]))
    return verts, np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def write_off(path, vertices, faces) -> None:
    with open(path, "w") as fh:
        fh.write(f"OFF\n{len(vertices)} {len(faces)} 0\n")
        for v in vertices:
            fh.write("%.17g %.17g %.17g\n" % tuple(v))
        for f in faces:
            fh.write(f"{len(f)} " + " ".join(str(int(i)) for i in f) + "\n")


def read_cloud(path) -> PointCloud:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".off":
        v, _ = read_off(path)
        return PointCloud(v, tag=Path(path).stem)
    return read_xyz(path)


def write_cloud(path, cloud) -> None:
    if Path(path).suffix.lower() == ".ply":
        write_ply(path, cloud)
    else:
        write_xyz(path, cloud)
