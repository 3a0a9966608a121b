"""OBJ / PLY / XYZ loading and colored mesh export.

Loading is tolerant of the asset-zoo variants that actually occur: polygon
faces are fan-triangulated, negative OBJ indices resolved, PLY handled in
ascii and binary little/big endian.  Duplicate vertices are kept as-is;
welding would break assets that use duplication for hard edges.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import GeometryError, Mesh


class MeshParseError(GeometryError):
    pass


def load_mesh(path) -> Mesh:
    """Load a triangle mesh from .obj or .ply (faces required)."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".obj":
        return _load_obj(path)
    if ext == ".ply":
        mesh = _load_ply(path)
        if len(mesh.faces) == 0:
            raise MeshParseError(f"{path.name}: PLY has no faces; use load_pointcloud")
        return mesh
    raise MeshParseError(f"unsupported mesh format: {path.suffix}")


def load_pointcloud(path) -> np.ndarray:
    """Load points (n, 3) from .xyz text or a faceless .ply."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".xyz":
        pts = []
        for i, line in enumerate(path.read_text().splitlines()):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3:
                raise MeshParseError(f"{path.name}:{i + 1}: expected 3 coordinates")
            pts.append([float(v) for v in parts[:3]])
        if not pts:
            raise MeshParseError(f"{path.name}: empty point cloud")
        return np.asarray(pts, dtype=np.float64)
    if ext == ".ply":
        mesh = _load_ply(path, allow_pointcloud=True)
        return mesh.vertices
    raise MeshParseError(f"unsupported point cloud format: {path.suffix}")


def is_pointcloud_file(path) -> bool:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".xyz":
        return True
    if ext == ".ply":
        try:
            header, _, _ = _parse_ply_header(path.read_bytes())
        except MeshParseError:
            return False
        return header.get("face", (0, []))[0] == 0
    return False


def _load_obj(path: Path) -> Mesh:
    verts: list = []
    vcolors: list = []
    vnormals: list = []
    faces: list = []
    corner_normal: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(parts) >= 7:
                    vcolors.append([float(x) for x in parts[4:7]])
            elif tag == "vn":
                vnormals.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                corners = []
                for token in parts[1:]:
                    fields = token.split("/")
                    vi = int(fields[0])
                    vi = vi - 1 if vi > 0 else len(verts) + vi
                    ni = None
                    if len(fields) >= 3 and fields[2]:
                        ni = int(fields[2])
                        ni = ni - 1 if ni > 0 else len(vnormals) + ni
                    corners.append((vi, ni))
                for a in range(1, len(corners) - 1):
                    faces.append([corners[0][0], corners[a][0], corners[a + 1][0]])
                for vi, ni in corners:
                    if ni is not None:
                        corner_normal[vi] = ni
        except (ValueError, IndexError) as exc:
            raise MeshParseError(f"{path.name}:{lineno}: {exc}") from exc
    if not verts:
        raise MeshParseError(f"{path.name}: no vertices")
    if not faces:
        raise MeshParseError(f"{path.name}: no faces")
    v = np.asarray(verts, dtype=np.float64)
    normals = None
    if corner_normal and len(corner_normal) == len(v):
        vn = np.asarray(vnormals, dtype=np.float64)
        normals = np.empty_like(v)
        for vi, ni in corner_normal.items():
            normals[vi] = vn[ni]
        normals = _unitize_normals(normals)
    colors = None
    if len(vcolors) == len(v):
        colors = np.clip(np.asarray(vcolors, dtype=np.float64), 0.0, 1.0)
    return Mesh(v, np.asarray(faces, dtype=np.int64), normals, colors)


def _unitize_normals(normals):
    """Keep already-unit normals bit-identical, rescale off-unit ones."""
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    if (lengths <= 0).any():
        return None
    if len(lengths) and np.abs(lengths - 1.0).max() <= 1e-6:
        return normals
    return normals / lengths


_PLY_DTYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(data: bytes):
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise MeshParseError("not a PLY file")
    header_text = data[:end].decode("ascii", errors="replace")
    body = data[end + len(b"end_header\n"):]
    fmt = None
    elements: dict = {}
    order: list = []
    current = None
    for line in header_text.splitlines():
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            current = parts[1]
            elements[current] = (int(parts[2]), [])
            order.append(current)
        elif parts[0] == "property" and current is not None:
            count, props = elements[current]
            if parts[1] == "list":
                props.append(("list", parts[2], parts[3], parts[4]))
            else:
                props.append(("scalar", parts[1], parts[2]))
    if fmt is None:
        raise MeshParseError("PLY header missing format line")
    elements["__order__"] = order
    return elements, fmt, body


def _load_ply(path: Path, allow_pointcloud: bool = False) -> Mesh:
    data = path.read_bytes()
    elements, fmt, body = _parse_ply_header(data)
    order = elements.pop("__order__")
    if fmt == "ascii":
        rows = body.decode("ascii").split()
        pos = 0
        parsed = {}
        for name in order:
            count, props = elements[name]
            cols: dict = {p[-1]: [] for p in props if p[0] == "scalar"}
            lists: dict = {p[-1]: [] for p in props if p[0] == "list"}
            for _ in range(count):
                for p in props:
                    if p[0] == "scalar":
                        cols[p[-1]].append(float(rows[pos])); pos += 1
                    else:
                        k = int(rows[pos]); pos += 1
                        lists[p[-1]].append([float(rows[pos + j]) for j in range(k)])
                        pos += k
            parsed[name] = (cols, lists)
    else:
        endian = "<" if fmt == "binary_little_endian" else ">"
        offset = 0
        parsed = {}
        for name in order:
            count, props = elements[name]
            if all(p[0] == "scalar" for p in props):
                dtype = np.dtype([(p[2], endian + _PLY_DTYPES[p[1]]) for p in props])
                arr = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
                offset += dtype.itemsize * count
                parsed[name] = ({p[2]: arr[p[2]].astype(np.float64) for p in props}, {})
            else:
                cols = {p[-1]: [] for p in props if p[0] == "scalar"}
                lists = {p[-1]: [] for p in props if p[0] == "list"}
                for _ in range(count):
                    for p in props:
                        if p[0] == "scalar":
                            np_t = np.dtype(endian + _PLY_DTYPES[p[1]])
                            cols[p[-1]].append(
                                float(np.frombuffer(body, np_t, 1, offset)[0]))
                            offset += np_t.itemsize
                        else:
                            cnt_t = np.dtype(endian + _PLY_DTYPES[p[1]])
                            val_t = np.dtype(endian + _PLY_DTYPES[p[2]])
                            k = int(np.frombuffer(body, cnt_t, 1, offset)[0])
                            offset += cnt_t.itemsize
                            vals = np.frombuffer(body, val_t, k, offset)
                            offset += val_t.itemsize * k
                            lists[p[-1]].append(vals.astype(np.float64).tolist())
                parsed[name] = ({k: np.asarray(v) for k, v in cols.items()}, lists)
    if "vertex" not in parsed:
        raise MeshParseError(f"{path.name}: PLY missing vertex element")
    cols, _ = parsed["vertex"]
    try:
        verts = np.stack([np.asarray(cols[c], dtype=np.float64) for c in "xyz"], axis=1)
    except KeyError as exc:
        raise MeshParseError(f"{path.name}: PLY vertex missing coordinate {exc}") from exc
    normals = None
    if all(c in cols for c in ("nx", "ny", "nz")):
        normals = np.stack([np.asarray(cols[c], np.float64) for c in ("nx", "ny", "nz")], 1)
        normals = _unitize_normals(normals)
    colors = None
    if all(c in cols for c in ("red", "green", "blue")):
        colors = np.stack([np.asarray(cols[c], np.float64) for c in ("red", "green", "blue")], 1)
        colors = np.clip(colors / 255.0, 0.0, 1.0)
    faces = []
    if "face" in parsed:
        _, lists = parsed["face"]
        for key in ("vertex_indices", "vertex_index"):
            if key in lists:
                for poly in lists[key]:
                    idx = [int(i) for i in poly]
                    for a in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[a], idx[a + 1]])
                break
    if not faces and not allow_pointcloud:
        raise MeshParseError(f"{path.name}: PLY has no faces")
    return Mesh(verts, np.asarray(faces, dtype=np.int64).reshape(-1, 3), normals, colors)


def save_ply(path, mesh: Mesh) -> None:
    """Binary little-endian PLY; positions kept at full double precision so
    re-import is lossless, colors quantized to uchar when present."""
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(mesh.vertices)}",
              "property double x", "property double y", "property double z"]
    if mesh.normals is not None:
        fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
        header += ["property double nx", "property double ny", "property double nz"]
    if mesh.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {len(mesh.faces)}",
               "property list uchar int vertex_indices", "end_header"]
    vdata = np.zeros(len(mesh.vertices), dtype=np.dtype(fields))
    for i, c in enumerate("xyz"):
        vdata[c] = mesh.vertices[:, i]
    if mesh.normals is not None:
        for i, c in enumerate(("nx", "ny", "nz")):
            vdata[c] = mesh.normals[:, i]
    if mesh.colors is not None:
        rgb = np.rint(np.clip(mesh.colors, 0.0, 1.0) * 255.0).astype(np.uint8)
        for i, c in enumerate(("red", "green", "blue")):
            vdata[c] = rgb[:, i]
    fdata = np.zeros(len(mesh.faces), dtype=np.dtype([("n", "u1"), ("idx", "<i4", (3,))]))
    fdata["n"] = 3
    fdata["idx"] = mesh.faces.astype(np.int32)
    blob = ("\n".join(header) + "\n").encode("ascii") + vdata.tobytes() + fdata.tobytes()
    Path(path).write_bytes(blob)


def save_obj(path, mesh: Mesh) -> None:
    """OBJ with the common per-vertex color extension (v x y z r g b)."""
    lines = []
    if mesh.colors is not None:
        rgb = np.rint(np.clip(mesh.colors, 0.0, 1.0) * 255.0) / 255.0
        for p, c in zip(mesh.vertices, rgb):
            lines.append(
                f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {c[0]:.9f} {c[1]:.9f} {c[2]:.9f}")
    else:
        for p in mesh.vertices:
            lines.append(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}")
    if mesh.normals is not None:
        for n in mesh.normals:
            lines.append(f"vn {n[0]:.17g} {n[1]:.17g} {n[2]:.17g}")
        for f in mesh.faces + 1:
            lines.append(f"f {f[0]}//{f[0]} {f[1]}//{f[1]} {f[2]}//{f[2]}")
    else:
        for f in mesh.faces + 1:
            lines.append(f"f {f[0]} {f[1]} {f[2]}")
    Path(path).write_text("\n".join(lines) + "\n")
