"""Readers and writers for PLY clouds/meshes, camera sidecars and dataset CSVs.

All functions work on byte buffers; file helpers are thin wrappers.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Union

import numpy as np

from .core import (
    FEATURE_NAMES,
    CameraPoses,
    Dataset,
    LeafAreaError,
    MeshFeatures,
    PointCloud,
    Sample,
    TriangleMesh,
    ValidationError,
)


class PlyError(LeafAreaError):
    pass


class PlyParseError(PlyError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class PlyTruncatedError(PlyError):
    pass


class PlyUnsupportedError(PlyError):
    pass


class SchemaError(LeafAreaError, ValueError):
    pass


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class _Element:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        self.props = []  # (name, dtype) or (name, (count_dtype, item_dtype))

    @property
    def has_list(self):
        return any(isinstance(t, tuple) for _, t in self.props)


def _parse_header(data: bytes):
    # Header lines are ASCII; find the end_header terminator
    pos = 0
    lines = []
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise PlyParseError("missing end_header", len(lines) + 1)
        line = data[pos:nl].decode("ascii", errors="replace").strip()
        lines.append(line)
        pos = nl + 1
        if line == "end_header":
            break
    if not lines or lines[0] != "ply":
        raise PlyParseError("file does not start with 'ply'", 1)
    fmt = None
    elements = []
    for lineno, line in enumerate(lines[1:-1], start=2):
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        kw = parts[0]
        if kw == "format":
            if len(parts) != 3:
                raise PlyParseError(f"bad format line {line!r}", lineno)
            if parts[1] == "binary_big_endian":
                raise PlyUnsupportedError("binary_big_endian PLY is not supported")
            if parts[1] not in ("ascii", "binary_little_endian") or parts[2] != "1.0":
                raise PlyParseError(f"unknown format {parts[1]} {parts[2]}", lineno)
            fmt = parts[1]
        elif kw == "element":
            if len(parts) != 3:
                raise PlyParseError(f"bad element line {line!r}", lineno)
            try:
                count = int(parts[2])
            except ValueError:
                raise PlyParseError(f"bad element count {parts[2]!r}", lineno) from None
            if count < 0:
                raise PlyParseError("negative element count", lineno)
            elements.append(_Element(parts[1], count))
        elif kw == "property":
            if not elements:
                raise PlyParseError("property before any element", lineno)
            if len(parts) == 5 and parts[1] == "list":
                if parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise PlyParseError(f"unknown list types in {line!r}", lineno)
                elements[-1].props.append((parts[4], (_PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
            elif len(parts) == 3:
                if parts[1] not in _PLY_TYPES:
                    raise PlyParseError(f"unknown property type {parts[1]!r}", lineno)
                elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]]))
            else:
                raise PlyParseError(f"bad property line {line!r}", lineno)
        else:
            raise PlyParseError(f"unexpected header keyword {kw!r}", lineno)
    if fmt is None:
        raise PlyParseError("missing format line", 2)
    return fmt, elements, pos


def _read_binary(data: bytes, pos: int, elements):
    out = {}
    for el in elements:
        if not el.has_list:
            dt = np.dtype([(n, "<" + t) for n, t in el.props])
            nbytes = dt.itemsize * el.count
            if pos + nbytes > len(data):
                raise PlyTruncatedError(f"element {el.name!r}: expected {el.count} records")
            out[el.name] = np.frombuffer(data, dtype=dt, count=el.count, offset=pos)
            pos += nbytes
            continue
        # fast path: single list property whose every record has the same length
        if len(el.props) == 1:
            name, (ct, it) = el.props[0]
            if el.count == 0:
                out[el.name] = {name: np.zeros((0, 3), dtype=np.int64)}
                continue
            if pos + np.dtype(ct).itemsize > len(data):
                raise PlyTruncatedError(f"element {el.name!r}: expected {el.count} records")
            k = int(np.frombuffer(data, dtype="<" + ct, count=1, offset=pos)[0])
            dt = np.dtype([("n", "<" + ct), ("v", "<" + it, (k,))])
            nbytes = dt.itemsize * el.count
            if k > 0 and pos + nbytes <= len(data):
                rec = np.frombuffer(data, dtype=dt, count=el.count, offset=pos)
                if np.all(rec["n"] == k):
                    out[el.name] = {name: rec["v"].astype(np.int64)}
                    pos += nbytes
                    continue
        rows = {n: [] for n, _ in el.props}
        for _ in range(el.count):
            for n, t in el.props:
                if isinstance(t, tuple):
                    ct, it = t
                    csz = np.dtype(ct).itemsize
                    if pos + csz > len(data):
                        raise PlyTruncatedError(f"element {el.name!r}: expected {el.count} records")
                    k = int(np.frombuffer(data, dtype="<" + ct, count=1, offset=pos)[0])
                    pos += csz
                    isz = np.dtype(it).itemsize * k
                    if pos + isz > len(data):
                        raise PlyTruncatedError(f"element {el.name!r}: expected {el.count} records")
                    rows[n].append(np.frombuffer(data, dtype="<" + it, count=k, offset=pos).astype(np.int64))
                    pos += isz
                else:
                    sz = np.dtype(t).itemsize
                    if pos + sz > len(data):
                        raise PlyTruncatedError(f"element {el.name!r}: expected {el.count} records")
                    rows[n].append(np.frombuffer(data, dtype="<" + t, count=1, offset=pos)[0])
                    pos += sz
        out[el.name] = rows
    return out


def _read_ascii(data: bytes, pos: int, elements, header_lines: int):
    body = data[pos:].decode("ascii", errors="replace").splitlines()
    out = {}
    cursor = 0
    for el in elements:
        if cursor + el.count > len(body):
            raise PlyTruncatedError(
                f"element {el.name!r}: header declares {el.count} records, "
                f"body has {max(len(body) - cursor, 0)}"
            )
        lines = body[cursor:cursor + el.count]
        cursor += el.count
        if not el.has_list:
            dt = np.dtype([(n, t) for n, t in el.props])
            arr = np.zeros(el.count, dtype=dt)
            nprops = len(el.props)
            for i, line in enumerate(lines):
                toks = line.split()
                if len(toks) != nprops:
                    raise PlyParseError(
                        f"expected {nprops} values, got {len(toks)}", header_lines + cursor - el.count + i + 1
                    )
                for (n, t), tok in zip(el.props, toks):
                    arr[n][i] = float(tok) if t.startswith("f") else int(tok)
            out[el.name] = arr
            continue
        rows = {n: [] for n, _ in el.props}
        for i, line in enumerate(lines):
            toks = line.split()
            j = 0
            try:
                for n, t in el.props:
                    if isinstance(t, tuple):
                        k = int(toks[j])
                        vals = toks[j + 1:j + 1 + k]
                        if len(vals) != k:
                            raise IndexError
                        rows[n].append(np.array([int(v) for v in vals], dtype=np.int64))
                        j += 1 + k
                    else:
                        rows[n].append(float(toks[j]) if t.startswith("f") else int(toks[j]))
                        j += 1
            except (IndexError, ValueError):
                raise PlyParseError(
                    f"malformed {el.name} record", header_lines + cursor - el.count + i + 1
                ) from None
        out[el.name] = rows
    return out


def _fan(faces) -> np.ndarray:
    if isinstance(faces, np.ndarray) and faces.ndim == 2:
        if faces.shape[1] == 3:
            return faces.astype(np.int64)
        faces = list(faces)
    tris = []
    for f in faces:
        f = np.asarray(f, dtype=np.int64)
        for i in range(1, len(f) - 1):
            tris.append((f[0], f[i], f[i + 1]))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def read_ply(data: bytes) -> Union[PointCloud, TriangleMesh]:
    """Parse an ASCII or binary little-endian PLY buffer.

    A ``face`` element makes the result a TriangleMesh (polygons are fan
    triangulated and near-coincident vertices welded); otherwise a PointCloud.
    """
    fmt, elements, pos = _parse_header(data)
    names = [e.name for e in elements]
    if "vertex" not in names:
        raise PlyParseError("no vertex element", 2)
    header_lines = data[:pos].count(b"\n")
    if fmt == "ascii":
        parsed = _read_ascii(data, pos, elements, header_lines)
    else:
        parsed = _read_binary(data, pos, elements)

    vert = parsed["vertex"]
    vprops = [n for n, _ in elements[names.index("vertex")].props]
    for axis in ("x", "y", "z"):
        if axis not in vprops:
            raise PlyParseError(f"vertex element lacks property {axis!r}", 2)
    pts = np.column_stack([np.asarray(vert[a], dtype=np.float64) for a in "xyz"]).reshape(-1, 3)

    if "face" in names:
        fel = elements[names.index("face")]
        list_props = [n for n, t in fel.props if isinstance(t, tuple)]
        key = "vertex_indices" if "vertex_indices" in list_props else (list_props[0] if list_props else None)
        if key is None:
            raise PlyParseError("face element has no list property", 2)
        tris = _fan(parsed["face"][key])
        if len(tris) and (tris.min() < 0 or tris.max() >= len(pts)):
            raise PlyParseError("face index out of range", 2)
        mesh = TriangleMesh(pts, tris)
        return _weld_if_needed(mesh)

    colors = None
    if all(c in vprops for c in ("red", "green", "blue")):
        colors = np.column_stack([np.asarray(vert[c]) for c in ("red", "green", "blue")])
        colors = colors.reshape(-1, 3).astype(np.int64)
    normals = None
    if all(c in vprops for c in ("nx", "ny", "nz")):
        normals = np.column_stack([np.asarray(vert[c], dtype=np.float64) for c in ("nx", "ny", "nz")])
        normals = normals.reshape(-1, 3)
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        # float32 storage loses unit length beyond 1e-6; renormalize
        if len(normals) and np.max(np.abs(norm - 1)) > 1e-6:
            normals = normals / np.where(norm > 0, norm, 1.0)
    return PointCloud(pts, colors, normals)


def _weld_if_needed(mesh: TriangleMesh) -> TriangleMesh:
    if len(mesh.vertices) < 2:
        return mesh
    from scipy.spatial import cKDTree

    diag = float(np.linalg.norm(np.ptp(mesh.vertices, axis=0)))
    tol = 1e-6 * diag
    if tol > 0 and cKDTree(mesh.vertices).query_pairs(tol):
        return mesh.weld(tol)
    return mesh


def write_ply(obj: Union[PointCloud, TriangleMesh], ascii: bool = False) -> bytes:
    """Serialize a cloud or mesh. Coordinates are written as float64."""
    if isinstance(obj, TriangleMesh):
        pts, colors, normals, tris = obj.vertices, None, None, obj.triangles
    elif isinstance(obj, PointCloud):
        pts, colors, normals, tris = obj.points, obj.colors, obj.normals, None
    else:
        raise TypeError(f"cannot write {type(obj).__name__} as PLY")
    fmt = "ascii" if ascii else "binary_little_endian"
    head = ["ply", f"format {fmt} 1.0", f"element vertex {len(pts)}"]
    head += [f"property double {a}" for a in "xyz"]
    if normals is not None:
        head += [f"property double {a}" for a in ("nx", "ny", "nz")]
    if colors is not None:
        head += [f"property uchar {c}" for c in ("red", "green", "blue")]
    if tris is not None:
        head += [f"element face {len(tris)}", "property list uchar int vertex_indices"]
    head.append("end_header")
    header = ("\n".join(head) + "\n").encode("ascii")

    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if normals is not None:
        fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.zeros(len(pts), dtype=fields)
    for i, a in enumerate("xyz"):
        rec[a] = pts[:, i]
    if normals is not None:
        for i, a in enumerate(("nx", "ny", "nz")):
            rec[a] = normals[:, i]
    if colors is not None:
        for i, a in enumerate(("red", "green", "blue")):
            rec[a] = colors[:, i]

    if not ascii:
        body = rec.tobytes()
        if tris is not None:
            frec = np.zeros(len(tris), dtype=[("n", "u1"), ("v", "<i4", (3,))])
            frec["n"] = 3
            frec["v"] = tris
            body += frec.tobytes()
        return header + body

    buf = io.StringIO()
    for row in rec:
        toks = []
        for name, t in fields:
            v = row[name]
            toks.append(repr(float(v)) if t.endswith("f8") else str(int(v)))
        buf.write(" ".join(toks) + "\n")
    if tris is not None:
        for a, b, c in tris:
            buf.write(f"3 {a} {b} {c}\n")
    return header + buf.getvalue().encode("ascii")


def load_ply(path) -> Union[PointCloud, TriangleMesh]:
    return read_ply(Path(path).read_bytes())


def save_ply(path, obj, ascii: bool = False) -> None:
    Path(path).write_bytes(write_ply(obj, ascii=ascii))


# camera sidecar ------------------------------------------------------------

def read_camera_poses(data: bytes) -> CameraPoses:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"camera sidecar is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("positions"), list):
        raise SchemaError('camera sidecar must be an object with a "positions" array')
    rows = doc["positions"]
    for i, p in enumerate(rows):
        if not isinstance(p, list) or len(p) != 3 or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in p
        ):
            raise SchemaError(f"positions[{i}] must be a 3-element numeric array")
    return CameraPoses(np.array(rows, dtype=np.float64).reshape(-1, 3))


def write_camera_poses(poses: CameraPoses) -> bytes:
    return json.dumps({"positions": poses.positions.tolist()}).encode("utf-8")


# dataset CSV ----------------------------------------------------------------

CSV_COLUMNS = (
    "plant_id", "cultivar", "experiment", "layer",
    "height_cm", "length_cm", "width_cm", "aspect_ratio", "volume_cm3",
    "surface_area_cm2", "bbox_area_cm2", "bbox_volume_cm3", "n_components",
    "tla_cm2",
)
_FEATURE_COLUMNS = dict(zip(CSV_COLUMNS[4:13], FEATURE_NAMES))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset_csv(dataset: Dataset) -> bytes:
    """Serialize a dataset. Samples without features get empty feature cells."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in dataset:
        row = [s.plant_id, s.cultivar.value, int(s.experiment), int(s.layer)]
        if s.features is None:
            row += [""] * 9
        else:
            f = s.features
            row += [_fmt(getattr(f, n)) for n in FEATURE_NAMES[:-1]] + [int(f.n_components)]
        row.append(_fmt(s.tla))
        w.writerow(row)
    return buf.getvalue().encode("utf-8")


def read_dataset_csv(data: bytes) -> Dataset:
    text = data.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("dataset CSV is empty (header is mandatory)") from None
    if tuple(header) != CSV_COLUMNS:
        raise SchemaError(f"unexpected CSV header {header!r}")
    samples = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise SchemaError(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        rec = dict(zip(CSV_COLUMNS, row))
        try:
            feats = [rec[c] for c in CSV_COLUMNS[4:13]]
            if all(v == "" for v in feats):
                features = None
            else:
                vals = {_FEATURE_COLUMNS[c]: float(rec[c]) for c in CSV_COLUMNS[4:12]}
                features = MeshFeatures(**vals, n_components=int(rec["n_components"]))
            tla = float(rec["tla_cm2"])
            if not math.isfinite(tla):
                raise ValueError("non-finite tla")
            samples.append(Sample(
                plant_id=rec["plant_id"],
                cultivar=rec["cultivar"],
                experiment=int(rec["experiment"]),
                layer=int(rec["layer"]),
                features=features,
                tla=tla,
            ))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    return Dataset(tuple(samples))
