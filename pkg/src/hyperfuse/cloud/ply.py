"""PLY point clouds (ASCII and binary little-endian) and the HFD1 descriptor sidecar."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..descriptors import DESCRIPTOR_DIM, dequantize, quantize
from ..errors import IoFailure, MalformedHeader, TruncatedPayload, UnsupportedProperty

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_PLY_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
              "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}

SIDECAR_MAGIC = b"HFD1"
_SIDECAR_RECORD = 4 + DESCRIPTOR_DIM


@dataclass
class PointCloud:
    """Points with optional colors, extra vertex properties and descriptors.

    Descriptors are stored flat: row ``i`` of ``descriptors`` belongs to point
    ``descriptor_point_ids[i]``; a point may own several rows.
    """

    points: np.ndarray
    colors: np.ndarray | None = None
    descriptor_point_ids: np.ndarray | None = None
    descriptors: np.ndarray | None = None
    properties: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if self.colors is not None and len(self.colors) != n:
            raise MalformedHeader("colors do not align with points")
        if (self.descriptors is None) != (self.descriptor_point_ids is None):
            raise MalformedHeader("descriptors and descriptor_point_ids must be given together")
        if self.descriptors is not None:
            self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
            self.descriptor_point_ids = np.asarray(self.descriptor_point_ids, dtype=np.int64)
            if len(self.descriptors) != len(self.descriptor_point_ids):
                raise MalformedHeader("descriptor rows do not align with their point ids")
            ids = self.descriptor_point_ids
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise MalformedHeader(
                    f"descriptor references point id {int(ids.max())} but cloud has {n} points"
                )

    def __len__(self):
        return len(self.points)

    @property
    def has_descriptors(self) -> bool:
        return self.descriptors is not None and len(self.descriptors) > 0


@dataclass
class _Element:
    name: str
    count: int
    props: list[tuple[str, str]]  # (name, numpy kind); kind "list" for list properties


def _parse_header(data: bytes) -> tuple[str, list[_Element], int]:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MalformedHeader("not a PLY file (missing 'ply' magic or 'end_header')")
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    try:
        lines = data[:end].decode("ascii").splitlines()[1:]
    except UnicodeDecodeError:
        raise MalformedHeader("non-ASCII header") from None

    fmt = None
    elements: list[_Element] = []
    for raw in lines:
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2:
                raise MalformedHeader(raw)
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise MalformedHeader(raw)
            elements.append(_Element(tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            if len(tok) == 5 and tok[1] == "list":
                elements[-1].props.append((tok[4], "list"))
            elif len(tok) == 3 and tok[1] in PLY_TYPES:
                elements[-1].props.append((tok[2], PLY_TYPES[tok[1]]))
            else:
                raise MalformedHeader(raw)
        else:
            raise MalformedHeader(raw)
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedHeader(f"unsupported PLY format {fmt!r}")
    return fmt, elements, body_start


def read_ply_vertices(data: bytes) -> np.ndarray:
    """Vertex element of a PLY file as a numpy structured array."""
    fmt, elements, pos = _parse_header(data)
    vertex = None
    skip_binary = 0
    skip_ascii = 0
    for el in elements:
        if el.name == "vertex":
            vertex = el
            break
        if any(kind == "list" for _, kind in el.props):
            if fmt != "ascii":
                raise UnsupportedProperty(f"list property in element {el.name!r} before vertex")
        else:
            skip_binary += el.count * sum(np.dtype(k).itemsize for _, k in el.props)
        skip_ascii += el.count
    if vertex is None:
        raise MalformedHeader("no vertex element")
    for name, kind in vertex.props:
        if kind == "list":
            raise UnsupportedProperty(f"list property {name!r} in vertex element")
    dtype = np.dtype([(name, "<" + kind) for name, kind in vertex.props])

    if fmt == "binary_little_endian":
        start = pos + skip_binary
        need = vertex.count * dtype.itemsize
        if len(data) - start < need:
            raise TruncatedPayload(f"vertex block needs {need} bytes, {len(data) - start} left")
        return np.frombuffer(data, dtype=dtype, count=vertex.count, offset=start).copy()

    lines = data[pos:].decode("ascii", errors="replace").splitlines()
    lines = [ln for ln in lines if ln.strip()][skip_ascii:skip_ascii + vertex.count]
    if len(lines) < vertex.count:
        raise TruncatedPayload(f"expected {vertex.count} vertex lines, found {len(lines)}")
    out = np.zeros(vertex.count, dtype=dtype)
    nprop = len(vertex.props)
    for i, ln in enumerate(lines):
        tok = ln.split()
        if len(tok) < nprop:
            raise TruncatedPayload(f"vertex line {i} has {len(tok)} values, expected {nprop}")
        try:
            out[i] = tuple(
                float(t) if kind[0] == "f" else int(t)
                for t, (_, kind) in zip(tok, vertex.props)
            )
        except ValueError:
            raise MalformedHeader(f"bad value on vertex line {i}: {ln!r}") from None
    return out


def load_ply(data: bytes, sidecar: bytes | None = None) -> PointCloud:
    """Build a :class:`PointCloud` from PLY bytes and an optional HFD1 sidecar."""
    v = read_ply_vertices(data)
    names = v.dtype.names
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise MalformedHeader(f"vertex element lacks {axis!r}")
        if v.dtype[axis].kind != "f":
            raise UnsupportedProperty(f"vertex {axis!r} must be float or double")
    points = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        if any(v.dtype[c] != np.uint8 for c in ("red", "green", "blue")):
            raise UnsupportedProperty("color channels must be uchar")
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1)
    props = {
        n: v[n].copy() for n in names if n not in ("x", "y", "z", "red", "green", "blue")
    }
    ids = desc = None
    if sidecar is not None:
        ids, desc = read_descriptor_sidecar(sidecar)
    return PointCloud(points, colors, ids, desc, props)


def read_cloud(ply_path: str | Path, sidecar_path: str | Path | None = None) -> PointCloud:
    try:
        data = Path(ply_path).read_bytes()
        side = Path(sidecar_path).read_bytes() if sidecar_path else None
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return load_ply(data, side)


def encode_ply(vertices: np.ndarray, fmt: str = "binary_little_endian", comments=()) -> bytes:
    """Serialize a structured vertex array as PLY."""
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedHeader(f"unsupported PLY format {fmt!r}")
    head = ["ply", f"format {fmt} 1.0"]
    head += [f"comment {c}" for c in comments]
    head.append(f"element vertex {len(vertices)}")
    for name in vertices.dtype.names:
        kind = vertices.dtype[name].str[1:]
        head.append(f"property {_PLY_NAMES[kind]} {name}")
    head.append("end_header")
    header = ("\n".join(head) + "\n").encode("ascii")
    if fmt == "binary_little_endian":
        le = vertices.astype(vertices.dtype.newbyteorder("<"), copy=False)
        return header + le.tobytes()
    rows = []
    for rec in vertices:
        rows.append(" ".join(repr(v.item()) if isinstance(v, np.floating) else str(int(v)) for v in rec))
    return header + ("\n".join(rows) + ("\n" if rows else "")).encode("ascii")


def cloud_vertices(cloud: PointCloud, coord_type: str = "f4") -> np.ndarray:
    fields = [("x", coord_type), ("y", coord_type), ("z", coord_type)]
    if cloud.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    fields += [(n, a.dtype.str) for n, a in cloud.properties.items()]
    v = np.zeros(len(cloud), dtype=np.dtype([(n, "<" + k.lstrip("<>|=")) for n, k in fields]))
    v["x"], v["y"], v["z"] = cloud.points.T
    if cloud.colors is not None:
        v["red"], v["green"], v["blue"] = cloud.colors.T
    for n, a in cloud.properties.items():
        v[n] = a
    return v


def write_cloud(cloud: PointCloud, ply_path, sidecar_path=None, fmt="binary_little_endian",
                coord_type="f4") -> None:
    try:
        Path(ply_path).write_bytes(encode_ply(cloud_vertices(cloud, coord_type), fmt))
        if sidecar_path is not None:
            if not cloud.has_descriptors:
                raise MalformedHeader("cloud has no descriptors to write")
            Path(sidecar_path).write_bytes(
                encode_descriptor_sidecar(cloud.descriptor_point_ids, cloud.descriptors)
            )
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


# --------------------------------------------------------------------------
# HFD1 sidecar: magic, then records (point_id u32 LE, 128 x u8)

_SIDECAR_DTYPE = np.dtype([("point_id", "<u4"), ("desc", "u1", (DESCRIPTOR_DIM,))])


def encode_descriptor_sidecar(point_ids, descriptors) -> bytes:
    rec = np.zeros(len(point_ids), dtype=_SIDECAR_DTYPE)
    rec["point_id"] = point_ids
    rec["desc"] = quantize(descriptors)
    return SIDECAR_MAGIC + rec.tobytes()


def read_descriptor_sidecar(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if data[:4] != SIDECAR_MAGIC:
        raise MalformedHeader("descriptor sidecar lacks HFD1 magic")
    body = len(data) - 4
    if body % _SIDECAR_RECORD:
        raise TruncatedPayload(f"sidecar body of {body} bytes is not a whole number of records")
    rec = np.frombuffer(data, dtype=_SIDECAR_DTYPE, offset=4)
    return rec["point_id"].astype(np.int64), dequantize(rec["desc"])

