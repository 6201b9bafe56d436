"""File formats, OSM ingestion and the local ENU frame.

Canonical files:

* ``map.json``: ``{"origin": {"lat", "lon"}, "buildings": [{"id", "height_m", "footprint": [[e, n], ...]}]}``
* pose json: ``{"rotation": [w, x, y, z], "position_enu": [e, n, u]}``
* intrinsics json: ``{"fx", "fy", "cx", "cy", "width", "height"}``
* ``segments.txt``: header ``# segments v1`` then ``x0 y0 x1 y1`` per line
* PGM (binary P5) gray rasters
* PROBRASTER: one ASCII header line then float32 little-endian (H, W, 5)
"""

from __future__ import annotations

import json
import math
import os
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .alignment import CLASS_NAMES, ProbabilityRaster
from .errors import DanglingNodeRef, EmptyMap, FormatError, InvalidPolygon, MalformedXml
from .geometry import CameraIntrinsics, Pose, quaternion_from_rotation, rotation_from_quaternion
from .map_model import Building, BuildingMap

EARTH_RADIUS_M = 6378137.0
LEVEL_HEIGHT_M = 3.0
SEGMENTS_HEADER = "# segments v1"
PROBRASTER_MAGIC = "PROBRASTER v1"


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a JSON object")
    return data


def _dump_json(path, data) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


def _field(data: dict, key: str, path):
    if key not in data:
        raise FormatError(f"{path}: missing field {key!r}")
    return data[key]


# ---------------------------------------------------------------------------
# map.json
# ---------------------------------------------------------------------------


def map_to_dict(bmap: BuildingMap) -> dict:
    return {
        "origin": {"lat": bmap.origin[0], "lon": bmap.origin[1]},
        "buildings": [
            {"id": b.id, "height_m": b.height, "footprint": b.footprint.tolist()} for b in bmap.buildings
        ],
    }


def map_from_dict(data: dict, path="map.json") -> BuildingMap:
    origin = _field(data, "origin", path)
    try:
        lat, lon = float(origin["lat"]), float(origin["lon"])
        buildings = [
            Building(str(b["id"]), np.array(b["footprint"], dtype=float), float(b["height_m"]))
            for b in _field(data, "buildings", path)
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed map ({exc})") from exc
    except InvalidPolygon as exc:
        raise FormatError(f"{path}: {exc}") from exc
    ids = [b.id for b in buildings]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate building ids")
    return BuildingMap(tuple(buildings), (lat, lon))


def write_map(path, bmap: BuildingMap) -> None:
    _dump_json(path, map_to_dict(bmap))


def read_map(path) -> BuildingMap:
    return map_from_dict(_load_json(path), path)


# ---------------------------------------------------------------------------
# pose and intrinsics json
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoseRecord:
    """Pose as stored on disk: unit quaternion and camera position."""

    rotation: tuple  # (w, x, y, z)
    position_enu: tuple  # (e, n, u)

    @classmethod
    def from_pose(cls, pose: Pose) -> "PoseRecord":
        q = quaternion_from_rotation(pose.rotation)
        return cls(tuple(float(v) for v in q), tuple(float(v) for v in pose.position))

    def to_pose(self) -> Pose:
        return Pose.from_position(rotation_from_quaternion(self.rotation), self.position_enu)

    def to_dict(self) -> dict:
        return {"rotation": list(self.rotation), "position_enu": list(self.position_enu)}

    @classmethod
    def from_dict(cls, data: dict, path="pose.json") -> "PoseRecord":
        try:
            q = tuple(float(v) for v in _field(data, "rotation", path))
            p = tuple(float(v) for v in _field(data, "position_enu", path))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed pose ({exc})") from exc
        if len(q) != 4 or len(p) != 3:
            raise FormatError(f"{path}: rotation needs 4 and position_enu 3 components")
        if not all(math.isfinite(v) for v in q + p):
            raise FormatError(f"{path}: non-finite pose values")
        if abs(math.sqrt(sum(v * v for v in q)) - 1.0) > 1e-6:
            raise FormatError(f"{path}: rotation is not a unit quaternion")
        return cls(q, p)


def write_pose_record(path, rec: PoseRecord) -> None:
    _dump_json(path, rec.to_dict())


def read_pose_record(path) -> PoseRecord:
    return PoseRecord.from_dict(_load_json(path), path)


def write_pose(path, pose: Pose) -> None:
    write_pose_record(path, PoseRecord.from_pose(pose))


def read_pose(path) -> Pose:
    return read_pose_record(path).to_pose()


_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


def write_intrinsics(path, K: CameraIntrinsics) -> None:
    _dump_json(path, {k: getattr(K, k) for k in _INTRINSIC_KEYS})


def read_intrinsics(path) -> CameraIntrinsics:
    data = _load_json(path)
    try:
        vals = [_field(data, k, path) for k in _INTRINSIC_KEYS]
        w, h = int(vals[4]), int(vals[5])
        if w != vals[4] or h != vals[5]:
            raise ValueError("width and height must be integers")
        return CameraIntrinsics(float(vals[0]), float(vals[1]), float(vals[2]), float(vals[3]), w, h)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed intrinsics ({exc})") from exc


# ---------------------------------------------------------------------------
# segments.txt
# ---------------------------------------------------------------------------


def write_segments(path, segs) -> None:
    segs = np.asarray(segs, dtype=float).reshape(-1, 4)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SEGMENTS_HEADER + "\n")
        for row in segs:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_segments(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != SEGMENTS_HEADER:
        raise FormatError(f"{path}: first line must be {SEGMENTS_HEADER!r}")
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{n}: expected 4 numbers, got {len(parts)}")
        try:
            row = [float(v) for v in parts]
        except ValueError as exc:
            raise FormatError(f"{path}:{n}: {exc}") from exc
        if not all(math.isfinite(v) for v in row):
            raise FormatError(f"{path}:{n}: non-finite coordinate")
        rows.append(row)
    return np.array(rows, dtype=float).reshape(-1, 4)


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def write_pgm(path, values, maxval: int = 65535) -> None:
    """Binary PGM of ``values`` in [0, 1] (bool arrays map to 0/maxval)."""
    a = np.asarray(values)
    if a.ndim != 2 or a.size == 0:
        raise FormatError("PGM raster must be a non-empty 2D array")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must lie in 1..65535")
    q = np.rint(np.clip(a.astype(float), 0.0, 1.0) * maxval).astype(np.int64)
    data = q.astype(">u2" if maxval > 255 else "u1").tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(data)


def read_pgm(path) -> np.ndarray:
    """Binary PGM as floats in [0, 1]."""
    raw = Path(path).read_bytes()
    pos, tokens = 0, []
    for _ in range(4):
        m = _PGM_TOKEN.match(raw, pos)
        if not m:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad PGM dimensions or maxval")
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2" if maxval > 255 else "u1")
    need = w * h * dtype.itemsize
    if len(raw) - pos < need:
        raise FormatError(f"{path}: PGM data truncated")
    a = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return a.astype(float) / maxval


def read_mask_pgm(path) -> np.ndarray:
    return read_pgm(path) > 0.5


# ---------------------------------------------------------------------------
# PROBRASTER
# ---------------------------------------------------------------------------


def write_probraster(path, raster: ProbabilityRaster) -> None:
    h, w = raster.height, raster.width
    header = f"{PROBRASTER_MAGIC} {w} {h} {' '.join(CLASS_NAMES)}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(raster.data.astype("<f4").tobytes())


def read_probraster(path) -> ProbabilityRaster:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing PROBRASTER header")
    parts = raw[:nl].decode("ascii", errors="replace").split()
    if parts[:2] != PROBRASTER_MAGIC.split() or len(parts) != 4 + len(CLASS_NAMES):
        raise FormatError(f"{path}: bad PROBRASTER header")
    if tuple(parts[4:]) != CLASS_NAMES:
        raise FormatError(f"{path}: unsupported class list {parts[4:]}")
    try:
        w, h = int(parts[2]), int(parts[3])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PROBRASTER dimensions") from exc
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: bad PROBRASTER dimensions")
    count = w * h * len(CLASS_NAMES)
    if len(raw) - nl - 1 != 4 * count:
        raise FormatError(f"{path}: expected {4 * count} data bytes, got {len(raw) - nl - 1}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=nl + 1).reshape(h, w, len(CLASS_NAMES))
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite probabilities")
    return ProbabilityRaster(data.astype(float))


# ---------------------------------------------------------------------------
# OSM
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OsmWay:
    id: str
    refs: tuple
    tags: dict = field(hash=False)


@dataclass
class OsmDocument:
    nodes: dict  # id -> (lat, lon)
    ways: list  # OsmWay
    warnings: list = field(default_factory=list)  # (way id, reason)


def _is_building(tags: dict) -> bool:
    return "building" in tags or "building:part" in tags


def parse_osm(text) -> OsmDocument:
    """Closed building ways and the nodes they reference.

    Unclosed building ways are dropped with a warning record.

    Raises:
        MalformedXml: unparsable XML or bad coordinates.
        DanglingNodeRef: a building way references a missing node.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc
    nodes = {}
    for el in root.iter("node"):
        try:
            nid = el.attrib["id"]
            lat, lon = float(el.attrib["lat"]), float(el.attrib["lon"])
        except (KeyError, ValueError) as exc:
            raise MalformedXml(f"node without valid id/lat/lon: {el.attrib}") from exc
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise MalformedXml(f"node {nid}: coordinates out of range")
        nodes[nid] = (lat, lon)
    ways, warnings = [], []
    for el in root.iter("way"):
        wid = el.attrib.get("id")
        if wid is None:
            raise MalformedXml("way without id")
        tags = {t.attrib.get("k"): t.attrib.get("v", "") for t in el.iter("tag")}
        if not _is_building(tags):
            continue
        refs = tuple(nd.attrib.get("ref") for nd in el.iter("nd"))
        for r in refs:
            if r not in nodes:
                raise DanglingNodeRef(f"way {wid} references missing node {r}")
        if len(refs) < 4 or refs[0] != refs[-1]:
            warnings.append((wid, "unclosed"))
            continue
        ways.append(OsmWay(wid, refs, tags))
    used = {r for w in ways for r in w.refs}
    return OsmDocument({k: v for k, v in nodes.items() if k in used}, ways, warnings)


def read_osm(path) -> OsmDocument:
    with open(path, "rb") as fh:
        return parse_osm(fh.read())


@dataclass(frozen=True)
class LocalFrame:
    """Equirectangular east/north metres around an origin."""

    lat: float
    lon: float

    def __post_init__(self):
        if not abs(self.lat) < 90.0:
            raise ValueError("origin latitude must lie strictly inside (-90, 90)")

    @property
    def north_per_degree(self) -> float:
        return EARTH_RADIUS_M * math.pi / 180.0

    @property
    def east_per_degree(self) -> float:
        return self.north_per_degree * math.cos(math.radians(self.lat))

    def to_enu(self, lat, lon) -> np.ndarray:
        lat, lon = np.asarray(lat, dtype=float), np.asarray(lon, dtype=float)
        dlon = (lon - self.lon + 180.0) % 360.0 - 180.0
        return np.stack([dlon * self.east_per_degree, (lat - self.lat) * self.north_per_degree], axis=-1)

    def to_geodetic(self, east, north) -> tuple:
        return (
            self.lat + np.asarray(north) / self.north_per_degree,
            self.lon + np.asarray(east) / self.east_per_degree,
        )


def _leading_number(value: Optional[str]) -> Optional[float]:
    if value is None:
        return None
    m = re.match(r"\s*([0-9]+(?:\.[0-9]*)?)", value.replace(",", "."))
    if not m:
        return None
    v = float(m.group(1))
    return v if v > 0 else None


def building_height(tags: dict, default_height: float) -> float:
    h = _leading_number(tags.get("height"))
    if h is not None:
        return h
    levels = _leading_number(tags.get("building:levels"))
    if levels is not None:
        return levels * LEVEL_HEIGHT_M
    return float(default_height)


def _collapse(points: np.ndarray) -> np.ndarray:
    keep = [0]
    for i in range(1, len(points)):
        if not np.array_equal(points[i], points[keep[-1]]):
            keep.append(i)
    p = points[keep]
    if len(p) > 1 and np.array_equal(p[0], p[-1]):
        p = p[:-1]
    return p


def osm_to_map(
    doc: OsmDocument,
    frame: LocalFrame,
    default_height: float = 10.0,
    radius: float = 150.0,
    center=(0.0, 0.0),
) -> BuildingMap:
    """Closed building ways with a vertex within ``radius`` of ``center``.

    Raises:
        EmptyMap: no building survives.
    """
    center = np.asarray(center, dtype=float)
    buildings = []
    for way in doc.ways:
        lat = [doc.nodes[r][0] for r in way.refs]
        lon = [doc.nodes[r][1] for r in way.refs]
        pts = _collapse(frame.to_enu(lat, lon))
        if len(pts) < 3 or np.min(np.linalg.norm(pts - center, axis=1)) > radius:
            continue
        try:
            buildings.append(Building(f"w{way.id}", pts, building_height(way.tags, default_height)))
        except InvalidPolygon:
            doc.warnings.append((way.id, "invalid_footprint"))
    if not buildings:
        raise EmptyMap(f"no building within {radius} m")
    return BuildingMap(tuple(buildings), (frame.lat, frame.lon))


# ---------------------------------------------------------------------------
# curves and overlays
# ---------------------------------------------------------------------------


def write_curves_csv(path, report) -> None:
    """Ranked error curves: one row per rank, rotation and translation side by side."""
    rows = ["rank,rot_scene,sensor_rot_deg,corrected_rot_deg,trans_scene,sensor_trans_m,corrected_trans_m"]
    for k, (r, t) in enumerate(zip(report.rotation_curve, report.translation_curve), start=1):
        rows.append(f"{k},{r[0]},{r[1]!r},{r[2]!r},{t[0]},{t[1]!r},{t[2]!r}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def overlay_svg(bmap: BuildingMap, pose: Pose, K: CameraIntrinsics, near: float = 0.05, samples: int = 64) -> str:
    """Wireframe of the projected model: visible edge pieces solid, hidden dashed."""
    from .map_model import model_polygons, pixel_centers, render_model

    polys = model_polygons(bmap)
    buf = render_model(polys, pose, K, pixel_centers(K.width), pixel_centers(K.height), near)
    edges = set()
    for poly in polys:
        v = poly.vertices
        for i in range(len(v)):
            a, b = tuple(v[i]), tuple(v[(i + 1) % len(v)])
            edges.add((a, b) if a <= b else (b, a))
    solid, dashed = [], []
    t = (np.arange(samples) + 0.5) / samples
    for a, b in sorted(edges):
        a, b = np.array(a), np.array(b)
        ca, cb = pose.to_camera(np.array([a, b]))
        if ca[2] < near and cb[2] < near:
            continue
        if ca[2] < near or cb[2] < near:  # clip to the near plane
            s = (near - ca[2]) / (cb[2] - ca[2])
            if ca[2] < near:
                ca = ca + s * (cb - ca)
            else:
                cb = ca + s * (cb - ca)
        pts = ca[None, :] + t[:, None] * (cb - ca)[None, :]
        u = K.fx * pts[:, 0] / pts[:, 2] + K.cx
        w = K.fy * pts[:, 1] / pts[:, 2] + K.cy
        col = np.clip(np.rint(u).astype(int), 0, K.width - 1)
        row = np.clip(np.rint(w).astype(int), 0, K.height - 1)
        inside = (u >= -0.5) & (u < K.width - 0.5) & (w >= -0.5) & (w < K.height - 0.5)
        visible = pts[:, 2] <= buf.depth[row, col] * (1 + 1e-3) + 1e-2
        # split the edge into runs of equal visibility
        start = 0
        for k in range(1, samples + 1):
            if k < samples and visible[k] == visible[start]:
                continue
            if np.any(inside[start:k]):
                f0, f1 = start / samples, k / samples
                q0 = ca + f0 * (cb - ca)
                q1 = ca + f1 * (cb - ca)
                seg = (
                    K.fx * q0[0] / q0[2] + K.cx,
                    K.fy * q0[1] / q0[2] + K.cy,
                    K.fx * q1[0] / q1[2] + K.cx,
                    K.fy * q1[1] / q1[2] + K.cy,
                )
                (solid if visible[start] else dashed).append(seg)
            start = k
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{K.width}" height="{K.height}" '
        f'viewBox="0 0 {K.width} {K.height}">'
    ]
    for segs, style in ((dashed, 'stroke="#d62728" stroke-dasharray="4 3"'), (solid, 'stroke="#1f77b4"')):
        for x0, y0, x1, y1 in segs:
            out.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" {style} stroke-width="1.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# bundle directories
# ---------------------------------------------------------------------------

BUNDLE_FILES = {
    "spec": "spec.json",
    "map": "map.json",
    "intrinsics": "intrinsics.json",
    "gt_pose": "gt_pose.json",
    "sensor_pose": "sensor_pose.json",
    "segments": "segments.txt",
    "image": "image.pgm",
    "windows": "windows.pgm",
    "probs": "probs.bin",
}


def write_bundle(directory, bundle) -> list:
    """Write every file of a synthetic bundle into ``directory``; returns the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    f = {k: d / v for k, v in BUNDLE_FILES.items()}
    _dump_json(f["spec"], bundle.spec.to_dict())
    write_map(f["map"], bundle.map)
    write_intrinsics(f["intrinsics"], bundle.K)
    write_pose(f["gt_pose"], bundle.gt_pose)
    write_pose(f["sensor_pose"], bundle.sensor_pose)
    write_segments(f["segments"], bundle.segments)
    write_pgm(f["image"], bundle.image)
    write_pgm(f["windows"], bundle.windows, maxval=255)
    write_probraster(f["probs"], bundle.probs)
    return list(f.values())


def read_bundle(directory):
    """Load a bundle directory written by :func:`write_bundle`."""
    from .synth import GroundTruthBundle, SceneSpec

    d = Path(directory)
    f = {k: d / v for k, v in BUNDLE_FILES.items()}
    missing = [str(p) for k, p in f.items() if k != "windows" and not p.exists()]
    if missing:
        raise FormatError(f"{d}: missing bundle files {missing}")
    try:
        spec = SceneSpec.from_dict(_load_json(f["spec"]))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{f['spec']}: {exc}") from exc
    windows = read_mask_pgm(f["windows"]) if f["windows"].exists() else None
    return GroundTruthBundle(
        spec,
        read_map(f["map"]),
        read_intrinsics(f["intrinsics"]),
        read_pose(f["gt_pose"]),
        read_pose(f["sensor_pose"]),
        read_segments(f["segments"]),
        read_pgm(f["image"]),
        windows,
        read_probraster(f["probs"]),
    )


def remove_quietly(paths: Sequence) -> None:
    for p in paths:
        try:
            os.remove(p)
        except OSError:
            pass
