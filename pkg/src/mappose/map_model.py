"""2.5D building map: façades, corners, BSP visibility and model rasterization.

Footprints live in the local ENU plane (meters); every building is a prism
from the ground (z = 0) to its height with a flat roof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .config import DEFAULT_CONFIG, Config
from .errors import CameraInsideBuilding, InvalidPolygon
from .geometry import CameraIntrinsics, Pose

FACADE = "facade"
ROOF = "roof"
MODEL_CLASSES = (FACADE, ROOF)

_EPS = 1e-9


def signed_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12 and min(
            a[1], b[1]
        ) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12

    o1, o2, o3, o4 = orient(p1, p2, q1), orient(p1, p2, q2), orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def validate_footprint(poly) -> np.ndarray:
    """Check a footprint and return it counter-clockwise.

    Raises:
        InvalidPolygon: fewer than 3 vertices, repeated vertices, zero area
            or self-intersection.
    """
    p = np.array(poly, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
        raise InvalidPolygon("footprint needs at least 3 (x, y) vertices")
    if not np.all(np.isfinite(p)):
        raise InvalidPolygon("footprint has non-finite coordinates")
    n = len(p)
    edges = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
    if np.any(edges < 1e-9):
        raise InvalidPolygon("footprint has repeated consecutive vertices")
    area = signed_area(p)
    if abs(area) < 1e-9:
        raise InvalidPolygon("footprint has zero area")
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n]):
                raise InvalidPolygon(f"footprint self-intersects (edges {i} and {j})")
    return p if area > 0 else p[::-1].copy()


def point_in_polygon(pt, poly) -> bool:
    x, y = float(pt[0]), float(pt[1])
    p = np.asarray(poly, dtype=float)
    inside = False
    n = len(p)
    for i in range(n):
        x0, y0 = p[i]
        x1, y1 = p[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if xi > x:
                inside = not inside
    return inside


def points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Vectorized even-odd point-in-polygon test for (n, 2) points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0:1], pts[:, 1:2]
    x0, y0 = poly[:, 0][None, :], poly[:, 1][None, :]
    x1, y1 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    crosses = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return (np.sum(crosses & (x < xi), axis=1) % 2) == 1


@dataclass(frozen=True, eq=False)
class Building:
    id: str
    footprint: np.ndarray
    height: float

    def __post_init__(self):
        if not self.height > 0:
            raise InvalidPolygon(f"building {self.id}: height must be positive")
        object.__setattr__(self, "footprint", validate_footprint(self.footprint))
        object.__setattr__(self, "height", float(self.height))

    def __eq__(self, other):
        return (
            isinstance(other, Building)
            and self.id == other.id
            and self.height == other.height
            and np.array_equal(self.footprint, other.footprint)
        )

    @property
    def centroid(self) -> np.ndarray:
        p = self.footprint
        x, y = p[:, 0], p[:, 1]
        cross = x * np.roll(y, -1) - np.roll(x, -1) * y
        a = cross.sum() / 2.0
        cx = ((x + np.roll(x, -1)) * cross).sum() / (6 * a)
        cy = ((y + np.roll(y, -1)) * cross).sum() / (6 * a)
        return np.array([cx, cy])


@dataclass(frozen=True, eq=False)
class BuildingMap:
    buildings: tuple
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def __eq__(self, other):
        return (
            isinstance(other, BuildingMap)
            and self.origin == other.origin
            and len(self.buildings) == len(other.buildings)
            and all(a == b for a, b in zip(self.buildings, other.buildings))
        )

    def __len__(self):
        return len(self.buildings)

    def contains_point(self, xy) -> Optional[str]:
        """ID of the building whose footprint contains ``xy``, else None."""
        for b in self.buildings:
            if point_in_polygon(xy, b.footprint):
                return b.id
        return None


@dataclass(frozen=True, eq=False)
class Facade:
    id: int
    building_id: str
    edge_index: int
    a: np.ndarray
    b: np.ndarray
    height: float
    normal: np.ndarray  # outward, (nx, ny, 0)

    @property
    def midpoint(self) -> np.ndarray:
        return (self.a + self.b) / 2.0

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    def __repr__(self):
        return f"Facade({self.id}, {self.building_id}:{self.edge_index})"


@dataclass(frozen=True, eq=False)
class Corner:
    id: str
    building_id: str
    vertex_index: int
    position: np.ndarray  # (x, y, 0)
    facade_ids: tuple  # (incoming edge, outgoing edge)

    def __repr__(self):
        return f"Corner({self.id})"


def build_facades(bmap: BuildingMap) -> tuple[list[Facade], list[Corner]]:
    """One outward-facing façade per footprint edge and one corner per vertex."""
    facades: list[Facade] = []
    corners: list[Corner] = []
    for b in bmap.buildings:
        p = validate_footprint(b.footprint)
        n = len(p)
        base = len(facades)
        for i in range(n):
            a, c = p[i], p[(i + 1) % n]
            d = (c - a) / np.linalg.norm(c - a)
            normal = np.array([d[1], -d[0], 0.0])
            facades.append(Facade(base + i, b.id, i, a.copy(), c.copy(), b.height, normal))
        for i in range(n):
            corners.append(
                Corner(
                    f"{b.id}:{i}",
                    b.id,
                    i,
                    np.array([p[i, 0], p[i, 1], 0.0]),
                    (base + (i - 1) % n, base + i),
                )
            )
    return facades, corners


# ---------------------------------------------------------------------------
# BSP tree
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Fragment:
    facade_id: int
    a: np.ndarray
    b: np.ndarray


@dataclass(eq=False)
class BspNode:
    point: np.ndarray
    normal: np.ndarray
    fragments: list
    front: Optional["BspNode"] = None
    back: Optional["BspNode"] = None


@dataclass(eq=False)
class BspTree:
    root: Optional[BspNode]
    facades: list
    corners: list = field(default_factory=list)

    def __post_init__(self):
        self._by_id = {f.id: f for f in self.facades}

    def facade(self, fid: int) -> Facade:
        return self._by_id[fid]

    def nodes(self) -> Iterator[BspNode]:
        stack = [self.root] if self.root else []
        while stack:
            node = stack.pop()
            yield node
            stack.extend(c for c in (node.back, node.front) if c is not None)

    def fragments(self) -> list[Fragment]:
        return [f for node in self.nodes() for f in node.fragments]

    def depth(self) -> int:
        best = 0
        stack = [(self.root, 1)] if self.root else []
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            stack.extend((c, d + 1) for c in (node.front, node.back) if c is not None)
        return best

    def front_to_back(self, viewpoint) -> Iterator[Fragment]:
        """Fragments ordered nearest-first as seen from a 2D viewpoint."""
        v = np.asarray(viewpoint, dtype=float)[:2]
        stack: list = [self.root] if self.root else []
        while stack:
            item = stack.pop()
            if isinstance(item, list):
                yield from item
                continue
            side = float(item.normal @ (v - item.point))
            near, far = (item.front, item.back) if side >= 0 else (item.back, item.front)
            # pushed in reverse order of emission
            if far is not None:
                stack.append(far)
            stack.append(item.fragments)
            if near is not None:
                stack.append(near)

    def back_to_front(self, viewpoint) -> list[Fragment]:
        return list(self.front_to_back(viewpoint))[::-1]

    def footprints(self) -> dict[str, np.ndarray]:
        polys: dict[str, list] = {}
        for f in sorted(self.facades, key=lambda f: (f.building_id, f.edge_index)):
            polys.setdefault(f.building_id, []).append(f.a)
        return {k: np.array(v) for k, v in polys.items()}


def build_bsp(facades: Sequence[Facade], corners: Optional[Sequence[Corner]] = None) -> BspTree:
    """Partition façade segments by their supporting lines.

    The splitter at every node is the candidate whose line cuts the fewest
    other fragments (ties -> lowest index).
    """
    facades = list(facades)
    if corners is None:
        corners = _corners_from_facades(facades)
    if not facades:
        return BspTree(None, facades, list(corners))
    normals = {f.id: f.normal[:2] for f in facades}
    initial = [Fragment(f.id, f.a.copy(), f.b.copy()) for f in facades]

    root_holder: list = [None]
    # work items: (fragments, parent node, attribute name)
    work: list = [(initial, None, None)]
    while work:
        frags, parent, attr = work.pop()
        m = len(frags)
        A = np.array([f.a for f in frags])
        B = np.array([f.b for f in frags])
        N = np.array([normals[f.facade_id] for f in frags])
        off = np.einsum("ij,ij->i", A, N)
        S0 = A @ N.T - off[None, :]  # S0[j, i]: side of fragment j's start wrt splitter i
        S1 = B @ N.T - off[None, :]
        crossing = ((S0 > _EPS) & (S1 < -_EPS)) | ((S0 < -_EPS) & (S1 > _EPS))
        k = int(np.argmin(crossing.sum(axis=0)))
        point, normal = A[k].copy(), N[k].copy()
        node = BspNode(point, normal, [])
        front: list = []
        back: list = []
        for j, frag in enumerate(frags):
            s0, s1 = S0[j, k], S1[j, k]
            if abs(s0) <= _EPS and abs(s1) <= _EPS:
                node.fragments.append(frag)
            elif s0 >= -_EPS and s1 >= -_EPS:
                front.append(frag)
            elif s0 <= _EPS and s1 <= _EPS:
                back.append(frag)
            else:
                t = s0 / (s0 - s1)
                mid = frag.a + t * (frag.b - frag.a)
                first = Fragment(frag.facade_id, frag.a, mid)
                second = Fragment(frag.facade_id, mid.copy(), frag.b)
                if s0 > 0:
                    front.append(first)
                    back.append(second)
                else:
                    back.append(first)
                    front.append(second)
        if parent is None:
            root_holder[0] = node
        else:
            setattr(parent, attr, node)
        if back:
            work.append((back, node, "back"))
        if front:
            work.append((front, node, "front"))
    return BspTree(root_holder[0], facades, list(corners))


def _corners_from_facades(facades: Sequence[Facade]) -> list[Corner]:
    by_building: dict[str, dict[int, Facade]] = {}
    for f in facades:
        by_building.setdefault(f.building_id, {})[f.edge_index] = f
    corners = []
    for bid, edges in by_building.items():
        n = max(edges) + 1
        for i in sorted(edges):
            prev = edges.get((i - 1) % n)
            corners.append(
                Corner(
                    f"{bid}:{i}",
                    bid,
                    i,
                    np.array([edges[i].a[0], edges[i].a[1], 0.0]),
                    (prev.id if prev is not None else edges[i].id, edges[i].id),
                )
            )
    return corners


@dataclass
class MapModel:
    """A building map together with its derived façades, corners and BSP tree."""

    map: BuildingMap
    facades: list = field(init=False)
    corners: list = field(init=False)
    tree: BspTree = field(init=False)

    def __post_init__(self):
        self.facades, self.corners = build_facades(self.map)
        self.tree = build_bsp(self.facades, self.corners)
        self._corner_by_id = {c.id: c for c in self.corners}
        self._polygons = None

    def corner(self, cid: str) -> Corner:
        return self._corner_by_id[cid]

    def polygons(self) -> "list[ModelPolygon]":
        if self._polygons is None:
            self._polygons = model_polygons(self.map)
        return self._polygons


# ---------------------------------------------------------------------------
# Plan-view visibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VisibleFragment:
    """Unoccluded part ``[a, b]`` of a façade as seen in plan view."""

    facade: Facade
    a: np.ndarray
    b: np.ndarray
    a_is_end: bool  # a coincides with one of the façade endpoints
    b_is_end: bool

    @property
    def facade_id(self) -> int:
        return self.facade.id


def horizontal_frustum(pose: Pose, K: CameraIntrinsics, margin: float):
    """Camera ground position, forward/right axes and the lateral-ratio window.

    A ground point P is inside the frustum when its depth
    ``forward . (P - C)`` is positive and ``right . (P - C) / depth`` lies in
    ``[u_min, u_max]``. Tilt is ignored: the window is the image width,
    widened by ``margin`` on each side, at the principal row.
    """
    c = pose.position[:2]
    h = pose.heading
    fwd = np.array([math.cos(h), math.sin(h)])
    right = np.array([math.sin(h), -math.cos(h)])
    u_min = (-margin * K.width - K.cx) / K.fx
    u_max = ((1.0 + margin) * K.width - K.cx) / K.fx
    return c, fwd, right, u_min, u_max


def _subtract_intervals(lo: float, hi: float, covered: list) -> list:
    out = []
    cur = lo
    for c0, c1 in covered:
        if c1 <= cur:
            continue
        if c0 >= hi:
            break
        if c0 > cur:
            out.append((cur, min(c0, hi)))
        cur = max(cur, c1)
        if cur >= hi:
            break
    if cur < hi:
        out.append((cur, hi))
    return out


def _add_interval(lo: float, hi: float, covered: list) -> list:
    merged = []
    placed = False
    for c0, c1 in covered:
        if c1 < lo:
            merged.append((c0, c1))
        elif c0 > hi:
            if not placed:
                merged.append((lo, hi))
                placed = True
            merged.append((c0, c1))
        else:
            lo, hi = min(lo, c0), max(hi, c1)
    if not placed:
        merged.append((lo, hi))
    return merged


def _check_outside(tree: BspTree, xy) -> None:
    for bid, poly in tree.footprints().items():
        if point_in_polygon(xy, poly):
            raise CameraInsideBuilding(f"camera ground position lies inside building {bid}")


def visible_facades(
    tree: BspTree, pose: Pose, K: CameraIntrinsics, cfg: Config = DEFAULT_CONFIG
) -> list[VisibleFragment]:
    """Front-facing, in-frustum, plan-view-unoccluded façade fragments.

    Fragments are returned nearest first.

    Raises:
        CameraInsideBuilding: if the camera stands inside a footprint.
    """
    if isinstance(tree, MapModel):
        tree = tree.tree
    c, fwd, right, u_min, u_max = horizontal_frustum(pose, K, cfg.frustum_margin)
    _check_outside(tree, c)
    near = cfg.near_clip_m
    covered: list = []
    out: list[VisibleFragment] = []
    for frag in tree.front_to_back(c):
        a, b = frag.a, frag.b
        da, db = float(fwd @ (a - c)), float(fwd @ (b - c))
        if da < near and db < near:
            continue
        # clip to the half-plane in front of the camera
        if da < near:
            a = a + (near - da) / (db - da) * (b - a)
            da = near
        elif db < near:
            b = b + (near - db) / (da - db) * (a - b)
            db = near
        ua = float(right @ (a - c)) / da
        ub = float(right @ (b - c)) / db
        lo, hi = min(ua, ub), max(ua, ub)
        lo, hi = max(lo, u_min), min(hi, u_max)
        if hi - lo <= 1e-12:
            continue
        facade = tree.facade(frag.facade_id)
        front_facing = float(facade.normal[:2] @ (c - facade.midpoint)) > 0
        if front_facing:
            for v0, v1 in _subtract_intervals(lo, hi, covered):
                if v1 - v0 <= 1e-12:
                    continue
                pa, a_end = _point_at_ratio(a, b, c, fwd, right, v0, ua, ub, facade)
                pb, b_end = _point_at_ratio(a, b, c, fwd, right, v1, ua, ub, facade)
                out.append(VisibleFragment(facade, pa, pb, a_end, b_end))
        covered = _add_interval(lo, hi, covered)
    return out


def _point_at_ratio(a, b, c, fwd, right, u, ua, ub, facade):
    for u_end, p_end in ((ua, a), (ub, b)):
        if abs(u - u_end) <= 1e-12:
            for corner in (facade.a, facade.b):
                if np.linalg.norm(p_end - corner) <= 1e-9:
                    return corner.copy(), True
            return p_end.copy(), False
    d0, d1 = float(fwd @ (a - c)), float(fwd @ (b - c))
    l0, l1 = float(right @ (a - c)), float(right @ (b - c))
    s = (u * d0 - l0) / ((l1 - l0) - u * (d1 - d0))
    return a + s * (b - a), False


def visible_corners(
    tree, pose: Pose, K: CameraIntrinsics, cfg: Config = DEFAULT_CONFIG
) -> list[Corner]:
    """Corners that terminate the visible part of at least one façade."""
    if isinstance(tree, MapModel):
        tree = tree.tree
    by_key = {(c.building_id, c.vertex_index): c for c in tree.corners}
    seen: dict[str, Corner] = {}
    for vf in visible_facades(tree, pose, K, cfg):
        f = vf.facade
        n_edges = sum(1 for g in tree.facades if g.building_id == f.building_id)
        for pt, is_end in ((vf.a, vf.a_is_end), (vf.b, vf.b_is_end)):
            if not is_end:
                continue
            idx = f.edge_index if np.array_equal(pt, f.a) else (f.edge_index + 1) % n_edges
            corner = by_key[(f.building_id, idx)]
            seen.setdefault(corner.id, corner)
    return list(seen.values())


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelPolygon:
    """A planar polygon of the extruded model in world coordinates."""

    vertices: np.ndarray  # (n, 3)
    kind: str  # FACADE or ROOF
    building_index: int
    facade_id: int  # -1 for roofs
    normal: np.ndarray  # outward unit normal (3,)


def model_polygons(bmap: BuildingMap) -> list[ModelPolygon]:
    polys = []
    facades, _ = build_facades(bmap)
    index = {b.id: i for i, b in enumerate(bmap.buildings)}
    for f in facades:
        h = f.height
        verts = np.array(
            [[f.a[0], f.a[1], 0.0], [f.b[0], f.b[1], 0.0], [f.b[0], f.b[1], h], [f.a[0], f.a[1], h]]
        )
        polys.append(ModelPolygon(verts, FACADE, index[f.building_id], f.id, f.normal))
    for i, b in enumerate(bmap.buildings):
        verts = np.column_stack([b.footprint, np.full(len(b.footprint), b.height)])
        polys.append(ModelPolygon(verts, ROOF, i, -1, np.array([0.0, 0.0, 1.0])))
    return polys


def facing_camera(poly: ModelPolygon, position) -> bool:
    return float(poly.normal @ (np.asarray(position) - poly.vertices[0])) > 0


def clip_near(verts_cam: np.ndarray, near: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a camera-frame polygon against z >= near."""
    out = []
    n = len(verts_cam)
    for i in range(n):
        p, q = verts_cam[i], verts_cam[(i + 1) % n]
        pin, qin = p[2] >= near, q[2] >= near
        if pin:
            out.append(p)
        if pin != qin:
            t = (near - p[2]) / (q[2] - p[2])
            out.append(p + t * (q - p))
    return np.array(out) if out else np.zeros((0, 3))


def project_polygon(poly: ModelPolygon, pose: Pose, K: CameraIntrinsics, near: float):
    """Pixel-space polygon (n, 2) after near clipping, or None if fully behind."""
    vc = pose.to_camera(poly.vertices)
    vc = clip_near(vc, near)
    if len(vc) < 3:
        return None
    return np.column_stack([K.fx * vc[:, 0] / vc[:, 2] + K.cx, K.fy * vc[:, 1] / vc[:, 2] + K.cy])


def polygon_spans(poly_px: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Even-odd scanline spans of a polygon at sample rows ``ys``.

    Returns ``(row_index, x_left, x_right)``: on row ``ys[row_index]`` the
    polygon covers every sample x with ``x_left <= x < x_right``.
    """
    x0, y0 = poly_px[:, 0], poly_px[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    ymin, ymax = min(y0.min(), y1.min()), max(y0.max(), y1.max())
    r_lo = int(np.searchsorted(ys, ymin, side="left"))
    r_hi = int(np.searchsorted(ys, ymax, side="left"))
    if r_hi <= r_lo:
        empty = np.zeros(0)
        return empty.astype(int), empty, empty
    rows = np.arange(r_lo, r_hi)
    y = ys[rows][:, None]
    crosses = ((y0 <= y) & (y1 > y)) | ((y1 <= y) & (y0 > y))
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    xi = np.where(crosses, xi, np.inf)
    xi.sort(axis=1)
    count = crosses.sum(axis=1)
    max_pairs = int(count.max()) // 2 if len(count) else 0
    if max_pairs == 0:
        empty = np.zeros(0)
        return empty.astype(int), empty, empty
    left = xi[:, 0 : 2 * max_pairs : 2]
    right = xi[:, 1 : 2 * max_pairs : 2]
    valid = np.arange(max_pairs)[None, :] < (count // 2)[:, None]
    rr = np.broadcast_to(rows[:, None], left.shape)
    return rr[valid], left[valid], right[valid]


def pixel_centers(n: int, supersample: int = 1) -> np.ndarray:
    """Sample coordinates along one image axis for a given supersampling."""
    s = supersample
    return (np.arange(n * s) + 0.5) / s - 0.5


@dataclass
class RenderBuffers:
    kind: np.ndarray  # 0 none, 1 facade, 2 roof
    depth: np.ndarray
    polygon: np.ndarray  # index into the polygon list, -1 none
    polygons: list


_KIND_CODE = {FACADE: 1, ROOF: 2}


def render_model(
    polys: Sequence[ModelPolygon],
    pose: Pose,
    K: CameraIntrinsics,
    xs: np.ndarray,
    ys: np.ndarray,
    near: float = DEFAULT_CONFIG.near_clip_m,
) -> RenderBuffers:
    """Depth-buffered scanline rendering of model polygons at sample points."""
    H, W = len(ys), len(xs)
    kind = np.zeros((H, W), dtype=np.uint8)
    depth = np.full((H, W), np.inf)
    pid = np.full((H, W), -1, dtype=np.int32)
    pos = pose.position
    R = pose.rotation
    kinv = K.inverse
    for i, poly in enumerate(polys):
        if not facing_camera(poly, pos):
            continue
        px = project_polygon(poly, pose, K, near)
        if px is None:
            continue
        rows, xl, xr = polygon_spans(px, ys)
        if len(rows) == 0:
            continue
        c_lo = np.searchsorted(xs, xl, side="left")
        c_hi = np.searchsorted(xs, xr, side="left")
        keep = c_hi > c_lo
        if not np.any(keep):
            continue
        rows, c_lo, c_hi = rows[keep], c_lo[keep], c_hi[keep]
        r0, r1 = rows.min(), rows.max() + 1
        k0, k1 = c_lo.min(), c_hi.max()
        cols = np.arange(k0, k1)
        marks = np.zeros((r1 - r0, k1 - k0 + 1), dtype=np.int32)
        np.add.at(marks, (rows - r0, c_lo - k0), 1)
        np.add.at(marks, (rows - r0, c_hi - k0), -1)
        inside = np.cumsum(marks, axis=1)[:, :-1] > 0
        # depth along each sample ray from the polygon's plane
        n_c = R @ poly.normal
        d_c = float(n_c @ (R @ (poly.vertices[0] - pos)))
        rx = kinv[0, 0] * xs[cols] + kinv[0, 2]
        ry = kinv[1, 1] * ys[r0:r1] + kinv[1, 2]
        denom = n_c[0] * rx[None, :] + n_c[1] * ry[:, None] + n_c[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = d_c / denom
        sub_depth = depth[r0:r1, k0:k1]
        win = inside & (z < sub_depth) & (z > 0)
        sub_depth[win] = z[win]
        kind[r0:r1, k0:k1][win] = _KIND_CODE[poly.kind]
        pid[r0:r1, k0:k1][win] = i
    return RenderBuffers(kind, depth, pid, list(polys))


def project_model_mask(
    bmap,
    pose: Pose,
    K: CameraIntrinsics,
    classes: Iterable[str] = (FACADE,),
    near: float = DEFAULT_CONFIG.near_clip_m,
) -> dict[str, np.ndarray]:
    """Binary per-class masks of the projected extruded model.

    A pixel belongs to a mask when its center falls inside the visible part
    of a projected polygon of that class. Hidden surfaces are removed with a
    depth buffer.
    """
    polys = bmap.polygons() if isinstance(bmap, MapModel) else model_polygons(bmap)
    buf = render_model(polys, pose, K, pixel_centers(K.width), pixel_centers(K.height), near)
    out = {}
    for c in classes:
        if c not in _KIND_CODE:
            raise ValueError(f"model class must be one of {MODEL_CLASSES}, got {c!r}")
        out[c] = buf.kind == _KIND_CODE[c]
    return out
