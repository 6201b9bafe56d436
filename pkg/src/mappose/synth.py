"""Synthetic urban scenes with known ground truth.

Scenes are rectangular buildings on a flat ground plane, seen by a pinhole
camera 1.6 m above the ground. Every input of the estimator is produced
from the geometry: line segments (building edges, window rows, clutter), a
luminance image with windows, a window mask and a five-class probability
raster. Noise is injected according to a :class:`SceneSpec`.

Randomness comes from numpy's ``default_rng`` (PCG64) seeded by ``SceneSpec.seed``,
so a seed always reproduces the same bundle.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .alignment import CLASS_NAMES, EstimationInputs, ProbabilityRaster, multi_start_estimate
from .config import DEFAULT_CONFIG, Config
from .errors import MapPoseError, Unsatisfiable
from .geometry import CameraIntrinsics, Pose, rotation_angle, rotation_from_axis_angle, rot_x, rot_z
from .map_model import (
    FACADE,
    Building,
    BuildingMap,
    MapModel,
    pixel_centers,
    render_model,
    visible_corners,
    visible_facades,
)
from .orientation import segments_from_array
from .translation import GrayRaster

SKY, GROUND, ROOF_SHADE, WINDOW_SHADE = 0.92, 0.30, 0.22, 0.12
FLOOR_HEIGHT = 3.0
WINDOW_SILL, WINDOW_HEIGHT, WINDOW_WIDTH = 1.0, 1.5, 1.2


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_buildings: tuple = (4, 7)
    footprint_size: tuple = (8.0, 22.0)
    height_range: tuple = (8.0, 30.0)
    camera_height: float = 1.6
    width: int = 640
    height: int = 480
    hfov_deg: float = 60.0
    max_tilt_deg: float = 8.0  # ground-truth pitch/roll range
    # noise
    segment_noise_deg: float = 0.0
    dropout_p: float = 0.0
    clutter_count: int = 0
    flip_p: float = 0.0
    blur_px: float = 0.0
    prior_position_noise_m: float = 0.0
    prior_rotation_noise_deg: float = 0.0

    def __post_init__(self):
        for name in ("n_buildings", "footprint_size", "height_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo <= 0:
                raise ValueError(f"{name} must be a non-empty positive range")
        for name in ("dropout_p", "flip_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def zero_noise(cls, seed: int) -> "SceneSpec":
        return cls(seed=seed)

    @classmethod
    def sensor_like(cls, seed: int) -> "SceneSpec":
        return cls(
            seed=seed,
            segment_noise_deg=0.5,
            dropout_p=0.1,
            clutter_count=20,
            flip_p=0.1,
            prior_position_noise_m=10.0,
            prior_rotation_noise_deg=20.0,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("n_buildings", "footprint_size", "height_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        for k in ("n_buildings", "footprint_size", "height_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        f = (self.width / 2.0) / math.tan(math.radians(self.hfov_deg) / 2.0)
        return CameraIntrinsics(f, f, self.width / 2.0, self.height / 2.0, self.width, self.height)


@dataclass(eq=False)
class GroundTruthBundle:
    spec: SceneSpec
    map: BuildingMap
    K: CameraIntrinsics
    gt_pose: Pose
    sensor_pose: Pose
    segments: np.ndarray  # (n, 4) pixel endpoints
    image: np.ndarray  # (H, W) luminance in [0, 1]
    windows: np.ndarray  # (H, W) bool
    probs: ProbabilityRaster

    @property
    def scene_id(self) -> str:
        return f"scene-{self.spec.seed:05d}"

    def inputs(self) -> EstimationInputs:
        return EstimationInputs(
            MapModel(self.map),
            self.K,
            self.sensor_pose,
            segments_from_array(self.segments, self.K),
            GrayRaster(self.image),
            self.probs,
            self.windows,
        )


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def camera_rotation(heading: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """World-to-camera rotation for an x-right, y-down, z-forward camera.

    ``heading`` is the bearing of the optical axis from east; positive pitch
    tilts the optical axis down, positive roll turns the image clockwise.
    """
    f = np.array([math.cos(heading), math.sin(heading), 0.0])
    r = np.array([math.sin(heading), -math.cos(heading), 0.0])
    level = np.array([r, [0.0, 0.0, -1.0], f])
    return rot_z(roll) @ rot_x(pitch) @ level


def random_rotation_noise(rng: np.random.Generator, max_deg: float) -> np.ndarray:
    """Rotation about a uniformly random axis by an angle uniform in [0, max]."""
    if max_deg <= 0:
        return np.eye(3)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rotation_from_axis_angle(axis, math.radians(rng.uniform(0.0, max_deg)))


def pose_error(est: Pose, gt: Pose) -> tuple[float, float]:
    """(rotation error in degrees, horizontal position error in meters)."""
    rot = math.degrees(rotation_angle(est.rotation @ gt.rotation.T))
    d = est.position[:2] - gt.position[:2]
    return rot, float(math.hypot(d[0], d[1]))


def _rect(center, size, angle) -> np.ndarray:
    w, d = size
    c, s = math.cos(angle), math.sin(angle)
    local = np.array([[-w, -d], [w, -d], [w, d], [-w, d]]) / 2.0
    return local @ np.array([[c, s], [-s, c]]) + center


def _place_buildings(rng, spec: SceneSpec) -> list[Building]:
    n = int(rng.integers(spec.n_buildings[0], spec.n_buildings[1] + 1))
    placed: list[tuple[np.ndarray, float]] = []
    out = []
    for attempt in range(400):
        if len(out) == n:
            break
        size = rng.uniform(*spec.footprint_size, size=2)
        radius = float(np.hypot(*size)) / 2.0
        dist = rng.uniform(10.0 + radius, 55.0)
        bearing = rng.uniform(-math.pi, math.pi)
        center = dist * np.array([math.cos(bearing), math.sin(bearing)])
        if any(np.linalg.norm(center - c) < radius + r + 2.0 for c, r in placed):
            continue
        angle = rng.uniform(0.0, math.pi / 2)
        h = round(float(rng.uniform(*spec.height_range)), 2)
        fp = np.round(_rect(center, size, angle), 3)
        placed.append((center, radius))
        out.append(Building(f"b{len(out)}", fp, h))
    return out


def _clip_segment(p0, p1, W, H):
    """Liang-Barsky clip of a pixel segment to [0, W-1] x [0, H-1]."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], p0[0]), (d[0], W - 1 - p0[0]), (-d[1], p0[1]), (d[1], H - 1 - p0[1])):
        if abs(p) < 1e-15:
            if q < 0:
                return None
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return None
    return p0 + t0 * d, p0 + t1 * d


def _project_segment(pose: Pose, K: CameraIntrinsics, A, B, near: float = 0.1):
    ca, cb = pose.to_camera([A, B])
    if ca[2] < near and cb[2] < near:
        return None
    if ca[2] < near:
        ca = ca + (near - ca[2]) / (cb[2] - ca[2]) * (cb - ca)
    elif cb[2] < near:
        cb = cb + (near - cb[2]) / (ca[2] - cb[2]) * (ca - cb)
    pa = np.array([K.fx * ca[0] / ca[2] + K.cx, K.fy * ca[1] / ca[2] + K.cy])
    pb = np.array([K.fx * cb[0] / cb[2] + K.cx, K.fy * cb[1] / cb[2] + K.cy])
    return _clip_segment(pa, pb, K.width, K.height)


def _window_columns(length: float, spacing: float) -> np.ndarray:
    """Centers of window columns along a façade, inset from both ends."""
    n = int((length - 2.0) // spacing)
    if n < 1:
        return np.zeros(0)
    span = (n - 1) * spacing
    return (length - span) / 2.0 + spacing * np.arange(n)


# ---------------------------------------------------------------------------
# scene generation
# ---------------------------------------------------------------------------


def _find_camera(rng, spec: SceneSpec, model: MapModel, K: CameraIntrinsics) -> Pose:
    cfg = DEFAULT_CONFIG.with_overrides(frustum_margin=0.0)
    for attempt in range(1000):
        xy = rng.uniform(-35.0, 35.0, size=2)
        if model.map.contains_point(xy) is not None:
            continue
        if min(_distance_to_polygon(xy, b.footprint) for b in model.map.buildings) < 4.0:
            continue
        # look roughly towards a random building
        b = model.map.buildings[int(rng.integers(len(model.map.buildings)))]
        to_b = b.centroid - xy
        heading = math.atan2(to_b[1], to_b[0]) + rng.uniform(-0.4, 0.4)
        pitch = math.radians(rng.uniform(0.0, spec.max_tilt_deg))
        roll = math.radians(rng.uniform(-spec.max_tilt_deg, spec.max_tilt_deg) / 2.0)
        pose = Pose.on_ground(camera_rotation(heading, pitch, roll), xy, spec.camera_height)
        frags = visible_facades(model.tree, pose, K, cfg)
        wide = [f for f in frags if np.linalg.norm(f.b - f.a) > 3.0]
        if len({f.facade_id for f in wide}) < 2:
            continue
        corners = visible_corners(model.tree, pose, K, cfg)
        px, depth = pose.project([c.position for c in corners], K)
        inside = (depth > 1.0) & (px[:, 0] > 5) & (px[:, 0] < K.width - 6)
        if int(inside.sum()) < 3:
            continue
        if not _enough_segments(model, pose, K):
            continue
        return pose
    raise Unsatisfiable("no valid camera placement found in 1000 attempts")


def _enough_segments(model, pose, K) -> bool:
    # need visible façade area in the upper image
    buf = render_model(model.polygons(), pose, K, np.arange(0, K.width, 8.0), np.arange(0, K.height, 8.0))
    return float(np.mean(buf.kind == 1)) > 0.08


def _distance_to_polygon(xy, poly) -> float:
    a = poly
    b = np.roll(poly, -1, axis=0)
    d = b - a
    t = np.clip(np.einsum("ij,ij->i", xy - a, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
    return float(np.min(np.linalg.norm(a + t[:, None] * d - xy, axis=1)))


def _model_segments(rng, model: MapModel, pose: Pose, K: CameraIntrinsics, spacing: dict):
    """Noise-free segments on projected model edges and window outlines."""
    cfg = DEFAULT_CONFIG.with_overrides(frustum_margin=0.0)
    out = []
    heights = {b.id: b.height for b in model.map.buildings}
    for vf in visible_facades(model.tree, pose, K, cfg):
        f = vf.facade
        h = heights[f.building_id]
        d = (f.b - f.a) / f.length
        sa = float((vf.a - f.a) @ d)
        sb = float((vf.b - f.a) @ d)
        lo, hi = min(sa, sb), max(sa, sb)
        # vertical building edges, split into pieces
        for pt, is_end in ((vf.a, vf.a_is_end), (vf.b, vf.b_is_end)):
            if not is_end:
                continue
            cuts = np.sort(rng.uniform(0.0, h, size=int(rng.integers(0, 3))))
            zs = np.concatenate([[0.0], cuts, [h]])
            for z0, z1 in zip(zs[:-1], zs[1:]):
                out.append((np.array([pt[0], pt[1], z0]), np.array([pt[0], pt[1], z1])))
        # roof line
        out.append((np.array([*(f.a + lo * d), h]), np.array([*(f.a + hi * d), h])))
        sp, n_floors = _building_windows_params(f, h, spacing)
        cols = _window_columns(f.length, sp)
        cols = cols[(cols - WINDOW_WIDTH / 2 >= lo) & (cols + WINDOW_WIDTH / 2 <= hi)]
        if len(cols) == 0:
            continue
        s0, s1 = cols[0] - WINDOW_WIDTH / 2, cols[-1] + WINDOW_WIDTH / 2
        for k in range(n_floors):
            zb = WINDOW_SILL + k * FLOOR_HEIGHT
            zt = zb + WINDOW_HEIGHT
            for z in (zb, zt):
                out.append((np.array([*(f.a + s0 * d), z]), np.array([*(f.a + s1 * d), z])))
            for c in cols:
                for s in (c - WINDOW_WIDTH / 2, c + WINDOW_WIDTH / 2):
                    p = f.a + s * d
                    out.append((np.array([p[0], p[1], zb]), np.array([p[0], p[1], zt])))
    segs = []
    for A, B in out:
        r = _project_segment(pose, K, A, B)
        if r is None:
            continue
        p0, p1 = r
        if np.linalg.norm(p1 - p0) >= 2.0:
            segs.append(np.concatenate([p0, p1]))
    return np.array(segs).reshape(-1, 4)


def _building_windows_params(f, h: float, spacing: dict):
    sp = spacing[f.building_id]
    n_floors = int((h - WINDOW_SILL - WINDOW_HEIGHT) // FLOOR_HEIGHT) + 1
    return sp, max(0, n_floors)


def _perturb_segments(rng, segs: np.ndarray, spec: SceneSpec, K: CameraIntrinsics) -> np.ndarray:
    if len(segs) and spec.dropout_p > 0:
        segs = segs[rng.uniform(size=len(segs)) >= spec.dropout_p]
    if len(segs) and spec.segment_noise_deg > 0:
        mid = (segs[:, :2] + segs[:, 2:]) / 2.0
        half = (segs[:, 2:] - segs[:, :2]) / 2.0
        a = np.radians(rng.normal(0.0, spec.segment_noise_deg, size=len(segs)))
        c, s = np.cos(a), np.sin(a)
        rot = np.column_stack([c * half[:, 0] - s * half[:, 1], s * half[:, 0] + c * half[:, 1]])
        segs = np.column_stack([mid - rot, mid + rot])
    if spec.clutter_count > 0:
        p0 = rng.uniform([0, 0], [K.width - 1, K.height - 1], size=(spec.clutter_count, 2))
        ang = rng.uniform(0, math.pi, size=spec.clutter_count)
        ln = rng.uniform(15.0, 80.0, size=spec.clutter_count)
        p1 = p0 + ln[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
        p1 = np.clip(p1, 0, [K.width - 1, K.height - 1])
        segs = np.vstack([segs, np.column_stack([p0, p1])])
    keep = np.linalg.norm(segs[:, 2:] - segs[:, :2], axis=1) > 1e-6
    return segs[keep]


def _render_images(model: MapModel, pose: Pose, K: CameraIntrinsics, spacing: dict, shades: dict, ss: int = 3):
    """Antialiased luminance, window mask and per-pixel class labels."""
    polys = model.polygons()
    xs, ys = pixel_centers(K.width, ss), pixel_centers(K.height, ss)
    buf = render_model(polys, pose, K, xs, ys)
    H, W = len(ys), len(xs)
    lum = np.empty((H, W))
    window = np.zeros((H, W), dtype=bool)

    # sky above the horizon, ground below
    up = pose.up_in_camera
    X, Y = np.meshgrid(xs, ys)
    rays_dot_up = ((X - K.cx) / K.fx) * up[0] + ((Y - K.cy) / K.fy) * up[1] + up[2]
    lum[:] = np.where(rays_dot_up > 0, SKY, GROUND)

    fac_ids = {i: p for i, p in enumerate(polys)}
    heights = {b.id: b.height for b in model.map.buildings}
    by_fid = {f.id: f for f in model.facades}
    pid = buf.polygon
    lum[buf.kind == 2] = ROOF_SHADE
    Rt = pose.rotation.T
    pos = pose.position
    for i in np.unique(pid[buf.kind == 1]):
        sel = pid == i
        f = by_fid[fac_ids[int(i)].facade_id]
        z = buf.depth[sel]
        cam = np.column_stack([(X[sel] - K.cx) / K.fx * z, (Y[sel] - K.cy) / K.fy * z, z])
        world = cam @ Rt.T + pos
        d = (f.b - f.a) / f.length
        s = (world[:, :2] - f.a) @ d
        zz = world[:, 2]
        sp, n_floors = _building_windows_params(f, heights[f.building_id], spacing)
        cols = _window_columns(f.length, sp)
        win = np.zeros(len(s), dtype=bool)
        if len(cols) and n_floors:
            k = np.floor((zz - WINDOW_SILL) / FLOOR_HEIGHT)
            in_row = (k >= 0) & (k < n_floors) & ((zz - WINDOW_SILL - k * FLOOR_HEIGHT) <= WINDOW_HEIGHT)
            nearest = cols[np.clip(np.searchsorted(cols, s) - 1, 0, len(cols) - 1)]
            nearest2 = cols[np.clip(np.searchsorted(cols, s), 0, len(cols) - 1)]
            in_col = (np.abs(s - nearest) <= WINDOW_WIDTH / 2) | (np.abs(s - nearest2) <= WINDOW_WIDTH / 2)
            win = in_row & in_col
        lum[sel] = np.where(win, WINDOW_SHADE, shades[f.id])
        window[sel] = win
    lum = lum.reshape(K.height, ss, K.width, ss).mean(axis=(1, 3))
    window = window.reshape(K.height, ss, K.width, ss).any(axis=(1, 3))

    # class labels at pixel centres
    cbuf = render_model(polys, pose, K, pixel_centers(K.width), pixel_centers(K.height))
    X1, Y1 = np.meshgrid(pixel_centers(K.width), pixel_centers(K.height))
    above = ((X1 - K.cx) / K.fx) * up[0] + ((Y1 - K.cy) / K.fy) * up[1] + up[2] > 0
    labels = np.where(above, CLASS_NAMES.index("sky"), CLASS_NAMES.index("ground"))
    labels[cbuf.kind == 1] = CLASS_NAMES.index("facade")
    labels[cbuf.kind == 2] = CLASS_NAMES.index("roof")
    return lum, window, labels


def _add_vegetation(rng, labels: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    ground = CLASS_NAMES.index("ground")
    veg = CLASS_NAMES.index("vegetation")
    Y, X = np.mgrid[0 : K.height, 0 : K.width]
    for _ in range(int(rng.integers(0, 4))):
        cx, cy = rng.uniform(0, K.width), rng.uniform(K.height * 0.6, K.height)
        rx, ry = rng.uniform(15, 60), rng.uniform(10, 40)
        blob = ((X - cx) / rx) ** 2 + ((Y - cy) / ry) ** 2 <= 1.0
        labels = np.where(blob & (labels == ground), veg, labels)
    return labels


def _probabilities(rng, labels: np.ndarray, spec: SceneSpec) -> np.ndarray:
    n = len(CLASS_NAMES)
    if spec.flip_p > 0:
        flip = rng.uniform(size=labels.shape) < spec.flip_p
        other = (labels + rng.integers(1, n, size=labels.shape)) % n
        labels = np.where(flip, other, labels)
    probs = np.zeros(labels.shape + (n,))
    np.put_along_axis(probs, labels[:, :, None], 1.0, axis=2)
    if spec.blur_px > 0:
        probs = ndimage.gaussian_filter(probs, sigma=(spec.blur_px, spec.blur_px, 0))
        probs /= probs.sum(axis=2, keepdims=True)
    return probs


def generate_scene(spec: SceneSpec) -> GroundTruthBundle:
    """Deterministic synthetic bundle for ``spec``.

    Raises:
        Unsatisfiable: no camera placement meets the visibility requirements.
    """
    rng = np.random.default_rng(spec.seed)
    K = spec.intrinsics
    buildings = _place_buildings(rng, spec)
    if len(buildings) < 1:
        raise Unsatisfiable("could not place any building")
    bmap = BuildingMap(tuple(buildings), (47.0, 8.0))
    model = MapModel(bmap)
    gt = _find_camera(rng, spec, model, K)

    spacing = {b.id: float(rng.uniform(2.5, 4.0)) for b in buildings}
    base = {b.id: float(rng.uniform(0.45, 0.7)) for b in buildings}
    shades = {}
    for f in model.facades:
        shades[f.id] = base[f.building_id] + (0.1 if f.edge_index % 2 else -0.1)

    segs = _model_segments(rng, model, gt, K, spacing)
    segs = _perturb_segments(rng, segs, spec, K)
    image, windows, labels = _render_images(model, gt, K, spacing, shades)
    labels = _add_vegetation(rng, labels, K)
    probs = ProbabilityRaster(_probabilities(rng, labels, spec))

    sensor = gt
    if spec.prior_position_noise_m > 0 or spec.prior_rotation_noise_deg > 0:
        noise_r = random_rotation_noise(rng, spec.prior_rotation_noise_deg)
        for attempt in range(1000):
            r = spec.prior_position_noise_m * math.sqrt(rng.uniform())
            a = rng.uniform(-math.pi, math.pi)
            xy = gt.position[:2] + r * np.array([math.cos(a), math.sin(a)])
            if bmap.contains_point(xy) is None:
                break
        else:
            raise Unsatisfiable("no sensor position outside the buildings")
        sensor = Pose.on_ground(noise_r @ gt.rotation, xy, spec.camera_height)
    return GroundTruthBundle(spec, bmap, K, gt, sensor, segs, image, windows, probs)


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


@dataclass
class SceneResult:
    scene_id: str
    sensor_rot_deg: float
    sensor_trans_m: float
    corrected_rot_deg: float
    corrected_trans_m: float
    status: str = "ok"
    reason: str = ""
    seconds: float = 0.0


@dataclass
class BenchmarkReport:
    results: list
    rotation_curve: list = field(default_factory=list)  # (scene id, sensor, corrected), descending
    translation_curve: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def pipeline_estimator(cfg: Config = DEFAULT_CONFIG) -> Callable[[GroundTruthBundle], Pose]:
    def run(bundle: GroundTruthBundle) -> Pose:
        return multi_start_estimate(bundle.inputs(), cfg).best.pose

    return run


def identity_estimator(bundle: GroundTruthBundle) -> Pose:
    return bundle.sensor_pose


def evaluate_bundle(bundle: GroundTruthBundle, estimator) -> SceneResult:
    s_rot, s_tr = pose_error(bundle.sensor_pose, bundle.gt_pose)
    t0 = time.perf_counter()
    try:
        est = estimator(bundle)
        status, reason = "ok", ""
    except MapPoseError as exc:
        # a failed estimate leaves the sensor pose in place
        est, status, reason = bundle.sensor_pose, "failed", exc.reason
    dt = time.perf_counter() - t0
    c_rot, c_tr = pose_error(est, bundle.gt_pose)
    return SceneResult(bundle.scene_id, s_rot, s_tr, c_rot, c_tr, status, reason, dt)


def summarize(results: Sequence[SceneResult]) -> BenchmarkReport:
    rot = sorted(results, key=lambda r: (-r.corrected_rot_deg, r.scene_id))
    tr = sorted(results, key=lambda r: (-r.corrected_trans_m, r.scene_id))
    summary: dict = {"n": len(results), "failed": sum(r.status != "ok" for r in results)}
    if results:
        cr = np.array([r.corrected_rot_deg for r in results])
        ct = np.array([r.corrected_trans_m for r in results])
        sr = np.array([r.sensor_rot_deg for r in results])
        st = np.array([r.sensor_trans_m for r in results])
        summary.update(
            median_corrected_rot_deg=float(np.median(cr)),
            median_corrected_trans_m=float(np.median(ct)),
            median_sensor_rot_deg=float(np.median(sr)),
            median_sensor_trans_m=float(np.median(st)),
            improved_rot_frac=float(np.mean(cr < sr)),
            improved_trans_frac=float(np.mean(ct < st)),
        )
        for t in (1.0, 2.0, 3.0):
            summary[f"rot_below_{t:g}deg"] = float(np.mean(cr < t))
        for t in (1.0, 2.0, 4.0):
            summary[f"trans_below_{t:g}m"] = float(np.mean(ct < t))
    return BenchmarkReport(
        list(results),
        [(r.scene_id, r.sensor_rot_deg, r.corrected_rot_deg) for r in rot],
        [(r.scene_id, r.sensor_trans_m, r.corrected_trans_m) for r in tr],
        summary,
    )


def run_benchmark(specs: Sequence[SceneSpec], estimator=None) -> BenchmarkReport:
    """Evaluate ``estimator`` (default: the full pipeline) on generated scenes.

    Per-scene failures are recorded, never raised.
    """
    if not specs:
        raise ValueError("no scenes to evaluate")
    estimator = estimator or pipeline_estimator()
    results = []
    for spec in specs:
        try:
            bundle = generate_scene(spec)
        except MapPoseError as exc:
            results.append(SceneResult(f"scene-{spec.seed:05d}", math.nan, math.nan, math.nan, math.nan, "skipped", exc.reason))
            continue
        results.append(evaluate_bundle(bundle, estimator))
    return summarize([r for r in results if r.status != "skipped"])
