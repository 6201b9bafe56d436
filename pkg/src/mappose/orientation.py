"""Absolute camera orientation from line segments and the building map.

The vertical vanishing point fixes pitch and roll (``r_v``); façade
directions taken from the map fix the remaining rotation about gravity
(``r_h``). Rotations here follow the alignment convention: ``r_v`` maps
camera coordinates into a gravity-aligned frame (``r_v @ vp == z``) and
``r_h`` maps that frame into the world, so the camera-to-world rotation is
``r_h @ r_v`` and the world-to-camera rotation stored in a
:class:`~mappose.geometry.Pose` is ``r_v.T @ r_h.T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .config import DEFAULT_CONFIG, Config
from .errors import (
    BothRootsRejected,
    InsufficientSegments,
    NoConsensus,
    NoFacadeAssignments,
    NoRealRoot,
    PipelineError,
)
from .geometry import (
    EZ,
    CameraIntrinsics,
    Pose,
    angular_errors,
    compose,
    normalize_image_line,
    rotation_from_axis_angle,
    unit,
)
from .map_model import Facade, MapModel, points_in_polygon, visible_facades

UNCLASSIFIED = "unclassified"
VERTICAL = "vertical"
HORIZONTAL = "horizontal-candidate"
REJECTED = "rejected"


@dataclass(eq=False)
class LineSegment:
    p0: np.ndarray
    p1: np.ndarray
    line: np.ndarray
    label: str = UNCLASSIFIED
    index: int = -1

    @classmethod
    def from_pixels(cls, p0, p1, K: CameraIntrinsics, index: int = -1) -> "LineSegment":
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        return cls(p0, p1, normalize_image_line(p0, p1, K), UNCLASSIFIED, index)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def midpoint(self) -> np.ndarray:
        return (self.p0 + self.p1) / 2.0

    def relabel(self, label: str) -> "LineSegment":
        return replace(self, label=label)


def segments_from_array(arr, K: CameraIntrinsics) -> list[LineSegment]:
    arr = np.asarray(arr, dtype=float).reshape(-1, 4)
    return [LineSegment.from_pixels(r[:2], r[2:], K, i) for i, r in enumerate(arr)]


@dataclass(frozen=True, eq=False)
class VpConsensus:
    vp: np.ndarray
    inliers: tuple  # indices into the input list
    threshold_sigma: float
    pair: tuple = (-1, -1)
    error_sum: float = 0.0


@dataclass(frozen=True, eq=False)
class YawSolution:
    q: float
    phi_z: float
    rotation: np.ndarray
    inliers: tuple = ()


@dataclass(eq=False)
class RotationEstimate:
    rotation: np.ndarray  # world -> camera
    r_v: np.ndarray
    r_h: np.ndarray
    phi_z: float
    vertical: VpConsensus
    vp: np.ndarray  # refined vertical vanishing point
    yaw: YawSolution
    n_pairs: int
    segments: list = field(default_factory=list)
    pairs: list = field(default_factory=list)  # (segment index, facade id)


# ---------------------------------------------------------------------------
# segment filtering
# ---------------------------------------------------------------------------


def _image_vp(up_cam: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    return K.matrix @ up_cam


def _direction_towards(vp_h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Image direction from each point towards a homogeneous image point."""
    return vp_h[None, :2] - pts * vp_h[2]


def _angle_between_dirs(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Unsigned angle between undirected 2D directions, degrees in [0, 90]."""
    n = np.linalg.norm(d1, axis=1) * np.linalg.norm(d2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.abs(np.einsum("ij,ij->i", d1, d2)) / n
    c = np.where(np.isfinite(c), c, 1.0)
    return np.degrees(np.arccos(np.clip(c, 0.0, 1.0)))


def min_segment_length(K: CameraIntrinsics, cfg: Config) -> float:
    if cfg.min_segment_length_px is not None:
        return cfg.min_segment_length_px
    return cfg.min_segment_length_frac * K.diagonal


def filter_segments(
    segs: Sequence[LineSegment], sensor_pose: Pose, K: CameraIntrinsics, cfg: Config = DEFAULT_CONFIG
) -> list[LineSegment]:
    """Length, horizon and gravity filters.

    Survivors are labelled ``vertical`` when they point towards the vertical
    vanishing point predicted by the sensor, ``unclassified`` otherwise.
    """
    if not segs:
        return []
    up = sensor_pose.up_in_camera
    P0 = np.array([s.p0 for s in segs])
    P1 = np.array([s.p1 for s in segs])
    mid = (P0 + P1) / 2.0
    lengths = np.linalg.norm(P1 - P0, axis=1)
    keep = lengths >= min_segment_length(K, cfg)

    horizon = K.inverse.T @ up
    hn = np.linalg.norm(horizon[:2])
    if hn > 1e-12:
        above = (mid @ horizon[:2] + horizon[2]) / hn
        keep &= above >= cfg.horizon_margin_px
    else:
        keep &= up[2] > 0

    vp = _image_vp(up, K)
    angle = _angle_between_dirs(P1 - P0, _direction_towards(vp, mid))
    is_vertical = angle < cfg.vertical_angle_deg

    out = []
    for s, k, v in zip(segs, keep, is_vertical):
        if k:
            out.append(s.relabel(VERTICAL if v else UNCLASSIFIED))
    return out


def classify_horizontal(
    segs: Sequence[LineSegment], vp: np.ndarray, K: CameraIntrinsics, cfg: Config = DEFAULT_CONFIG
) -> list[LineSegment]:
    """Label non-vertical survivors that are far from the corrected vertical."""
    out = []
    if not segs:
        return out
    vp_img = K.matrix @ vp
    P0 = np.array([s.p0 for s in segs])
    P1 = np.array([s.p1 for s in segs])
    angle = _angle_between_dirs(P1 - P0, _direction_towards(vp_img, (P0 + P1) / 2.0))
    for s, a in zip(segs, angle):
        if s.label == VERTICAL:
            out.append(s)
        elif a > cfg.horizontal_exclusion_deg:
            out.append(s.relabel(HORIZONTAL))
        else:
            out.append(s.relabel(REJECTED))
    return out


# ---------------------------------------------------------------------------
# vertical vanishing point
# ---------------------------------------------------------------------------


def _orient(vps: np.ndarray, up_hint: np.ndarray) -> np.ndarray:
    s = np.sign(vps @ up_hint)
    s[s == 0] = 1.0
    return vps * s[:, None]


def estimate_vertical_vp(
    verticals: Sequence[LineSegment],
    cfg: Config = DEFAULT_CONFIG,
    up_hint=(0.0, -1.0, 0.0),
    max_tilt_deg: Optional[float] = None,
) -> VpConsensus:
    """Exhaustive pairwise consensus for the dominant vertical vanishing point.

    Every pair of segments proposes ``l_i x l_j``; the proposal explaining the
    most segments within ``cfg.sigma_deg`` wins. Ties go to the smaller sum of
    inlier errors, then to the lowest pair index. The result is oriented so
    that it points to ``up_hint`` (world up as predicted in camera frame).
    With ``max_tilt_deg`` set, proposals farther than that from ``up_hint``
    are discarded before scoring.

    Raises:
        InsufficientSegments: fewer than two segments.
        NoConsensus: the best proposal has fewer than
            ``cfg.min_vertical_inliers`` inliers.
    """
    n = len(verticals)
    if n < 2:
        raise InsufficientSegments(f"need at least 2 vertical segments, got {n}")
    L = np.array([s.line for s in verticals])
    up_hint = np.asarray(up_hint, dtype=float)
    ii, jj = np.triu_indices(n, 1)
    sigma = cfg.sigma_deg

    best = None  # (count, err_sum, i, j, vp)
    chunk = max(1, 2_000_000 // n)
    for start in range(0, len(ii), chunk):
        i, j = ii[start : start + chunk], jj[start : start + chunk]
        P = np.cross(L[i], L[j])
        norm = np.linalg.norm(P, axis=1)
        ok = norm > 1e-12
        if not np.any(ok):
            continue
        i, j, P = i[ok], j[ok], P[ok] / norm[ok, None]
        P = _orient(P, up_hint)
        if max_tilt_deg is not None:
            near = P @ unit(up_hint) >= math.cos(math.radians(max_tilt_deg))
            if not np.any(near):
                continue
            i, j, P = i[near], j[near], P[near]
        err = angular_errors(P, L)
        inl = err <= sigma
        count = inl.sum(axis=1)
        esum = np.where(inl, err, 0.0).sum(axis=1)
        order = np.lexsort((j, i, esum, -count))
        k = order[0]
        cand = (int(count[k]), float(esum[k]), int(i[k]), int(j[k]), P[k])
        if best is None or (-cand[0], cand[1], cand[2], cand[3]) < (-best[0], best[1], best[2], best[3]):
            best = cand
    if best is None:
        raise NoConsensus("all segment pairs are degenerate")
    count, esum, i, j, vp = best
    if count < cfg.min_vertical_inliers:
        raise NoConsensus(
            f"vertical vanishing point has {count} inliers, need {cfg.min_vertical_inliers}"
        )
    inliers = tuple(int(k) for k in np.nonzero(angular_errors(vp, L)[0] <= sigma)[0])
    return VpConsensus(vp, inliers, sigma, (i, j), esum)


def adaptive_threshold(errors_deg, cap_deg: float, floor_deg: float = 1e-7) -> float:
    """Three robust standard deviations (MAD about zero) of ``errors_deg``,
    clipped to ``[floor_deg, cap_deg]``."""
    scale = 1.4826 * float(np.median(errors_deg))
    return min(cap_deg, max(floor_deg, 3.0 * scale))


def _sin_to(points: np.ndarray, rays: np.ndarray) -> np.ndarray:
    """Sine of the angle between each unit ray and its point (rows)."""
    return np.linalg.norm(np.cross(points, rays), axis=-1)


def refine_vanishing_point(
    lines: np.ndarray, vp: np.ndarray, rays=None, tau_deg: float = 2.0
) -> np.ndarray:
    """Least-squares point closest to the lines, sign-matched to ``vp``.

    With ``rays`` (unit viewing rays of the segment midpoints), each
    residual is divided by the sine of the angle between its midpoint and
    the point: a segment turned by a small angle about its midpoint moves
    its line by that factor, so the normalized residual estimates the
    segment's own angular error. Iterates a fit over the segments within an
    adaptive threshold (see :func:`adaptive_threshold`, at most
    ``tau_deg``). With exact segments the threshold collapses onto the
    exactly incident lines, so near-vertical outliers never bias an exact
    consensus point.
    """
    L = np.atleast_2d(lines)
    if len(L) < 2:
        return vp
    v = np.asarray(vp, dtype=float)
    R = None if rays is None else np.atleast_2d(rays)
    prev = None
    for _ in range(20):
        s = np.ones(len(L)) if R is None else np.maximum(_sin_to(v[None, :], R), 1e-3)
        e = angular_errors(v, L)[0] / s
        keep = e <= adaptive_threshold(e, tau_deg)
        if keep.sum() < 2 or (prev is not None and np.array_equal(keep, prev)):
            break
        prev = keep
        w = np.where(keep, 1.0 / s**2, 0.0)
        _, vecs = np.linalg.eigh((L * w[:, None]).T @ L)
        v = vecs[:, 0] if vecs[:, 0] @ vp >= 0 else -vecs[:, 0]
    return v


def vertical_alignment_rotation(vp) -> np.ndarray:
    """Rotation taking the unit vertical vanishing point onto z = (0, 0, 1)."""
    vp = unit(vp)
    u = np.cross(vp, EZ)
    s, c = float(np.linalg.norm(u)), float(vp @ EZ)
    if s == 0.0:
        if c > 0:
            return np.eye(3)
        return rotation_from_axis_angle([1.0, 0.0, 0.0], math.pi)
    # atan2 keeps small angles accurate where acos would not
    return rotation_from_axis_angle(u, math.atan2(s, c))


# ---------------------------------------------------------------------------
# yaw from façades
# ---------------------------------------------------------------------------


def facade_horizontal_vp(f) -> np.ndarray:
    """Direction along a façade: its outward normal crossed with z."""
    n = f.normal if isinstance(f, Facade) else np.asarray(f, dtype=float)
    return unit(np.cross(n, EZ))


def yaw_rotation(q: float) -> np.ndarray:
    """Rotation about z parameterized by ``q = tan(phi / 2)``."""
    if math.isinf(q):
        return np.diag([-1.0, -1.0, 1.0])
    if abs(q) <= 1.0:
        s = 1.0 + q * q
        c, si = (1.0 - q * q) / s, 2.0 * q / s
    else:
        # same terms in 1/q, which cannot overflow
        r = 1.0 / q
        s = r * r + 1.0
        c, si = (r * r - 1.0) / s, 2.0 * r / s
    return np.array([[c, -si, 0.0], [si, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_coefficients(l, p_h) -> tuple[float, float]:
    """``(A, B)`` with ``p_h . (R_h(phi) l) = A cos(phi) + B sin(phi)``."""
    return (
        float(p_h[0] * l[0] + p_h[1] * l[1]),
        float(p_h[1] * l[0] - p_h[0] * l[1]),
    )


def yaw_roots(l, p_h) -> list[YawSolution]:
    """Both solutions of ``p_h . (R_h(q) l) = 0``.

    Multiplying the constraint by ``1 + q^2`` gives
    ``-A q^2 + 2 B q + A = 0``; its roots multiply to -1 and correspond to
    yaw angles half a turn apart.

    Raises:
        NoRealRoot: the constraint holds for every yaw (line has no
            horizontal component after correction).
    """
    A, B = yaw_coefficients(l, p_h)
    r = math.hypot(A, B)
    if r < 1e-15:
        raise NoRealRoot("line is degenerate for yaw estimation")
    q1 = -A / (B + math.copysign(r, B))
    q2 = -1.0 / q1 if q1 != 0.0 else math.inf
    out = []
    for q in (q1, q2):
        phi = 2.0 * math.atan(q) if not math.isinf(q) else math.pi
        out.append(YawSolution(q, phi, yaw_rotation(q)))
    return out


def solve_yaw(l, p_h, n_f, view_dir=(0.0, 1.0, 0.0)) -> YawSolution:
    """Yaw aligning a corrected image line with a façade's vanishing direction.

    ``view_dir`` is the viewing ray in the gravity-aligned frame (default:
    the forward axis of an upright camera); the returned root is the one
    whose world viewing ray faces against the façade normal.

    Raises:
        NoRealRoot: degenerate constraint.
        BothRootsRejected: neither root looks at the front of the façade.
    """
    n_f = np.asarray(n_f, dtype=float)
    w = np.asarray(view_dir, dtype=float)
    accepted = [s for s in yaw_roots(l, p_h) if float((s.rotation @ w) @ n_f) < 0]
    if len(accepted) != 1:
        raise BothRootsRejected("no unique root faces the façade")
    return accepted[0]


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def yaw_consensus(
    lines: np.ndarray,
    p_hs: np.ndarray,
    normals: np.ndarray,
    view_dirs: np.ndarray,
    cfg: Config = DEFAULT_CONFIG,
    phi_reference: Optional[float] = None,
) -> YawSolution:
    """Score the yaw proposed by every ⟨line, façade⟩ pair against all pairs.

    A pair is an inlier of a hypothesis when its corrected line passes within
    ``cfg.sigma_deg`` of its own façade's vanishing direction. When
    ``phi_reference`` is given, proposals farther than
    ``cfg.max_yaw_correction_deg`` from it are discarded.

    Raises:
        NoConsensus: no proposal survives or the winner has fewer than
            ``cfg.min_yaw_inliers`` inliers.
    """
    m = len(lines)
    phis, qs, idx = [], [], []
    for j in range(m):
        try:
            sol = solve_yaw(lines[j], p_hs[j], normals[j], view_dirs[j])
        except PipelineError:
            continue
        if phi_reference is not None:
            if abs(float(wrap_angle(sol.phi_z - phi_reference))) > math.radians(cfg.max_yaw_correction_deg):
                continue
        phis.append(sol.phi_z)
        qs.append(sol.q)
        idx.append(j)
    if not phis:
        raise NoConsensus("no admissible yaw hypothesis")
    AB = np.array([yaw_coefficients(lines[j], p_hs[j]) for j in range(m)])
    phis_a = np.array(phis)
    res = np.cos(phis_a)[:, None] * AB[None, :, 0] + np.sin(phis_a)[:, None] * AB[None, :, 1]
    err = np.degrees(np.abs(np.arcsin(np.clip(res, -1.0, 1.0))))
    inl = err <= cfg.sigma_deg
    count = inl.sum(axis=1)
    esum = np.where(inl, err, 0.0).sum(axis=1)
    k = int(np.lexsort((np.arange(len(phis)), esum, -count))[0])
    if count[k] < cfg.min_yaw_inliers:
        raise NoConsensus(f"yaw hypothesis has {int(count[k])} inliers, need {cfg.min_yaw_inliers}")
    inliers = tuple(int(j) for j in np.nonzero(inl[k])[0])
    return YawSolution(qs[k], phis[k], yaw_rotation(qs[k]), inliers)


def refine_yaw(lines, p_hs, inliers, phi0: float, tau_deg: float = 2.0, rays=None) -> float:
    """Least-squares yaw over inlier pairs, starting from ``phi0``'s branch.

    ``rays`` are the unit midpoint rays of the lines in the same frame;
    residuals are normalized as in :func:`refine_vanishing_point`. Pairs are
    kept while within an adaptive threshold of the current estimate.
    """
    idx = list(inliers)
    AB = np.array([yaw_coefficients(lines[j], p_hs[j]) for j in idx]).reshape(-1, 2)
    if len(AB) < 2:
        return phi0
    P = np.asarray(p_hs, dtype=float)[idx]
    M = None if rays is None else np.asarray(rays, dtype=float)[idx]

    def scale(phi):
        if M is None:
            return np.ones(len(AB))
        # façade directions seen in the corrected camera frame
        d = P @ _yaw_about_z(phi)
        return np.maximum(_sin_to(d, M), 1e-3)

    def errors(phi):
        res = np.abs(AB[:, 0] * math.cos(phi) + AB[:, 1] * math.sin(phi))
        return np.degrees(np.arcsin(np.clip(res, 0.0, 1.0)))

    phi, prev = phi0, None
    for _ in range(20):
        s = scale(phi)
        e = errors(phi) / s
        keep = e <= adaptive_threshold(e, tau_deg)
        if keep.sum() < 2 or (prev is not None and np.array_equal(keep, prev)):
            break
        prev = keep
        W = AB[keep] / s[keep, None]
        _, vecs = np.linalg.eigh(W.T @ W)
        c, sn = vecs[:, 0]
        if c * math.cos(phi) + sn * math.sin(phi) < 0:
            c, sn = -c, -sn
        phi = math.atan2(sn, c)
    return phi


def _facade_quad_px(vf, pose: Pose, K: CameraIntrinsics, near: float):
    from .map_model import clip_near

    a, b, h = vf.a, vf.b, vf.facade.height
    verts = np.array([[a[0], a[1], 0.0], [b[0], b[1], 0.0], [b[0], b[1], h], [a[0], a[1], h]])
    vc = clip_near(pose.to_camera(verts), near)
    if len(vc) < 3:
        return None
    return np.column_stack([K.fx * vc[:, 0] / vc[:, 2] + K.cx, K.fy * vc[:, 1] / vc[:, 2] + K.cy])


def assign_facades(
    segs: Sequence[LineSegment], model: MapModel, sensor_pose: Pose, K: CameraIntrinsics, cfg: Config
) -> list[tuple[int, Facade]]:
    """Pair each horizontal candidate with the nearest visible façade whose
    projected quad (under the sensor pose) contains the segment midpoint."""
    fragments = visible_facades(model.tree, sensor_pose, K, cfg)
    quads = [(vf.facade, _facade_quad_px(vf, sensor_pose, K, cfg.near_clip_m)) for vf in fragments]
    quads = [(f, q) for f, q in quads if q is not None]
    cand = [k for k, s in enumerate(segs) if s.label == HORIZONTAL]
    if not cand or not quads:
        return []
    mids = np.array([segs[k].midpoint for k in cand])
    owner = np.full(len(cand), -1)
    for qi, (_, q) in enumerate(quads):
        free = owner < 0
        if not np.any(free):
            break
        hit = np.zeros(len(cand), dtype=bool)
        hit[free] = points_in_polygon(mids[free], q)
        owner[hit] = qi
    return [(k, quads[o][0]) for k, o in zip(cand, owner) if o >= 0]


def _yaw_about_z(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _pair_errors(lines, p_hs, phi: float) -> np.ndarray:
    """Angular error (degrees) of each pair under yaw ``phi``."""
    AB = np.array([yaw_coefficients(l, p) for l, p in zip(lines, p_hs)]).reshape(-1, 2)
    res = AB[:, 0] * math.cos(phi) + AB[:, 1] * math.sin(phi)
    return np.degrees(np.abs(np.arcsin(np.clip(res, -1.0, 1.0))))


def level_sensor_pose(sensor_pose: Pose, r_v) -> Pose:
    """Sensor pose with its tilt replaced by the vision estimate.

    The heading of the optical axis is kept; pitch and roll come from
    ``r_v`` so façade quads land where the image shows them.
    """
    forward = np.asarray(r_v) @ EZ
    phi = sensor_pose.heading - math.atan2(forward[1], forward[0])
    return Pose(compose(np.asarray(r_v).T, _yaw_about_z(phi).T), sensor_pose.translation)


def estimate_absolute_rotation(
    segs: Sequence[LineSegment],
    model: MapModel,
    sensor_pose: Pose,
    K: CameraIntrinsics,
    cfg: Config = DEFAULT_CONFIG,
    vertical: Optional[tuple] = None,
) -> RotationEstimate:
    """Full orientation stage: vertical vanishing point, then yaw from façades.

    ``vertical`` may carry a precomputed ``(filtered, consensus, vp)`` triple
    from :func:`vertical_stage`; it only depends on the sensor rotation.

    Raises:
        InsufficientSegments, NoConsensus: vertical or yaw consensus failed.
        NoFacadeAssignments: no horizontal candidate falls on a visible façade.
    """
    if vertical is None:
        vertical = vertical_stage(segs, sensor_pose, K, cfg)
    filtered, cons, vp = vertical
    r_v = vertical_alignment_rotation(vp)
    labelled = classify_horizontal(filtered, vp, K, cfg)

    forward = r_v @ EZ
    phi_ref = sensor_pose.heading - math.atan2(forward[1], forward[0])
    level = level_sensor_pose(sensor_pose, r_v)

    best = None
    offsets = sorted(cfg.assignment_heading_offsets_deg, key=lambda d: (abs(d), d))
    failure: Optional[PipelineError] = None
    for offset in offsets:
        probe = level.with_rotation(level.rotation @ _yaw_about_z(-math.radians(offset)))
        pairs = assign_facades(labelled, model, probe, K, cfg)
        if not pairs:
            continue
        lines = np.array([r_v @ labelled[k].line for k, _ in pairs])
        normals = np.array([f.normal for _, f in pairs])
        p_hs = np.cross(normals, EZ)
        p_hs /= np.linalg.norm(p_hs, axis=1)[:, None]
        rays = K.normalize_points(np.array([labelled[k].midpoint for k, _ in pairs]))
        view_dirs = (rays / np.linalg.norm(rays, axis=1)[:, None]) @ r_v.T
        try:
            yaw = yaw_consensus(lines, p_hs, normals, view_dirs, cfg, phi_ref)
        except NoConsensus as exc:
            failure = exc
            continue
        err = _pair_errors(lines[list(yaw.inliers)], p_hs[list(yaw.inliers)], yaw.phi_z)
        key = (-len(yaw.inliers), float(err.sum()))
        if best is None or key < best[0]:
            best = (key, yaw, pairs, lines, p_hs, view_dirs)
    if best is None:
        if failure is None:
            raise NoFacadeAssignments("no horizontal segment falls on a visible façade")
        raise failure
    _, yaw, pairs, lines, p_hs, _ = best
    phi = yaw.phi_z
    if cfg.refine_rotation:
        rays = best[5]
        phi = refine_yaw(lines, p_hs, yaw.inliers, phi, cfg.refine_tau_deg, rays)
    r_h = _yaw_about_z(phi)
    rotation = compose(r_v.T, r_h.T)
    return RotationEstimate(
        rotation,
        r_v,
        r_h,
        phi,
        cons,
        vp,
        yaw,
        len(pairs),
        labelled,
        [(labelled[k].index, f.id) for k, f in pairs],
    )


def vertical_stage(segs: Sequence[LineSegment], sensor_pose: Pose, K: CameraIntrinsics, cfg: Config):
    """Filter segments and estimate (and optionally refine) the vertical VP.

    The sensor tilt can be off by more than the gravity filter admits, so
    up to three passes run: the configured filters, then the gravity filter
    widened to ``cfg.vertical_angle_fallback_deg``, then additionally without
    the horizon filter. The first successful pass is kept unless a later one
    finds at least ``cfg.fallback_inlier_ratio`` times as many inliers. All
    passes discard proposals tilted more than ``cfg.max_tilt_correction_deg``
    from the sensor's up direction. Consensus inliers end up labelled
    ``vertical``, every other survivor ``unclassified``.

    Returns:
        ``(filtered segments, consensus, vanishing point)``.
    """
    up = sensor_pose.up_in_camera
    passes = [cfg]
    if cfg.vertical_angle_fallback_deg > cfg.vertical_angle_deg:
        wide = replace(cfg, vertical_angle_deg=cfg.vertical_angle_fallback_deg)
        passes += [wide, replace(wide, horizon_margin_px=-math.inf)]
    error: Optional[PipelineError] = None
    chosen = None
    for pcfg in passes:
        filtered = filter_segments(segs, sensor_pose, K, pcfg)
        verticals = [k for k, s in enumerate(filtered) if s.label == VERTICAL]
        try:
            cons = estimate_vertical_vp(
                [filtered[k] for k in verticals], cfg, up_hint=up, max_tilt_deg=cfg.max_tilt_correction_deg
            )
        except (InsufficientSegments, NoConsensus) as exc:
            error = error or exc
            continue
        if chosen is None or len(cons.inliers) >= cfg.fallback_inlier_ratio * len(chosen[1].inliers):
            chosen = (filtered, cons, verticals)
    if chosen is None:
        raise error
    filtered, cons, verticals = chosen
    inl = {verticals[k] for k in cons.inliers}
    filtered = [s.relabel(VERTICAL if k in inl else UNCLASSIFIED) for k, s in enumerate(filtered)]
    cons = replace(cons, inliers=tuple(sorted(inl)))
    vp = cons.vp
    if cfg.refine_rotation:
        inl_segs = [filtered[k] for k in cons.inliers]
        rays = K.normalize_points(np.array([g.midpoint for g in inl_segs]))
        rays /= np.linalg.norm(rays, axis=1)[:, None]
        vp = refine_vanishing_point(np.array([g.line for g in inl_segs]), vp, rays, cfg.refine_tau_deg)
    return filtered, cons, vp
