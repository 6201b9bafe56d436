"""Horizontal translation hypotheses from building edges.

The image is rectified so that 3D verticals become columns, gradient
magnitudes are summed per column over façade (non-window) pixels, a Gamma
distribution fitted to the sums sets an automatic threshold, and every
pairing of two selected image columns with two visible map corners gives a
2x2 linear system for the camera's ground position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.special import gammainc

from .config import DEFAULT_CONFIG, Config
from .errors import DegenerateDistribution, DegenerateHomography, DimensionMismatch
from .geometry import EZ, CameraIntrinsics, Pose, rotation_between
from .map_model import points_in_polygon

IMAGE_UP = np.array([0.0, -1.0, 0.0])


@dataclass(eq=False)
class GrayRaster:
    values: np.ndarray  # (H, W) float in [0, 1]
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.size == 0:
            raise DimensionMismatch("raster must be a non-empty 2D array")
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.values.shape:
                raise DimensionMismatch("validity mask does not match raster")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GammaParams:
    shape: float
    scale: float

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    @property
    def variance(self) -> float:
        return self.shape * self.scale**2

    def cdf(self, x):
        return gammainc(self.shape, np.asarray(x, dtype=float) / self.scale)


@dataclass(eq=False)
class ColumnHistogram:
    sums: np.ndarray
    threshold: float = math.inf
    selected_columns: list = field(default_factory=list)
    positions: list = field(default_factory=list)  # subpixel column of each selection
    gamma: Optional[GammaParams] = None


@dataclass(frozen=True, eq=False)
class TranslationHypothesis:
    t: np.ndarray  # (tx, ty): horizontal part of the pose translation
    translation: np.ndarray  # full (tx, ty, tz)
    source: tuple  # ((line index, corner id), (line index, corner id))

    @property
    def position(self) -> np.ndarray:
        return -self.translation


# ---------------------------------------------------------------------------
# rectification
# ---------------------------------------------------------------------------


def rectifying_rotation(r_v) -> np.ndarray:
    """Pitch/roll-only rotation moving the vertical vanishing point to image-up.

    ``r_v`` maps the vertical vanishing point onto z; the rectifying rotation
    is the smallest rotation taking that same point onto (0, -1, 0), i.e. a
    virtual upright camera sharing the optical center. An upright camera
    gives the identity.
    """
    vp = np.asarray(r_v, dtype=float).T @ EZ
    return rotation_between(vp, IMAGE_UP)


def _source_coords(r_rect: np.ndarray, K: CameraIntrinsics, shape) -> tuple[np.ndarray, np.ndarray]:
    H, W = shape
    xs, ys = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    M = K.matrix @ r_rect.T @ K.inverse
    den = M[2, 0] * xs + M[2, 1] * ys + M[2, 2]
    sx = (M[0, 0] * xs + M[0, 1] * ys + M[0, 2]) / den
    sy = (M[1, 0] * xs + M[1, 1] * ys + M[1, 2]) / den
    return sx, sy


def _check_corners(r_rect: np.ndarray, K: CameraIntrinsics) -> None:
    corners = np.array(
        [[0, 0, 1], [K.width - 1, 0, 1], [0, K.height - 1, 1], [K.width - 1, K.height - 1, 1]], float
    )
    rays = (r_rect.T @ K.inverse @ corners.T).T
    if np.any(rays[:, 2] <= 0):
        raise DegenerateHomography("an image corner maps behind the camera")


def rectify(img: GrayRaster, r_v, K: CameraIntrinsics) -> GrayRaster:
    """Warp so that 3D vertical lines become image columns (bilinear).

    Output pixels whose source falls outside the input (or on invalid input
    pixels) are marked invalid.

    Raises:
        DegenerateHomography: an image corner would be seen from behind.
    """
    if (img.height, img.width) != (K.height, K.width):
        raise DimensionMismatch("image does not match intrinsics")
    r_rect = rectifying_rotation(r_v)
    if np.allclose(r_rect, np.eye(3), atol=1e-15, rtol=0):
        return GrayRaster(img.values.copy(), img.valid.copy())
    _check_corners(r_rect, K)
    sx, sy = _source_coords(r_rect, K, img.values.shape)
    H, W = img.values.shape
    inside = (sx >= 0) & (sx <= W - 1) & (sy >= 0) & (sy <= H - 1)
    x0 = np.clip(np.floor(sx).astype(int), 0, W - 2)
    y0 = np.clip(np.floor(sy).astype(int), 0, H - 2)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    v = img.values
    out = (
        v[y0, x0] * (1 - fx) * (1 - fy)
        + v[y0, x0 + 1] * fx * (1 - fy)
        + v[y0 + 1, x0] * (1 - fx) * fy
        + v[y0 + 1, x0 + 1] * fx * fy
    )
    ok = img.valid
    valid = inside & ok[y0, x0] & ok[y0, x0 + 1] & ok[y0 + 1, x0] & ok[y0 + 1, x0 + 1]
    return GrayRaster(np.where(valid, out, 0.0), valid)


def rectify_mask(mask: np.ndarray, r_v, K: CameraIntrinsics) -> np.ndarray:
    """Nearest-neighbour warp of a binary mask with the rectifying homography."""
    mask = np.asarray(mask, dtype=bool)
    r_rect = rectifying_rotation(r_v)
    if np.allclose(r_rect, np.eye(3), atol=1e-15, rtol=0):
        return mask.copy()
    sx, sy = _source_coords(r_rect, K, mask.shape)
    H, W = mask.shape
    xi = np.rint(sx).astype(int)
    yi = np.rint(sy).astype(int)
    inside = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
    out = np.zeros_like(mask)
    out[inside] = mask[yi[inside], xi[inside]]
    return out


# ---------------------------------------------------------------------------
# column statistics
# ---------------------------------------------------------------------------


def column_gradient_sums(
    img: GrayRaster,
    facade_mask: Optional[np.ndarray] = None,
    window_mask: Optional[np.ndarray] = None,
    smoothing_sigma: float = 0.0,
) -> np.ndarray:
    """Per-column sum of |horizontal central difference|.

    Only pixels that are valid (with both neighbours valid), on the façade
    mask and off the window mask contribute. Missing masks pass everything.
    """
    shape = img.values.shape
    for m in (facade_mask, window_mask):
        if m is not None and np.shape(m) != shape:
            raise DimensionMismatch(f"mask shape {np.shape(m)} does not match raster {shape}")
    v = img.values
    if smoothing_sigma > 0:
        v = ndimage.gaussian_filter(v, smoothing_sigma)
    grad = np.zeros(shape)
    grad[:, 1:-1] = np.abs(v[:, 2:] - v[:, :-2]) / 2.0
    use = np.zeros(shape, dtype=bool)
    use[:, 1:-1] = img.valid[:, 2:] & img.valid[:, :-2] & img.valid[:, 1:-1]
    if facade_mask is not None:
        use &= np.asarray(facade_mask, dtype=bool)
    if window_mask is not None:
        use &= ~np.asarray(window_mask, dtype=bool)
    return np.where(use, grad, 0.0).sum(axis=0)


def gamma_quantile(params: GammaParams, p: float, rtol: float = 1e-12) -> float:
    """Inverse CDF by bisection on the regularized lower incomplete gamma."""
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    k, scale = params.shape, params.scale
    lo, hi = 0.0, max(params.mean, scale)
    while gammainc(k, hi / scale) < p:
        lo, hi = hi, hi * 2.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if gammainc(k, mid / scale) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return 0.5 * (lo + hi)


def fit_gamma_threshold(sums, inlier_p: float = DEFAULT_CONFIG.inlier_p) -> tuple[GammaParams, float]:
    """Method-of-moments Gamma fit to the positive sums and its quantile.

    Raises:
        DegenerateDistribution: fewer than two positive sums or zero variance.
    """
    x = np.asarray(sums, dtype=float)
    x = x[x > 0]
    if len(x) < 2:
        raise DegenerateDistribution("need at least two positive column sums")
    mean = float(x.mean())
    var = float(x.var())
    if var <= 1e-12 * mean * mean:
        raise DegenerateDistribution("column sums have no spread")
    params = GammaParams(mean * mean / var, var / mean)
    return params, gamma_quantile(params, inlier_p)


def threshold_histogram(sums, cfg: Config = DEFAULT_CONFIG) -> ColumnHistogram:
    hist = ColumnHistogram(np.asarray(sums, dtype=float))
    try:
        hist.gamma, hist.threshold = fit_gamma_threshold(hist.sums, cfg.inlier_p)
    except DegenerateDistribution:
        hist.threshold = math.inf
    return hist


def select_columns(hist: ColumnHistogram, cfg: Config = DEFAULT_CONFIG) -> ColumnHistogram:
    """Non-maximum suppression above threshold plus centroid refinement."""
    s = hist.sums
    W = len(s)
    w = max(1, int(round(cfg.nms_frac * W)))
    picks = []
    for c in np.nonzero(s >= hist.threshold)[0]:
        left = s[max(0, c - w) : c]
        right = s[c + 1 : c + w + 1]
        if (len(left) and left.max() >= s[c]) or (len(right) and right.max() > s[c]):
            continue
        picks.append(int(c))
    if cfg.max_lines and len(picks) > cfg.max_lines:
        picks = sorted(sorted(picks, key=lambda c: -s[c])[: cfg.max_lines])
    h = cfg.subpixel_halfwidth
    positions = []
    for c in picks:
        lo, hi = max(0, c - h), min(W, c + h + 1)
        wts = s[lo:hi]
        positions.append(float((np.arange(lo, hi) * wts).sum() / wts.sum()) if h > 0 else float(c))
    hist.selected_columns = picks
    hist.positions = positions
    return hist


def column_line(x: float, r_v, K: CameraIntrinsics) -> np.ndarray:
    """Normalized original-image line of rectified column ``x``."""
    r_rect = rectifying_rotation(r_v)
    l = r_rect.T @ K.matrix.T @ np.array([1.0, 0.0, -x])
    return l / np.linalg.norm(l)


def select_vertical_lines(hist: ColumnHistogram, K: CameraIntrinsics, r_v, cfg: Config = DEFAULT_CONFIG) -> list:
    """Image lines (normalized coordinates) of the selected building edges."""
    if not hist.positions and not hist.selected_columns:
        select_columns(hist, cfg)
    return [column_line(x, r_v, K) for x in hist.positions]


# ---------------------------------------------------------------------------
# translation from two line-corner pairs
# ---------------------------------------------------------------------------


def solve_translation(m1, x1, m2, x2, tz: float) -> np.ndarray:
    """Solve ``m_i . (x_i + t) = 0`` for (tx, ty) with fixed tz.

    Raises:
        SingularSystem: the two planes are (nearly) parallel.
    """
    from .errors import SingularSystem

    A = np.array([[m1[0], m1[1]], [m2[0], m2[1]]])
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    scale = math.hypot(m1[0], m1[1]) * math.hypot(m2[0], m2[1])
    if abs(det) <= 1e-9 * scale:
        raise SingularSystem("plane normals are parallel")
    rhs = -np.array([m1 @ x1 + m1[2] * tz, m2 @ x2 + m2[2] * tz])
    return np.linalg.solve(A, rhs)


def hypotheses_from_pairs(
    lines: Sequence,
    corners: Sequence,
    R,
    cfg: Config = DEFAULT_CONFIG,
    prior_position=None,
    line_x: Optional[Sequence[float]] = None,
    K: Optional[CameraIntrinsics] = None,
) -> list[TranslationHypothesis]:
    """Translations from every assignment of two lines to two corners.

    ``lines`` are normalized image lines and ``line_x`` their left-to-right
    keys (default: list order). Solutions are dropped when singular, when a
    corner ends up behind the camera, when farther than the gating radius
    from ``prior_position``, or when the left-right order of the two corners
    under the prior pose contradicts the order of their lines (needs ``K``).
    """
    R = np.asarray(R, dtype=float)
    L = np.atleast_2d(np.asarray(lines, dtype=float)) if len(lines) else np.zeros((0, 3))
    nl, nc = len(L), len(corners)
    if nl < 2 or nc < 2:
        return []
    keys = np.arange(nl, dtype=float) if line_x is None else np.asarray(line_x, dtype=float)
    tz = -cfg.camera_height
    M = L @ R  # rows: R^T l
    X = np.array([c.position for c in corners], dtype=float)

    li, lj = np.triu_indices(nl, 1)
    swap = keys[li] > keys[lj]
    li, lj = np.where(swap, lj, li), np.where(swap, li, lj)  # li is the left line
    ca, cb = np.nonzero(~np.eye(nc, dtype=bool))
    I = np.repeat(li, len(ca))
    J = np.repeat(lj, len(ca))
    A = np.tile(ca, len(li))
    B = np.tile(cb, len(li))

    m1, m2 = M[I], M[J]
    x1, x2 = X[A], X[B]
    det = m1[:, 0] * m2[:, 1] - m1[:, 1] * m2[:, 0]
    scale = np.hypot(m1[:, 0], m1[:, 1]) * np.hypot(m2[:, 0], m2[:, 1])
    ok = np.abs(det) > 1e-9 * scale
    r1 = -(np.einsum("ij,ij->i", m1, x1) + m1[:, 2] * tz)
    r2 = -(np.einsum("ij,ij->i", m2, x2) + m2[:, 2] * tz)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = (r1 * m2[:, 1] - r2 * m1[:, 1]) / det
        ty = (m1[:, 0] * r2 - m2[:, 0] * r1) / det
    t = np.column_stack([tx, ty, np.full(len(tx), tz)])

    # corners in front of the camera
    d1 = ((x1 + t) @ R.T)[:, 2]
    d2 = ((x2 + t) @ R.T)[:, 2]
    ok &= (d1 > cfg.near_clip_m) & (d2 > cfg.near_clip_m)
    if prior_position is not None:
        p = np.asarray(prior_position, dtype=float)[:2]
        ok &= np.hypot(-tx - p[0], -ty - p[1]) <= cfg.gating_radius_m
        if cfg.order_filter and K is not None:
            prior = Pose.on_ground(R, p, cfg.camera_height)
            px, depth = prior.project(X, K)
            in_front = depth > cfg.near_clip_m
            judge = in_front[A] & in_front[B]
            ok &= ~judge | (px[A, 0] < px[B, 0])
    # residual guard
    res1 = np.abs(np.einsum("ij,ij->i", m1, x1 + t))
    res2 = np.abs(np.einsum("ij,ij->i", m2, x2 + t))
    ok &= (res1 < 1e-9) & (res2 < 1e-9)

    out = []
    for k in np.nonzero(ok)[0]:
        src = ((int(I[k]), corners[A[k]].id), (int(J[k]), corners[B[k]].id))
        out.append(TranslationHypothesis(t[k, :2].copy(), t[k].copy(), src))
    out.sort(key=lambda h: h.source)
    return out


@dataclass(eq=False)
class LineStage:
    hist: ColumnHistogram
    lines: list
    positions: list
    rectified: Optional[GrayRaster] = None


def facade_mask_from_probs(probs, dilation: int) -> np.ndarray:
    mask = np.argmax(probs.data, axis=2) == 0
    if dilation > 0:
        mask = ndimage.binary_dilation(mask, iterations=dilation)
    return mask


def line_stage(
    image: GrayRaster,
    r_v,
    K: CameraIntrinsics,
    facade_mask: Optional[np.ndarray] = None,
    window_mask: Optional[np.ndarray] = None,
    cfg: Config = DEFAULT_CONFIG,
) -> LineStage:
    """Rectify, accumulate column gradients, threshold and pick edge lines."""
    rect = rectify(image, r_v, K)
    fm = rectify_mask(facade_mask, r_v, K) if facade_mask is not None else None
    wm = None
    if window_mask is not None:
        wm = np.asarray(window_mask, dtype=bool)
        if cfg.window_mask_dilation > 0:
            wm = ndimage.binary_dilation(wm, iterations=cfg.window_mask_dilation)
        wm = rectify_mask(wm, r_v, K)
    sums = column_gradient_sums(rect, fm, wm, cfg.gradient_smoothing_sigma)
    hist = select_columns(threshold_histogram(sums, cfg), cfg)
    lines = [column_line(x, r_v, K) for x in hist.positions]
    return LineStage(hist, lines, list(hist.positions), rect)


def corners_in_view(positions, corner_xy, walls: np.ndarray, footprints: Sequence[np.ndarray], owner) -> np.ndarray:
    """Plan-view line-of-sight test from camera positions to corners.

    ``positions`` and ``corner_xy`` are (n, 2) pairs, ``walls`` an (F, 2, 2)
    array of façade segments and ``owner`` the footprint index of each
    corner. A corner is in view when the sight line crosses no façade before
    reaching it and does not approach it through its own building.
    """
    C = np.asarray(positions, dtype=float)
    X = np.asarray(corner_xy, dtype=float)
    d = X - C
    dist = np.linalg.norm(d, axis=1)
    ok = dist > 1e-9
    u = d / np.where(ok, dist, 1.0)[:, None]
    # sight segment C -> X' stopping just short of the corner
    end = X - 1e-6 * u
    A, B = walls[:, 0, :], walls[:, 1, :]
    e = B - A
    r = end - C
    den = r[:, None, 0] * e[None, :, 1] - r[:, None, 1] * e[None, :, 0]
    w = A[None, :, :] - C[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[..., 0] * e[None, :, 1] - w[..., 1] * e[None, :, 0]) / den
        s = (w[..., 0] * r[:, None, 1] - w[..., 1] * r[:, None, 0]) / den
    hit = (np.abs(den) > 1e-15) & (t > 0) & (t < 1) & (s >= 0) & (s <= 1)
    ok &= ~np.any(hit, axis=1)
    probe = X - 0.01 * u
    owner = np.asarray(owner)
    for k in np.unique(owner):
        sel = owner == k
        ok[sel] &= ~points_in_polygon(probe[sel], footprints[k])
    return ok


def prune_hidden(hyps: Sequence[TranslationHypothesis], model) -> list[TranslationHypothesis]:
    """Drop hypotheses from which either paired corner would be hidden."""
    if not hyps:
        return []
    walls = np.array([[f.a, f.b] for f in model.facades])
    index = {b.id: i for i, b in enumerate(model.map.buildings)}
    footprints = [b.footprint for b in model.map.buildings]
    C = np.array([-h.translation[:2] for h in hyps])
    keep = np.ones(len(hyps), dtype=bool)
    for slot in (0, 1):
        corners = [model.corner(h.source[slot][1]) for h in hyps]
        X = np.array([c.position[:2] for c in corners])
        owner = [index[c.building_id] for c in corners]
        keep &= corners_in_view(C, X, walls, footprints, owner)
    return [h for h, k in zip(hyps, keep) if k]
