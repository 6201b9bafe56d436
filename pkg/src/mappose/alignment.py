"""Pose scoring against class probability rasters and multi-start search.

A pose is scored by the log-likelihood of the projected building model
under per-pixel class probabilities: pixels covered by the model contribute
``log p(class)``, the rest ``log(1 - sum of model-class probabilities)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import DEFAULT_CONFIG, Config
from .errors import (
    AllStartsFailed,
    DimensionMismatch,
    EmptyHypothesisSet,
    MapPoseError,
    PipelineError,
)
from .geometry import CameraIntrinsics, Pose
from .map_model import (
    FACADE,
    ROOF,
    MapModel,
    clip_near,
    polygon_spans,
    project_model_mask,
    visible_corners,
)
from .orientation import LineSegment, estimate_absolute_rotation, vertical_stage
from .translation import GrayRaster, facade_mask_from_probs, hypotheses_from_pairs, line_stage, prune_hidden

CLASS_NAMES = ("facade", "sky", "roof", "vegetation", "ground")
CLASS_INDEX = {c: i for i, c in enumerate(CLASS_NAMES)}
P_MIN = 1e-6


@dataclass(eq=False)
class ProbabilityRaster:
    """Per-pixel class probabilities, array of shape (H, W, 5)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3 or self.data.shape[2] != len(CLASS_NAMES):
            raise DimensionMismatch(f"expected (H, W, {len(CLASS_NAMES)}) probabilities, got {self.data.shape}")
        if self.data.shape[0] == 0 or self.data.shape[1] == 0:
            raise DimensionMismatch("probability raster is empty")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def channel(self, name: str) -> np.ndarray:
        return self.data[:, :, CLASS_INDEX[name]]

    def clamped(self, name: str) -> np.ndarray:
        return np.clip(self.channel(name), P_MIN, 1.0 - P_MIN)

    def is_normalized(self, tol: float = 1e-4) -> bool:
        return bool(np.all(np.abs(self.data.sum(axis=2) - 1.0) <= tol))

    def __eq__(self, other):
        if not isinstance(other, ProbabilityRaster):
            return NotImplemented
        return np.array_equal(self.data, other.data)


@dataclass(eq=False)
class PoseHypothesis:
    pose: Pose
    score: float
    provenance: tuple  # (start index, source)
    order: int = 0  # position in the pooled list


def _check_dims(raster: ProbabilityRaster, K: CameraIntrinsics) -> None:
    if (raster.height, raster.width) != (K.height, K.width):
        raise DimensionMismatch(
            f"raster is {raster.width}x{raster.height}, intrinsics expect {K.width}x{K.height}"
        )


def _logs(values: np.ndarray) -> list:
    return [math.log(v) for v in values.ravel().tolist()]


def log_likelihood(raster: ProbabilityRaster, masks: dict, stride: int = 1) -> float:
    """Log-likelihood of a set of disjoint per-class model masks.

    Sums run over the pixel grid sampled every ``stride`` pixels; terms are
    accumulated with exact (compensated) summation.
    """
    if not masks:
        raise ValueError("at least one model class is required")
    s = max(1, int(stride))
    union = np.zeros((raster.height, raster.width), dtype=bool)
    terms = []
    background = np.zeros((raster.height, raster.width))
    for c, m in masks.items():
        m = np.asarray(m, dtype=bool)
        if m.shape != union.shape:
            raise DimensionMismatch(f"mask for {c} has shape {m.shape}, raster is {union.shape}")
        p = raster.clamped(c)
        terms += _logs(p[::s, ::s][m[::s, ::s]])
        union |= m
        background += p
    bg = np.maximum(1.0 - background, P_MIN)
    terms += _logs(bg[::s, ::s][~union[::s, ::s]])
    return math.fsum(terms)


def score_pose_multiclass(
    raster: ProbabilityRaster,
    model,
    pose: Pose,
    K: CameraIntrinsics,
    classes: Sequence[str] = (FACADE,),
    stride: int = 1,
    near: float = DEFAULT_CONFIG.near_clip_m,
) -> float:
    """Log-likelihood of ``pose`` with model classes ``classes`` (façade, roof)."""
    _check_dims(raster, K)
    classes = tuple(classes)
    if not classes:
        raise ValueError("classes must be non-empty")
    masks = project_model_mask(model, pose, K, classes, near)
    return log_likelihood(raster, masks, stride)


def score_pose(
    raster: ProbabilityRaster,
    model,
    pose: Pose,
    K: CameraIntrinsics,
    stride: int = 1,
    near: float = DEFAULT_CONFIG.near_clip_m,
) -> float:
    """Façade-only log-likelihood of ``pose``."""
    return score_pose_multiclass(raster, model, pose, K, (FACADE,), stride, near)


class FacadeScorer:
    """Fast façade-only scorer using row prefix sums.

    With the camera below every roof, the façade mask is the union of the
    front-facing façade quads, so the score is a base term plus per-row
    interval sums of ``log p - log(1 - p)``. Poses that could see a roof
    fall back to the exact depth-buffered scorer.
    """

    def __init__(
        self,
        raster: ProbabilityRaster,
        model: MapModel,
        K: CameraIntrinsics,
        cfg: Config = DEFAULT_CONFIG,
        stride: Optional[int] = None,
    ):
        _check_dims(raster, K)
        self.raster, self.model, self.K, self.cfg = raster, model, K, cfg
        s = max(1, int(cfg.pixel_stride if stride is None else stride))
        self.stride = s
        p = raster.clamped(FACADE)[::s, ::s]
        log_p = np.log(p)
        log_q = np.log(1.0 - p)
        self.base = math.fsum(log_q.ravel().tolist())
        self.prefix = np.zeros((p.shape[0], p.shape[1] + 1))
        np.cumsum(log_p - log_q, axis=1, out=self.prefix[:, 1:])
        self.xs = np.arange(0, K.width, s, dtype=float)
        self.ys = np.arange(0, K.height, s, dtype=float)
        fac = model.facades
        self.quads = np.array(
            [[[f.a[0], f.a[1], 0.0], [f.b[0], f.b[1], 0.0], [f.b[0], f.b[1], f.height], [f.a[0], f.a[1], f.height]] for f in fac]
        ).reshape(-1, 4, 3)
        self.normals = np.array([f.normal for f in fac]).reshape(-1, 3)
        self.min_height = min((f.height for f in fac), default=math.inf)

    def exact(self, pose: Pose) -> float:
        return score_pose(self.raster, self.model, pose, self.K, self.stride, self.cfg.near_clip_m)

    def __call__(self, pose: Pose) -> float:
        return float(self.score_many(pose.rotation, pose.position[None, :])[0])

    def score_many(self, R, positions, chunk: int = 64) -> np.ndarray:
        """Scores of poses sharing rotation ``R`` at camera ``positions`` (n, 3)."""
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        out = np.empty(len(positions))
        low = positions[:, 2] < self.min_height
        for k in np.nonzero(~low)[0]:
            out[k] = self.exact(Pose.from_position(R, positions[k]))
        idx = np.nonzero(low)[0]
        for start in range(0, len(idx), chunk):
            sel = idx[start : start + chunk]
            out[sel] = self._batch(np.asarray(R, dtype=float), positions[sel])
        return out

    def _batch(self, R: np.ndarray, P: np.ndarray) -> np.ndarray:
        N = len(P)
        out = np.full(N, self.base)
        if len(self.quads) == 0:
            return out
        K, near = self.K, self.cfg.near_clip_m
        facing = np.einsum("fj,nfj->nf", self.normals, P[:, None, :] - self.quads[None, :, 0, :]) > 0
        vc = (self.quads[None, :, :, :] - P[:, None, None, :]) @ R.T  # (N, F, 4, 3)
        poly, alive = _clip_quads_near(vc, near)
        alive &= facing
        pn, pf = np.nonzero(alive)
        if len(pn) == 0:
            return out
        v = poly[pn, pf]  # (L, 8, 3)
        x = K.fx * v[..., 0] / v[..., 2] + K.cx
        y = K.fy * v[..., 1] / v[..., 2] + K.cy
        # drop polygons entirely outside the image
        xs, ys = self.xs, self.ys
        on = (x.max(axis=1) >= xs[0]) & (x.min(axis=1) <= xs[-1]) & (y.max(axis=1) >= ys[0]) & (y.min(axis=1) <= ys[-1])
        pn, x, y = pn[on], x[on], y[on]
        L = len(pn)
        if L == 0:
            return out
        x0, y0 = x.ravel(), y.ravel()
        x1, y1 = np.roll(x, -1, axis=1).ravel(), np.roll(y, -1, axis=1).ravel()
        lo = np.searchsorted(ys, np.minimum(y0, y1), side="left")
        hi = np.searchsorted(ys, np.maximum(y0, y1), side="left")
        cnt = np.where(y0 != y1, hi - lo, 0)
        total = int(cnt.sum())
        if total == 0:
            return out
        edge = np.repeat(np.arange(len(cnt)), cnt)
        first = np.cumsum(cnt) - cnt
        row = lo[edge] + (np.arange(total) - first[edge])
        yy = ys[row]
        xi = x0[edge] + (yy - y0[edge]) * (x1[edge] - x0[edge]) / (y1[edge] - y0[edge])
        n_rows = len(ys)
        group = (edge // 8) * n_rows + row  # (polygon, row)
        order = np.argsort(group, kind="stable")
        group, xi = group[order], xi[order]
        starts = np.flatnonzero(np.r_[True, group[1:] != group[:-1]])
        counts = np.diff(np.r_[starts, len(group)])
        left = np.minimum.reduceat(xi, starts)
        right = np.maximum.reduceat(xi, starts)
        g = group[starts]
        keep = counts >= 2
        g, left, right = g[keep], left[keep], right[keep]
        prow = g % n_rows
        pose_idx = pn[g // n_rows]
        c_lo = np.searchsorted(xs, left, side="left")
        c_hi = np.searchsorted(xs, right, side="left")
        ok = c_hi > c_lo
        prow, pose_idx, c_lo, c_hi = prow[ok], pose_idx[ok], c_lo[ok], c_hi[ok]
        if len(prow) == 0:
            return out
        # union of intervals per (pose, row)
        key = pose_idx * n_rows + prow
        order = np.lexsort((c_lo, key))
        key, c_lo, c_hi, prow, pose_idx = key[order], c_lo[order], c_hi[order], prow[order], pose_idx[order]
        new = np.r_[True, key[1:] != key[:-1]]
        gid = np.cumsum(new) - 1
        span = len(xs) + 1
        running = np.maximum.accumulate(c_hi + gid * span) - gid * span
        prev = np.r_[0, running[:-1]]
        prev[new] = 0
        a = np.maximum(c_lo, prev)
        b = np.maximum(c_hi, a)
        gain = self.prefix[prow, b] - self.prefix[prow, a]
        return out + np.bincount(pose_idx, weights=gain, minlength=N)


def _clip_quads_near(vc: np.ndarray, near: float):
    """Vectorized near-plane clip of (..., 4, 3) camera-frame quads.

    Returns ``(polygons, alive)``: polygons with 8 vertex slots (unused
    slots repeat the previous vertex, adding only zero-length edges) and a
    flag for polygons with any part in front of the plane.
    """
    inside = vc[..., 2] >= near
    nxt = np.roll(vc, -1, axis=-2)
    nxt_in = np.roll(inside, -1, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (near - vc[..., 2]) / (nxt[..., 2] - vc[..., 2])
    cross_pt = vc + t[..., None] * (nxt - vc)
    slots = np.stack([vc, cross_pt], axis=-2)  # (..., 4, 2, 3)
    valid = np.stack([inside, inside != nxt_in], axis=-1)  # (..., 4, 2)
    shape = vc.shape[:-2]
    slots = slots.reshape(shape + (8, 3))
    valid = valid.reshape(shape + (8,))
    alive = valid.any(axis=-1)
    idx = np.where(valid, np.arange(8), -1)
    idx = np.maximum.accumulate(idx, axis=-1)
    first = np.argmax(valid, axis=-1)
    idx = np.where(idx < 0, first[..., None], idx)
    poly = np.take_along_axis(slots, idx[..., None].repeat(3, axis=-1), axis=-2)
    poly = np.where(alive[..., None, None], poly, np.array([0.0, 0.0, 1.0]))
    return poly, alive


# ---------------------------------------------------------------------------
# selection and multi-start
# ---------------------------------------------------------------------------


def select_best(hypotheses: Sequence[PoseHypothesis], prior_position=None) -> PoseHypothesis:
    """Highest score; ties go to the hypothesis nearest the prior, then the
    earliest one in the list.

    Raises:
        EmptyHypothesisSet: no hypotheses.
    """
    if not hypotheses:
        raise EmptyHypothesisSet("no pose hypotheses to choose from")
    prior = None if prior_position is None else np.asarray(prior_position, dtype=float)[:2]

    def key(item):
        k, h = item
        d = 0.0 if prior is None else float(np.hypot(*(h.pose.position[:2] - prior)))
        return (-h.score, d, h.provenance[0], h.order, k)

    return min(enumerate(hypotheses), key=key)[1]


def start_positions(prior_xy, cfg: Config = DEFAULT_CONFIG) -> list[np.ndarray]:
    """The prior followed by ``cfg.n_extra_starts`` points on a circle."""
    prior_xy = np.asarray(prior_xy, dtype=float)[:2]
    out = [prior_xy.copy()]
    n = cfg.n_extra_starts
    for k in range(n):
        a = math.radians(cfg.start_phase_deg) + 2.0 * math.pi * k / n
        out.append(prior_xy + cfg.start_radius_m * np.array([math.cos(a), math.sin(a)]))
    return out


@dataclass(eq=False)
class EstimationInputs:
    model: MapModel
    K: CameraIntrinsics
    sensor_pose: Pose
    segments: list  # LineSegment
    image: GrayRaster
    probs: ProbabilityRaster
    windows: Optional[np.ndarray] = None


@dataclass(eq=False)
class StartReport:
    index: int
    position: np.ndarray
    n_hypotheses: int = 0
    n_candidates: int = 0
    error: Optional[str] = None
    rotation: Optional[np.ndarray] = None
    best_score: float = -math.inf


@dataclass(eq=False)
class MultiStartResult:
    best: PoseHypothesis
    hypotheses: list
    starts: list
    n_lines: int = 0
    line_columns: list = field(default_factory=list)


def _validate_inputs(inp: EstimationInputs) -> None:
    _check_dims(inp.probs, inp.K)
    if (inp.image.height, inp.image.width) != (inp.K.height, inp.K.width):
        raise DimensionMismatch("image does not match intrinsics")
    if inp.windows is not None and np.shape(inp.windows) != (inp.K.height, inp.K.width):
        raise DimensionMismatch("window mask does not match intrinsics")


def multi_start_estimate(inp: EstimationInputs, cfg: Config = DEFAULT_CONFIG) -> MultiStartResult:
    """Run the pipeline from the sensor pose and from the circle starts and
    keep the most likely pose.

    Raises:
        DimensionMismatch: rasters disagree with the intrinsics.
        AllStartsFailed: no start produced a hypothesis.
    """
    _validate_inputs(inp)
    K, model, sensor = inp.K, inp.model, inp.sensor_pose
    h = cfg.camera_height
    starts = start_positions(sensor.position, cfg)
    reports = [StartReport(i, p) for i, p in enumerate(starts)]

    try:
        vertical = vertical_stage(inp.segments, sensor, K, cfg)
    except PipelineError as exc:
        for r in reports:
            r.error = exc.reason
        raise AllStartsFailed(f"vertical stage failed: {exc}") from exc

    if cfg.multiclass:
        classes = (FACADE, ROOF)

        def scorer(pose):
            return score_pose_multiclass(inp.probs, model, pose, K, classes, cfg.pixel_stride, cfg.near_clip_m)

        coarse = None
    else:
        scorer = FacadeScorer(inp.probs, model, K, cfg)
        coarse = None
        if cfg.coarse_stride > cfg.pixel_stride and cfg.coarse_keep > 0:
            coarse = FacadeScorer(inp.probs, model, K, cfg, cfg.coarse_stride)

    lines_cache: dict = {}
    score_cache: dict = {}
    pool: list[PoseHypothesis] = []
    n_lines, columns = 0, []
    for rep in reports:
        start_pose = Pose.on_ground(sensor.rotation, rep.position, h)
        if model.map.contains_point(rep.position) is not None:
            rep.error = "camera_inside_building"
            continue
        try:
            rot = estimate_absolute_rotation(inp.segments, model, start_pose, K, cfg, vertical)
        except MapPoseError as exc:
            rep.error = exc.reason
            continue
        R = rot.rotation
        rep.rotation = R
        key = rot.r_v.tobytes()
        if key not in lines_cache:
            fmask = facade_mask_from_probs(inp.probs, cfg.facade_mask_dilation)
            lines_cache[key] = line_stage(inp.image, rot.r_v, K, fmask, inp.windows, cfg)
        ls = lines_cache[key]
        n_lines, columns = len(ls.lines), list(ls.positions)
        try:
            corners = visible_corners(model.tree, Pose.on_ground(R, rep.position, h), K, cfg)
        except MapPoseError as exc:
            rep.error = exc.reason
            continue
        hyps = hypotheses_from_pairs(ls.lines, corners, R, cfg, rep.position, ls.positions, K)
        if cfg.visibility_filter:
            hyps = prune_hidden(hyps, model)
        candidates = [(Pose(R, th.translation), th.source) for th in hyps]
        if cfg.include_start_pose:
            candidates.append((Pose.on_ground(R, rep.position, h), "start"))
        tol = cfg.dedup_tolerance_m
        rkey = np.round(R, 9).tobytes()
        keyed, seen = [], set()
        for pose, source in candidates:
            ck = (rkey, tuple(np.round(pose.position[:2] / tol).astype(np.int64)))
            if ck in score_cache or ck in seen:
                continue  # identical pose already pooled
            seen.add(ck)
            keyed.append((ck, pose, source))
        rep.n_candidates = len(keyed)
        if not keyed:
            continue
        if coarse is not None and len(keyed) > cfg.coarse_keep:
            rough = coarse.score_many(R, np.array([pose.position for _, pose, _ in keyed]))
            top = np.sort(np.argsort(-rough, kind="stable")[: cfg.coarse_keep])
            keyed = [keyed[k] for k in top]
        if isinstance(scorer, FacadeScorer):
            fine = scorer.score_many(R, np.array([pose.position for _, pose, _ in keyed]))
        else:
            fine = [scorer(pose) for _, pose, _ in keyed]
        for (ck, pose, source), v in zip(keyed, fine):
            score_cache[ck] = float(v)
            hyp = PoseHypothesis(pose, float(v), (rep.index, source), len(pool))
            pool.append(hyp)
            rep.n_hypotheses += 1
            rep.best_score = max(rep.best_score, hyp.score)
    if not pool:
        reasons = sorted({r.error for r in reports if r.error})
        raise AllStartsFailed(f"every start failed ({', '.join(reasons)})")
    best = select_best(pool, sensor.position)
    return MultiStartResult(best, pool, reports, n_lines, columns)


def estimate_pose(inp: EstimationInputs, cfg: Config = DEFAULT_CONFIG) -> Pose:
    return multi_start_estimate(inp, cfg).best.pose


__all__ = [
    "CLASS_NAMES",
    "EstimationInputs",
    "FacadeScorer",
    "MultiStartResult",
    "PoseHypothesis",
    "ProbabilityRaster",
    "estimate_pose",
    "log_likelihood",
    "multi_start_estimate",
    "score_pose",
    "score_pose_multiclass",
    "select_best",
    "start_positions",
]
