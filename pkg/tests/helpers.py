"""Random scene builders shared by the test modules."""

import math

import numpy as np

from mappose.geometry import CameraIntrinsics, Pose
from mappose.map_model import Building, BuildingMap
from mappose.synth import camera_rotation

K_SMALL = CameraIntrinsics(32.0, 32.0, 31.7, 31.6, 64, 64)
K_VGA = CameraIntrinsics(554.256, 554.256, 320.0, 240.0, 640, 480)


def rect(center, w, d, angle=0.0):
    c, s = math.cos(angle), math.sin(angle)
    local = np.array([[-w, -d], [w, -d], [w, d], [-w, d]]) / 2.0
    return local @ np.array([[c, s], [-s, c]]) + np.asarray(center, dtype=float)


def l_shape(center, size, angle=0.0):
    a = size
    pts = np.array([[0, 0], [a, 0], [a, a / 2], [a / 2, a / 2], [a / 2, a], [0, a]]) - a / 2
    c, s = math.cos(angle), math.sin(angle)
    return pts @ np.array([[c, s], [-s, c]]) + np.asarray(center, dtype=float)


def random_map(rng, max_buildings=6, allow_l=True):
    """Non-overlapping rectangles and L-shapes around the origin."""
    n = int(rng.integers(1, max_buildings + 1))
    placed, out = [], []
    for _ in range(500):
        if len(out) == n:
            break
        size = rng.uniform(4.0, 14.0)
        r = size * 0.75
        center = rng.uniform(-30, 30, size=2)
        if np.linalg.norm(center) < r + 2.0:
            continue
        if any(np.linalg.norm(center - c) < r + q + 1.0 for c, q in placed):
            continue
        angle = rng.uniform(0, math.pi)
        if allow_l and rng.uniform() < 0.3:
            fp = l_shape(center, size, angle)
        else:
            fp = rect(center, size, rng.uniform(3.0, 14.0) * 0.7, angle)
        placed.append((center, r))
        out.append(Building(f"b{len(out)}", fp, float(rng.uniform(5, 25))))
    return BuildingMap(tuple(out), (47.0, 8.0))


def street_map():
    """Two facing rows of buildings along the x axis."""
    return BuildingMap(
        (
            Building("n0", rect((-10, 12), 14, 8), 12.0),
            Building("n1", rect((8, 13), 16, 10), 18.0),
            Building("s0", rect((-6, -12), 12, 8), 9.0),
            Building("s1", rect((12, -13), 14, 10), 15.0),
        ),
        (47.0, 8.0),
    )


def pose_at(xy, heading_deg, pitch_deg=0.0, roll_deg=0.0, height=1.6):
    R = camera_rotation(math.radians(heading_deg), math.radians(pitch_deg), math.radians(roll_deg))
    return Pose.on_ground(R, xy, height)


# --- plan-view visibility oracle ---------------------------------------------

K_QUARTER = CameraIntrinsics(320.0, 320.0, 320.0, 240.0, 640, 480)  # 90 degree field of view


def ray_cast_visible(facades, c, n_rays=360):
    """Nearest façade hit by each of ``n_rays`` bearings from ``c``; returns
    ``{bearing index: facade id}``."""
    c = np.asarray(c, dtype=float)
    A = np.array([f.a for f in facades])
    E = np.array([f.b - f.a for f in facades])
    hits = {}
    for k in range(n_rays):
        a = 2 * math.pi * k / n_rays
        d = np.array([math.cos(a), math.sin(a)])
        best, best_t = None, math.inf
        for i in range(len(facades)):
            den = d[0] * E[i, 1] - d[1] * E[i, 0]
            if abs(den) < 1e-15:
                continue
            w = A[i] - c
            t = (w[0] * E[i, 1] - w[1] * E[i, 0]) / den
            s = (w[0] * d[1] - w[1] * d[0]) / den
            if t > 0 and 0 <= s <= 1 and t < best_t:
                best, best_t = facades[i].id, t
        if best is not None:
            hits[k] = best
    return hits


def bearing_hits_of_fragments(fragments, c, n_rays=360):
    """Façade ids whose visible fragments span at least one oracle bearing."""
    c = np.asarray(c, dtype=float)
    step = 2 * math.pi / n_rays
    out = set()
    for vf in fragments:
        a0 = math.atan2(*(vf.a - c)[::-1])
        a1 = math.atan2(*(vf.b - c)[::-1])
        lo, span = a0, (a1 - a0 + math.pi) % (2 * math.pi) - math.pi
        if span < 0:
            lo, span = a1, -span
        k0 = math.ceil(lo / step)
        if k0 * step <= lo + span:
            out.add(vf.facade.id)
    return out


def bsp_visible_360(model, c, cfg=None):
    """Union of visible façade ids over four 90 degree cameras at ``c``."""
    from mappose.config import DEFAULT_CONFIG
    from mappose.map_model import visible_facades

    cfg = cfg or DEFAULT_CONFIG
    ids = set()
    for heading in (0.0, 90.0, 180.0, 270.0):
        frags = visible_facades(model.tree, pose_at(c, heading), K_QUARTER, cfg)
        ids |= bearing_hits_of_fragments(frags, c)
    return ids
