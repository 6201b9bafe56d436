import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import K_VGA, pose_at, rect
from mappose.config import DEFAULT_CONFIG
from mappose.errors import DegenerateDistribution, DimensionMismatch, SingularSystem
from mappose.geometry import Pose
from mappose.map_model import Building, BuildingMap, MapModel
from mappose.orientation import vertical_alignment_rotation
from mappose.synth import camera_rotation
from mappose.translation import (
    ColumnHistogram,
    GammaParams,
    GrayRaster,
    TranslationHypothesis,
    column_gradient_sums,
    column_line,
    fit_gamma_threshold,
    gamma_quantile,
    hypotheses_from_pairs,
    prune_hidden,
    rectify,
    rectifying_rotation,
    select_columns,
    solve_translation,
    threshold_histogram,
)


def _r_v(pose):
    return vertical_alignment_rotation(pose.up_in_camera)


# --- rectification -------------------------------------------------------------


def test_upright_camera_needs_no_rectification():
    pose = pose_at((0, 0), 30.0)
    np.testing.assert_allclose(rectifying_rotation(_r_v(pose)), np.eye(3), atol=1e-15)
    img = GrayRaster(np.random.default_rng(0).uniform(size=(K_VGA.height, K_VGA.width)))
    out = rectify(img, _r_v(pose), K_VGA)
    np.testing.assert_array_equal(out.values, img.values)
    assert out.valid.all()


@settings(max_examples=30)
@given(st.floats(-12, 12), st.floats(-12, 12), st.floats(-20, 20), st.floats(2, 40))
def test_column_line_is_the_projected_vertical(pitch, roll, y, depth):
    pose = Pose.on_ground(camera_rotation(0.0, math.radians(pitch), math.radians(roll)), (0, 0), 1.6)
    r_v = _r_v(pose)
    r_rect = rectifying_rotation(r_v)
    bottom, top = np.array([depth, y, 0.0]), np.array([depth, y, 8.0])
    cam = pose.to_camera(np.array([bottom, top]))
    # the rectified column of the edge
    rc = (K_VGA.matrix @ (r_rect @ cam[0]))
    x = rc[0] / rc[2]
    l = column_line(x, r_v, K_VGA)
    for p in cam:
        assert abs(l @ (p / np.linalg.norm(p))) < 1e-9


def test_rectify_marks_outside_pixels_invalid():
    pose = Pose.on_ground(camera_rotation(0.0, math.radians(8), math.radians(5)), (0, 0), 1.6)
    img = GrayRaster(np.full((K_VGA.height, K_VGA.width), 0.5))
    out = rectify(img, _r_v(pose), K_VGA)
    assert 0 < out.valid.sum() < out.valid.size
    np.testing.assert_allclose(out.values[out.valid], 0.5)


def test_rectify_rejects_wrong_size():
    with pytest.raises(DimensionMismatch):
        rectify(GrayRaster(np.zeros((4, 4))), np.eye(3), K_VGA)


# --- column statistics ---------------------------------------------------------


def test_column_gradient_sums_by_hand():
    v = np.array([[0.0, 0.0, 1.0, 1.0, 1.0], [0.0, 0.2, 0.4, 0.6, 0.8]])
    # central differences |v[x+1] - v[x-1]| / 2 at columns 1..3
    np.testing.assert_allclose(column_gradient_sums(GrayRaster(v)), [0.0, 0.5 + 0.2, 0.5 + 0.2, 0.2, 0.0])
    windows = np.zeros_like(v, dtype=bool)
    windows[0, 1] = True
    facade = np.ones_like(windows)
    facade[1, 3] = False
    np.testing.assert_allclose(column_gradient_sums(GrayRaster(v), facade, windows), [0.0, 0.2, 0.7, 0.0, 0.0])


def test_column_sums_skip_invalid_neighbours():
    v = np.tile(np.arange(5.0), (2, 1))
    valid = np.ones_like(v, dtype=bool)
    valid[0, 0] = False
    np.testing.assert_allclose(column_gradient_sums(GrayRaster(v, valid)), [0.0, 1.0, 2.0, 2.0, 0.0])


def test_gamma_quantile_exponential_closed_form():
    for scale in (0.5, 2.0, 30.0):
        for p in (0.1, 0.5, 0.9, 0.99):
            assert gamma_quantile(GammaParams(1.0, scale), p) == pytest.approx(-scale * math.log1p(-p), rel=1e-10)


def test_gamma_quantile_rejects_bad_probability():
    with pytest.raises(ValueError):
        gamma_quantile(GammaParams(2.0, 1.0), 1.0)


def test_fit_gamma_threshold_moments():
    x = np.array([1.0, 2.0, 3.0, 4.0, 0.0])  # the zero is ignored
    params, thr = fit_gamma_threshold(x, 0.9)
    # mean 2.5, population variance 1.25
    assert params.shape == pytest.approx(5.0) and params.scale == pytest.approx(0.5)
    assert params.cdf(thr) == pytest.approx(0.9, abs=1e-12)


@pytest.mark.parametrize("x", [[1.0], [2.0, 2.0, 2.0], [0.0, 0.0]])
def test_fit_gamma_threshold_degenerate(x):
    with pytest.raises(DegenerateDistribution):
        fit_gamma_threshold(x)
    assert threshold_histogram(x).threshold == math.inf


def test_select_columns_suppression_and_centroid():
    s = np.zeros(200)
    s[50], s[49], s[51] = 10.0, 4.0, 6.0
    s[52] = 9.0  # suppressed by the larger neighbour
    s[120] = 8.0
    hist = select_columns(ColumnHistogram(s, threshold=5.0), DEFAULT_CONFIG.with_overrides(nms_frac=0.01))
    assert hist.selected_columns == [50, 120]
    assert hist.positions[0] == pytest.approx((49 * 4 + 50 * 10 + 51 * 6 + 52 * 9) / 29.0)
    assert hist.positions[1] == 120.0


def test_select_columns_keeps_strongest():
    s = np.zeros(400)
    s[10::20] = np.arange(1.0, 21.0)
    hist = select_columns(ColumnHistogram(s, threshold=0.5), DEFAULT_CONFIG.with_overrides(max_lines=3))
    assert hist.selected_columns == [350, 370, 390]


# --- two line-corner pairs ----------------------------------------------------------


def test_solve_translation_recovers_position():
    R = camera_rotation(math.radians(20))
    t_true = np.array([-3.0, 4.0, -1.6])
    X1, X2 = np.array([10.0, 2.0, 0.0]), np.array([12.0, -5.0, 0.0])
    # plane through the camera centre and each vertical edge
    ms = []
    for X in (X1, X2):
        a, b = R @ (X + t_true), R @ (X + [0, 0, 5] + t_true)
        l = np.cross(a, b)
        ms.append(R.T @ (l / np.linalg.norm(l)))
    t = solve_translation(ms[0], X1, ms[1], X2, -1.6)
    np.testing.assert_allclose(t, t_true[:2], atol=1e-12)


def test_solve_translation_parallel_planes():
    m = np.array([1.0, 0.0, 0.0])
    with pytest.raises(SingularSystem):
        solve_translation(m, np.zeros(3), 2 * m, np.ones(3), -1.6)


def _corner_scene():
    model = MapModel(BuildingMap((Building("a", rect((20, 3), 6, 6), 10.0), Building("b", rect((25, -8), 6, 6), 12.0))))
    pose = pose_at((1.0, -0.5), 5.0, pitch_deg=3.0, roll_deg=-2.0)
    return model, pose


def _edge_lines(pose, corners):
    lines = []
    for c in corners:
        X = np.asarray(c.position, dtype=float)
        a, b = pose.to_camera(np.array([X, X + [0, 0, 5.0]]))
        l = np.cross(a, b)
        lines.append(l / np.linalg.norm(l))
    return lines


def test_hypotheses_contain_the_true_translation():
    model, pose = _corner_scene()
    corners = list(model.corners)
    pick = [corners[0], corners[3], corners[5]]
    lines = _edge_lines(pose, pick)
    keys = [pose.project([c.position], K_VGA)[0][0, 0] for c in pick]
    hyps = hypotheses_from_pairs(lines, corners, pose.rotation, DEFAULT_CONFIG, pose.position, keys, K_VGA)
    true = pose.translation[:2]
    best = min(np.linalg.norm(h.t - true) for h in hyps)
    assert best < 1e-9
    for h in hyps:
        (i, ci), (j, cj) = h.source
        assert keys[i] < keys[j]


def test_hypotheses_need_two_of_each():
    model, pose = _corner_scene()
    assert hypotheses_from_pairs([np.array([1.0, 0, 0])], list(model.corners), pose.rotation) == []


def test_prune_hidden_drops_corner_behind_building():
    model = MapModel(BuildingMap((Building("a", rect((20, 0), 4, 4), 10.0),)))
    by_xy = {tuple(np.round(c.position[:2], 6)): c.id for c in model.corners}
    near = [by_xy[(18.0, -2.0)], by_xy[(18.0, 2.0)]]
    far = by_xy[(22.0, 2.0)]
    t = np.array([0.0, 0.0, -1.6])
    seen = TranslationHypothesis(t[:2], t, ((0, near[0]), (1, near[1])))
    hidden = TranslationHypothesis(t[:2], t, ((0, near[0]), (1, far)))
    assert prune_hidden([seen, hidden], model) == [seen]
