import math

import numpy as np
import pytest
from oracle3d import mc_iou3d, random_box_pair

from mono3dkit.errors import (
    DegenerateBox,
    InvalidProbability,
    NonFinite,
    ShapeMismatch,
)
from mono3dkit.losses import (
    Box2D,
    Box3D,
    DEFAULT_WEIGHTS,
    LossWeights,
    OrientationTarget,
    depth_map_focal,
    focal_loss,
    giou,
    giou_loss,
    iou3d,
    iou3d_loss,
    l1_loss,
    laplacian_depth_loss,
    loss_2d,
    loss_3d,
    loss_overall,
    multibin_loss,
)


# --------------------------------------------------------------------------
# focal

def test_focal_gamma_zero_is_cross_entropy():
    assert focal_loss([0.5, 0.5], 0, alpha=1.0, gamma=0.0) == pytest.approx(math.log(2))


def test_focal_perfect_prediction_is_zero():
    # zeros are outside (0, 1], so spread epsilon mass over the other classes
    eps = 1e-12
    probs = [1.0 - 8 * eps] + [eps] * 8
    assert focal_loss(probs, 0, alpha=0.25, gamma=2.0) == pytest.approx(0.0, abs=1e-20)
    assert focal_loss([1.0], 0, alpha=3.0, gamma=0.5) == 0.0


def test_focal_hand_value():
    expected = 0.25 * (0.1**2) * (-math.log(0.9))
    got = focal_loss([0.9, 0.05, 0.05], 0, alpha=0.25, gamma=2.0)
    assert got == pytest.approx(expected, rel=1e-12)


def test_focal_monotone_decreasing_in_target_probability():
    values = []
    for pt in np.linspace(0.05, 0.99, 40):
        rest = (1.0 - pt) / 8
        values.append(focal_loss([pt] + [rest] * 8, 0))
    assert all(a > b for a, b in zip(values, values[1:]))


def test_focal_validation():
    with pytest.raises(InvalidProbability):
        focal_loss([0.5, 0.4], 0)  # sums to 0.9
    with pytest.raises(InvalidProbability):
        focal_loss([1.2, -0.2], 0)
    with pytest.raises(ValueError):
        focal_loss([0.5, 0.5], 7)


# --------------------------------------------------------------------------
# l1

def test_l1_zero_for_equal():
    assert l1_loss([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0


def test_l1_hand_value():
    assert l1_loss([0.0, 0.0], [1.0, 3.0]) == pytest.approx(2.0)


def test_l1_random_matches_elementwise_oracle():
    rng = np.random.default_rng(3)
    pred = rng.standard_normal(17)
    target = rng.standard_normal(17)
    oracle = sum(abs(p - t) for p, t in zip(pred, target)) / 17
    assert l1_loss(pred, target) == pytest.approx(oracle, rel=1e-12)


def test_l1_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        l1_loss([1.0], [1.0, 2.0])


# --------------------------------------------------------------------------
# giou

def test_giou_identical_boxes():
    b = Box2D(0, 0, 2, 2)
    assert giou_loss(b, b) == pytest.approx(0.0, abs=1e-15)


def test_giou_unit_squares_sharing_edge():
    assert giou_loss(Box2D(0, 0, 1, 1), Box2D(1, 0, 2, 1)) == pytest.approx(1.0, abs=1e-15)


def test_giou_hand_case_with_hull_penalty():
    loss = giou_loss(Box2D(0, 0, 2, 2), Box2D(1, 1, 3, 3))
    assert loss == pytest.approx(1.0 + 5.0 / 63.0, abs=1e-12)


def test_giou_containment_equals_one_minus_iou():
    outer = Box2D(0, 0, 4, 4)
    inner = Box2D(1, 1, 2, 3)
    iou = (1 * 2) / (16 + 2 - 2)
    assert giou_loss(outer, inner) == pytest.approx(1 - iou, abs=1e-12)


def test_giou_range_on_random_boxes():
    rng = np.random.default_rng(5)
    for _ in range(300):
        x0, y0, x1, y1 = rng.uniform(-5, 5, 4)
        a = Box2D(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
        u0, v0, u1, v1 = rng.uniform(-5, 5, 4)
        b = Box2D(min(u0, u1), min(v0, v1), max(u0, u1), max(v0, v1))
        loss = giou_loss(a, b)
        assert 0.0 <= loss < 2.0
        assert giou_loss(b, a) == pytest.approx(loss, abs=1e-12)


def test_giou_zero_area_box_handled():
    point = Box2D(1, 1, 1, 1)
    box = Box2D(0, 0, 2, 2)
    # IoU term is 0; the hull penalty still applies
    assert giou(point, box) == pytest.approx(0.0, abs=1e-12)
    assert giou_loss(point, point) == pytest.approx(1.0)


def test_box2d_rejects_inverted():
    with pytest.raises(DegenerateBox):
        Box2D(2, 0, 1, 1)
    with pytest.raises(NonFinite):
        Box2D(0, 0, math.nan, 1)


# --------------------------------------------------------------------------
# oriented 3D IoU

def test_iou3d_identical_boxes():
    a = Box3D(1.0, 0.5, 12.0, 1.6, 1.5, 4.2, 0.4)
    assert iou3d(a, a) == pytest.approx(1.0, abs=1e-12)
    assert iou3d_loss(a, a) == pytest.approx(0.0, abs=1e-12)


def test_iou3d_pi_rotation_symmetry():
    a = Box3D(1.0, 0.5, 12.0, 1.6, 1.5, 4.2, 0.4)
    b = Box3D(1.0, 0.5, 12.0, 1.6, 1.5, 4.2, 0.4 + math.pi)
    assert iou3d(a, b) == pytest.approx(1.0, abs=1e-9)


def test_iou3d_disjoint_boxes():
    a = Box3D(0, 0, 5, 1, 1, 1, 0.0)
    b = Box3D(10, 0, 5, 1, 1, 1, 0.7)
    assert iou3d(a, b) == 0.0
    assert iou3d_loss(a, b) == 1.0


def test_iou3d_no_vertical_overlap():
    a = Box3D(0, 0.0, 5, 1, 1, 1, 0.0)
    b = Box3D(0, 5.0, 5, 1, 1, 1, 0.0)
    assert iou3d(a, b) == 0.0


def test_iou3d_axis_aligned_hand_case():
    # unit cubes overlapping by half along x: inter 0.5, union 1.5
    a = Box3D(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0)
    b = Box3D(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0)
    assert iou3d(a, b) == pytest.approx(0.5 / 1.5, abs=1e-12)


def test_iou3d_containment_is_volume_ratio():
    outer = Box3D(0.0, 0.0, 10.0, 2.0, 2.0, 4.0, 0.7)
    inner = Box3D(0.0, 0.0, 10.0, 1.0, 1.0, 2.0, 0.7)
    expected = (1.0 * 1.0 * 2.0) / (2.0 * 2.0 * 4.0)
    assert iou3d(outer, inner) == pytest.approx(expected, abs=1e-12)


def test_iou3d_rotated_square_hand_case():
    # two unit squares (in BEV) sharing a center, one rotated 45 degrees:
    # intersection is a regular octagon of area 2*(sqrt(2)-1)
    a = Box3D(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0)
    b = Box3D(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, math.pi / 4)
    octagon = 2.0 * (math.sqrt(2.0) - 1.0)
    assert iou3d(a, b) == pytest.approx(octagon / (2.0 - octagon), abs=1e-12)


def test_iou3d_symmetry_and_range():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a, b = random_box_pair(rng)
        v = iou3d(a, b)
        assert 0.0 <= v <= 1.0
        assert iou3d(b, a) == pytest.approx(v, abs=1e-9)


def test_iou3d_rigid_motion_invariance():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a, b = random_box_pair(rng)
        base = iou3d(a, b)
        dx, dy, dz = rng.uniform(-20, 20, 3)
        shifted = iou3d(
            Box3D(a.x + dx, a.y + dy, a.z + dz, a.w, a.h, a.l, a.yaw),
            Box3D(b.x + dx, b.y + dy, b.z + dz, b.w, b.h, b.l, b.yaw),
        )
        assert shifted == pytest.approx(base, abs=1e-9)
        phi = rng.uniform(-math.pi, math.pi)
        c, s = math.cos(phi), math.sin(phi)

        def rotate(box):
            return Box3D(
                c * box.x - s * box.z, box.y, s * box.x + c * box.z,
                box.w, box.h, box.l, box.yaw + phi,
            )

        assert iou3d(rotate(a), rotate(b)) == pytest.approx(base, abs=1e-9)


def test_iou3d_matches_monte_carlo_oracle():
    rng = np.random.default_rng(13)
    for k in range(30):
        a, b = random_box_pair(rng)
        approx = mc_iou3d(a, b, n_samples=200_000, seed=k)
        assert abs(iou3d(a, b) - approx) < 0.01


def test_iou3d_loss_is_one_minus_iou():
    rng = np.random.default_rng(17)
    a, b = random_box_pair(rng)
    assert iou3d_loss(a, b) == pytest.approx(1.0 - iou3d(a, b), abs=1e-15)


def test_box3d_validation_and_yaw_wrap():
    with pytest.raises(DegenerateBox):
        Box3D(0, 0, 0, -1.0, 1.0, 1.0, 0.0)
    with pytest.raises(NonFinite):
        Box3D(0, 0, 0, 1.0, 1.0, 1.0, math.inf)
    assert Box3D(0, 0, 0, 1, 1, 1, 3 * math.pi).yaw == pytest.approx(math.pi)
    assert Box3D(0, 0, 0, 1, 1, 1, -math.pi).yaw == pytest.approx(math.pi)


# --------------------------------------------------------------------------
# multibin

def test_multibin_perfect_prediction():
    logits = np.full(12, -40.0)
    logits[3] = 40.0
    target = OrientationTarget(3, 0.1)
    residuals = np.zeros(12)
    residuals[3] = 0.1
    assert multibin_loss(logits, residuals, target) == pytest.approx(0.0, abs=1e-12)


def test_multibin_uniform_logits():
    target = OrientationTarget(5, 0.0)
    got = multibin_loss(np.zeros(12), np.zeros(12), target)
    assert got == pytest.approx(math.log(12), rel=1e-12)


def test_multibin_residual_only():
    logits = np.full(12, -40.0)
    logits[2] = 40.0
    residuals = np.zeros(12)
    residuals[2] = 0.05
    target = OrientationTarget(2, 0.15)
    assert multibin_loss(logits, residuals, target) == pytest.approx(0.1, abs=1e-12)


def test_multibin_shape_check():
    with pytest.raises(ShapeMismatch):
        multibin_loss(np.zeros(10), np.zeros(12), OrientationTarget(0, 0.0))


def test_orientation_target_validation():
    with pytest.raises(ValueError):
        OrientationTarget(12, 0.0)
    with pytest.raises(ValueError):
        OrientationTarget(0, 0.5)  # beyond pi/12 half-width
    OrientationTarget(0, math.pi / 12)  # boundary allowed


# --------------------------------------------------------------------------
# laplacian depth

def test_laplacian_zero_error_returns_log_scale():
    assert laplacian_depth_loss(10.0, 0.7, 10.0) == pytest.approx(0.7)


def test_laplacian_hand_value():
    s = math.log(math.sqrt(2.0))
    assert laplacian_depth_loss(11.0, s, 10.0) == pytest.approx(1.0 + s, rel=1e-12)


def test_laplacian_argmin_over_log_scale():
    error = 0.37
    grid = np.linspace(-4.0, 4.0, 20001)
    values = [laplacian_depth_loss(error, s, 0.0) for s in grid]
    best = grid[int(np.argmin(values))]
    assert best == pytest.approx(math.log(math.sqrt(2.0) * error), abs=1e-3)


def test_laplacian_nonfinite():
    with pytest.raises(NonFinite):
        laplacian_depth_loss(math.nan, 0.0, 1.0)


# --------------------------------------------------------------------------
# depth-map focal

def test_depth_map_all_correct_confident():
    eps = 1e-9
    n_bins = 5
    probs = np.full((3, 4, n_bins), eps)
    targets = np.zeros((3, 4), dtype=int)
    probs[..., 0] = 1.0 - (n_bins - 1) * eps
    assert depth_map_focal(probs, targets) == pytest.approx(0.0, abs=1e-12)


def test_depth_map_single_pixel_reduces_to_focal():
    probs = np.array([[0.7, 0.2, 0.1]])
    assert depth_map_focal(probs, np.array([0])) == pytest.approx(
        focal_loss([0.7, 0.2, 0.1], 0)
    )


def test_depth_map_matches_per_pixel_oracle():
    rng = np.random.default_rng(19)
    raw = rng.uniform(0.1, 1.0, (2, 3, 4))
    probs = raw / raw.sum(axis=-1, keepdims=True)
    targets = rng.integers(4, size=(2, 3))
    oracle = np.mean([
        focal_loss(probs[i, j], int(targets[i, j]))
        for i in range(2) for j in range(3)
    ])
    assert depth_map_focal(probs, targets) == pytest.approx(float(oracle), rel=1e-12)


def test_depth_map_shape_check():
    with pytest.raises(ShapeMismatch):
        depth_map_focal(np.ones((2, 3)), np.zeros((3,), dtype=int))


# --------------------------------------------------------------------------
# aggregates

def test_aggregates_zero_parts():
    assert loss_2d(0, 0, 0, 0) == 0.0
    assert loss_3d(0, 0, 0) == 0.0
    assert loss_overall(0, 0, 0) == 0.0


def test_aggregate_unit_parts_with_default_weights():
    assert loss_2d(1.0, 1.0, 1.0, 1.0) == 19.0
    assert DEFAULT_WEIGHTS == LossWeights(2, 5, 2, 10)


def test_aggregates_compose():
    rng = np.random.default_rng(23)
    parts = rng.uniform(0, 3, 8)
    l2d = loss_2d(*parts[:4])
    l3d = loss_3d(*parts[4:7])
    total = loss_overall(l2d, l3d, parts[7])
    manual = (
        2 * parts[0] + 5 * parts[1] + 2 * parts[2] + 10 * parts[3]
        + parts[4] + parts[5] + parts[6] + parts[7]
    )
    assert total == pytest.approx(manual, rel=1e-12)


def test_aggregates_are_linear_in_parts():
    w = LossWeights(1.5, 2.5, 0.5, 3.0)
    a = loss_2d(1, 0, 0, 0, w) + loss_2d(0, 2, 0, 0, w)
    b = loss_2d(1, 2, 0, 0, w)
    assert a == pytest.approx(b, rel=1e-12)


def test_aggregates_reject_nonfinite_and_negative_weights():
    with pytest.raises(NonFinite):
        loss_2d(math.inf, 0, 0, 0)
    with pytest.raises(NonFinite):
        loss_overall(0, math.nan, 0)
    with pytest.raises(ValueError):
        LossWeights(-1, 0, 0, 0)
