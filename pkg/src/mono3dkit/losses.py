"""Detection loss components and the weighted 2D/3D/overall aggregates.

The 2D group covers focal classification, L1 box-edge and projected-center
regression, and GIoU on axis-aligned boxes.  The 3D group covers oriented
3D-IoU size supervision, MultiBin orientation, and Laplacian
aleatoric-uncertainty depth.  Oriented 3D IoU intersects bird's-eye-view
footprints by convex polygon clipping and the vertical extents as an
interval, and is shared with the evaluation module.

Geometry code is written generically over floats and dual numbers so the
same computation yields both values and exact derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import gradcheck as _gc
from .dual import Dual, dcos, dmax, dmin, dsin, value_of
from .errors import (
    DegenerateBox,
    InvalidProbability,
    NonFinite,
    ShapeMismatch,
)

N_CLASSES = 9
DEFAULT_FOCAL_ALPHA = 0.25
DEFAULT_FOCAL_GAMMA = 2.0
PROB_SUM_TOL = 1e-3
DEFAULT_N_BINS = 12

_CLIP_EPS = 1e-12  # collinearity tolerance for polygon clipping


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned pixel box; zero-area boxes are legal, inverted ones are not."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.x_min, self.y_min, self.x_max, self.y_max))):
            raise NonFinite("box coordinates must be finite")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise DegenerateBox(
                f"inverted box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: center (x, y, z), sizes (w, h, l), yaw about the vertical axis.

    z is depth and y is the vertical coordinate; the footprint in the
    ground plane (x, z) has length l along the heading at yaw = 0 and
    width w across it.  Yaw is normalized to (-pi, pi].
    """

    x: float
    y: float
    z: float
    w: float
    h: float
    l: float
    yaw: float

    def __post_init__(self):
        values = (self.x, self.y, self.z, self.w, self.h, self.l, self.yaw)
        if not all(map(math.isfinite, values)):
            raise NonFinite("box parameters must be finite")
        if self.w <= 0 or self.h <= 0 or self.l <= 0:
            raise DegenerateBox(f"non-positive dimensions: ({self.w}, {self.h}, {self.l})")
        wrapped = math.remainder(self.yaw, math.tau)
        if wrapped <= -math.pi:
            wrapped += math.tau
        object.__setattr__(self, "yaw", wrapped)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.x, self.y, self.z, self.w, self.h, self.l, self.yaw)

    @classmethod
    def from_dict(cls, obj: dict) -> "Box3D":
        return cls(**{k: float(obj[k]) for k in ("x", "y", "z", "w", "h", "l", "yaw")})


@dataclass(frozen=True)
class OrientationTarget:
    """Angle-bin index plus the residual inside that bin."""

    bin_index: int
    residual: float
    n_bins: int = DEFAULT_N_BINS

    def __post_init__(self):
        if not 0 <= self.bin_index < self.n_bins:
            raise ValueError(f"bin index {self.bin_index} outside [0, {self.n_bins})")
        half_width = math.pi / self.n_bins
        if abs(self.residual) > half_width + 1e-12:
            raise ValueError(
                f"residual {self.residual} exceeds bin half-width {half_width}"
            )


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the 2D aggregate (class, lrtb, giou, xy3d)."""

    lam1: float = 2.0
    lam2: float = 5.0
    lam3: float = 2.0
    lam4: float = 10.0

    def __post_init__(self):
        if min(self.lam1, self.lam2, self.lam3, self.lam4) < 0:
            raise ValueError("loss weights must be non-negative")


DEFAULT_WEIGHTS = LossWeights()


# ---------------------------------------------------------------------------
# classification / regression components

def _check_probabilities(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidProbability(f"probability vector expected, got shape {p.shape}")
    if not np.isfinite(p).all() or (p <= 0).any() or (p > 1).any():
        raise InvalidProbability("probabilities must lie in (0, 1]")
    if abs(p.sum() - 1.0) > PROB_SUM_TOL:
        raise InvalidProbability(f"probabilities sum to {p.sum():.6f}, not 1")
    return p


def focal_loss(
    probabilities: Sequence[float],
    target_class: int,
    alpha: float = DEFAULT_FOCAL_ALPHA,
    gamma: float = DEFAULT_FOCAL_GAMMA,
) -> float:
    """-alpha * (1 - p_t)^gamma * log(p_t) for the target-class probability."""
    p = _check_probabilities(probabilities)
    if not 0 <= target_class < p.size:
        raise ValueError(f"target class {target_class} outside [0, {p.size})")
    pt = p[target_class]
    return float(-alpha * (1.0 - pt) ** gamma * np.log(pt))


def _focal_dpt(pt: float, alpha: float, gamma: float) -> float:
    # d/dp of -alpha (1-p)^gamma log p
    return float(
        alpha * gamma * (1.0 - pt) ** (gamma - 1.0) * np.log(pt)
        - alpha * (1.0 - pt) ** gamma / pt
    )


def l1_loss(pred: Sequence[float], target: Sequence[float]) -> float:
    """Mean absolute difference."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatch(f"shapes differ: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ShapeMismatch("empty vectors")
    return float(np.abs(p - t).mean())


def multibin_loss(
    bin_logits: Sequence[float],
    residuals: Sequence[float],
    target: OrientationTarget,
) -> float:
    """Cross-entropy over angle bins plus L1 on the target bin's residual."""
    logits = np.asarray(bin_logits, dtype=np.float64)
    res = np.asarray(residuals, dtype=np.float64)
    if logits.shape != (target.n_bins,) or res.shape != (target.n_bins,):
        raise ShapeMismatch(
            f"expected {target.n_bins} logits and residuals, got "
            f"{logits.shape} and {res.shape}"
        )
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    ce = float(log_z - shifted[target.bin_index])
    return ce + float(abs(res[target.bin_index] - target.residual))


def laplacian_depth_loss(depth: float, log_scale: float, target: float) -> float:
    """(sqrt(2)/exp(s)) * |d - d*| + s with predicted log-scale s."""
    if not all(map(math.isfinite, (depth, log_scale, target))):
        raise NonFinite("depth loss inputs must be finite")
    return math.sqrt(2.0) * math.exp(-log_scale) * abs(depth - target) + log_scale


def depth_map_focal(
    probabilities,
    targets,
    alpha: float = DEFAULT_FOCAL_ALPHA,
    gamma: float = DEFAULT_FOCAL_GAMMA,
) -> float:
    """Mean per-pixel focal loss over a map of bin distributions.

    ``probabilities`` has shape (..., n_bins) with one distribution per
    pixel; ``targets`` holds the matching integer bin per pixel.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    t = np.asarray(targets)
    if p.ndim < 2 or t.shape != p.shape[:-1]:
        raise ShapeMismatch(
            f"probability map {p.shape} does not match targets {t.shape}"
        )
    flat_p = p.reshape(-1, p.shape[-1])
    flat_t = t.reshape(-1)
    total = 0.0
    for i in range(flat_p.shape[0]):
        total += focal_loss(flat_p[i], int(flat_t[i]), alpha=alpha, gamma=gamma)
    return total / flat_p.shape[0]


# ---------------------------------------------------------------------------
# box geometry (generic over floats and Duals)

def _giou_core(a, b):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = dmax(dmin(ax1, bx1) - dmax(ax0, bx0), 0.0)
    ih = dmax(dmin(ay1, by1) - dmax(ay0, by0), 0.0)
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    iou = inter / union if value_of(union) > 0 else 0.0
    hull = (dmax(ax1, bx1) - dmin(ax0, bx0)) * (dmax(ay1, by1) - dmin(ay0, by0))
    penalty = (hull - union) / hull if value_of(hull) > 0 else 0.0
    return iou - penalty


def giou(a: Box2D, b: Box2D) -> float:
    """Generalized IoU: IoU minus the hull area not covered by the union."""
    return float(_giou_core(a.as_tuple(), b.as_tuple()))


def giou_loss(a: Box2D, b: Box2D) -> float:
    """1 - GIoU, in [0, 2)."""
    return 1.0 - giou(a, b)


def _bev_corners(x, z, w, l, yaw):
    c, s = dcos(yaw), dsin(yaw)
    hl, hw = l * 0.5, w * 0.5
    return [
        (x + hl * c - hw * s, z + hl * s + hw * c),
        (x - hl * c - hw * s, z - hl * s + hw * c),
        (x - hl * c + hw * s, z - hl * s - hw * c),
        (x + hl * c + hw * s, z + hl * s - hw * c),
    ]


def _clip_polygon(subject, clipper):
    """Sutherland-Hodgman clip of ``subject`` by convex CCW ``clipper``."""
    output = list(subject)
    m = len(clipper)
    for i in range(m):
        if not output:
            return []
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % m]
        ex, ey = bx - ax, by - ay
        current = output
        output = []
        prev = current[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in current:
            cur_side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            cur_in = value_of(cur_side) >= -_CLIP_EPS
            prev_in = value_of(prev_side) >= -_CLIP_EPS
            if cur_in != prev_in:
                t = prev_side / (prev_side - cur_side)
                output.append(
                    (prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1]))
                )
            if cur_in:
                output.append(cur)
            prev, prev_side = cur, cur_side
    return output


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    acc = 0.0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        acc = acc + (x1 * y2 - x2 * y1)
    return acc * 0.5


def _bev_intersection(a, b):
    """Clip polygon of the two BEV footprints; a/b are 7-tuples of box params."""
    ca = _bev_corners(a[0], a[2], a[3], a[5], a[6])
    cb = _bev_corners(b[0], b[2], b[3], b[5], b[6])
    return _clip_polygon(ca, cb)


def _iou3d_core(a, b):
    bev = _polygon_area(_bev_intersection(a, b))
    if value_of(bev) <= 0:
        return 0.0
    top = dmin(a[1] + a[4] * 0.5, b[1] + b[4] * 0.5)
    bottom = dmax(a[1] - a[4] * 0.5, b[1] - b[4] * 0.5)
    height = top - bottom
    if value_of(height) <= 0:
        return 0.0
    inter = bev * height
    union = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - inter
    return inter / union


def iou3d(a: Box3D, b: Box3D) -> float:
    """Oriented 3D IoU: polygon-clipped BEV overlap times vertical overlap."""
    v = float(_iou3d_core(a.as_tuple(), b.as_tuple()))
    return min(max(v, 0.0), 1.0)


def iou3d_loss(a: Box3D, b: Box3D) -> float:
    """1 - oriented 3D IoU."""
    return 1.0 - iou3d(a, b)


# ---------------------------------------------------------------------------
# weighted aggregates

def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise NonFinite(f"{name} is not finite: {value}")
    return value


def loss_2d(
    l_class: float,
    l_lrtb: float,
    l_giou: float,
    l_xy3d: float,
    weights: LossWeights = DEFAULT_WEIGHTS,
) -> float:
    return (
        weights.lam1 * _finite("l_class", l_class)
        + weights.lam2 * _finite("l_lrtb", l_lrtb)
        + weights.lam3 * _finite("l_giou", l_giou)
        + weights.lam4 * _finite("l_xy3d", l_xy3d)
    )


def loss_3d(l_size3d: float, l_orien: float, l_depth: float) -> float:
    return (
        _finite("l_size3d", l_size3d)
        + _finite("l_orien", l_orien)
        + _finite("l_depth", l_depth)
    )


def loss_overall(l_2d: float, l_3d: float, l_dmap: float) -> float:
    return _finite("l_2d", l_2d) + _finite("l_3d", l_3d) + _finite("l_dmap", l_dmap)


# ---------------------------------------------------------------------------
# gradient-check registration

def _loss_rng(fn_id: str, seed: int, attempt: int) -> np.random.Generator:
    from .tge import _keyed_generator

    return _keyed_generator(seed, f"losscase:{fn_id}:{attempt}")


def _make_focal_case(seed: int) -> _gc.GradCase:
    for attempt in range(64):
        rng = _loss_rng("focal_loss", seed, attempt)
        raw = rng.uniform(0.2, 1.0, N_CLASSES)
        p = raw / raw.sum()
        target = int(rng.integers(N_CLASSES))
        if 0.05 < p[target] < 0.95:
            return _gc.GradCase(
                arrays={"probabilities": p},
                consts={"target": target, "alpha": 0.25, "gamma": 2.0},
            )
    raise RuntimeError("could not sample a focal case")


def _focal_forward(arrays, consts):
    return focal_loss(
        arrays["probabilities"], consts["target"],
        alpha=consts["alpha"], gamma=consts["gamma"],
    )


def _focal_gradient(arrays, consts):
    p = np.asarray(arrays["probabilities"], dtype=np.float64)
    g = np.zeros_like(p)
    g[consts["target"]] = _focal_dpt(p[consts["target"]], consts["alpha"], consts["gamma"])
    return {"probabilities": g}


def _make_l1_case(seed: int) -> _gc.GradCase:
    for attempt in range(64):
        rng = _loss_rng("l1_loss", seed, attempt)
        pred = rng.uniform(-2.0, 2.0, 6)
        target = rng.uniform(-2.0, 2.0, 6)
        if np.abs(pred - target).min() > 1e-3:
            return _gc.GradCase(arrays={"pred": pred, "target": target})
    raise RuntimeError("could not sample an l1 case")


def _l1_forward(arrays, consts):
    return l1_loss(arrays["pred"], arrays["target"])


def _l1_gradient(arrays, consts):
    diff_sign = np.sign(arrays["pred"] - arrays["target"])
    n = diff_sign.size
    return {"pred": diff_sign / n, "target": -diff_sign / n}


def _make_giou_case(seed: int) -> _gc.GradCase:
    for attempt in range(256):
        rng = _loss_rng("giou_loss", seed, attempt)
        ax0, ay0 = rng.uniform(-2.0, 2.0, 2)
        bx0, by0 = rng.uniform(-2.0, 2.0, 2)
        a = np.array([ax0, ay0, ax0 + rng.uniform(0.5, 3.0), ay0 + rng.uniform(0.5, 3.0)])
        b = np.array([bx0, by0, bx0 + rng.uniform(0.5, 3.0), by0 + rng.uniform(0.5, 3.0)])
        # keep every min/max decision and the contact boundary away from ties
        gaps = [
            abs(a[0] - b[0]), abs(a[1] - b[1]), abs(a[2] - b[2]), abs(a[3] - b[3]),
            abs(min(a[2], b[2]) - max(a[0], b[0])),
            abs(min(a[3], b[3]) - max(a[1], b[1])),
        ]
        if min(gaps) > 1e-3:
            return _gc.GradCase(arrays={"pred": a, "target": b})
    raise RuntimeError("could not sample a kink-free giou case")


def _giou_forward(arrays, consts):
    return 1.0 - value_of(_giou_core(arrays["pred"], arrays["target"]))


def _giou_gradient(arrays, consts):
    seeds = Dual.seed(list(arrays["pred"]) + list(arrays["target"]))
    out = _giou_core(seeds[:4], seeds[4:])
    partials = -out.partials  # loss = 1 - giou
    return {"pred": partials[:4], "target": partials[4:]}


def _iou3d_vertex_count(a, b) -> int:
    return len(_bev_intersection(a, b))


def _make_iou3d_case(seed: int) -> _gc.GradCase:
    probe = 2e-5  # vertex count must be stable within the FD stencil
    for attempt in range(256):
        rng = _loss_rng("iou3d_loss", seed, attempt)
        a = np.array([
            rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
            rng.uniform(0.8, 2.0), rng.uniform(0.8, 2.0), rng.uniform(1.0, 3.0),
            rng.uniform(-math.pi, math.pi),
        ])
        b = a + np.array([
            rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3), rng.uniform(-0.4, 0.4),
            rng.uniform(-0.2, 0.4), rng.uniform(-0.2, 0.4), rng.uniform(-0.3, 0.5),
            rng.uniform(-0.7, 0.7),
        ])
        top_a, top_b = a[1] + a[4] / 2, b[1] + b[4] / 2
        bot_a, bot_b = a[1] - a[4] / 2, b[1] - b[4] / 2
        overlap = min(top_a, top_b) - max(bot_a, bot_b)
        if overlap < 1e-2 or abs(top_a - top_b) < 1e-3 or abs(bot_a - bot_b) < 1e-3:
            continue
        if _polygon_area(_bev_intersection(a, b)) < 1e-2:
            continue
        count = _iou3d_vertex_count(a, b)
        stable = True
        for arr in (a, b):
            for i in range(7):
                for delta in (-probe, probe):
                    arr[i] += delta
                    if _iou3d_vertex_count(a, b) != count:
                        stable = False
                    arr[i] -= delta
                if not stable:
                    break
            if not stable:
                break
        if stable:
            return _gc.GradCase(arrays={"pred": a, "target": b})
    raise RuntimeError("could not sample a kink-free iou3d case")


def _iou3d_forward(arrays, consts):
    return 1.0 - value_of(_iou3d_core(tuple(arrays["pred"]), tuple(arrays["target"])))


def _iou3d_gradient(arrays, consts):
    seeds = Dual.seed(list(arrays["pred"]) + list(arrays["target"]))
    out = _iou3d_core(tuple(seeds[:7]), tuple(seeds[7:]))
    if not isinstance(out, Dual):
        zero = np.zeros(7)
        return {"pred": zero, "target": zero.copy()}
    partials = -out.partials
    return {"pred": partials[:7], "target": partials[7:]}


def _make_multibin_case(seed: int) -> _gc.GradCase:
    for attempt in range(64):
        rng = _loss_rng("multibin_loss", seed, attempt)
        logits = rng.uniform(-2.0, 2.0, DEFAULT_N_BINS)
        residuals = rng.uniform(-0.25, 0.25, DEFAULT_N_BINS)
        bin_index = int(rng.integers(DEFAULT_N_BINS))
        target_res = float(rng.uniform(-0.25, 0.25))
        if abs(residuals[bin_index] - target_res) > 1e-3:
            return _gc.GradCase(
                arrays={"logits": logits, "residuals": residuals},
                consts={"bin": bin_index, "residual": target_res},
            )
    raise RuntimeError("could not sample a multibin case")


def _multibin_forward(arrays, consts):
    return multibin_loss(
        arrays["logits"], arrays["residuals"],
        OrientationTarget(consts["bin"], consts["residual"]),
    )


def _multibin_gradient(arrays, consts):
    logits = np.asarray(arrays["logits"], dtype=np.float64)
    shifted = np.exp(logits - logits.max())
    softmax = shifted / shifted.sum()
    dlogits = softmax.copy()
    dlogits[consts["bin"]] -= 1.0
    dres = np.zeros_like(np.asarray(arrays["residuals"], dtype=np.float64))
    dres[consts["bin"]] = np.sign(arrays["residuals"][consts["bin"]] - consts["residual"])
    return {"logits": dlogits, "residuals": dres}


def _make_laplacian_case(seed: int) -> _gc.GradCase:
    for attempt in range(64):
        rng = _loss_rng("laplacian_depth_loss", seed, attempt)
        depth = float(rng.uniform(2.0, 60.0))
        target = float(rng.uniform(2.0, 60.0))
        log_scale = float(rng.uniform(-1.0, 1.0))
        if abs(depth - target) > 1e-3:
            return _gc.GradCase(
                arrays={"depth": np.array(depth), "log_scale": np.array(log_scale)},
                consts={"target": target},
            )
    raise RuntimeError("could not sample a laplacian case")


def _laplacian_forward(arrays, consts):
    return laplacian_depth_loss(
        float(arrays["depth"]), float(arrays["log_scale"]), consts["target"]
    )


def _laplacian_gradient(arrays, consts):
    d = float(arrays["depth"])
    s = float(arrays["log_scale"])
    t = consts["target"]
    dd = math.sqrt(2.0) * math.exp(-s) * math.copysign(1.0, d - t)
    ds = -math.sqrt(2.0) * math.exp(-s) * abs(d - t) + 1.0
    return {"depth": np.array(dd), "log_scale": np.array(ds)}


def _make_dmap_case(seed: int) -> _gc.GradCase:
    for attempt in range(64):
        rng = _loss_rng("depth_map_focal", seed, attempt)
        n_pixels, n_bins = 5, 4
        raw = rng.uniform(0.2, 1.0, (n_pixels, n_bins))
        p = raw / raw.sum(axis=1, keepdims=True)
        t = rng.integers(n_bins, size=n_pixels)
        pt = p[np.arange(n_pixels), t]
        if pt.min() > 0.05 and pt.max() < 0.95:
            return _gc.GradCase(
                arrays={"probabilities": p},
                consts={"targets": t, "alpha": 0.25, "gamma": 2.0},
            )
    raise RuntimeError("could not sample a depth-map case")


def _dmap_forward(arrays, consts):
    return depth_map_focal(
        arrays["probabilities"], consts["targets"],
        alpha=consts["alpha"], gamma=consts["gamma"],
    )


def _dmap_gradient(arrays, consts):
    p = np.asarray(arrays["probabilities"], dtype=np.float64)
    t = np.asarray(consts["targets"])
    g = np.zeros_like(p)
    n = p.shape[0]
    for i in range(n):
        g[i, t[i]] = _focal_dpt(p[i, t[i]], consts["alpha"], consts["gamma"]) / n
    return {"probabilities": g}


_gc.register(_gc.GradOp("focal_loss", _make_focal_case, _focal_forward, _focal_gradient))
_gc.register(_gc.GradOp("l1_loss", _make_l1_case, _l1_forward, _l1_gradient))
_gc.register(_gc.GradOp("giou_loss", _make_giou_case, _giou_forward, _giou_gradient))
_gc.register(_gc.GradOp("iou3d_loss", _make_iou3d_case, _iou3d_forward, _iou3d_gradient))
_gc.register(
    _gc.GradOp("multibin_loss", _make_multibin_case, _multibin_forward, _multibin_gradient)
)
_gc.register(
    _gc.GradOp(
        "laplacian_depth_loss", _make_laplacian_case, _laplacian_forward, _laplacian_gradient
    )
)
_gc.register(_gc.GradOp("depth_map_focal", _make_dmap_case, _dmap_forward, _dmap_gradient))
