"""SURF: box-filter Hessian detector, Haar-wavelet orientation and 64-d descriptor.

All derivative responses are expressed for intensities scaled to ``[0, 1]``
so ``hessian_threshold`` does not depend on the 8-bit range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imgcore import REAL, Descriptor, GrayImage, IntegralImage, Keypoint, integral

CROSS_WEIGHT = 0.9


@dataclass(frozen=True)
class SurfConfig:
    octaves: int = 4
    levels_per_octave: int = 4
    base_filter: int = 9
    hessian_threshold: float = 0.002
    cross_weight: float = CROSS_WEIGHT

    def __post_init__(self):
        if self.base_filter < 9 or self.base_filter % 2 == 0:
            raise ValueError("base_filter must be odd and >= 9")
        if self.base_filter % 3 != 0:
            raise ValueError("base_filter must be a multiple of 3 (three lobes)")
        if self.octaves < 1 or self.levels_per_octave < 3:
            raise ValueError("need >= 1 octave and >= 3 levels per octave")
        if not self.hessian_threshold > 0:
            raise ValueError("hessian_threshold must be positive")


@dataclass(frozen=True)
class HessianResponse:
    det: float
    trace_sign: int
    dxx: float = 0.0
    dyy: float = 0.0
    dxy: float = 0.0


def filter_sizes(cfg: SurfConfig) -> list[list[int]]:
    """Filter side lengths per octave: 9,15,21,27 then 15,27,39,51, ..."""
    out = []
    for o in range(cfg.octaves):
        step = 6 * 2**o
        first = cfg.base_filter + (2**o - 1) * 6
        out.append([first + i * step for i in range(cfg.levels_per_octave)])
    return out


def octave_stride(octave: int) -> int:
    return 2**octave


# Box layouts relative to the centre, as (dx0, dy0, dx1, dy1, weight) with
# inclusive corners. Dyy: a (2l-1) x (3l) column with the middle third at -2;
# Dxx is its transpose; Dxy: four l x l quadrants, positive where dx*dy > 0.
def _layouts(size: int):
    l = size // 3
    half = (size - 1) // 2
    a = l - 1
    dyy = [(-a, -half, a, half, 1.0), (-a, -(l - 1) // 2, a, (l - 1) // 2, -3.0)]
    dxx = [(y0, x0, y1, x1, wt) for (x0, y0, x1, y1, wt) in dyy]
    dxy = [(1, 1, l, l, 1.0), (-l, -l, -1, -1, 1.0), (1, -l, l, -1, -1.0), (-l, 1, -1, l, -1.0)]
    return dxx, dyy, dxy


def filter_half_extent(size: int) -> int:
    return (size - 1) // 2


def _weighted_sum(padded: np.ndarray, xs, ys, boxes):
    acc = 0.0
    for x0, y0, x1, y1, wt in boxes:
        X0, X1 = xs + x0, xs + x1 + 1
        Y0, Y1 = ys + y0, ys + y1 + 1
        acc = acc + wt * (padded[Y1, X1] - padded[Y0, X1] - padded[Y1, X0] + padded[Y0, X0])
    return acc


def _derivative_maps(padded: np.ndarray, xs, ys, size: int):
    dxx_b, dyy_b, dxy_b = _layouts(size)
    norm = 1.0 / (255.0 * size * size)
    return (
        _weighted_sum(padded, xs, ys, dxx_b) * norm,
        _weighted_sum(padded, xs, ys, dyy_b) * norm,
        _weighted_sum(padded, xs, ys, dxy_b) * norm,
    )


def hessian_response(ii: IntegralImage, x: int, y: int, filter_size: int, cross_weight: float = CROSS_WEIGHT) -> HessianResponse:
    if filter_size < 9 or filter_size % 2 == 0 or filter_size % 3 != 0:
        raise ValueError(f"filter size must be an odd multiple of 3 >= 9, got {filter_size}")
    half = filter_half_extent(filter_size)
    if not (half <= x < ii.width - half and half <= y < ii.height - half):
        raise IndexError(f"{filter_size}x{filter_size} filter at ({x},{y}) leaves the image")
    dxx, dyy, dxy = (float(v) for v in _derivative_maps(ii.padded, np.intp(x), np.intp(y), filter_size))
    det = dxx * dyy - (cross_weight * dxy) ** 2
    return HessianResponse(det, int(np.sign(dxx + dyy)), dxx, dyy, dxy)


@dataclass(frozen=True, eq=False)
class ResponseStack:
    """Hessian determinants and Laplacian signs of one octave on its sample lattice."""

    octave: int
    stride: int
    sizes: list
    det: np.ndarray  # (levels, rows, cols), NaN where the filter does not fit
    sign: np.ndarray


def _lattice_sum(padded: np.ndarray, c0: int, r0: int, ncols: int, nrows: int, stride: int, boxes):
    """Weighted box sums at lattice points ``(c0 + i, r0 + j) * stride`` via strided slices."""
    acc = np.zeros((nrows, ncols))
    x_base, y_base = c0 * stride, r0 * stride
    span_x, span_y = (ncols - 1) * stride + 1, (nrows - 1) * stride + 1

    def grid(dy, dx):
        y, x = y_base + dy, x_base + dx
        return padded[y : y + span_y : stride, x : x + span_x : stride]

    for x0, y0, x1, y1, wt in boxes:
        acc += wt * (grid(y1 + 1, x1 + 1) - grid(y0, x1 + 1) - grid(y1 + 1, x0) + grid(y0, x0))
    return acc


def octave_responses(ii: IntegralImage, octave: int, sizes, cross_weight: float = CROSS_WEIGHT) -> ResponseStack:
    stride = octave_stride(octave)
    cols = (ii.width - 1) // stride + 1
    rows = (ii.height - 1) // stride + 1
    det = np.full((len(sizes), rows, cols), np.nan)
    sign = np.zeros((len(sizes), rows, cols), dtype=np.int8)
    for i, size in enumerate(sizes):
        half = filter_half_extent(size)
        c0, r0 = -(-half // stride), -(-half // stride)
        c1 = (ii.width - 1 - half) // stride
        r1 = (ii.height - 1 - half) // stride
        if c1 < c0 or r1 < r0:
            continue
        norm = 1.0 / (255.0 * size * size)
        dxx_b, dyy_b, dxy_b = _layouts(size)
        shape = (c1 - c0 + 1, r1 - r0 + 1)
        dxx = _lattice_sum(ii.padded, c0, r0, *shape, stride, dxx_b) * norm
        dyy = _lattice_sum(ii.padded, c0, r0, *shape, stride, dyy_b) * norm
        dxy = _lattice_sum(ii.padded, c0, r0, *shape, stride, dxy_b) * norm
        det[i, r0 : r1 + 1, c0 : c1 + 1] = dxx * dyy - (cross_weight * dxy) ** 2
        sign[i, r0 : r1 + 1, c0 : c1 + 1] = np.sign(dxx + dyy)
    return ResponseStack(octave, stride, list(sizes), det, sign)


def lattice_maxima(stack: ResponseStack, threshold: float) -> list[tuple[int, int, int]]:
    """Strict 3x3x3 maxima above ``threshold`` as (level, row, col)."""
    det = stack.det
    L, R, C = det.shape
    if L < 3 or R < 3 or C < 3:
        return []
    d = np.where(np.isnan(det), -np.inf, det)
    center = d[1:-1, 1:-1, 1:-1]
    ok = np.isfinite(center) & (center > threshold)
    for dl in (0, 1, 2):
        for dr in (0, 1, 2):
            for dc in (0, 1, 2):
                if dl == dr == dc == 1:
                    continue
                nb = d[dl : dl + L - 2, dr : dr + R - 2, dc : dc + C - 2]
                ok &= np.isfinite(nb) & (center > nb)
    ls, rs, cs = np.nonzero(ok)
    return list(zip((ls + 1).tolist(), (rs + 1).tolist(), (cs + 1).tolist()))


def _interpolate(det: np.ndarray, l: int, r: int, c: int):
    """Newton step on the 3x3x3 neighbourhood; offset order (col, row, level)."""
    v = det[l, r, c]
    g = 0.5 * np.array([det[l, r, c + 1] - det[l, r, c - 1], det[l, r + 1, c] - det[l, r - 1, c], det[l + 1, r, c] - det[l - 1, r, c]])
    dxx = det[l, r, c + 1] + det[l, r, c - 1] - 2 * v
    dyy = det[l, r + 1, c] + det[l, r - 1, c] - 2 * v
    dss = det[l + 1, r, c] + det[l - 1, r, c] - 2 * v
    dxy = 0.25 * (det[l, r + 1, c + 1] - det[l, r + 1, c - 1] - det[l, r - 1, c + 1] + det[l, r - 1, c - 1])
    dxs = 0.25 * (det[l + 1, r, c + 1] - det[l + 1, r, c - 1] - det[l - 1, r, c + 1] + det[l - 1, r, c - 1])
    dys = 0.25 * (det[l + 1, r + 1, c] - det[l + 1, r - 1, c] - det[l - 1, r + 1, c] + det[l - 1, r - 1, c])
    H = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    try:
        return -np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return None


def _check_size(img_w: int, img_h: int, cfg: SurfConfig) -> None:
    sizes = filter_sizes(cfg)
    last = cfg.octaves - 1
    stride = octave_stride(last)
    # the largest filter of the last octave needs three lattice columns/rows
    need = sizes[last][-1] + 2 * stride
    if min(img_w, img_h) < need:
        raise ValueError(
            f"{img_w}x{img_h} image too small for {cfg.octaves} SURF octaves (needs >= {need} px)"
        )


def surf_detect(img: GrayImage, cfg: SurfConfig = SurfConfig(), ii: IntegralImage | None = None) -> list[Keypoint]:
    _check_size(img.width, img.height, cfg)
    ii = ii or integral(img)
    kps = []
    for o, sizes in enumerate(filter_sizes(cfg)):
        stack = octave_responses(ii, o, sizes, cfg.cross_weight)
        size_step = sizes[1] - sizes[0]
        for l, r, c in lattice_maxima(stack, cfg.hessian_threshold):
            off = _interpolate(stack.det, l, r, c)
            if off is None or np.any(np.abs(off) >= 0.5):
                continue
            x = (c + off[0]) * stack.stride
            y = (r + off[1]) * stack.stride
            size = sizes[l] + off[2] * size_step
            if not (0 <= x < img.width and 0 <= y < img.height):
                continue
            kps.append(
                Keypoint(
                    x=float(x),
                    y=float(y),
                    scale=1.2 * size / 9.0,
                    response=float(stack.det[l, r, c]),
                    octave=o,
                    laplacian_sign=int(stack.sign[l, r, c]),
                )
            )
    kps.sort(key=lambda k: (-k.response, k.y, k.x))
    return kps


def _haar(padded: np.ndarray, xs, ys, size: int):
    """Haar wavelet responses (x, y) of side ``size`` with top-left at (xs, ys)."""
    half = size // 2

    def box(x0, y0, x1, y1):
        return padded[y1, x1] - padded[y0, x1] - padded[y1, x0] + padded[y0, x0]

    dx = box(xs + half, ys, xs + size, ys + size) - box(xs, ys, xs + half, ys + size)
    dy = box(xs, ys + half, xs + size, ys + size) - box(xs, ys, xs + size, ys + half)
    return dx / 255.0, dy / 255.0


def _haar_side(scale: float, factor: float) -> int:
    return max(2, 2 * int(round(factor * scale / 2.0)))


def _haar_origin(centres: np.ndarray, side: int) -> np.ndarray:
    # top-left pixel of an even-sided box whose centre is nearest ``centres``;
    # rint is odd-symmetric, so the placement commutes with a point reflection
    return np.rint(centres - (side - 1) / 2.0).astype(np.intp)


# sample offsets (in units of scale) inside the radius-6 disc
_DISC = np.array([(i, j) for j in range(-6, 7) for i in range(-6, 7) if i * i + j * j < 36], dtype=np.float64)
_WINDOW = math.pi / 3.0
_WINDOW_STEPS = 72


def surf_orientation(ii: IntegralImage, kp: Keypoint) -> float:
    s = kp.scale
    side = _haar_side(s, 4.0)
    xs = _haar_origin(kp.x + _DISC[:, 0] * s, side)
    ys = _haar_origin(kp.y + _DISC[:, 1] * s, side)
    ok = (xs >= 0) & (ys >= 0) & (xs + side <= ii.width) & (ys + side <= ii.height)
    if not ok.any():
        return 0.0
    dx, dy = _haar(ii.padded, xs[ok], ys[ok], side)
    wgt = np.exp(-(_DISC[ok] ** 2).sum(axis=1) / (2 * 2.0**2))
    dx, dy = dx * wgt, dy * wgt
    angles = np.arctan2(dy, dx) % (2 * math.pi)
    starts = np.arange(_WINDOW_STEPS) * (2 * math.pi / _WINDOW_STEPS)
    rel = (angles[None, :] - starts[:, None]) % (2 * math.pi)
    inwin = rel < _WINDOW
    sx = (inwin * dx).sum(axis=1)
    sy = (inwin * dy).sum(axis=1)
    length = sx * sx + sy * sy
    best = np.flatnonzero(length == length.max())
    if length[best[0]] == 0:
        return 0.0
    # equal-length windows: keep the smallest resulting angle
    cands = np.degrees(np.arctan2(sy[best], sx[best])) % 360.0
    return float(cands.min())


# 20s window: 4x4 subregions of 5x5 samples at spacing s, sample centres at
# (k - 9.5) * s for k in 0..19
_GRID = np.arange(20) - 9.5
_GU, _GV = np.meshgrid(_GRID, _GRID)
_GU, _GV = _GU.ravel(), _GV.ravel()
_SUBREGION = ((np.floor((_GV + 10) / 5) * 4) + np.floor((_GU + 10) / 5)).astype(np.intp)
_DESC_WEIGHT = np.exp(-(_GU**2 + _GV**2) / (2 * 3.3**2))


def describe_window_fits(ii: IntegralImage, kp: Keypoint) -> bool:
    s = kp.scale
    side = _haar_side(s, 2.0)
    reach = math.hypot(10.0, 10.0) * s + side
    return reach <= kp.x < ii.width - reach and reach <= kp.y < ii.height - reach


def surf_describe_one(ii: IntegralImage, kp: Keypoint) -> np.ndarray:
    s = kp.scale
    theta = math.radians(kp.orientation)
    c, sn = math.cos(theta), math.sin(theta)
    side = _haar_side(s, 2.0)
    xs = _haar_origin(kp.x + s * (c * _GU - sn * _GV), side)
    ys = _haar_origin(kp.y + s * (sn * _GU + c * _GV), side)
    xs = np.clip(xs, 0, ii.width - side)
    ys = np.clip(ys, 0, ii.height - side)
    dx, dy = _haar(ii.padded, xs, ys, side)
    # rotate responses into the keypoint frame
    du = (c * dx + sn * dy) * _DESC_WEIGHT
    dv = (-sn * dx + c * dy) * _DESC_WEIGHT
    vec = np.zeros((16, 4))
    np.add.at(vec, (_SUBREGION, 0), du)
    np.add.at(vec, (_SUBREGION, 1), dv)
    np.add.at(vec, (_SUBREGION, 2), np.abs(du))
    np.add.at(vec, (_SUBREGION, 3), np.abs(dv))
    vec = vec.ravel()
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def surf_describe(ii: IntegralImage, kps) -> list[Descriptor | None]:
    """64-d descriptors aligned with ``kps``; ``None`` where the window leaves the image."""
    return [Descriptor(REAL, surf_describe_one(ii, kp)) if describe_window_fits(ii, kp) else None for kp in kps]


def surf_detect_and_describe(img: GrayImage, cfg: SurfConfig = SurfConfig()) -> tuple[list[Keypoint], list[Descriptor]]:
    ii = integral(img)
    kps, descs = [], []
    for kp in surf_detect(img, cfg, ii):
        if not describe_window_fits(ii, kp):
            continue
        kp = Keypoint(kp.x, kp.y, kp.scale, surf_orientation(ii, kp), kp.response, kp.octave, kp.laplacian_sign)
        kps.append(kp)
        descs.append(Descriptor(REAL, surf_describe_one(ii, kp)))
    return kps, descs
