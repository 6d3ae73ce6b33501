"""SIFT: DoG scale space, extremum refinement, orientations, 128-d descriptors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imgcore import REAL, Descriptor, GrayImage, Keypoint, blur_array, downsample2_array

# blur assumed to be present in the input raster already
INPUT_BLUR = 0.5
MIN_OCTAVE_SIZE = 8
MAX_REFINE_ITERATIONS = 5
DESCRIPTOR_CLAMP = 0.2


@dataclass(frozen=True)
class SiftConfig:
    octaves: int = 4
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    orientation_bins: int = 36
    peak_ratio: float = 0.8
    descriptor_cells: int = 4
    descriptor_bins: int = 8
    cell_width: float = 3.0

    def __post_init__(self):
        if self.octaves < 1 or self.scales_per_octave < 1:
            raise ValueError("octaves and scales_per_octave must be >= 1")
        if min(self.base_sigma, self.contrast_threshold, self.edge_ratio) <= 0:
            raise ValueError("sigma and thresholds must be positive")


@dataclass(frozen=True, eq=False)
class ScaleSpace:
    """Per-octave Gaussian levels (s+3) and their differences (s+2).

    Intensities are normalised to ``[0, 1]``. ``sigmas[i]`` is the blur of
    Gaussian level ``i`` measured in that octave's own pixel units.
    """

    gaussians: list
    dogs: list
    sigmas: np.ndarray
    config: SiftConfig

    @property
    def n_octaves(self) -> int:
        return len(self.gaussians)


def level_sigmas(cfg: SiftConfig) -> np.ndarray:
    k = 2.0 ** (1.0 / cfg.scales_per_octave)
    return cfg.base_sigma * k ** np.arange(cfg.scales_per_octave + 3)


def build_scale_space(img: GrayImage, cfg: SiftConfig = SiftConfig()) -> ScaleSpace:
    smallest = min(img.shape) / 2 ** (cfg.octaves - 1)
    if smallest < MIN_OCTAVE_SIZE:
        raise ValueError(
            f"{img.width}x{img.height} image too small for {cfg.octaves} octaves "
            f"(last octave would be under {MIN_OCTAVE_SIZE} px)"
        )
    s = cfg.scales_per_octave
    sigmas = level_sigmas(cfg)
    base = blur_array(img.pixels / 255.0, math.sqrt(cfg.base_sigma**2 - INPUT_BLUR**2))
    gaussians, dogs = [], []
    for _ in range(cfg.octaves):
        levels = [base]
        # every level is blurred straight from the octave base, not incrementally
        for sig in sigmas[1:]:
            levels.append(blur_array(base, math.sqrt(sig**2 - sigmas[0] ** 2)))
        gaussians.append(levels)
        dogs.append([b - a for a, b in zip(levels, levels[1:])])
        base = downsample2_array(levels[s])
    return ScaleSpace(gaussians, dogs, sigmas, cfg)


def detect_extrema(ss: ScaleSpace, cfg: SiftConfig | None = None) -> list[tuple[int, int, int, int]]:
    """Strict 26-neighbour extrema on DoG levels ``1..s`` as (octave, level, x, y)."""
    cfg = cfg or ss.config
    out = []
    for o, dogs in enumerate(ss.dogs):
        cube = np.stack(dogs)
        _, h, w = cube.shape
        if h < 3 or w < 3:
            continue
        center = cube[1:-1, 1:-1, 1:-1]
        is_max = np.ones(center.shape, dtype=bool)
        is_min = np.ones(center.shape, dtype=bool)
        for dl in (0, 1, 2):
            for dy in (0, 1, 2):
                for dx in (0, 1, 2):
                    if dl == dy == dx == 1:
                        continue
                    nb = cube[dl : dl + center.shape[0], dy : dy + h - 2, dx : dx + w - 2]
                    is_max &= center > nb
                    is_min &= center < nb
        ls, ys, xs = np.nonzero(is_max | is_min)
        out.extend(zip([o] * len(ls), (ls + 1).tolist(), (xs + 1).tolist(), (ys + 1).tolist()))
    return out


def _derivatives(cube: np.ndarray, l, y, x):
    """Central-difference gradient and Hessian of the DoG cube at integer samples."""
    c = cube[l, y, x]
    dx = 0.5 * (cube[l, y, x + 1] - cube[l, y, x - 1])
    dy = 0.5 * (cube[l, y + 1, x] - cube[l, y - 1, x])
    ds = 0.5 * (cube[l + 1, y, x] - cube[l - 1, y, x])
    dxx = cube[l, y, x + 1] + cube[l, y, x - 1] - 2 * c
    dyy = cube[l, y + 1, x] + cube[l, y - 1, x] - 2 * c
    dss = cube[l + 1, y, x] + cube[l - 1, y, x] - 2 * c
    dxy = 0.25 * (cube[l, y + 1, x + 1] - cube[l, y + 1, x - 1] - cube[l, y - 1, x + 1] + cube[l, y - 1, x - 1])
    dxs = 0.25 * (cube[l + 1, y, x + 1] - cube[l + 1, y, x - 1] - cube[l - 1, y, x + 1] + cube[l - 1, y, x - 1])
    dys = 0.25 * (cube[l + 1, y + 1, x] - cube[l + 1, y - 1, x] - cube[l - 1, y + 1, x] + cube[l - 1, y - 1, x])
    grad = np.stack([dx, dy, ds], axis=-1)
    hess = np.stack(
        [np.stack([dxx, dxy, dxs], -1), np.stack([dxy, dyy, dys], -1), np.stack([dxs, dys, dss], -1)],
        axis=-2,
    )
    return c, grad, hess


def passes_edge_test(dxx, dyy, dxy, edge_ratio: float):
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    limit = (edge_ratio + 1.0) ** 2 / edge_ratio
    with np.errstate(divide="ignore", invalid="ignore"):
        return (det > 0) & (tr * tr / np.where(det > 0, det, 1.0) < limit)


@dataclass(frozen=True)
class _Located:
    octave: int
    level: float  # fractional level inside the octave
    x: float  # octave pixel units
    y: float
    value: float


def _localize(cands, ss: ScaleSpace, cfg: SiftConfig) -> list[_Located]:
    s = cfg.scales_per_octave
    located = []
    by_octave: dict[int, list] = {}
    for o, l, x, y in cands:
        by_octave.setdefault(o, []).append((l, x, y))
    for o in sorted(by_octave):
        cube = np.stack(ss.dogs[o])
        _, h, w = cube.shape
        pts = np.array(by_octave[o], dtype=np.intp).reshape(-1, 3)
        l, x, y = pts[:, 0].copy(), pts[:, 1].copy(), pts[:, 2].copy()
        active = np.ones(len(pts), dtype=bool)
        done = np.zeros(len(pts), dtype=bool)
        offset = np.zeros((len(pts), 3))
        grad_final = np.zeros((len(pts), 3))
        for _ in range(MAX_REFINE_ITERATIONS):
            idx = np.nonzero(active & ~done)[0]
            if idx.size == 0:
                break
            _, g, H = _derivatives(cube, l[idx], y[idx], x[idx])
            det = np.linalg.det(H)
            ok = np.abs(det) > 1e-12
            active[idx[~ok]] = False
            idx, g, H = idx[ok], g[ok], H[ok]
            if idx.size == 0:
                break
            off = -np.linalg.solve(H, g[..., None])[..., 0]
            conv = np.all(np.abs(off) < 0.5, axis=1)
            offset[idx[conv]] = off[conv]
            grad_final[idx[conv]] = g[conv]
            done[idx[conv]] = True
            mv = idx[~conv]
            step = np.rint(off[~conv]).astype(np.intp)
            x[mv] += step[:, 0]
            y[mv] += step[:, 1]
            l[mv] += step[:, 2]
            off_grid = (x[mv] < 1) | (x[mv] > w - 2) | (y[mv] < 1) | (y[mv] > h - 2) | (l[mv] < 1) | (l[mv] > s)
            active[mv[off_grid]] = False
        keep = np.nonzero(active & done)[0]
        if keep.size == 0:
            continue
        lk, xk, yk = l[keep], x[keep], y[keep]
        value = cube[lk, yk, xk] + 0.5 * np.sum(grad_final[keep] * offset[keep], axis=1)
        _, _, H = _derivatives(cube, lk, yk, xk)
        good = (np.abs(value) >= cfg.contrast_threshold) & passes_edge_test(
            H[:, 0, 0], H[:, 1, 1], H[:, 0, 1], cfg.edge_ratio
        )
        for i in np.nonzero(good)[0]:
            k = keep[i]
            located.append(
                _Located(o, float(l[k] + offset[k, 2]), float(x[k] + offset[k, 0]), float(y[k] + offset[k, 1]), float(value[i]))
            )
    return located


def _to_keypoint(loc: _Located, cfg: SiftConfig, width: int, height: int) -> Keypoint | None:
    f = 2.0**loc.octave
    x, y = loc.x * f, loc.y * f
    if not (0 <= x < width and 0 <= y < height):
        return None
    scale = cfg.base_sigma * 2.0 ** (loc.octave + loc.level / cfg.scales_per_octave)
    return Keypoint(x=x, y=y, scale=scale, response=abs(loc.value), octave=loc.octave)


def refine_keypoints(cands, ss: ScaleSpace, cfg: SiftConfig | None = None) -> list[Keypoint]:
    """Sub-pixel/sub-scale refinement plus contrast and edge rejection."""
    cfg = cfg or ss.config
    h, w = ss.gaussians[0][0].shape
    out, seen = [], set()
    for loc in _localize(cands, ss, cfg):
        kp = _to_keypoint(loc, cfg, w, h)
        # neighbouring candidates can converge onto the same refined extremum
        if kp is None or (kp.octave, kp.x, kp.y, kp.scale) in seen:
            continue
        seen.add((kp.octave, kp.x, kp.y, kp.scale))
        out.append(kp)
    return out


def _octave_frame(kp: Keypoint, cfg: SiftConfig):
    """Octave-local position, blur and nearest Gaussian level of a keypoint."""
    f = 2.0**kp.octave
    sigma = kp.scale / f
    level = int(round(cfg.scales_per_octave * math.log2(sigma / cfg.base_sigma)))
    level = min(max(level, 0), cfg.scales_per_octave + 2)
    return kp.x / f, kp.y / f, sigma, level


def _gradients(img: np.ndarray):
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    return np.hypot(gx, gy), np.degrees(np.arctan2(gy, gx)) % 360.0


class _GradientCache:
    def __init__(self, ss: ScaleSpace):
        self.ss = ss
        self._cache: dict = {}

    def __call__(self, octave: int, level: int):
        key = (octave, level)
        if key not in self._cache:
            self._cache[key] = _gradients(self.ss.gaussians[octave][level])
        return self._cache[key]


def orientation_histogram(kp: Keypoint, ss: ScaleSpace, cfg: SiftConfig, grads=None) -> np.ndarray:
    grads = grads or _GradientCache(ss)
    cx, cy, sigma, level = _octave_frame(kp, cfg)
    mag, ang = grads(kp.octave, level)
    h, w = mag.shape
    weight_sigma = 1.5 * sigma
    radius = int(round(3 * weight_sigma))
    xi, yi = int(round(cx)), int(round(cy))
    x0, x1 = max(xi - radius, 1), min(xi + radius, w - 2)
    y0, y1 = max(yi - radius, 1), min(yi + radius, h - 2)
    n = cfg.orientation_bins
    if x0 > x1 or y0 > y1:
        return np.zeros(n)
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    wgt = np.exp(-((xx - xi) ** 2 + (yy - yi) ** 2) / (2 * weight_sigma**2))
    m = mag[y0 : y1 + 1, x0 : x1 + 1] * wgt
    bins = np.rint(ang[y0 : y1 + 1, x0 : x1 + 1] * n / 360.0).astype(np.intp) % n
    raw = np.bincount(bins.ravel(), weights=m.ravel(), minlength=n)
    # circular [1, 4, 6, 4, 1] / 16 smoothing
    return sum(c * np.roll(raw, k) for k, c in zip(range(-2, 3), (1, 4, 6, 4, 1))) / 16.0


def peak_orientations(hist: np.ndarray, peak_ratio: float = 0.8) -> list[float]:
    """Orientations (degrees) of local histogram peaks within ``peak_ratio`` of the maximum."""
    n = hist.size
    top = hist.max()
    if top <= 0:
        return []
    left, right = np.roll(hist, 1), np.roll(hist, -1)
    out = []
    for i in np.nonzero((hist > left) & (hist > right) & (hist >= peak_ratio * top))[0]:
        denom = left[i] - 2 * hist[i] + right[i]
        shift = 0.5 * (left[i] - right[i]) / denom if denom != 0 else 0.0
        out.append(float(((i + shift) * 360.0 / n) % 360.0))
    return out


def assign_orientations(kps, ss: ScaleSpace, cfg: SiftConfig | None = None) -> list[Keypoint]:
    cfg = cfg or ss.config
    grads = _GradientCache(ss)
    out = []
    for kp in kps:
        hist = orientation_histogram(kp, ss, cfg, grads)
        for angle in peak_orientations(hist, cfg.peak_ratio):
            out.append(Keypoint(kp.x, kp.y, kp.scale, angle, kp.response, kp.octave, 0))
    return out


def clamp_normalize(vec: np.ndarray, clamp: float = DESCRIPTOR_CLAMP) -> np.ndarray | None:
    """Unit vector ``min(clamp, t*u)`` with ``u = vec/|vec|`` and ``t`` chosen so the norm is 1.

    This is the fixed point of repeatedly clamping and renormalising, so the
    result is both unit length and bounded by ``clamp``. Returns ``None`` when
    no such vector exists (fewer than ``1/clamp**2`` non-zero entries).
    """
    peak = np.abs(vec).max() if vec.size else 0.0
    if peak == 0 or not np.isfinite(peak):
        return None
    # pre-scaling keeps tiny or huge inputs from under/overflowing the norm
    u = vec / peak
    u = u / np.linalg.norm(u)
    if u.max() <= clamp:
        return u
    if np.count_nonzero(u) * clamp * clamp < 1.0:
        return None
    v = np.sort(u)[::-1]
    # with the j largest entries clamped, the rest scale by t; work with
    # tv = t * v[j] so that a tail of tiny entries cannot underflow to zero
    for j in range(1, v.size):
        if v[j] == 0:
            break
        tv = math.sqrt(max(1.0 - j * clamp * clamp, 0.0)) / np.linalg.norm(v[j:] / v[j])
        if tv <= clamp and tv * (v[j - 1] / v[j]) >= clamp:
            with np.errstate(over="ignore"):
                return np.minimum(clamp, (u / v[j]) * tv)
    return None


def describe_one(kp: Keypoint, ss: ScaleSpace, cfg: SiftConfig, grads=None) -> np.ndarray | None:
    grads = grads or _GradientCache(ss)
    cx, cy, sigma, level = _octave_frame(kp, cfg)
    mag, ang = grads(kp.octave, level)
    h, w = mag.shape
    d, nb = cfg.descriptor_cells, cfg.descriptor_bins
    hist_width = cfg.cell_width * sigma
    radius = int(round(hist_width * math.sqrt(2) * (d + 1) * 0.5))
    xi, yi = int(round(cx)), int(round(cy))
    x0, x1 = max(xi - radius, 1), min(xi + radius, w - 2)
    y0, y1 = max(yi - radius, 1), min(yi + radius, h - 2)
    if x0 > x1 or y0 > y1:
        return None
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    theta = math.radians(kp.orientation)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rx, ry = xx - cx, yy - cy
    # coordinates in the keypoint frame, in cell units
    u = (cos_t * rx + sin_t * ry) / hist_width
    v = (-sin_t * rx + cos_t * ry) / hist_width
    cbin = u + d / 2 - 0.5
    rbin = v + d / 2 - 0.5
    inside = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    if not inside.any():
        return None
    cbin, rbin = cbin[inside], rbin[inside]
    weight = np.exp(-(u[inside] ** 2 + v[inside] ** 2) / (2 * (0.5 * d) ** 2))
    m = mag[y0 : y1 + 1, x0 : x1 + 1][inside] * weight
    obin = ((ang[y0 : y1 + 1, x0 : x1 + 1][inside] - kp.orientation) % 360.0) * nb / 360.0

    r0, c0, o0 = np.floor(rbin).astype(np.intp), np.floor(cbin).astype(np.intp), np.floor(obin).astype(np.intp)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    hist = np.zeros((d + 2, d + 2, nb))
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                np.add.at(hist, (r0 + dr + 1, c0 + dc + 1, (o0 + do) % nb), m * wr * wc * wo)
    return hist[1:-1, 1:-1, :].ravel()


def describe(kps, ss: ScaleSpace, cfg: SiftConfig | None = None) -> list[Descriptor | None]:
    """128-d descriptors index-aligned with ``kps``; ``None`` where undefined."""
    cfg = cfg or ss.config
    grads = _GradientCache(ss)
    out: list[Descriptor | None] = []
    for kp in kps:
        raw = describe_one(kp, ss, cfg, grads)
        vec = clamp_normalize(raw) if raw is not None else None
        out.append(Descriptor(REAL, vec) if vec is not None else None)
    return out


def _sort_key(kp: Keypoint):
    return (-kp.response, kp.y, kp.x, kp.orientation)


def sift_detect(img: GrayImage, cfg: SiftConfig = SiftConfig()) -> tuple[list[Keypoint], list[Descriptor]]:
    """Full pipeline; keypoints sorted by descending response, descriptors aligned."""
    ss = build_scale_space(img, cfg)
    kps = refine_keypoints(detect_extrema(ss, cfg), ss, cfg)
    kps = assign_orientations(kps, ss, cfg)
    descs = describe(kps, ss, cfg)
    pairs = sorted(((k, d) for k, d in zip(kps, descs) if d is not None), key=lambda p: _sort_key(p[0]))
    return [p[0] for p in pairs], [p[1] for p in pairs]
