"""ORB: FAST-9 corners, Harris top-N, intensity-centroid orientation, steered BRIEF."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .distort import splitmix64_uniform
from .imgcore import BINARY, Descriptor, GrayImage, Keypoint, blur_array

# 16-pixel Bresenham circle of radius 3, clockwise from 12 o'clock
CIRCLE = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)  # fmt: skip
ARC = 9
FAST_BORDER = 3
HARRIS_K = 0.04
HARRIS_WINDOW = 7
BRIEF_PAIRS = 256
BRIEF_SIGMA = 2.0
PATTERN_SEED = 0x0B5EED
ROTATION_STEPS = 30  # 12 degree increments


@dataclass(frozen=True)
class OrbConfig:
    n_features: int = 500
    fast_threshold: int = 20
    pyramid_levels: int = 8
    pyramid_scale: float = 1.2
    patch_size: int = 31
    centroid_radius: int = 15

    def __post_init__(self):
        if self.n_features < 1 or self.fast_threshold < 1:
            raise ValueError("n_features and fast_threshold must be >= 1")
        if not self.pyramid_scale > 1:
            raise ValueError("pyramid_scale must exceed 1")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")

    @property
    def border(self) -> int:
        # patch and centroid disc must both fit around every kept corner
        return max(self.patch_size // 2, self.centroid_radius) + 1


# ------------------------------------------------------------------------ FAST


def _arc_min(values: np.ndarray) -> np.ndarray:
    """Minimum over each of the 16 circular arcs of 9 consecutive samples (axis 0)."""
    n = len(CIRCLE)
    ext = np.concatenate([values, values[: ARC - 1]], axis=0)
    m2 = np.minimum(ext[:-1], ext[1:])  # runs of 2, length 23
    m4 = np.minimum(m2[:-2], m2[2:])  # runs of 4, length 21
    m8 = np.minimum(m4[:-4], m4[4:])  # runs of 8, length 17
    return np.minimum(m8[:n], ext[8 : 8 + n])


def fast_scores(arr: np.ndarray, threshold: float, border: int = FAST_BORDER) -> np.ndarray:
    """FAST-9 score map: 0 for non-corners, otherwise the corner strength.

    The strength of a corner is the supremum of thresholds ``t`` for which the
    segment test still passes (it is a corner at ``t`` iff strength > ``t``).
    Pixels closer than ``border`` (at least 3) to the edge are never corners.
    """
    h, w = arr.shape
    score = np.zeros((h, w))
    b = max(border, FAST_BORDER)
    if h <= 2 * b or w <= 2 * b:
        return score
    arr = arr.astype(np.float32)
    center = arr[b : h - b, b : w - b]
    n = len(CIRCLE)
    diffs = [arr[b + dy : h - b + dy, b + dx : w - b + dx] - center for dx, dy in CIRCLE]
    # exact segment test on boolean maps: runs of 2, 4, 8, then 9
    corner = np.zeros(center.shape, dtype=bool)
    for hit in ([d > threshold for d in diffs], [d < -threshold for d in diffs]):
        run = hit
        for step in (1, 2, 4):
            run = [run[k] & run[(k + step) % n] for k in range(n)]
        for k in range(n):
            corner |= run[k] & hit[(k + 8) % n]
    ys, xs = np.nonzero(corner)
    if ys.size == 0:
        return score
    ring = np.stack([d[ys, xs] for d in diffs])
    score[ys + b, xs + b] = np.maximum(_arc_min(ring).max(axis=0), _arc_min(-ring).max(axis=0))
    return score


def fast_detect(img: GrayImage, threshold: int) -> list[tuple[int, int, float]]:
    """All FAST-9 corners as (x, y, score), in raster order."""
    if img.width < 7 or img.height < 7:
        raise ValueError("FAST needs an image of at least 7x7")
    score = fast_scores(img.pixels, threshold)
    ys, xs = np.nonzero(score)
    return list(zip(xs.tolist(), ys.tolist(), score[ys, xs].tolist()))


def _nonmax3(score: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Keep masked pixels whose score is not beaten by any 8-neighbour."""
    p = np.pad(score, 1)
    h, w = score.shape
    keep = mask.copy()
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            if dx == dy == 1:
                continue
            nb = p[dy : dy + h, dx : dx + w]
            # ties go to the later raster position so exactly one survives
            if (dy, dx) < (1, 1):
                keep &= score >= nb
            else:
                keep &= score > nb
    return keep


# ---------------------------------------------------------------------- Harris


def harris_map(arr: np.ndarray) -> np.ndarray:
    """``det(M) - k tr(M)^2`` of the 7x7 Sobel structure tensor at every pixel.

    Intensities are scaled to ``[0, 1]``, Sobel kernels by 1/8, and the image
    edge is replicated.
    """
    r = HARRIS_WINDOW // 2
    P = np.pad(np.asarray(arr, dtype=np.float64) / 255.0, r + 1, mode="edge")
    dx = P[:, 2:] - P[:, :-2]
    dy = P[2:, :] - P[:-2, :]
    gx = (dx[:-2] + 2 * dx[1:-1] + dx[2:]) / 8.0
    gy = (dy[:, :-2] + 2 * dy[:, 1:-1] + dy[:, 2:]) / 8.0

    def window(v):
        c = np.zeros((v.shape[0] + 1, v.shape[1] + 1))
        np.cumsum(np.cumsum(v, axis=0), axis=1, out=c[1:, 1:])
        n = HARRIS_WINDOW
        return c[n:, n:] - c[:-n, n:] - c[n:, :-n] + c[:-n, :-n]

    a, b, c = window(gx * gx), window(gy * gy), window(gx * gy)
    return a * b - c * c - HARRIS_K * (a + b) ** 2


def harris_scores(arr: np.ndarray, xs, ys) -> np.ndarray:
    """Harris response of :func:`harris_map` at the given centres."""
    xs = np.asarray(xs, dtype=np.intp)
    ys = np.asarray(ys, dtype=np.intp)
    h, w = arr.shape
    if xs.size == 0:
        return np.zeros(0)
    if xs.min() < 0 or ys.min() < 0 or xs.max() >= w or ys.max() >= h:
        raise IndexError("Harris centre outside the image")
    # crossover measured: a full map costs about as much as 1/40 of its pixels as patches
    if xs.size * 40 > arr.size:
        return harris_map(arr)[ys, xs]
    return _harris_patches(arr, xs, ys)


def _harris_patches(arr, xs, ys):
    # same response as harris_map, gathered from clamped 9x9 patches
    h, w = arr.shape
    r = HARRIS_WINDOW // 2
    span = np.arange(-r - 1, r + 2)
    rows = np.clip(ys[:, None] + span[None, :], 0, h - 1)
    cols = np.clip(xs[:, None] + span[None, :], 0, w - 1)
    P = arr[rows[:, :, None], cols[:, None, :]] / 255.0
    gx = (P[:, :-2, 2:] + 2 * P[:, 1:-1, 2:] + P[:, 2:, 2:] - P[:, :-2, :-2] - 2 * P[:, 1:-1, :-2] - P[:, 2:, :-2]) / 8.0
    gy = (P[:, 2:, :-2] + 2 * P[:, 2:, 1:-1] + P[:, 2:, 2:] - P[:, :-2, :-2] - 2 * P[:, :-2, 1:-1] - P[:, :-2, 2:]) / 8.0
    a = (gx * gx).sum(axis=(1, 2))
    b = (gy * gy).sum(axis=(1, 2))
    c = (gx * gy).sum(axis=(1, 2))
    return a * b - c * c - HARRIS_K * (a + b) ** 2


def harris_rank(img: GrayImage, corners, n: int) -> list[tuple[int, int, float]]:
    """The ``n`` best corners by Harris score, descending; ties by (y, x)."""
    if not corners:
        return []
    xs = np.array([c[0] for c in corners], dtype=np.intp)
    ys = np.array([c[1] for c in corners], dtype=np.intp)
    scores = harris_scores(img.pixels, xs, ys)
    order = np.lexsort((xs, ys, -scores))[:n]
    return [(int(xs[i]), int(ys[i]), float(scores[i])) for i in order]


# ------------------------------------------------------------------ orientation


@lru_cache(maxsize=8)
def _half_disc(radius: int):
    # offsets (i, j) of the disc with i > 0; the mirror (-i, j) completes each pair
    j, i = np.mgrid[-radius : radius + 1, 1 : radius + 1]
    inside = i * i + j * j <= radius * radius
    return i[inside].astype(np.intp), j[inside].astype(np.intp)


def centroid_orientations(arr: np.ndarray, xs, ys, radius: int) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.intp)
    ys = np.asarray(ys, dtype=np.intp)
    h, w = arr.shape
    if xs.size and (xs.min() < radius or ys.min() < radius or xs.max() >= w - radius or ys.max() >= h - radius):
        raise IndexError("centroid disc leaves the image")
    arr = np.asarray(arr, dtype=np.float64)
    i, j = _half_disc(radius)
    # moments from mirrored differences, so a symmetric patch cancels exactly
    x, y = xs[:, None], ys[:, None]
    m10 = (arr[y + j, x + i] - arr[y + j, x - i]) @ i.astype(np.float64)
    m01 = (arr[y + i, x + j] - arr[y - i, x + j]) @ i.astype(np.float64)
    ang = np.degrees(np.arctan2(m01, m10)) % 360.0
    return np.where((m10 == 0) & (m01 == 0), 0.0, ang)


def orientation_centroid(img: GrayImage, x: int, y: int, radius: int) -> float:
    return float(centroid_orientations(img.pixels, [x], [y], radius)[0])


# ------------------------------------------------------------------------ BRIEF


def generate_brief_pattern(seed: int = PATTERN_SEED, patch_size: int = 31) -> np.ndarray:
    """256 integer point pairs ``(x1, y1, x2, y2)`` with spread ``patch_size/5``.

    Normals come from Box-Muller over the SplitMix64 stream. Points outside
    the radius ``patch_size // 2`` disc are redrawn, and so is a second point
    equal to its partner (such a test is constant).
    """
    radius = patch_size // 2
    sigma = patch_size / 5.0
    pairs: list[tuple[int, int, int, int]] = []
    pending: tuple[int, int] | None = None
    chunk = 4 * BRIEF_PAIRS
    drawn = 0
    while len(pairs) < BRIEF_PAIRS:
        u = splitmix64_uniform(seed, drawn + chunk)[drawn:]
        drawn += chunk
        for u1, u2 in zip(u[0::2], u[1::2]):
            r = math.sqrt(-2.0 * math.log(1.0 - u1))
            pt = (int(round(sigma * r * math.cos(2 * math.pi * u2))), int(round(sigma * r * math.sin(2 * math.pi * u2))))
            if pt[0] ** 2 + pt[1] ** 2 > radius * radius:
                continue
            if pending is None:
                pending = pt
            elif pt != pending:
                if len(pairs) < BRIEF_PAIRS:
                    pairs.append(pending + pt)
                pending = None
    pts = np.array(pairs, dtype=np.int64)
    return pts


def format_pattern(pattern: np.ndarray) -> str:
    return "".join(f"{a} {b} {c} {d}\n" for a, b, c, d in pattern)


def parse_pattern(text: str) -> np.ndarray:
    rows = [list(map(int, line.split())) for line in text.splitlines() if line.strip()]
    pattern = np.array(rows, dtype=np.int64)
    if pattern.shape != (BRIEF_PAIRS, 4):
        raise ValueError(f"BRIEF pattern must be {BRIEF_PAIRS} rows of 4 ints, got {pattern.shape}")
    return pattern


@lru_cache(maxsize=1)
def load_brief_pattern() -> np.ndarray:
    text = resources.files("featbench").joinpath("data/brief_pattern.txt").read_text()
    pattern = parse_pattern(text)
    pattern.setflags(write=False)
    return pattern


@dataclass(frozen=True, eq=False)
class BriefPattern:
    """Base point pairs plus 30 rotated copies (12 degree steps), rounded to pixels."""

    pairs: np.ndarray
    rotated: np.ndarray  # (30, 256, 4)

    @classmethod
    def from_pairs(cls, pairs: np.ndarray) -> "BriefPattern":
        pairs = np.asarray(pairs, dtype=np.float64)
        rot = np.empty((ROTATION_STEPS, BRIEF_PAIRS, 4), dtype=np.intp)
        for k in range(ROTATION_STEPS):
            t = math.radians(k * 360.0 / ROTATION_STEPS)
            c, s = math.cos(t), math.sin(t)
            for p in (0, 2):
                x, y = pairs[:, p], pairs[:, p + 1]
                rot[k, :, p] = np.rint(c * x - s * y)
                rot[k, :, p + 1] = np.rint(s * x + c * y)
        rot.setflags(write=False)
        return cls(np.asarray(pairs, dtype=np.int64), rot)

    @property
    def reach(self) -> int:
        return int(np.abs(self.rotated).max())


@lru_cache(maxsize=1)
def default_pattern() -> BriefPattern:
    return BriefPattern.from_pairs(load_brief_pattern())


def rotation_index(orientation_deg: float) -> int:
    return int(round(orientation_deg / (360.0 / ROTATION_STEPS))) % ROTATION_STEPS


def brief_bits(smoothed: np.ndarray, xs, ys, orientations, pattern: BriefPattern) -> np.ndarray:
    """Packed descriptors, shape ``(n, 32)`` uint8, for integer keypoint positions."""
    xs = np.asarray(xs, dtype=np.intp)
    ys = np.asarray(ys, dtype=np.intp)
    if xs.size == 0:
        return np.zeros((0, BRIEF_PAIRS // 8), dtype=np.uint8)
    h, w = smoothed.shape
    reach = pattern.reach
    if xs.min() < reach or ys.min() < reach or xs.max() >= w - reach or ys.max() >= h - reach:
        raise IndexError("BRIEF patch leaves the image")
    k = np.array([rotation_index(o) for o in np.asarray(orientations, dtype=np.float64)])
    pts = pattern.rotated[k]  # (n, 256, 4)
    a = smoothed[ys[:, None] + pts[:, :, 1], xs[:, None] + pts[:, :, 0]]
    b = smoothed[ys[:, None] + pts[:, :, 3], xs[:, None] + pts[:, :, 2]]
    return np.packbits(a < b, axis=1)


def brief_describe(smoothed: GrayImage, kp: Keypoint, pattern: BriefPattern | None = None) -> Descriptor:
    """Steered BRIEF of ``kp`` on an image already blurred with sigma 2."""
    pattern = pattern or default_pattern()
    bits = brief_bits(smoothed.pixels, [int(round(kp.x))], [int(round(kp.y))], [kp.orientation], pattern)
    return Descriptor(BINARY, bits[0])


# ------------------------------------------------------------------- pipeline


def _resample_axis(arr: np.ndarray, n_out: int, f: float, axis: int) -> np.ndarray:
    n_in = arr.shape[axis]
    # centre-aligned: output centre maps to input centre
    pos = np.clip((n_in - 1) / 2.0 + (np.arange(n_out) - (n_out - 1) / 2.0) * f, 0, n_in - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = pos - i0
    if axis == 0:
        return arr[i0] * (1 - t)[:, None] + arr[i1] * t[:, None]
    return arr[:, i0] * (1 - t) + arr[:, i1] * t


@dataclass(frozen=True, eq=False)
class PyramidLevel:
    """One level; level pixel ``x`` sits at ``cx0 + (x - cx) * factor`` in level 0."""

    pixels: np.ndarray
    factor: float

    def to_base(self, xs, ys, base_shape):
        h0, w0 = base_shape
        h, w = self.pixels.shape
        return (
            (w0 - 1) / 2.0 + (np.asarray(xs) - (w - 1) / 2.0) * self.factor,
            (h0 - 1) / 2.0 + (np.asarray(ys) - (h - 1) / 2.0) * self.factor,
        )


def pyramid(arr: np.ndarray, cfg: OrbConfig) -> list[PyramidLevel]:
    """Each level is the previous one shrunk by ``pyramid_scale`` (bilinear, centre-aligned).

    The centre alignment keeps the pyramid exactly equivariant under quarter
    turns about the image centre.
    """
    h, w = arr.shape
    out = [PyramidLevel(arr, 1.0)]
    prev = arr
    for i in range(1, cfg.pyramid_levels):
        f = cfg.pyramid_scale**i
        lw, lh = int(round(w / f)), int(round(h / f))
        if min(lw, lh) <= 2 * cfg.border:
            break
        ph, pw = prev.shape
        prev = _resample_axis(_resample_axis(prev, lh, cfg.pyramid_scale, 0), lw, cfg.pyramid_scale, 1)
        out.append(PyramidLevel(prev, f))
    return out


def level_budgets(areas, n_features: int) -> list[int]:
    """Split ``n_features`` in proportion to level area (largest remainders first)."""
    areas = np.asarray(areas, dtype=np.float64)
    share = n_features * areas / areas.sum()
    base = np.floor(share).astype(int)
    rest = n_features - base.sum()
    for i in np.argsort(-(share - base), kind="stable")[:rest]:
        base[i] += 1
    return base.tolist()


def orb_detect(img: GrayImage, cfg: OrbConfig = OrbConfig(), pattern: BriefPattern | None = None):
    """Keypoints (level-0 frame, descending Harris score) and aligned 256-bit descriptors."""
    pattern = pattern or default_pattern()
    border = max(cfg.border, pattern.reach + 1)
    levels = pyramid(img.pixels, cfg)
    budgets = level_budgets([lv.pixels.size for lv in levels], cfg.n_features)
    kps: list[Keypoint] = []
    blobs = []
    for lvl, (level, budget) in enumerate(zip(levels, budgets)):
        arr, f = level.pixels, level.factor
        h, w = arr.shape
        if budget == 0 or min(h, w) <= 2 * border:
            continue
        # one extra ring is scored so that suppression sees the neighbours of edge corners
        score = fast_scores(arr, cfg.fast_threshold, border - 1)
        mask = np.zeros(score.shape, dtype=bool)
        mask[border:-border, border:-border] = score[border:-border, border:-border] > 0
        ys, xs = np.nonzero(_nonmax3(score, mask))
        if xs.size == 0:
            continue
        hs = harris_scores(arr, xs, ys)
        order = np.lexsort((xs, ys, -hs))[:budget]
        xs, ys, hs = xs[order], ys[order], hs[order]
        ori = centroid_orientations(arr, xs, ys, cfg.centroid_radius)
        bits = brief_bits(blur_array(arr, BRIEF_SIGMA), xs, ys, ori, pattern)
        bx, by = level.to_base(xs, ys, img.shape)
        for x, y, r, o, b in zip(bx.tolist(), by.tolist(), hs.tolist(), ori.tolist(), bits):
            kps.append(Keypoint(x, y, cfg.patch_size * f, o, r, lvl, 0))
            blobs.append(b)
    order = sorted(range(len(kps)), key=lambda i: (-kps[i].response, kps[i].octave, kps[i].y, kps[i].x))
    return [kps[i] for i in order], [Descriptor(BINARY, blobs[i]) for i in order]
