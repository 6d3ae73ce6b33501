"""Deterministic image distortions used to build the second image of each pair.

Conventions: ``x`` grows to the right, ``y`` grows downward, and a positive
rotation angle turns content clockwise on screen. With that choice a gradient
direction measured as ``atan2(dy, dx)`` increases by exactly the rotation
angle, so detector orientations and ``rotate`` agree in sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imgcore import GrayImage, bilinear_sample_array

KINDS = ("intensity", "rotation", "scaling", "shearing", "fisheye", "noise", "identity")

DEFAULT_PARAMS = {
    "intensity": {"gain": 1.0, "bias": 30.0},
    "rotation": {"angle": 45.0},
    "scaling": {"factor": 2.0},
    "shearing": {"kx": 0.5},
    "fisheye": {"k": 0.5},
    "noise": {"density": 0.3},
    "identity": {},
}

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of the SplitMix64 sequence started at ``seed``.

    Output ``i`` is ``mix(seed + (i + 1) * 0x9E3779B97F4A7C15)`` with the
    standard Stafford variant-13 finaliser, all arithmetic modulo 2**64.
    """
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK64) + np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def splitmix64_uniform(seed: int, n: int) -> np.ndarray:
    """Uniform doubles in ``[0, 1)`` from the top 53 bits of each output."""
    return (splitmix64(seed, n) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _exact_trig(angle_deg: float) -> tuple[float, float]:
    # exact values on the quarter turns keep 90-degree rotations lossless
    a = angle_deg % 360.0
    quarter = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}
    if a in quarter:
        return quarter[a]
    r = math.radians(angle_deg)
    return math.cos(r), math.sin(r)


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def adjust_intensity(img: GrayImage, gain: float = 1.0, bias: float = 0.0) -> GrayImage:
    if not gain > 0:
        raise ValueError(f"gain must be positive, got {gain}")
    if gain == 1.0 and bias == 0.0:
        return img
    return GrayImage.from_clipped(gain * img.pixels + bias)


def rotate(img: GrayImage, angle_deg: float) -> GrayImage:
    """Rotate about ``((w-1)/2, (h-1)/2)`` on the same canvas; corners fill with 0."""
    h, w = img.shape
    c, s = _exact_trig(angle_deg)
    if (c, s) == (1.0, 0.0):
        return img
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    xs, ys = _grid(h, w)
    dx, dy = xs - cx, ys - cy
    # inverse of p' = c + R(angle) (p - c)
    src_x = cx + c * dx + s * dy
    src_y = cy - s * dx + c * dy
    return GrayImage.from_clipped(bilinear_sample_array(img.pixels, src_x, src_y))


def scale(img: GrayImage, factor: float) -> GrayImage:
    if not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    h, w = img.shape
    out_w, out_h = round(w * factor), round(h * factor)
    if out_w < 1 or out_h < 1:
        raise ValueError(f"scaling by {factor} gives a degenerate {out_w}x{out_h} image")
    if factor == 1.0:
        return img
    xs, ys = _grid(out_h, out_w)
    # the last output row/column of an upscale maps just past the source edge;
    # clamping keeps it on the source instead of filling it black
    src_x = np.minimum(xs / factor, w - 1)
    src_y = np.minimum(ys / factor, h - 1)
    return GrayImage.from_clipped(bilinear_sample_array(img.pixels, src_x, src_y))


def shear(img: GrayImage, kx: float) -> GrayImage:
    """Horizontal shear: source ``(x, y)`` lands on ``(x + kx*y, y)``.

    The canvas widens by ``ceil(|kx| * (h - 1))``; negative ``kx`` shifts the
    content right by that amount so nothing is lost.
    """
    h, w = img.shape
    if kx == 0:
        return img
    extra = math.ceil(abs(kx) * (h - 1))
    offset = extra if kx < 0 else 0
    xs, ys = _grid(h, w + extra)
    src_x = xs - offset - kx * ys
    return GrayImage.from_clipped(bilinear_sample_array(img.pixels, src_x, ys))


def fisheye_source_radius(r, k: float):
    """Normalised source radius sampled by a destination pixel at radius ``r``."""
    return r * (1.0 + k * r * r)


def fisheye(img: GrayImage, k: float) -> GrayImage:
    """Single-coefficient barrel warp; radii are normalised to the half-diagonal."""
    if k < 0:
        raise ValueError(f"fisheye strength must be >= 0, got {k}")
    if k == 0:
        return img
    h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    half_diag = math.hypot(cx, cy)
    if half_diag == 0:
        return img
    xs, ys = _grid(h, w)
    dx, dy = xs - cx, ys - cy
    r = np.hypot(dx, dy) / half_diag
    gain = 1.0 + k * r * r
    return GrayImage.from_clipped(bilinear_sample_array(img.pixels, cx + dx * gain, cy + dy * gain))


def noise_positions(n_pixels: int, count: int, seed: int) -> np.ndarray:
    """Flat indices of the ``count`` pixels picked by the seeded permutation.

    The permutation sorts pixel indices by their SplitMix64 key (stable, so a
    64-bit key collision falls back to index order).
    """
    keys = splitmix64(seed, n_pixels)
    return np.argsort(keys, kind="stable")[:count]


def salt_pepper(img: GrayImage, density: float, seed: int = 0) -> GrayImage:
    """Overwrite exactly ``round(density * N)`` pixels; salt gets the odd one."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"noise density must be in [0, 1], got {density}")
    n = img.width * img.height
    count = int(round(density * n))
    if count == 0:
        return img
    idx = noise_positions(n, count, seed)
    n_salt = (count + 1) // 2
    flat = img.pixels.ravel().copy()
    flat[idx[:n_salt]] = 255.0
    flat[idx[n_salt:]] = 0.0
    return GrayImage(flat.reshape(img.shape))


@dataclass(frozen=True)
class Scenario:
    """One distortion kind with its parameters, e.g. ``rotation:angle=45``."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        allowed = set(DEFAULT_PARAMS[self.kind])
        unknown = set(self.params) - allowed
        if unknown:
            raise ValueError(f"unknown parameter(s) {sorted(unknown)} for {self.kind}")
        merged = {**DEFAULT_PARAMS[self.kind], **{k: float(v) for k, v in self.params.items()}}
        object.__setattr__(self, "params", merged)
        if self.kind == "noise" and not 0.0 <= merged["density"] <= 1.0:
            raise ValueError("noise density must be in [0, 1]")
        if self.kind == "scaling" and not merged["factor"] > 0:
            raise ValueError("scale factor must be positive")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items())), self.seed))

    def apply(self, img: GrayImage) -> GrayImage:
        p = self.params
        if self.kind == "identity":
            return img
        if self.kind == "intensity":
            return adjust_intensity(img, p["gain"], p["bias"])
        if self.kind == "rotation":
            return rotate(img, p["angle"])
        if self.kind == "scaling":
            return scale(img, p["factor"])
        if self.kind == "shearing":
            return shear(img, p["kx"])
        if self.kind == "fisheye":
            return fisheye(img, p["k"])
        return salt_pepper(img, p["density"], self.seed)

    def __str__(self) -> str:
        if self.kind == "identity":
            return "identity"
        parts = [f"{k}={_fmt(v)}" for k, v in self.params.items()]
        if self.kind == "noise":
            parts.append(f"seed={self.seed}")
        return f"{self.kind}:{','.join(parts)}"

    @classmethod
    def parse(cls, text: str) -> "Scenario":
        kind, _, rest = text.strip().partition(":")
        params: dict = {}
        seed = 0
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ValueError(f"malformed scenario parameter {item!r}")
            if key == "seed":
                seed = int(value)
            else:
                params[key] = float(value)
        return cls(kind, params, seed)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))
