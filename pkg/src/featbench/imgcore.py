"""Image container, PGM I/O and the numeric kernels shared by every detector."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import correlate1d


class PGMError(ValueError):
    """Base class for PGM decoding problems."""


class MalformedHeaderError(PGMError):
    pass


class UnsupportedMaxvalError(PGMError):
    pass


class TruncatedDataError(PGMError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster held as float64 intensities in ``[0, 255]``.

    ``pixels`` has shape ``(height, width)``; row-major flattening gives the
    usual raster order.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D raster, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 255.0:
            raise ValueError("intensities must lie in [0, 255]")
        object.__setattr__(self, "pixels", _frozen(arr))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = None

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.pixels), 0, 255).astype(np.uint8)

    @classmethod
    def from_clipped(cls, arr: np.ndarray) -> "GrayImage":
        return cls(np.clip(arr, 0.0, 255.0))


@dataclass(frozen=True, eq=False)
class IntegralImage:
    """Summed-area table: ``cumulative[y, x]`` is the sum over ``[0..x] x [0..y]``."""

    cumulative: np.ndarray
    # zero row/column prepended, so box sums need no bounds special cases
    padded: np.ndarray = field(repr=False)

    @property
    def width(self) -> int:
        return self.cumulative.shape[1]

    @property
    def height(self) -> int:
        return self.cumulative.shape[0]

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "IntegralImage":
        arr = np.asarray(arr, dtype=np.float64)
        padded = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1), dtype=np.float64)
        np.cumsum(np.cumsum(arr, axis=0), axis=1, out=padded[1:, 1:])
        return cls(_frozen(padded[1:, 1:]), _frozen(padded))


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float = 0.0
    response: float = 0.0
    octave: int = 0
    laplacian_sign: int = 0

    def to_dict(self) -> dict:
        return {
            "x": float(self.x),
            "y": float(self.y),
            "scale": float(self.scale),
            "orientation_deg": float(self.orientation),
            "response": float(self.response),
            "octave": int(self.octave),
            "laplacian_sign": int(self.laplacian_sign),
        }


REAL = "real-valued"
BINARY = "binary"
BINARY_BITS = 256


@dataclass(frozen=True, eq=False)
class Descriptor:
    """Real vector (SIFT 128, SURF 64) or 256-bit string packed into 32 bytes."""

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind == REAL:
            vals = np.asarray(self.values, dtype=np.float64)
            if vals.ndim != 1:
                raise ValueError("real-valued descriptor must be 1-D")
        elif self.kind == BINARY:
            vals = np.asarray(self.values, dtype=np.uint8)
            if vals.shape != (BINARY_BITS // 8,):
                raise ValueError("binary descriptor must pack exactly 256 bits")
        else:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        object.__setattr__(self, "values", _frozen(vals.copy()))

    @property
    def n_bits(self) -> int:
        return self.values.size * 8 if self.kind == BINARY else 0

    def __len__(self) -> int:
        return self.n_bits if self.kind == BINARY else self.values.size

    def __eq__(self, other):
        if not isinstance(other, Descriptor):
            return NotImplemented
        return self.kind == other.kind and bool(np.array_equal(self.values, other.values))

    __hash__ = None


def stack_descriptors(descs: Sequence[Descriptor]) -> np.ndarray:
    """Stack descriptors into ``(n, d)`` float64 or ``(n, 32)`` uint8."""
    if len(descs) == 0:
        return np.zeros((0, 0))
    kinds = {d.kind for d in descs}
    if len(kinds) != 1:
        raise ValueError("cannot stack descriptors of mixed kinds")
    lengths = {d.values.size for d in descs}
    if len(lengths) != 1:
        raise ValueError(f"mixed descriptor lengths: {sorted(lengths)}")
    return np.stack([d.values for d in descs])


# --------------------------------------------------------------------------- PGM


def _read_header_tokens(data: bytes) -> tuple[list[bytes], int]:
    """Return magic, width, height, maxval tokens and the offset just past them."""
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise MalformedHeaderError("header ended early")
        if data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def parse_pgm(data: bytes) -> GrayImage:
    tokens, pos = _read_header_tokens(data)
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise MalformedHeaderError(f"not a P2/P5 PGM (magic {magic!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeaderError("non-integer width, height or maxval") from None
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"unsupported maxval {maxval}")
    count = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates header and raster
        raster = data[pos + 1 : pos + 1 + count]
        if len(raster) < count:
            raise TruncatedDataError(f"expected {count} bytes, got {len(raster)}")
        values = np.frombuffer(raster, dtype=np.uint8)
    else:
        body = data[pos:].split()
        if len(body) < count:
            raise TruncatedDataError(f"expected {count} samples, got {len(body)}")
        try:
            values = np.array([int(v) for v in body[:count]], dtype=np.int64)
        except ValueError:
            raise MalformedHeaderError("non-integer sample in P2 raster") from None
        if values.min() < 0 or values.max() > 255:
            raise MalformedHeaderError("sample outside [0, 255]")
    return GrayImage(values.reshape(height, width).astype(np.float64))


def load_pgm(path: str | os.PathLike) -> GrayImage:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_pgm(data)


def save_pgm(img: GrayImage, path: str | os.PathLike, binary: bool = True) -> None:
    """Write ``img`` as P5 (default) or P2, rounding to 8 bits."""
    raster = img.to_uint8()
    header = f"{'P5' if binary else 'P2'}\n{img.width} {img.height}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(raster.tobytes())
        else:
            for row in raster:
                fh.write((" ".join(str(int(v)) for v in row) + "\n").encode())


# ----------------------------------------------------------------------- kernels


def integral(img: GrayImage) -> IntegralImage:
    return IntegralImage.from_array(img.pixels)


def box_sum(ii: IntegralImage, x0: int, y0: int, x1: int, y1: int) -> float:
    """Sum over the inclusive rectangle ``[x0..x1] x [y0..y1]``."""
    if not (0 <= x0 <= x1 < ii.width and 0 <= y0 <= y1 < ii.height):
        raise IndexError(f"rectangle ({x0},{y0})-({x1},{y1}) outside {ii.width}x{ii.height}")
    p = ii.padded
    return float(p[y1 + 1, x1 + 1] - p[y0, x1 + 1] - p[y1 + 1, x0] + p[y0, x0])


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def blur_array(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a float array, edge pixels replicated."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    k = gaussian_kernel(sigma)
    out = correlate1d(arr, k, axis=1, mode="nearest")
    return correlate1d(out, k, axis=0, mode="nearest")


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    return GrayImage.from_clipped(blur_array(img.pixels, sigma))


def bilinear_sample_array(arr: np.ndarray, xs, ys) -> np.ndarray:
    """Vectorised bilinear lookup; coordinates outside ``[0, w-1] x [0, h-1]`` give 0."""
    h, w = arr.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.where(inside, xs, 0.0)
    yc = np.where(inside, ys, 0.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    fx = xc - x0
    fy = yc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = arr[y0, x0] * (1.0 - fx) + arr[y0, x1] * fx
    bottom = arr[y1, x0] * (1.0 - fx) + arr[y1, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    return np.where(inside, out, 0.0)


def sample_bilinear(img: GrayImage, x: float, y: float) -> float:
    return float(bilinear_sample_array(img.pixels, x, y))


def downsample2(img: GrayImage) -> GrayImage:
    if img.width < 2 or img.height < 2:
        raise ValueError(f"image too small to downsample: {img.width}x{img.height}")
    return GrayImage(downsample2_array(img.pixels))


def downsample2_array(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape
    return arr[0 : 2 * (h // 2) : 2, 0 : 2 * (w // 2) : 2].copy()


# ------------------------------------------------------------------ keypoint I/O


def keypoints_to_json(kps: Iterable[Keypoint]) -> str:
    """Serialise keypoints sorted by descending response."""
    ordered = sorted(kps, key=lambda k: -k.response)
    return json.dumps([k.to_dict() for k in ordered], indent=1)


def write_keypoints(kps: Iterable[Keypoint], path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(keypoints_to_json(kps))
        fh.write("\n")


def read_keypoints(path: str | os.PathLike) -> list[Keypoint]:
    with open(path) as fh:
        rows = json.load(fh)
    return [
        Keypoint(
            x=r["x"],
            y=r["y"],
            scale=r["scale"],
            orientation=r["orientation_deg"],
            response=r["response"],
            octave=r["octave"],
            laplacian_sign=r["laplacian_sign"],
        )
        for r in rows
    ]
