"""Brute-force descriptor matching and the match-rate metric."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .imgcore import BINARY, Descriptor, stack_descriptors


@dataclass(frozen=True)
class MatchPair:
    query_index: int
    train_index: int
    distance: float

    def to_dict(self) -> dict:
        return {"query": self.query_index, "train": self.train_index, "distance": self.distance}


@dataclass(frozen=True)
class MatchConfig:
    ratio: float = 0.75
    cross_check: bool = True
    hamming_max: int = 64
    respect_laplacian_sign: bool = True

    def __post_init__(self):
        if not 0 < self.ratio <= 1:
            raise ValueError(f"ratio must be in (0, 1], got {self.ratio}")
        if self.hamming_max < 0:
            raise ValueError("hamming_max must be >= 0")


def _as_matrix(descs, dtype) -> np.ndarray:
    if isinstance(descs, np.ndarray):
        return descs.astype(dtype, copy=False)
    if len(descs) == 0:
        return np.zeros((0, 0), dtype=dtype)
    if isinstance(descs[0], Descriptor):
        return stack_descriptors(descs).astype(dtype, copy=False)
    return np.asarray(descs, dtype=dtype)


def euclidean_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(d2, 0.0))


def _two_nearest(dist: np.ndarray):
    """Best and second-best column per row; first index wins ties.

    ``second`` is -1 where no other finite candidate exists.
    """
    best = np.argmin(dist, axis=1)
    masked = dist.copy()
    rows = np.arange(len(best))
    masked[rows, best] = np.inf
    second = np.argmin(masked, axis=1)
    second[~np.isfinite(masked[rows, second])] = -1
    return best, second


def _exact(a: np.ndarray, b: np.ndarray, rows, cols) -> np.ndarray:
    return np.linalg.norm(a[rows] - b[cols], axis=1)


def _ratio_pass(a, b, dist, best, second, ratio):
    rows = np.arange(len(best))
    d1 = _exact(a, b, rows, best)
    ok = np.isfinite(dist[rows, best])
    has2 = second >= 0
    d2 = np.full(len(best), np.inf)
    d2[has2] = _exact(a, b, rows[has2], second[has2])
    ok &= d1 < ratio * d2
    return ok, d1


def match_real(a, b, cfg: MatchConfig = MatchConfig(), sign_a: Sequence[int] | None = None, sign_b: Sequence[int] | None = None) -> list[MatchPair]:
    """Nearest-neighbour matching with Lowe's ratio test and optional cross-check.

    With ``cross_check`` on, a pair must be mutually nearest and pass the
    ratio test in both directions, which keeps the result symmetric under
    swapping ``a`` and ``b``. Laplacian signs, when given for both sides,
    restrict candidates to equal signs.
    """
    A = _as_matrix(a, np.float64)
    B = _as_matrix(b, np.float64)
    if A.shape[0] == 0 or B.shape[0] == 0:
        return []
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"descriptor length mismatch: {A.shape[1]} vs {B.shape[1]}")
    dist = euclidean_distances(A, B)
    if cfg.respect_laplacian_sign and sign_a is not None and sign_b is not None:
        sa, sb = np.asarray(sign_a), np.asarray(sign_b)
        if sa.shape != (A.shape[0],) or sb.shape != (B.shape[0],):
            raise ValueError("sign lists must align with descriptor lists")
        dist[sa[:, None] != sb[None, :]] = np.inf
    best, second = _two_nearest(dist)
    fwd_ok, d1 = _ratio_pass(A, B, dist, best, second, cfg.ratio)
    if not cfg.cross_check:
        pairs = [(int(q), int(best[q]), float(d1[q])) for q in np.nonzero(fwd_ok)[0]]
        return _one_to_one(pairs)
    rbest, rsecond = _two_nearest(dist.T)
    rev_ok, _ = _ratio_pass(B, A, dist.T, rbest, rsecond, cfg.ratio)
    out = []
    for q in np.nonzero(fwd_ok)[0]:
        t = best[q]
        if rbest[t] == q and rev_ok[t]:
            out.append(MatchPair(int(q), int(t), float(d1[q])))
    return out


def _one_to_one(pairs) -> list[MatchPair]:
    # without cross-check several queries may pick one train; the closest keeps it
    taken: dict[int, tuple[float, int]] = {}
    for q, t, d in pairs:
        if t not in taken or (d, q) < taken[t]:
            taken[t] = (d, q)
    keep = {(q, t) for t, (_, q) in taken.items()}
    return [MatchPair(q, t, d) for q, t, d in pairs if (q, t) in keep]


def _packed(descs) -> np.ndarray:
    if isinstance(descs, np.ndarray):
        arr = descs
    elif len(descs) == 0:
        return np.zeros((0, 32), dtype=np.uint8)
    elif isinstance(descs[0], Descriptor):
        if any(d.kind != BINARY for d in descs):
            raise ValueError("match_binary needs binary descriptors")
        arr = stack_descriptors(descs)
    else:
        arr = np.asarray(descs)
    return np.ascontiguousarray(arr, dtype=np.uint8)


def hamming_distances(a, b) -> np.ndarray:
    A, B = _packed(a), _packed(b)
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]), dtype=np.int64)
    if A.shape[1] != B.shape[1]:
        raise ValueError("binary descriptors differ in length")
    if A.shape[1] % 8 == 0:
        A, B = A.view(np.uint64), B.view(np.uint64)
    x = A[:, None, :] ^ B[None, :, :]
    return np.bitwise_count(x).sum(axis=2, dtype=np.int64)


def match_binary(a, b, cfg: MatchConfig = MatchConfig()) -> list[MatchPair]:
    """Mutual-best Hamming pairs within ``hamming_max``; lowest index wins ties."""
    dist = hamming_distances(a, b)
    if dist.size == 0:
        return []
    best = np.argmin(dist, axis=1)
    rbest = np.argmin(dist, axis=0)
    out = []
    for q, t in enumerate(best):
        d = int(dist[q, t])
        if rbest[t] == q and d <= cfg.hamming_max:
            out.append(MatchPair(q, int(t), d))
    return out


def match_rate(kpnts1: int, kpnts2: int, matches: int) -> float:
    """Percentage ``200 * matches / (kpnts1 + kpnts2)`` rounded to one decimal."""
    if kpnts1 < 0 or kpnts2 < 0 or matches < 0:
        raise ValueError("counts must be non-negative")
    if kpnts1 + kpnts2 == 0:
        raise ValueError("match rate undefined when both keypoint counts are zero")
    if matches > min(kpnts1, kpnts2):
        raise ValueError(f"{matches} matches exceed min({kpnts1}, {kpnts2})")
    return round(200.0 * matches / (kpnts1 + kpnts2), 1)


def matches_to_json(pairs) -> str:
    return json.dumps([p.to_dict() for p in pairs], indent=1)


def write_matches(pairs, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(matches_to_json(pairs))
        fh.write("\n")
