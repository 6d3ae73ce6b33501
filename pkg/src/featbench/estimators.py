"""scikit-learn style wrappers around the detectors and the matcher.

Each detector is a transformer: ``fit(image)`` runs detection and stores
``keypoints_`` and ``descriptors_``; ``transform(image)`` returns the
descriptor matrix. Hyper-parameters are constructor arguments, so
``get_params``/``set_params``/``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .imgcore import BINARY, Descriptor, GrayImage, Keypoint, stack_descriptors
from .matcher import MatchConfig, MatchPair, match_binary, match_rate, match_real
from .orb import OrbConfig, orb_detect
from .sift import SiftConfig, sift_detect
from .surf import SurfConfig, surf_detect_and_describe


def check_image(X) -> GrayImage:
    """Coerce ``X`` to a :class:`GrayImage`, validating shape and range."""
    if isinstance(X, GrayImage):
        return X
    arr = np.asarray(X)
    if arr.dtype == object or not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"expected a numeric 2-D array, got dtype {arr.dtype}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim != 2:
        raise ValueError(f"expected a single-channel 2-D image, got shape {arr.shape}")
    return GrayImage(arr.astype(np.float64))


def check_descriptor_matrix(D, binary: bool) -> np.ndarray:
    if isinstance(D, (list, tuple)) and D and isinstance(D[0], Descriptor):
        D = stack_descriptors(D)
    arr = np.asarray(D)
    if arr.size == 0:
        return arr.reshape(0, 32 if binary else 0).astype(np.uint8 if binary else np.float64)
    if arr.ndim != 2:
        raise ValueError(f"descriptor matrix must be 2-D, got shape {arr.shape}")
    if binary:
        if arr.dtype != np.uint8 or arr.shape[1] != 32:
            raise ValueError("binary descriptors must be uint8 with 32 bytes per row")
        return arr
    return arr.astype(np.float64)


class _Detector(TransformerMixin, BaseEstimator):
    _binary = False

    def _detect(self, img: GrayImage):
        raise NotImplementedError

    def fit(self, X, y=None):
        img = check_image(X)
        kps, descs = self._detect(img)
        self.keypoints_: list[Keypoint] = kps
        self.descriptors_: list[Descriptor] = descs
        self.n_keypoints_ = len(kps)
        self.image_shape_ = img.shape
        return self

    def _matrix(self, descs) -> np.ndarray:
        if not descs:
            return np.zeros((0, 32), np.uint8) if self._binary else np.zeros((0, self._dim))
        return stack_descriptors(descs)

    def transform(self, X) -> np.ndarray:
        """Descriptor matrix of ``X``: float ``(n, d)`` or packed uint8 ``(n, 32)``."""
        check_is_fitted(self, "keypoints_")
        _, descs = self._detect(check_image(X))
        return self._matrix(descs)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X)._matrix(self.descriptors_)

    def detect_and_compute(self, X):
        return self._detect(check_image(X))


class SIFT(_Detector):
    _dim = 128

    def __init__(self, octaves=4, scales_per_octave=3, base_sigma=1.6, contrast_threshold=0.03, edge_ratio=10.0):
        self.octaves = octaves
        self.scales_per_octave = scales_per_octave
        self.base_sigma = base_sigma
        self.contrast_threshold = contrast_threshold
        self.edge_ratio = edge_ratio

    @property
    def config(self) -> SiftConfig:
        return SiftConfig(**self.get_params())

    def _detect(self, img):
        return sift_detect(img, self.config)


class SURF(_Detector):
    _dim = 64

    def __init__(self, octaves=4, levels_per_octave=4, base_filter=9, hessian_threshold=0.002):
        self.octaves = octaves
        self.levels_per_octave = levels_per_octave
        self.base_filter = base_filter
        self.hessian_threshold = hessian_threshold

    @property
    def config(self) -> SurfConfig:
        return SurfConfig(**self.get_params())

    def _detect(self, img):
        return surf_detect_and_describe(img, self.config)

    @property
    def laplacian_signs_(self) -> np.ndarray:
        check_is_fitted(self, "keypoints_")
        return np.array([k.laplacian_sign for k in self.keypoints_], dtype=int)


class ORB(_Detector):
    _binary = True

    def __init__(self, n_features=500, fast_threshold=20, pyramid_levels=8, pyramid_scale=1.2, patch_size=31, centroid_radius=15):
        self.n_features = n_features
        self.fast_threshold = fast_threshold
        self.pyramid_levels = pyramid_levels
        self.pyramid_scale = pyramid_scale
        self.patch_size = patch_size
        self.centroid_radius = centroid_radius

    @property
    def config(self) -> OrbConfig:
        return OrbConfig(**self.get_params())

    def _detect(self, img):
        return orb_detect(img, self.config)


class BruteForceMatcher(BaseEstimator):
    """Fit on train descriptors, then ``predict`` the matched train index per query (-1 if none)."""

    def __init__(self, binary=False, ratio=0.75, cross_check=True, hamming_max=64, respect_laplacian_sign=True):
        self.binary = binary
        self.ratio = ratio
        self.cross_check = cross_check
        self.hamming_max = hamming_max
        self.respect_laplacian_sign = respect_laplacian_sign

    def fit(self, X, y=None, signs=None):
        self.train_ = check_descriptor_matrix(X, self.binary)
        self.train_signs_ = None if signs is None else np.asarray(signs)
        return self

    def match(self, X, signs=None) -> list[MatchPair]:
        check_is_fitted(self, "train_")
        query = check_descriptor_matrix(X, self.binary)
        cfg = MatchConfig(self.ratio, self.cross_check, self.hamming_max, self.respect_laplacian_sign)
        if self.binary:
            return match_binary(query, self.train_, cfg)
        return match_real(query, self.train_, cfg, signs, self.train_signs_)

    def predict(self, X, signs=None) -> np.ndarray:
        query = check_descriptor_matrix(X, self.binary)
        out = np.full(len(query), -1, dtype=int)
        for p in self.match(query, signs):
            out[p.query_index] = p.train_index
        return out

    def score(self, X, y=None, signs=None) -> float:
        """Match rate (percent) between the query set and the fitted train set."""
        query = check_descriptor_matrix(X, self.binary)
        return match_rate(len(query), len(self.train_), len(self.match(query, signs)))


def matcher_for(detector: _Detector, **kwargs) -> BruteForceMatcher:
    return BruteForceMatcher(binary=isinstance(detector, ORB), **kwargs)


__all__ = ["SIFT", "SURF", "ORB", "BruteForceMatcher", "check_image", "matcher_for", "BINARY"]
