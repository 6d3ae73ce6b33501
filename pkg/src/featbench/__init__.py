"""From-scratch SIFT, SURF and ORB with a distortion benchmark harness."""

from .bench import SuiteConfig, rotation_sweep, run_cell, run_suite
from .distort import Scenario
from .estimators import ORB, SIFT, SURF, BruteForceMatcher, check_image, matcher_for
from .imgcore import Descriptor, GrayImage, Keypoint, load_pgm, save_pgm
from .matcher import MatchConfig, match_binary, match_rate, match_real

__version__ = "0.1.0"

__all__ = [
    "ORB",
    "SIFT",
    "SURF",
    "BruteForceMatcher",
    "Descriptor",
    "GrayImage",
    "Keypoint",
    "MatchConfig",
    "Scenario",
    "SuiteConfig",
    "check_image",
    "load_pgm",
    "match_binary",
    "match_rate",
    "match_real",
    "matcher_for",
    "rotation_sweep",
    "run_cell",
    "run_suite",
    "save_pgm",
]
