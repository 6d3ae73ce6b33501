"""Scenario x algorithm benchmark: timing, keypoint counts, matches, match rate."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import statistics
import time
from dataclasses import asdict, dataclass, field, replace

from .distort import DEFAULT_PARAMS, Scenario
from .imgcore import GrayImage, load_pgm
from .matcher import MatchConfig, match_binary, match_rate, match_real
from .orb import OrbConfig, orb_detect
from .sift import SiftConfig, sift_detect
from .surf import SurfConfig, surf_detect_and_describe

log = logging.getLogger(__name__)

ALGORITHMS = ("sift", "surf", "orb")
SUITE_KINDS = ("intensity", "rotation", "scaling", "shearing", "fisheye", "noise", "identity")
SWEEP_ANGLES = (0, 45, 90, 135, 180, 225, 270)
CSV_COLUMNS = ("scenario", "algo", "time_ms", "kpnts1", "kpnts2", "matches", "match_rate_pct")
TIMED_REGION = "detect+describe(image1)+detect+describe(image2)+match"

TITLES = {
    "intensity": "Intensity change",
    "rotation": "Rotation",
    "scaling": "Scaling",
    "shearing": "Shearing",
    "fisheye": "Fisheye distortion",
    "noise": "Salt and pepper noise",
    "identity": "Image against itself",
}


class CellError(RuntimeError):
    def __init__(self, scenario: Scenario, algo: str, cause: Exception):
        super().__init__(f"{scenario} / {algo}: {cause}")
        self.scenario = scenario
        self.algo = algo
        self.cause = cause


class SuiteError(RuntimeError):
    """Raised after a suite finishes when one or more cells failed."""

    def __init__(self, results, failures):
        super().__init__(f"{len(failures)} benchmark cell(s) failed: " + "; ".join(map(str, failures)))
        self.results = results
        self.failures = failures


@dataclass
class SuiteConfig:
    image: str | None = None
    seed: int = 42
    params: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_PARAMS.items()})
    sift: SiftConfig = field(default_factory=SiftConfig)
    surf: SurfConfig = field(default_factory=SurfConfig)
    orb: OrbConfig = field(default_factory=OrbConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    repetitions: int = 5

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    def scenario(self, kind: str) -> Scenario:
        return Scenario(kind, self.params.get(kind, {}), self.seed if kind == "noise" else 0)

    def scenarios(self) -> list[Scenario]:
        return [self.scenario(k) for k in SUITE_KINDS]

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "repetitions": self.repetitions,
            "timed_region": TIMED_REGION,
            "scenarios": [str(s) for s in self.scenarios()],
            "sift": asdict(self.sift),
            "surf": asdict(self.surf),
            "orb": asdict(self.orb),
            "match": asdict(self.match),
        }


@dataclass(frozen=True)
class ScenarioResult:
    scenario: str
    algo: str
    time_ms: float
    kpnts1: int
    kpnts2: int
    matches: int
    match_rate_pct: float

    def row(self) -> list[str]:
        return [self.scenario, self.algo, repr(float(self.time_ms)), str(self.kpnts1), str(self.kpnts2), str(self.matches), repr(float(self.match_rate_pct))]


def detect(img: GrayImage, algo: str, cfg: SuiteConfig):
    """Run one detector+descriptor; returns (keypoints, descriptors)."""
    if algo == "sift":
        return sift_detect(img, cfg.sift)
    if algo == "surf":
        return surf_detect_and_describe(img, cfg.surf)
    if algo == "orb":
        return orb_detect(img, cfg.orb)
    raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")


def match(algo: str, kps1, d1, kps2, d2, cfg: MatchConfig):
    if algo == "orb":
        return match_binary(d1, d2, cfg)
    signs = None, None
    if algo == "surf":
        signs = [k.laplacian_sign for k in kps1], [k.laplacian_sign for k in kps2]
    return match_real(d1, d2, cfg, *signs)


def _pipeline(img1: GrayImage, img2: GrayImage, algo: str, cfg: SuiteConfig):
    kps1, d1 = detect(img1, algo, cfg)
    kps2, d2 = detect(img2, algo, cfg)
    return len(kps1), len(kps2), match(algo, kps1, d1, kps2, d2, cfg.match)


def run_pair(img1: GrayImage, img2: GrayImage, label: str, algo: str, cfg: SuiteConfig) -> ScenarioResult:
    times = []
    for _ in range(cfg.repetitions):
        t0 = time.perf_counter()
        k1, k2, pairs = _pipeline(img1, img2, algo, cfg)
        times.append(time.perf_counter() - t0)
    rate = match_rate(k1, k2, len(pairs)) if k1 + k2 else 0.0
    return ScenarioResult(label, algo, statistics.median(times) * 1000.0, k1, k2, len(pairs), rate)


def run_cell(img: GrayImage, scenario: Scenario, algo: str, cfg: SuiteConfig) -> ScenarioResult:
    """Distort ``img`` (untimed), then time the detect/describe/match unit."""
    try:
        img2 = scenario.apply(img)
        return run_pair(img, img2, str(scenario), algo, cfg)
    except Exception as exc:
        raise CellError(scenario, algo, exc) from exc


def run_suite(cfg: SuiteConfig, img: GrayImage | None = None) -> list[ScenarioResult]:
    """All 7 scenarios x 3 algorithms in fixed order.

    Failing cells are logged and skipped; if any failed, ``SuiteError`` is
    raised at the end carrying the completed rows.
    """
    if img is None:
        if cfg.image is None:
            raise ValueError("no image given")
        img = load_pgm(cfg.image)
    results, failures = [], []
    for scenario in cfg.scenarios():
        for algo in ALGORITHMS:
            try:
                res = run_cell(img, scenario, algo, cfg)
            except CellError as err:
                log.error("cell failed: %s", err)
                failures.append(err)
                continue
            log.info("%s %s: %d/%d kp, %d matches, %.1f%%", res.scenario, algo, res.kpnts1, res.kpnts2, res.matches, res.match_rate_pct)
            results.append(res)
    if failures:
        raise SuiteError(results, failures)
    return results


def rotation_sweep(img: GrayImage, angles=SWEEP_ANGLES, cfg: SuiteConfig | None = None, algos=ALGORITHMS) -> list[ScenarioResult]:
    """Match rate of each algorithm against ``img`` rotated by each angle."""
    cfg = cfg or SuiteConfig(repetitions=1)
    angles = list(angles)
    if not angles:
        raise ValueError("angles must be non-empty")
    out = []
    for angle in angles:
        scenario = Scenario("rotation", {"angle": angle})
        img2 = scenario.apply(img)
        for algo in algos:
            try:
                out.append(run_pair(img, img2, str(scenario), algo, cfg))
            except Exception as exc:
                raise CellError(scenario, algo, exc) from exc
    return out


def sweep_table(results) -> dict[str, dict[float, float]]:
    """``{algo: {angle: rate}}`` from rotation-sweep rows."""
    table: dict[str, dict[float, float]] = {}
    for r in results:
        angle = Scenario.parse(r.scenario).params["angle"]
        table.setdefault(r.algo, {})[angle] = r.match_rate_pct
    return table


# ---------------------------------------------------------------------- output


def to_csv(results, metadata: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write("# " + json.dumps(metadata or {}, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in results:
        writer.writerow(r.row())
    return buf.getvalue()


def parse_csv(text: str) -> tuple[dict, list[ScenarioResult]]:
    lines = text.splitlines()
    meta: dict = {}
    if lines and lines[0].startswith("#"):
        meta = json.loads(lines[0][1:].strip() or "{}")
        lines = lines[1:]
    reader = csv.reader(lines)
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    rows = [
        ScenarioResult(s, a, float(t), int(k1), int(k2), int(m), float(rate))
        for s, a, t, k1, k2, m, rate in reader
    ]
    return meta, rows


def to_markdown(results, metadata: dict | None = None) -> str:
    out = []
    if metadata is not None:
        out.append(f"<!-- {json.dumps(metadata, sort_keys=True)} -->\n")
    groups: dict[str, list[ScenarioResult]] = {}
    for r in results:
        groups.setdefault(r.scenario, []).append(r)
    for n, (scenario, rows) in enumerate(groups.items(), 1):
        kind = scenario.partition(":")[0]
        out.append(f"### {n}. {TITLES.get(kind, scenario)} ({scenario})\n")
        out.append("| | Time (sec) | Kpnts1 | Kpnts2 | Matches | Match rate (%) |")
        out.append("|---|---|---|---|---|---|")
        for r in rows:
            out.append(f"| {r.algo.upper()} | {r.time_ms / 1000:.3f} | {r.kpnts1} | {r.kpnts2} | {r.matches} | {r.match_rate_pct:.1f} |")
        out.append("")
    return "\n".join(out)


def emit(results, fmt: str, path: str | os.PathLike, metadata: dict | None = None) -> None:
    if not results:
        raise ValueError("nothing to emit")
    if fmt == "csv":
        text = to_csv(results, metadata)
    elif fmt in ("md", "markdown"):
        text = to_markdown(results, metadata)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)


def with_params(cfg: SuiteConfig, **overrides) -> SuiteConfig:
    return replace(cfg, **overrides)
