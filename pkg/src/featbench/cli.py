"""``featbench`` command line.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 compute failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .distort import KINDS, Scenario
from .imgcore import PGMError, load_pgm, save_pgm, write_keypoints
from .matcher import write_matches

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_COMPUTE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load(path):
    try:
        return load_pgm(path)
    except (OSError, PGMError) as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc


def _parse_params(items) -> dict:
    params = {}
    for item in items or []:
        for part in item.split(","):
            key, eq, value = part.partition("=")
            if not eq:
                raise UsageError(f"--param expects key=value, got {part!r}")
            try:
                params[key.strip()] = float(value)
            except ValueError:
                raise UsageError(f"non-numeric value in {part!r}") from None
    return params


def cmd_detect(args) -> int:
    img = _load(args.image)
    kps, _ = bench.detect(img, args.algo, bench.SuiteConfig())
    write_keypoints(kps, args.out)
    print(f"{len(kps)} keypoints -> {args.out}")
    return EXIT_OK


def cmd_distort(args) -> int:
    try:
        scenario = Scenario(args.kind, _parse_params(args.param), args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    img = _load(args.image)
    save_pgm(scenario.apply(img), args.out)
    print(f"{scenario} -> {args.out}")
    return EXIT_OK


def cmd_match(args) -> int:
    img1, img2 = _load(args.image1), _load(args.image2)
    cfg = bench.SuiteConfig()
    k1, d1 = bench.detect(img1, args.algo, cfg)
    k2, d2 = bench.detect(img2, args.algo, cfg)
    pairs = bench.match(args.algo, k1, d1, k2, d2, cfg.match)
    write_matches(pairs, args.out)
    rate = bench.match_rate(len(k1), len(k2), len(pairs)) if k1 or k2 else 0.0
    print(f"{len(k1)}/{len(k2)} keypoints, {len(pairs)} matches ({rate:.1f}%) -> {args.out}")
    return EXIT_OK


def _suite_config(args) -> bench.SuiteConfig:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    return bench.SuiteConfig(image=args.image, seed=args.seed, repetitions=args.reps)


def cmd_bench(args) -> int:
    cfg = _suite_config(args)
    img = _load(args.image)
    status = EXIT_OK
    try:
        results = bench.run_suite(cfg, img)
    except bench.SuiteError as err:
        print(err, file=sys.stderr)
        results, status = err.results, EXIT_COMPUTE
    if results:
        bench.emit(results, args.format, args.out, cfg.metadata())
    print(f"{len(results)} rows -> {args.out}")
    return status


def cmd_sweep(args) -> int:
    try:
        angles = [float(a) for a in args.angles.split(",") if a.strip()]
    except ValueError:
        raise UsageError(f"bad --angles {args.angles!r}") from None
    if not angles:
        raise UsageError("--angles is empty")
    cfg = _suite_config(args)
    img = _load(args.image)
    results = bench.rotation_sweep(img, angles, cfg)
    meta = cfg.metadata() | {"sweep_angles": angles}
    bench.emit(results, args.format, args.out, meta)
    print(f"{len(results)} rows -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="featbench", description="SIFT/SURF/ORB detection, matching and distortion benchmark")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("detect", help="detect keypoints and dump them as JSON")
    d.add_argument("--algo", choices=bench.ALGORITHMS, required=True)
    d.add_argument("--image", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_detect)

    t = sub.add_parser("distort", help="apply one distortion scenario to a PGM")
    t.add_argument("--kind", choices=KINDS, required=True)
    t.add_argument("--param", action="append", metavar="K=V", help="scenario parameter, repeatable")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--image", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_distort)

    m = sub.add_parser("match", help="match two images and dump the pairs as JSON")
    m.add_argument("--algo", choices=bench.ALGORITHMS, required=True)
    m.add_argument("--image1", required=True)
    m.add_argument("--image2", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_match)

    for name, func, helptext in (("bench", cmd_bench, "run the full scenario suite"), ("sweep", cmd_sweep, "match rate versus rotation angle")):
        b = sub.add_parser(name, help=helptext)
        b.add_argument("--image", required=True)
        b.add_argument("--seed", type=int, default=42)
        b.add_argument("--reps", type=int, default=5 if name == "bench" else 1)
        b.add_argument("--format", choices=("csv", "markdown"), default="csv")
        b.add_argument("--out", required=True)
        if name == "sweep":
            b.add_argument("--angles", default=",".join(str(a) for a in bench.SWEEP_ANGLES))
        b.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"featbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"featbench: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:
        print(f"featbench: compute failure: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
