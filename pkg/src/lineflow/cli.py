"""Command-line interface: ``lineflow synth | track | eval``.

Exit codes: 0 ok, 1 failed assertion, 2 bad input, 3 I/O failure,
4 nothing to seed, 5 report/ground-truth frame mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import operator
import re
import sys
from pathlib import Path

from .config import RunConfig, describe_keys
from .exceptions import ConfigError, FrameMismatch, LineFlowError, SceneSpecError
from .image import read_pgm, write_pgm
from .metrics import compute_metrics, read_report, write_report
from .synth import GroundTruth, SceneSpec, ground_truth, render_frame
from .tracker import GroundTruthDetector, LineFlowTracker

log = logging.getLogger("lineflow")

EXIT_OK, EXIT_ASSERT, EXIT_INPUT, EXIT_IO, EXIT_EMPTY, EXIT_MISMATCH = 0, 1, 2, 3, 4, 5

_OPS = {">=": operator.ge, "<=": operator.le, ">": operator.gt, "<": operator.lt, "==": operator.eq}
_ASSERT_RE = re.compile(r"^\s*(\w+)\s*(>=|<=|==|>|<)\s*([-+0-9.eE]+)\s*$")


def _fail(code, msg):
    print(f"lineflow: {msg}", file=sys.stderr)
    return code


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.apply_overrides(args.set)


# ---------------------------------------------------------------- synth
def cmd_synth(args) -> int:
    try:
        spec = SceneSpec.load(args.spec)
    except SceneSpecError as exc:
        return _fail(EXIT_INPUT, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read {args.spec}: {exc}")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for f in range(spec.n_frames):
            write_pgm(out / f"frame_{f:04d}.pgm", render_frame(spec, f))
        gt = ground_truth(spec)
        gt.save(out / "gt.json")
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write to {out}: {exc}")
    name = spec.name or Path(args.spec).stem
    print(f"{name}: {spec.n_frames} frames {spec.width}x{spec.height}, "
          f"{len(spec.lines)} lines, {len(spec.occluders)} occluders -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- track
def _load_lines(path):
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(obj, dict):
        obj = obj.get("lines", [])
    return obj


def _load_priors(path, n_frames):
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if "intrinsics" not in obj or "rotations" not in obj:
        raise ValueError(f"{path}: priors need 'intrinsics' and 'rotations'")
    rots = obj["rotations"]
    if len(rots) < n_frames:
        raise ValueError(f"{path}: {len(rots)} rotations for {n_frames} frames")
    return obj["intrinsics"], rots


def cmd_track(args) -> int:
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        return _fail(EXIT_INPUT, str(exc))
    params = cfg.tracker_params()
    if args.no_refine:
        params.update(refine_orientation=False, extend_endpoints=False)
    params.update(n_jobs=args.jobs, keep_diagnostics=bool(args.dump_diagnostics))

    paths = sorted(Path(args.frames).glob("frame_*.pgm"))
    if len(paths) < 2:
        return _fail(EXIT_INPUT, f"need at least 2 frame_*.pgm files in {args.frames}, found {len(paths)}")
    try:
        frames = [read_pgm(p) for p in paths]
        detector = seeds = None
        if args.gt_replenish:
            detector = GroundTruthDetector(GroundTruth.load(args.gt_replenish))
            if detector.gt.n_frames < len(frames):
                return _fail(EXIT_INPUT, "ground truth has fewer frames than the sequence")
        else:
            seeds = _load_lines(args.lines)
        intrinsics = rotations = None
        if args.rotation_priors:
            intrinsics, rotations = _load_priors(args.rotation_priors, len(frames))
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    except (ValueError, KeyError, TypeError, LineFlowError) as exc:
        return _fail(EXIT_INPUT, f"cannot parse input: {exc}")

    tracker = LineFlowTracker(**params)
    try:
        tracker.fit(frames[0], seeds or ())
    except (ValueError, LineFlowError) as exc:
        return _fail(EXIT_INPUT, f"bad seed lines: {exc}")
    if detector is not None:
        tracker.replenish(detector)
    if not tracker.live_tracks:
        return _fail(EXIT_EMPTY, "frame 0 has no lines to seed")
    for f in range(1, len(frames)):
        R = None if rotations is None else rotations[f]
        tracker.track_frame(frames[f], R, intrinsics if R is not None else None)
        if detector is not None:
            tracker.replenish(detector)
        log.info("frame %d: %d live", f, len(tracker.live_tracks))
    try:
        write_report(tracker.report_, args.out)
        if args.dump_diagnostics:
            write_report(tracker.diagnostics_, args.dump_diagnostics)
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    n_live = len(tracker.live_tracks)
    print(f"tracked {len(frames)} frames: {len(tracker.tracks_)} tracks, {n_live} live at end -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- eval
def _check_assertions(exprs, summary):
    failures = []
    for expr in exprs or ():
        m = _ASSERT_RE.match(expr)
        if not m or m.group(1) not in summary:
            raise ValueError(f"bad assertion {expr!r}; expected e.g. accuracy>=0.95 over {sorted(summary)}")
        key, op, val = m.group(1), m.group(2), float(m.group(3))
        if not _OPS[op](summary[key], val):
            failures.append(f"assertion failed: {expr} (measured {key}={summary[key]:.6g})")
    return failures


def cmd_eval(args) -> int:
    try:
        cfg = _load_config(args)
        if args.threshold is not None:
            cfg.set("threshold", args.threshold)
    except ConfigError as exc:
        return _fail(EXIT_INPUT, str(exc))
    try:
        records = read_report(args.report)
        gt = GroundTruth.load(args.gt)
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(EXIT_INPUT, f"cannot parse input: {exc}")
    try:
        metrics = compute_metrics(records, gt, cfg["threshold"], cfg["min_overlap"])
    except FrameMismatch as exc:
        return _fail(EXIT_MISMATCH, str(exc))
    except (KeyError, TypeError, ValueError, LineFlowError) as exc:
        return _fail(EXIT_INPUT, f"malformed report: {exc}")
    print(metrics.to_table(), end="")
    out_json = Path(args.json) if args.json else Path(args.report).with_suffix(".metrics.json")
    try:
        out_json.write_text(metrics.to_json(), encoding="utf-8")
        if args.csv:
            Path(args.csv).write_text(metrics.to_csv(), encoding="utf-8")
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    try:
        failures = _check_assertions(args.assert_, metrics.summary)
    except ValueError as exc:
        return _fail(EXIT_INPUT, str(exc))
    for msg in failures:
        print(msg, file=sys.stderr)
    return EXIT_ASSERT if failures else EXIT_OK


# ---------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    keys = describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="lineflow", description="Line optical flow tracking toolkit.",
                                     epilog=keys, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-frame progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic sequence", epilog=keys, formatter_class=fmt)
    p.add_argument("spec", help="scene spec JSON")
    p.add_argument("out", help="output directory for frame_%%04d.pgm and gt.json")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="track lines through a sequence", epilog=keys, formatter_class=fmt)
    p.add_argument("frames", help="directory of frame_%%04d.pgm files")
    seed = p.add_mutually_exclusive_group(required=True)
    seed.add_argument("--lines", help="JSON list of seed segments for frame 0")
    seed.add_argument("--gt-replenish", metavar="GT", help="seed and replenish from ground truth")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", required=True, help="output JSON-lines report")
    p.add_argument("--rotation-priors", help="JSON with intrinsics and per-frame relative rotations")
    p.add_argument("--no-refine", action="store_true", help="skip orientation/position refinement and endpoint extension")
    p.add_argument("--dump-diagnostics", metavar="PATH", help="write per-iteration alignment records")
    p.add_argument("--jobs", type=int, default=1, help="worker threads per frame")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a report against ground truth", epilog=keys, formatter_class=fmt)
    p.add_argument("report", help="JSON-lines track report")
    p.add_argument("gt", help="ground truth JSON")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--threshold", type=float, help="override the correct-match threshold")
    p.add_argument("--assert", dest="assert_", action="append", metavar="EXPR",
                   help="e.g. accuracy>=0.95; exit 1 if false")
    p.add_argument("--json", help="metrics JSON path (default: next to the report)")
    p.add_argument("--csv", help="write per-track rows as CSV")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
