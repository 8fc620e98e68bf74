"""Tracking metrics: match counts, matching accuracy and tracking length."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FrameMismatch
from .geometry import LineSegment

TRACK_FIELDS = ("track_id", "gt_id", "birth", "n_observations", "n_correct", "tracking_length")


def is_correct_match(tracked: LineSegment, truth: LineSegment, threshold: float = 5.0,
                     min_overlap: float = 0.5) -> bool:
    """Both tracked endpoints lie within ``threshold`` of the infinite truth line
    and the tracked segment, projected onto it, overlaps the truth segment by at
    least ``min_overlap`` of the shorter of the two."""
    s, e = truth.start, truth.end
    length = truth.length
    d = (e - s) / length
    n = np.array([-d[1], d[0]])
    pts = np.array([tracked.start, tracked.end]) - s
    if np.max(np.abs(pts @ n)) >= threshold:
        return False
    t = np.sort(pts @ d)
    overlap = min(t[1], length) - max(t[0], 0.0)
    shorter = min(t[1] - t[0], length)
    return bool(shorter > 0 and overlap >= min_overlap * shorter)


@dataclass
class TrackRow:
    track_id: int
    gt_id: int  # -1 when the birth segment matches no ground-truth line
    birth: int
    n_observations: int
    n_correct: int
    tracking_length: int


@dataclass
class MetricsReport:
    n_matches: float
    accuracy: float
    tracking_length: float
    accuracy_defined: bool
    threshold: float
    n_tracks: int
    n_frames: int
    tracks: list = field(default_factory=list)

    @property
    def summary(self) -> dict:
        return {
            "n_matches": self.n_matches,
            "accuracy": self.accuracy,
            "accuracy_defined": self.accuracy_defined,
            "tracking_length": self.tracking_length,
            "threshold": self.threshold,
            "n_tracks": self.n_tracks,
            "n_frames": self.n_frames,
        }

    def to_dict(self) -> dict:
        return {**self.summary, "tracks": [asdict(r) for r in self.tracks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [("metric", "value")]
        for k, v in self.summary.items():
            rows.append((k, f"{v:.4f}" if isinstance(v, float) else str(v)))
        w = max(len(r[0]) for r in rows)
        return "\n".join(f"{a:<{w}}  {b}" for a, b in rows) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACK_FIELDS)
        for r in self.tracks:
            writer.writerow([getattr(r, k) for k in TRACK_FIELDS])
        return buf.getvalue()


def read_report(path) -> list:
    """Load a JSON-lines track report."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{i}: {exc}") from exc
    return out


def write_report(records, path):
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), encoding="utf-8")


def _segment(rec):
    return LineSegment(tuple(rec["s"]), tuple(rec["e"]))


def _assign(seg, frame, gt, threshold, min_overlap):
    best, best_err = -1, math.inf
    for gid, truth in enumerate(gt.frames[frame]):
        if truth is None:
            continue
        tseg = LineSegment(tuple(truth["s"]), tuple(truth["e"]))
        if not is_correct_match(seg, tseg, threshold, min_overlap):
            continue
        d = tseg.direction
        n = np.array([-d[1], d[0]])
        err = float(np.max(np.abs((np.array([seg.start, seg.end]) - tseg.start) @ n)))
        if err < best_err:
            best, best_err = gid, err
    return best


def _correct(seg, frame, gid, gt, threshold, min_overlap):
    if gid < 0:
        return False
    truth = gt.frames[frame][gid]
    if truth is None:
        return False
    return is_correct_match(seg, LineSegment(tuple(truth["s"]), tuple(truth["e"])), threshold, min_overlap)


def compute_metrics(records, gt, threshold: float = 5.0, min_overlap: float = 0.5) -> MetricsReport:
    """Score a track report against ground truth.

    Each track is bound at birth to the ground-truth line it matches best.
    A match is a track observed live in two consecutive frames; it is
    correct when the later observation matches the bound line. Tracking
    length is the run of correct observations from birth onward.
    """
    n_frames = gt.n_frames
    by_track = defaultdict(list)
    for rec in records:
        f = int(rec["frame"])
        if f < 0 or f >= n_frames:
            raise FrameMismatch(f"report frame {f} outside ground truth range [0, {n_frames})")
        by_track[int(rec["track_id"])].append(rec)

    matches_per_pair = np.zeros(max(n_frames - 1, 0))
    n_matches = n_correct = 0
    rows = []
    for tid in sorted(by_track):
        obs = sorted((r for r in by_track[tid] if r["status"] == "live"), key=lambda r: r["frame"])
        if not obs:
            continue
        birth = int(obs[0]["frame"])
        gid = _assign(_segment(obs[0]), birth, gt, threshold, min_overlap)
        prefix, broken, correct_count = 0, False, 0
        prev = birth - 1
        for rec in obs:
            f = int(rec["frame"])
            ok = bool(_correct(_segment(rec), f, gid, gt, threshold, min_overlap))
            if f != prev + 1:
                broken = True
            if f > birth:
                matches_per_pair[f - 1] += 1
                n_matches += 1
                n_correct += ok
            correct_count += ok
            if ok and not broken:
                prefix += 1
            else:
                broken = True
            prev = f
        rows.append(TrackRow(tid, gid, birth, len(obs), correct_count, prefix))

    defined = n_matches > 0
    return MetricsReport(
        n_matches=float(matches_per_pair.mean()) if len(matches_per_pair) else 0.0,
        accuracy=n_correct / n_matches if defined else 0.0,
        tracking_length=float(np.mean([r.tracking_length for r in rows])) if rows else 0.0,
        accuracy_defined=defined,
        threshold=float(threshold),
        n_tracks=len(rows),
        n_frames=n_frames,
        tracks=rows,
    )
