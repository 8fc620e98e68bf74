"""Frame-to-frame line tracking as a scikit-learn style estimator."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_image, check_intrinsics, check_rotation, check_segments
from .alignment import AlignConfig, pyramidal_align
from .exceptions import AlignmentFailure, DegenerateSegment, NotInitialized, OutOfBounds, SegmentTooShort
from .geometry import (
    Homography,
    LineSegment,
    clip_segment,
    homography_from_rotation,
    line_angle,
    line_from_endpoints,
    normal_to_linear,
    predict_line,
)
from .image import Image, build_pyramid
from .refinement import RefineConfig, extend_endpoints, refine_orientation_position, tracked_positions
from .sampling import SamplingConfig, vet_line_points

LIVE = "live"
LOST = "lost"


@dataclass
class Track:
    id: int
    born: int
    observations: list = field(default_factory=list)  # [(frame, LineSegment)]
    status: str = LIVE

    @property
    def age(self) -> int:
        return len(self.observations)

    @property
    def last(self) -> LineSegment:
        return self.observations[-1][1]


@dataclass
class LineOutcome:
    track_id: int
    segment: LineSegment = None
    n_points: int = 0
    iterations: int = 0
    reason: str = None
    diagnostics: list = field(default_factory=list)

    @property
    def ok(self):
        return self.segment is not None


def _record(frame, track_id, status, seg, n_points, iterations, reason=None):
    rec = {
        "frame": int(frame),
        "track_id": int(track_id),
        "status": status,
        "s": None if seg is None else [seg.s[0], seg.s[1]],
        "e": None if seg is None else [seg.e[0], seg.e[1]],
        "n_points_tracked": int(n_points),
        "iterations": int(iterations),
    }
    if reason:
        rec["reason"] = reason
    return rec


def exclusion_mask(shape, segments, radius: float) -> np.ndarray:
    """Boolean image marking pixels within ``radius`` of any segment."""
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    for seg in segments:
        s, e = seg.start, seg.end
        lo = np.floor(np.minimum(s, e) - radius).astype(int)
        hi = np.ceil(np.maximum(s, e) + radius).astype(int)
        u0, v0 = max(lo[0], 0), max(lo[1], 0)
        u1, v1 = min(hi[0], w - 1), min(hi[1], h - 1)
        if u1 < u0 or v1 < v0:
            continue
        U, V = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
        d = e - s
        t = np.clip(((U - s[0]) * d[0] + (V - s[1]) * d[1]) / (d @ d), 0.0, 1.0)
        dist = np.hypot(U - (s[0] + t * d[0]), V - (s[1] + t * d[1]))
        mask[v0:v1 + 1, u0:u1 + 1] |= dist <= radius
    return mask


def mask_overlap(seg: LineSegment, mask: np.ndarray) -> float:
    """Fraction of 1-px samples along ``seg`` that fall on ``mask``."""
    n = max(int(math.ceil(seg.length)) + 1, 2)
    t = np.linspace(0.0, 1.0, n)
    pts = seg.start[None, :] + t[:, None] * (seg.end - seg.start)
    u = np.clip(np.rint(pts[:, 0]).astype(int), 0, mask.shape[1] - 1)
    v = np.clip(np.rint(pts[:, 1]).astype(int), 0, mask.shape[0] - 1)
    return float(mask[v, u].mean())


class GroundTruthDetector:
    """Detector backed by synthetic ground truth.

    Returns the true segments of the requested frame, shrunk to stay
    ``margin`` pixels inside the image and filtered by ``min_length``.
    """

    def __init__(self, gt, margin: float = 2.0, min_length: float = 20.0):
        self.gt = gt
        self.margin = margin
        self.min_length = min_length

    def detect(self, image: Image, excluded=None, frame: int = 0) -> list:
        out = []
        for rec in self.gt.frames[frame]:
            if rec is None:
                continue
            clipped = clip_segment(rec["s"], rec["e"], image.width, image.height, self.margin)
            if clipped is None:
                continue
            s, e = clipped
            if np.linalg.norm(e - s) < self.min_length:
                continue
            out.append(LineSegment(tuple(s), tuple(e)))
        return out


class LineFlowTracker(BaseEstimator):
    """Track line segments through an image sequence with line optical flow.

    Parameters mirror the run-configuration keys. Angles are given in
    degrees; everything else is in pixels or raw 0-255 intensity units.

    Attributes
    ----------
    tracks_ : list of Track
        All tracks created so far, live and lost.
    frame_index_ : int
        Index of the last processed frame.
    report_ : list of dict
        One record per track per frame (see :meth:`track_frame`).
    """

    def __init__(self, n_lines=50, spacing=8.0, min_points=5, max_points=30, grad_threshold=5.0,
                 angle_threshold_deg=22.5, remediation_step=1.0, remediation_max_steps=3,
                 corner_min_eig=500.0, edge_ratio=10.0, half_window=10, max_iterations=30,
                 point_epsilon=0.05, angle_epsilon=0.002, distance_epsilon=0.05,
                 convergence_fraction=0.4, structural_weight=441.0, pyramid_scale=1.5,
                 pyramid_height=4, two_step=True, high_eig_filter=True, high_eig_factor=10.0,
                 rotation_cap=20, rotation_steps_per_degree=20.0, extension_step=1.0,
                 extension_max=200.0, photometric_window=3, refine_orientation=True,
                 extend_endpoints=True, exclusion_radius=10.0, exclusion_overlap=0.5,
                 n_jobs=1, keep_diagnostics=False):
        self.n_lines = n_lines
        self.spacing = spacing
        self.min_points = min_points
        self.max_points = max_points
        self.grad_threshold = grad_threshold
        self.angle_threshold_deg = angle_threshold_deg
        self.remediation_step = remediation_step
        self.remediation_max_steps = remediation_max_steps
        self.corner_min_eig = corner_min_eig
        self.edge_ratio = edge_ratio
        self.half_window = half_window
        self.max_iterations = max_iterations
        self.point_epsilon = point_epsilon
        self.angle_epsilon = angle_epsilon
        self.distance_epsilon = distance_epsilon
        self.convergence_fraction = convergence_fraction
        self.structural_weight = structural_weight
        self.pyramid_scale = pyramid_scale
        self.pyramid_height = pyramid_height
        self.two_step = two_step
        self.high_eig_filter = high_eig_filter
        self.high_eig_factor = high_eig_factor
        self.rotation_cap = rotation_cap
        self.rotation_steps_per_degree = rotation_steps_per_degree
        self.extension_step = extension_step
        self.extension_max = extension_max
        self.photometric_window = photometric_window
        self.refine_orientation = refine_orientation
        self.extend_endpoints = extend_endpoints
        self.exclusion_radius = exclusion_radius
        self.exclusion_overlap = exclusion_overlap
        self.n_jobs = n_jobs
        self.keep_diagnostics = keep_diagnostics

    # ------------------------------------------------------------ configs
    def sampling_config(self) -> SamplingConfig:
        return SamplingConfig(
            spacing=self.spacing, min_points=self.min_points, max_points=self.max_points,
            grad_threshold=self.grad_threshold, angle_threshold=math.radians(self.angle_threshold_deg),
            remediation_step=self.remediation_step, remediation_max_steps=self.remediation_max_steps,
            corner_min_eig=self.corner_min_eig, edge_ratio=self.edge_ratio,
        )

    def align_config(self) -> AlignConfig:
        return AlignConfig(
            half_window=self.half_window, max_iterations=self.max_iterations,
            point_epsilon=self.point_epsilon, angle_epsilon=self.angle_epsilon,
            distance_epsilon=self.distance_epsilon, convergence_fraction=self.convergence_fraction,
            structural_weight=self.structural_weight, pyramid_scale=self.pyramid_scale,
            pyramid_height=self.pyramid_height, two_step=self.two_step,
            high_eig_filter=self.high_eig_filter, high_eig_factor=self.high_eig_factor,
        )

    def refine_config(self) -> RefineConfig:
        return RefineConfig(
            rotation_cap=self.rotation_cap, rotation_steps_per_degree=self.rotation_steps_per_degree,
            extension_step=self.extension_step, extension_max=self.extension_max,
            photometric_window=self.photometric_window, refine_orientation=self.refine_orientation,
            extend_endpoints=self.extend_endpoints,
        )

    # ------------------------------------------------------------ state
    def _check_initialized(self):
        if not hasattr(self, "last_image_"):
            raise NotInitialized("call fit() with the first frame before tracking")

    @property
    def live_tracks(self) -> list:
        self._check_initialized()
        return [t for t in self.tracks_ if t.status == LIVE]

    def _build_pyramid(self, image):
        return build_pyramid(image, self.pyramid_scale, self.pyramid_height)

    def fit(self, image, segments=(), frame: int = 0):
        """Start a run on ``image`` with the given seed segments.

        At most ``n_lines`` seeds are admitted, longest first.
        """
        image = check_image(image)
        self._sampling = self.sampling_config()
        self._align = self.align_config()
        self._refine = self.refine_config()
        self.last_image_ = image
        self.last_pyramid_ = self._build_pyramid(image)
        self.frame_index_ = int(frame)
        self.tracks_ = []
        self.report_ = []
        self.diagnostics_ = []
        self._next_id = 0
        self._admit(check_segments(segments, image, skip_invalid=True))
        return self

    def _admit(self, segments):
        room = self.n_lines - len(self.live_tracks)
        admitted = []
        order = sorted(range(len(segments)), key=lambda i: (-segments[i].length, i))
        for i in order[:max(room, 0)]:
            seg = segments[i]
            tr = Track(self._next_id, self.frame_index_, [(self.frame_index_, seg)])
            self._next_id += 1
            self.tracks_.append(tr)
            self.report_.append(_record(self.frame_index_, tr.id, LIVE, seg, 0, 0))
            admitted.append(tr.id)
        return admitted

    def _prior_homography(self, rotation, intrinsics) -> Homography:
        if rotation is None:
            return Homography.identity()
        if intrinsics is None:
            raise ValueError("a rotation prior needs camera intrinsics")
        return homography_from_rotation(check_intrinsics(intrinsics), check_rotation(rotation))

    def _track_one(self, track: Track, pyr_c, image_c: Image, H: Homography) -> LineOutcome:
        out = LineOutcome(track.id)
        img_l = self.last_image_
        seg = track.last
        try:
            pts = vet_line_points(seg, img_l, self._sampling)
        except SegmentTooShort:
            out.reason = "segment_too_short"
            return out
        if len(pts) < 3:
            out.reason = "too_few_points"
            return out
        line_l = line_from_endpoints(seg)
        log = [] if self.keep_diagnostics else None
        try:
            res = pyramidal_align(self.last_pyramid_, pyr_c, line_l, pts, self._align,
                                  self._sampling, init=H, log=log)
        except AlignmentFailure as exc:
            out.reason = exc.reason
            return out
        except OutOfBounds:
            out.reason = "line_lost"
            return out
        out.iterations = res.iterations
        out.diagnostics = log or []
        if not res.converged_line:
            out.reason = res.failure_reason or "line_lost"
            return out
        try:
            if self._refine.refine_orientation:
                alpha_hat = line_angle(predict_line(H, line_l))
                refined = refine_orientation_position(res, alpha_hat, img_l, image_c, self._refine, A=H.affine)
                line, pts_c = refined.line, refined.points
                if log is not None:
                    aligned = normal_to_linear(res.line_c)
                    shift = np.abs(pts_c @ aligned.normal + aligned.c)
                    log.append({"stage": "refine", "rotation_deg": refined.rotation_deg,
                                "candidates": refined.candidates, "max_shift": float(shift.max())})
            else:
                line, pts_c = normal_to_linear(res.line_c), tracked_positions(res)
            new_seg = extend_endpoints(line, pts_c, image_c, self._refine, self._sampling,
                                       extend=self._refine.extend_endpoints)
        except (AlignmentFailure, DegenerateSegment, OutOfBounds) as exc:
            out.reason = getattr(exc, "reason", "degenerate_segment")
            return out
        clipped = clip_segment(new_seg.start, new_seg.end, image_c.width, image_c.height, 1.0)
        if clipped is None or np.linalg.norm(clipped[1] - clipped[0]) < 2.0:
            out.reason = "left_image"
            return out
        out.segment = LineSegment(tuple(clipped[0]), tuple(clipped[1]))
        out.n_points = len(pts_c)
        return out

    def track_frame(self, image, rotation=None, intrinsics=None) -> list:
        """Track every live line into ``image`` and return this frame's records.

        ``rotation`` is the camera rotation from the previous frame to this
        one; with ``intrinsics`` it yields the homography used to predict
        the lines. Without it alignment starts from the previous positions.
        """
        self._check_initialized()
        image_c = check_image(image)
        pyr_c = self._build_pyramid(image_c)
        H = self._prior_homography(rotation, intrinsics)
        frame = self.frame_index_ + 1
        live = self.live_tracks
        if self.n_jobs and self.n_jobs > 1 and len(live) > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                outcomes = list(pool.map(lambda t: self._track_one(t, pyr_c, image_c, H), live))
        else:
            outcomes = [self._track_one(t, pyr_c, image_c, H) for t in live]
        records = []
        for tr, oc in zip(live, outcomes):
            if oc.ok:
                tr.observations.append((frame, oc.segment))
                rec = _record(frame, tr.id, LIVE, oc.segment, oc.n_points, oc.iterations)
            else:
                tr.status = LOST
                rec = _record(frame, tr.id, LOST, None, 0, oc.iterations, oc.reason)
            records.append(rec)
            if self.keep_diagnostics:
                for row in oc.diagnostics:
                    self.diagnostics_.append({"frame": frame, "track_id": tr.id, **row})
        self.report_.extend(records)
        self.last_image_ = image_c
        self.last_pyramid_ = pyr_c
        self.frame_index_ = frame
        return records

    def partial_fit(self, image, rotation=None, intrinsics=None):
        self.track_frame(image, rotation, intrinsics)
        return self

    def replenish(self, detector, image=None) -> list:
        """Top up the live set to ``n_lines`` from ``detector``; returns admitted ids.

        Candidates overlapping the dilated live lines by more than
        ``exclusion_overlap`` of their length are rejected; the rest are
        admitted longest first.
        """
        self._check_initialized()
        image = self.last_image_ if image is None else check_image(image)
        live = self.live_tracks
        if len(live) >= self.n_lines:
            return []
        mask = exclusion_mask(image.shape, [t.last for t in live], self.exclusion_radius)
        found = detector.detect(image, mask, frame=self.frame_index_)
        cands = [s for s in check_segments(found, image, skip_invalid=True)
                 if mask_overlap(s, mask) <= self.exclusion_overlap]
        accepted = []
        for seg in sorted(cands, key=lambda s: -s.length):
            if len(accepted) + len(live) >= self.n_lines:
                break
            # later candidates must not collide with ones admitted in this round
            if accepted and mask_overlap(seg, exclusion_mask(image.shape, accepted, self.exclusion_radius)) > self.exclusion_overlap:
                continue
            accepted.append(seg)
        return self._admit(accepted)

    def run(self, frames, seeds=(), detector=None, rotations=None, intrinsics=None):
        """Track a whole sequence; returns the full report.

        ``rotations[f]`` is the prior rotation from frame ``f-1`` to ``f``.
        """
        frames = list(frames)
        if len(frames) < 1:
            raise ValueError("need at least one frame")
        self.fit(frames[0], seeds)
        if detector is not None:
            self.replenish(detector)
        for f in range(1, len(frames)):
            R = None if rotations is None else rotations[f]
            self.track_frame(frames[f], R, intrinsics if R is not None else None)
            if detector is not None:
                self.replenish(detector)
        return self.report_
