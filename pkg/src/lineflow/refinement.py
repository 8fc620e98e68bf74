"""Post-alignment refinement of a tracked line.

Two corrections run after alignment. The orientation/position sweep anchors
the line on its best-matching point and picks, among small rotations about
that anchor, the one with the strongest intensity change across the line.
The endpoint march then grows the segment outward while the gradient
criterion holds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .alignment import AlignResult
from .exceptions import OutOfBounds, TooFewPoints
from .geometry import LinearLine, LineSegment, angle_distance, line_angle, wrap_pi
from .image import Image, sample_many
from .sampling import PointStatus, SamplingConfig, appropriate_mask


@dataclass
class RefineConfig:
    rotation_cap: int = 20
    rotation_steps_per_degree: float = 20.0
    extension_step: float = 1.0
    extension_max: float = 200.0
    photometric_window: int = 3
    refine_orientation: bool = True
    extend_endpoints: bool = True

    def __post_init__(self):
        if self.rotation_cap < 0 or self.rotation_steps_per_degree <= 0:
            raise ValueError("rotation settings must be positive")
        if self.extension_step <= 0 or self.extension_max <= 0 or self.photometric_window < 1:
            raise ValueError("extension_step, extension_max and photometric_window must be positive")


@dataclass
class RefinedLine:
    line: LinearLine
    points: np.ndarray
    anchor: np.ndarray
    rotation_deg: float
    candidates: int
    score: float


def gradient_sum(line: LinearLine, points, image_c: Image, return_skipped=False):
    """Sum over points of ``|I(p + n) - I(p - n)| / 2`` with ``n`` the line normal.

    Points whose stencil leaves the image are skipped; if every point is
    skipped :class:`OutOfBounds` is raised.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = line.normal
    plus, minus = pts + n, pts - n
    ok = image_c.contains(plus[:, 0], plus[:, 1]) & image_c.contains(minus[:, 0], minus[:, 1])
    if not ok.any():
        raise OutOfBounds("no point of the line can be evaluated inside the image")
    a = sample_many(image_c, plus[ok, 0], plus[ok, 1])
    b = sample_many(image_c, minus[ok, 0], minus[ok, 1])
    total = float(np.sum(np.abs(a - b)) / 2.0)
    if return_skipped:
        return total, int((~ok).sum())
    return total


def rotation_candidates(g_deg: float, cfg: RefineConfig) -> np.ndarray:
    """Rotation offsets in degrees: the unrotated line plus ``N`` spanning ``[-g, g]``.

    ``N = min(rotation_cap, floor(steps_per_degree * g))``; a single step is
    taken as the symmetric pair ``{-g, +g}``.
    """
    n = int(min(cfg.rotation_cap, math.floor(cfg.rotation_steps_per_degree * g_deg + 1e-9)))
    if n <= 0:
        sweep = np.zeros(0)
    elif n == 1:
        sweep = np.array([-g_deg, g_deg])
    else:
        sweep = np.linspace(-g_deg, g_deg, n)
    return np.concatenate([[0.0], sweep])


def photometric_errors(image_l: Image, image_c: Image, pts_l, pts_c, half_window: int, A_inv=None):
    """Summed absolute intensity difference over a small window for each point pair."""
    A_inv = np.eye(2) if A_inv is None else np.asarray(A_inv)
    r = np.arange(-half_window, half_window + 1, dtype=np.float64)
    hu, hv = np.meshgrid(r, r)
    h = np.column_stack([hu.ravel(), hv.ravel()])
    out = np.full(len(pts_l), np.inf)
    for i, (pl, pc) in enumerate(zip(pts_l, pts_c)):
        ql = pl[None, :] + h @ A_inv.T
        qc = pc[None, :] + h
        if image_l.contains(ql[:, 0], ql[:, 1]).all() and image_c.contains(qc[:, 0], qc[:, 1]).all():
            out[i] = np.sum(np.abs(sample_many(image_l, ql[:, 0], ql[:, 1]) - sample_many(image_c, qc[:, 0], qc[:, 1])))
    return out


def _rotate_about(pts, center, angle):
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    return (pts - center) @ R.T + center


def refine_orientation_position(aligned: AlignResult, predicted_alpha: float, image_l: Image,
                                image_c: Image, cfg: RefineConfig = None, A=None) -> RefinedLine:
    """Snap the line through its best-matching point, then sweep rotations about it."""
    cfg = cfg or RefineConfig()
    tracked = aligned.tracked_points
    if len(tracked) < 3:
        raise TooFewPoints(f"{len(tracked)} tracked points, need 3")
    pts_l = np.array([p.pos_l for p in tracked])
    pts_c = np.array([p.pos_c for p in tracked])
    A_inv = None if A is None else np.linalg.inv(A)
    errs = photometric_errors(image_l, image_c, pts_l, pts_c, cfg.photometric_window, A_inv)
    if not np.isfinite(errs).any():
        raise TooFewPoints("no tracked point has a complete photometric window")
    anchor = pts_c[int(np.argmin(errs))]

    beta = aligned.line_c.beta
    n = np.array([math.cos(beta), math.sin(beta)])
    line = LinearLine(n[0], n[1], -(n @ anchor))
    r = pts_c @ line.normal + line.c
    projected = pts_c - r[:, None] * line.normal

    alpha_c = line_angle(line)
    g_deg = math.degrees(angle_distance(alpha_c, predicted_alpha))
    offsets = rotation_candidates(g_deg, cfg)
    best = None
    for off in offsets:
        ang = math.radians(off)
        pts_r = _rotate_about(projected, anchor, ang)
        alpha_r = wrap_pi(alpha_c + ang)
        a, b = -math.sin(alpha_r), math.cos(alpha_r)
        line_r = LinearLine(a, b, -(a * anchor[0] + b * anchor[1]))
        try:
            score = gradient_sum(line_r, pts_r, image_c)
        except OutOfBounds:
            continue
        key = (score, -abs(off))
        if best is None or key > best[0]:
            best = (key, line_r, pts_r, off)
    if best is None:
        raise TooFewPoints("no rotation candidate could be evaluated")
    (score, _), line_r, pts_r, off = best
    return RefinedLine(line_r, pts_r, anchor, float(off), len(offsets), score)


def extend_endpoints(line: LinearLine, points, image_c: Image, cfg: RefineConfig = None,
                     sampling: SamplingConfig = None, extend: bool = True) -> LineSegment:
    """Segment spanned by the outermost tracked points, marched outward along the line.

    Each end advances by ``extension_step`` while the marched position passes
    the gradient criterion against ``line``; it stops at the first failure,
    at the 1-px image margin, or after ``extension_max`` pixels.
    """
    cfg = cfg or RefineConfig()
    sampling = sampling or SamplingConfig()
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(pts) < 2:
        raise TooFewPoints("need at least two tracked points for endpoints")
    n = line.normal
    pts = pts - (pts @ n + line.c)[:, None] * n
    t_dir = np.array([-n[1], n[0]])
    t = pts @ t_dir
    s = pts[int(np.argmin(t))]
    e = pts[int(np.argmax(t))]
    if extend:
        alpha = line_angle(line)
        s = _march(s, -t_dir, alpha, image_c, cfg, sampling)
        e = _march(e, t_dir, alpha, image_c, cfg, sampling)
    return LineSegment(tuple(s), tuple(e))


def _march(p, direction, alpha, image_c, cfg, sampling):
    n_steps = int(math.floor(cfg.extension_max / cfg.extension_step + 1e-9))
    cands = p[None, :] + (np.arange(1, n_steps + 1) * cfg.extension_step)[:, None] * direction[None, :]
    inside = image_c.contains(cands[:, 0], cands[:, 1], margin=1.0)
    stop = np.flatnonzero(~inside)
    if stop.size:
        cands = cands[:stop[0]]
    if not len(cands):
        return p
    ok = appropriate_mask(image_c, cands, alpha, sampling)
    fails = np.flatnonzero(~ok)
    k = fails[0] if fails.size else len(cands)
    return cands[k - 1] if k > 0 else p


def tracked_positions(aligned: AlignResult) -> np.ndarray:
    return np.array([p.pos_c for p in aligned.points_c if p.status is PointStatus.CONVERGED]).reshape(-1, 2)
