"""Sample points on a segment, vet them by local gradient, and classify them."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import OutOfBounds, SegmentTooShort
from .geometry import LineSegment, angle_distance, line_angle, line_from_endpoints
from .image import Image, central_gradient, gradient_angle, structure_eigenvalues


class PointClass(enum.Enum):
    CORNER = "corner"
    EDGE = "edge"
    REJECT = "reject"


class PointStatus(enum.Enum):
    ACTIVE = "active"
    CONVERGED = "converged"
    FAILED = "failed"


@dataclass
class SamplingConfig:
    spacing: float = 8.0
    min_points: int = 5
    max_points: int = 30
    grad_threshold: float = 5.0
    angle_threshold: float = math.radians(22.5)
    remediation_step: float = 1.0
    remediation_max_steps: int = 3
    # raw 0-255 intensities, 7x7 window
    corner_min_eig: float = 500.0
    edge_ratio: float = 10.0
    tensor_half_window: int = 3

    def __post_init__(self):
        if self.spacing < 1:
            raise ValueError("spacing must be >= 1")
        if self.min_points < 3:
            raise ValueError("min_points must be >= 3")
        if self.max_points < self.min_points:
            raise ValueError("max_points must be >= min_points")
        if not self.grad_threshold > 0:
            raise ValueError("grad_threshold must be > 0")
        if not 0 < self.angle_threshold < math.pi / 2:
            raise ValueError("angle_threshold must lie in (0, pi/2)")


@dataclass
class SamplePoint:
    pos_l: np.ndarray
    pos_c: np.ndarray
    kind: PointClass = PointClass.EDGE
    status: PointStatus = PointStatus.ACTIVE
    template: Optional[object] = field(default=None, repr=False)


def sample_line_points(seg: LineSegment, cfg: SamplingConfig = None) -> np.ndarray:
    """Evenly spaced positions along ``seg``, endpoints included.

    The count is ``floor(length / spacing) + 1`` clamped to
    ``[min_points, max_points]``.
    """
    cfg = cfg or SamplingConfig()
    length = seg.length
    if length < (cfg.min_points - 1):
        raise SegmentTooShort(f"segment of length {length:.2f} cannot hold {cfg.min_points} points")
    n = int(math.floor(length / cfg.spacing)) + 1
    n = min(max(n, cfg.min_points), cfg.max_points)
    t = np.linspace(0.0, 1.0, n)
    return seg.start[None, :] + t[:, None] * (seg.end - seg.start)[None, :]


def appropriate_mask(image: Image, pts, alpha: float, cfg: SamplingConfig) -> np.ndarray:
    """Vectorised gradient criterion; points too close to the border fail."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    ok = image.contains(pts[:, 0], pts[:, 1], margin=1.0)
    out = np.zeros(len(pts), dtype=bool)
    if not ok.any():
        return out
    g_u, g_v = central_gradient(image, pts[ok, 0], pts[ok, 1])
    mag = np.hypot(g_u, g_v)
    theta = gradient_angle(g_u, g_v)
    out[ok] = (mag > cfg.grad_threshold) & (angle_distance(alpha, theta) < cfg.angle_threshold)
    return out


def is_appropriate(p, alpha: float, image: Image, cfg: SamplingConfig = None) -> bool:
    """True when the gradient at ``p`` is strong and perpendicular to the line.

    Requires ``|alpha - theta| < angle_threshold`` (modulo pi) and a gradient
    magnitude above ``grad_threshold``.
    """
    cfg = cfg or SamplingConfig()
    if not image.contains(p[0], p[1], margin=1.0):
        raise OutOfBounds(f"point {tuple(p)} is not 1 px inside the image")
    return bool(appropriate_mask(image, [p], alpha, cfg)[0])


def remediate_point(p, direction, alpha: float, image: Image, cfg: SamplingConfig = None):
    """Search ``p +- k, p +- 2k, ...`` along ``direction``, nearest first.

    Returns the first candidate passing :func:`is_appropriate`, or ``None``
    when every candidate fails.
    """
    cfg = cfg or SamplingConfig()
    p = np.asarray(p, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    offsets = []
    for step in range(1, cfg.remediation_max_steps + 1):
        offsets.extend((step * cfg.remediation_step, -step * cfg.remediation_step))
    cands = p[None, :] + np.array(offsets)[:, None] * direction[None, :]
    ok = appropriate_mask(image, cands, alpha, cfg)
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        return None
    return cands[hits[0]]


def classify_points(image: Image, pts, cfg: SamplingConfig) -> list:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    lo, hi = structure_eigenvalues(image, pts[:, 0], pts[:, 1], cfg.tensor_half_window)
    out = []
    for lmin, lmax in zip(lo, hi):
        if lmin >= cfg.corner_min_eig:
            out.append(PointClass.CORNER)
        elif lmax >= cfg.corner_min_eig and lmax / max(lmin, 1e-12) >= cfg.edge_ratio:
            out.append(PointClass.EDGE)
        else:
            out.append(PointClass.REJECT)
    return out


def classify_point(p, image: Image, cfg: SamplingConfig = None) -> PointClass:
    """Corner / edge / reject from the eigenvalues of the local structure tensor."""
    cfg = cfg or SamplingConfig()
    return classify_points(image, [p], cfg)[0]


def vet_line_points(seg: LineSegment, image: Image, cfg: SamplingConfig = None) -> np.ndarray:
    """Sample ``seg`` and keep only gradient-valid positions, remediating the rest."""
    cfg = cfg or SamplingConfig()
    pts = sample_line_points(seg, cfg)
    alpha = line_angle(line_from_endpoints(seg))
    ok = appropriate_mask(image, pts, alpha, cfg)
    kept = []
    for p, good in zip(pts, ok):
        if good:
            kept.append(p)
            continue
        fixed = remediate_point(p, seg.direction, alpha, image, cfg)
        if fixed is not None:
            kept.append(fixed)
    return np.array(kept).reshape(-1, 2)
