"""Line representations, conversions, and rotation-prior prediction.

Three coupled representations are used:

* :class:`LineSegment` -- two subpixel endpoints ``s`` and ``e``;
* :class:`LinearLine` -- homogeneous coefficients ``a u + b v + c = 0``,
  normalised to ``a^2 + b^2 = 1`` and ``c <= 0``;
* :class:`NormalLine` -- ``cos(beta) u + sin(beta) v - d = 0`` with
  ``beta`` in ``[0, pi)``. ``d`` carries a sign: lines whose foot point from
  the origin lies above the ``v = 0`` axis have ``d >= 0``, the others
  (e.g. ``u - v = 10``) need ``d < 0`` to stay inside the ``beta`` range.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateSegment, NotARotation, PointAtInfinity, SingularWarp

MIN_SEGMENT_LENGTH = 2.0


def wrap_pi(angle):
    """Reduce angles into ``[0, pi)``; works on scalars and arrays."""
    r = np.mod(angle, np.pi)
    r = np.where(r >= np.pi, 0.0, r)
    return float(r) if np.ndim(r) == 0 else r


def angle_distance(a1, a2):
    """Distance between undirected angles: ``min(|d|, pi - |d|)`` modulo pi."""
    d = np.abs(np.mod(np.asarray(a1) - np.asarray(a2), np.pi))
    d = np.minimum(d, np.pi - d)
    return float(d) if np.ndim(d) == 0 else d


@dataclass(frozen=True)
class LineSegment:
    s: tuple
    e: tuple

    def __post_init__(self):
        s = (float(self.s[0]), float(self.s[1]))
        e = (float(self.e[0]), float(self.e[1]))
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "e", e)
        if not all(math.isfinite(x) for x in s + e):
            raise DegenerateSegment(f"non-finite endpoint in {s}, {e}")
        if math.hypot(e[0] - s[0], e[1] - s[1]) < MIN_SEGMENT_LENGTH:
            raise DegenerateSegment(f"segment {s}-{e} shorter than {MIN_SEGMENT_LENGTH} px")

    @property
    def start(self) -> np.ndarray:
        return np.array(self.s)

    @property
    def end(self) -> np.ndarray:
        return np.array(self.e)

    @property
    def length(self) -> float:
        return math.hypot(self.e[0] - self.s[0], self.e[1] - self.s[1])

    @property
    def direction(self) -> np.ndarray:
        d = self.end - self.start
        return d / np.linalg.norm(d)

    @property
    def midpoint(self) -> np.ndarray:
        return (self.start + self.end) / 2.0

    def reversed(self) -> "LineSegment":
        return LineSegment(self.e, self.s)

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.e])


@dataclass(frozen=True)
class LinearLine:
    a: float
    b: float
    c: float

    def __post_init__(self):
        a, b, c = float(self.a), float(self.b), float(self.c)
        norm = math.hypot(a, b)
        if not norm > 0.0 or not math.isfinite(norm):
            raise DegenerateSegment(f"line coefficients ({a}, {b}, {c}) have a^2 + b^2 = 0")
        # a unit normal (e.g. from cos/sin) is kept as is so c round-trips exactly
        if abs(norm - 1.0) > 4.0 * sys.float_info.epsilon:
            a, b, c = a / norm, b / norm, c / norm
        if c > 0.0 or (c == 0.0 and (b < 0.0 or (b == 0.0 and a < 0.0))):
            a, b, c = -a, -b, -c
        # avoid -0.0 leaking into serialised output
        object.__setattr__(self, "a", a + 0.0)
        object.__setattr__(self, "b", b + 0.0)
        object.__setattr__(self, "c", c + 0.0)

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b])

    def residual(self, p) -> float:
        return self.a * p[0] + self.b * p[1] + self.c

    def distance(self, p) -> float:
        return abs(self.residual(p))


@dataclass(frozen=True)
class NormalLine:
    beta: float
    d: float

    def __post_init__(self):
        beta, d = float(self.beta), float(self.d)
        if not (math.isfinite(beta) and math.isfinite(d)):
            raise ValueError(f"non-finite normal line ({beta}, {d})")
        # any real beta is accepted and folded into [0, pi)
        k = math.floor(beta / math.pi)
        beta -= k * math.pi
        if k % 2:
            d = -d
        if beta >= math.pi:
            beta = 0.0
            d = -d
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "d", d + 0.0)

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.beta), math.sin(self.beta)])

    def residual(self, p) -> float:
        return math.cos(self.beta) * p[0] + math.sin(self.beta) * p[1] - self.d


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])

    def project(self, X):
        """Pinhole projection of 3-D points (``(..., 3)``) to pixels."""
        X = np.asarray(X, dtype=np.float64)
        x = X @ self.K.T
        return x[..., :2] / x[..., 2:3]


class Homography:
    """Invertible planar homography.

    ``affine`` is the upper-left 2x2 block of ``h / h33``, the local linear
    warp used to shape template windows.
    """

    __slots__ = ("h", "_inv")

    def __init__(self, h):
        h = np.array(h, dtype=np.float64).reshape(3, 3)
        if h[2, 2] == 0.0:
            raise SingularWarp("homography has h33 = 0")
        if abs(np.linalg.det(h)) < 1e-12 * max(1.0, np.abs(h).max()) ** 3:
            raise SingularWarp("homography is singular")
        h.setflags(write=False)
        self.h = h
        self._inv = None

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tu, tv):
        return cls([[1.0, 0.0, tu], [0.0, 1.0, tv], [0.0, 0.0, 1.0]])

    @property
    def affine(self) -> np.ndarray:
        return self.h[:2, :2] / self.h[2, 2]

    @property
    def inverse_matrix(self) -> np.ndarray:
        if self._inv is None:
            self._inv = np.linalg.inv(self.h)
        return self._inv

    def inverse(self) -> "Homography":
        return Homography(self.inverse_matrix)

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.h @ other.h)

    def apply(self, pts) -> np.ndarray:
        """Map points of shape ``(2,)`` or ``(n, 2)``."""
        pts = np.asarray(pts, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        x = pts @ self.h[:, :2].T + self.h[:, 2]
        w = x[:, 2]
        if np.any(np.abs(w) < 1e-12 * np.maximum(1.0, np.abs(x[:, :2]).max(axis=1))):
            raise PointAtInfinity("point maps to infinity under homography")
        out = x[:, :2] / w[:, None]
        return out[0] if single else out

    def as_list(self):
        return [float(x) for x in self.h.ravel()]

    @classmethod
    def from_list(cls, values):
        return cls(np.asarray(values, dtype=np.float64).reshape(3, 3))

    def __repr__(self):
        return f"Homography({self.h.tolist()})"


# --------------------------------------------------------------------------
# conversions

def linear_to_normal(l: LinearLine) -> NormalLine:
    l = LinearLine(l.a, l.b, l.c)
    return NormalLine(math.atan2(l.b, l.a), -l.c)


def normal_to_linear(U: NormalLine) -> LinearLine:
    return LinearLine(math.cos(U.beta), math.sin(U.beta), -U.d)


def line_angle(l: LinearLine) -> float:
    """Orientation of the line direction, ``arctan(-a / b)`` in ``[0, pi)``."""
    return wrap_pi(math.atan2(-l.a, l.b))


def line_frame(l: LinearLine):
    """Return ``(alpha, n)``: the line orientation and its unit normal ``(a, b)``."""
    return line_angle(l), np.array([l.a, l.b])


def line_from_endpoints(seg: LineSegment) -> LinearLine:
    s = np.array([seg.s[0], seg.s[1], 1.0])
    e = np.array([seg.e[0], seg.e[1], 1.0])
    a, b, c = np.cross(s, e)
    if math.hypot(a, b) == 0.0:
        raise DegenerateSegment("coincident endpoints")
    return LinearLine(a, b, c)


def line_through(point, angle) -> LinearLine:
    """Line through ``point`` with direction angle ``angle``."""
    a, b = -math.sin(angle), math.cos(angle)
    return LinearLine(a, b, -(a * point[0] + b * point[1]))


def homography_from_rotation(K: Intrinsics, R) -> Homography:
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.0) > 1e-6:
        raise NotARotation("matrix is not orthonormal with determinant 1")
    return Homography(K.K @ R @ K.K_inv)


def rotation_matrix(axis, angle) -> np.ndarray:
    """Rodrigues rotation of ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if angle == 0.0:
        return np.eye(3)
    if not norm > 1e-12:
        raise ValueError("rotation axis has zero length")
    axis = axis / norm
    x, y, z = axis
    Kx = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * Kx + (1.0 - math.cos(angle)) * (Kx @ Kx)


def predict_line(H: Homography, l: LinearLine) -> LinearLine:
    return LinearLine(*(H.inverse_matrix.T @ l.coeffs))


def predict(H: Homography, p, l: LinearLine):
    """Predict a point and a line into the next frame: ``(H p, H^-T l)``."""
    return H.apply(p), predict_line(H, l)


def project_point_to_line(p, l: LinearLine) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    r = l.a * p[..., 0] + l.b * p[..., 1] + l.c
    return p - np.multiply.outer(r, l.normal) if p.ndim > 1 else p - r * l.normal


def project_to_normal_line(pts, beta, d) -> np.ndarray:
    n = np.array([math.cos(beta), math.sin(beta)])
    r = pts @ n - d
    return pts - r[:, None] * n


def point_line_distance(p, l: LinearLine):
    p = np.asarray(p, dtype=np.float64)
    return np.abs(l.a * p[..., 0] + l.b * p[..., 1] + l.c)


def clip_segment(s, e, width, height, margin=0.0):
    """Liang-Barsky clip of ``s-e`` to ``[margin, W-1-margin] x [margin, H-1-margin]``.

    Returns ``(s', e')`` or ``None`` if nothing remains.
    """
    s = np.asarray(s, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    d = e - s
    lo, hi = 0.0, 1.0
    bounds = ((margin, width - 1 - margin), (margin, height - 1 - margin))
    for axis in range(2):
        low, high = bounds[axis]
        for p, q in ((-d[axis], s[axis] - low), (d[axis], high - s[axis])):
            if p == 0.0:
                if q < 0.0:
                    return None
                continue
            t = q / p
            if p < 0.0:
                lo = max(lo, t)
            else:
                hi = min(hi, t)
    if lo > hi:
        return None
    return s + lo * d, s + hi * d


# --------------------------------------------------------------------------
# JSON records

def segment_record(line_id, frame, seg: LineSegment) -> dict:
    return {"id": line_id, "frame": int(frame), "s": [seg.s[0], seg.s[1]], "e": [seg.e[0], seg.e[1]]}


def segment_from_record(rec) -> LineSegment:
    return LineSegment(tuple(rec["s"]), tuple(rec["e"]))
