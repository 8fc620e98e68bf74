"""Grayscale images, pyramids and subpixel sampling.

All sampling goes through bilinear interpolation on the float64 pixel grid.
Coordinates are ``(u, v)`` = (column, row); arrays are indexed ``[v, u]``.
No clamping is ever performed: an access needing pixels outside the image
raises :class:`~lineflow.exceptions.OutOfBounds`.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .exceptions import DimensionTooSmall, OutOfBounds
from .geometry import wrap_pi

BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
MIN_LEVEL_SIZE = 8
_EDGE_TOL = 1e-9


class Image:
    """Immutable grayscale image with real-valued intensities.

    Parameters
    ----------
    data : array_like, shape (height, width)
        Intensities. 8-bit input is promoted to float64.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.asarray(data)
        if arr.ndim != 2:
            raise ValueError(f"image data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 2 or arr.shape[1] < 2:
            raise DimensionTooSmall(f"image must be at least 2x2, got {arr.shape[1]}x{arr.shape[0]}")
        arr = np.array(arr, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def width(self) -> int:
        return self._data.shape[1]

    @property
    def height(self) -> int:
        return self._data.shape[0]

    @property
    def shape(self):
        return self._data.shape

    def __repr__(self):
        return f"Image({self.width}x{self.height})"

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self._data), 0, 255).astype(np.uint8)

    def contains(self, u, v, margin=0.0):
        """Boolean mask of points lying at least ``margin`` inside the image."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        return (
            (u >= margin - _EDGE_TOL)
            & (v >= margin - _EDGE_TOL)
            & (u <= self.width - 1 - margin + _EDGE_TOL)
            & (v <= self.height - 1 - margin + _EDGE_TOL)
        )


@dataclass(frozen=True)
class Pyramid:
    levels: tuple
    scale: float

    @property
    def height(self) -> int:
        return len(self.levels)

    def __getitem__(self, k) -> Image:
        return self.levels[k]

    def __len__(self):
        return len(self.levels)


@dataclass(frozen=True)
class GradientInfo:
    g_u: float
    g_v: float
    magnitude: float
    angle: float


@dataclass(frozen=True)
class StructureTensor:
    sum_gu2: float
    sum_gugv: float
    sum_gv2: float
    lambda_min: float
    lambda_max: float

    @property
    def trace(self):
        return self.sum_gu2 + self.sum_gv2

    @property
    def det(self):
        return self.sum_gu2 * self.sum_gv2 - self.sum_gugv ** 2


def as_image(image) -> Image:
    return image if isinstance(image, Image) else Image(image)


# --------------------------------------------------------------------------
# pyramid

def pyramid_sizes(width, height, scale, n_levels):
    sizes = [(int(width), int(height))]
    for _ in range(1, n_levels):
        w, h = sizes[-1]
        sizes.append((int(math.floor(w / scale)), int(math.floor(h / scale))))
    return sizes


def _downsample(data: np.ndarray, scale: float, size) -> np.ndarray:
    smooth = correlate1d(data, BINOMIAL_5, axis=0, mode="reflect")
    smooth = correlate1d(smooth, BINOMIAL_5, axis=1, mode="reflect")
    w, h = size
    uu, vv = np.meshgrid(np.arange(w) * scale, np.arange(h) * scale)
    return _bilinear(smooth, uu, vv)


def build_pyramid(image, scale: float = 1.5, height: int = 4) -> Pyramid:
    """Build a multi-level pyramid by binomial smoothing and stride-``scale`` resampling.

    Level ``k`` has size ``floor(size_{k-1} / scale)``. Pixel ``(i, j)`` of
    level ``k`` sits at ``(i * scale, j * scale)`` in level ``k - 1``, so
    coordinates map between levels by a pure scale factor.
    """
    image = as_image(image)
    if not scale > 1.0:
        raise ValueError(f"scale must be > 1, got {scale}")
    if int(height) < 1:
        raise ValueError(f"height must be >= 1, got {height}")
    sizes = pyramid_sizes(image.width, image.height, scale, int(height))
    for k, (w, h) in enumerate(sizes):
        if w < MIN_LEVEL_SIZE or h < MIN_LEVEL_SIZE:
            raise DimensionTooSmall(
                f"pyramid level {k} would be {w}x{h}, below {MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}"
            )
    levels = [image]
    for size in sizes[1:]:
        levels.append(Image(_downsample(levels[-1].data, scale, size)))
    return Pyramid(tuple(levels), float(scale))


# --------------------------------------------------------------------------
# sampling

def _cell(data, u, v):
    h, w = data.shape
    x0 = np.clip(np.floor(u).astype(np.intp), 0, w - 2)
    y0 = np.clip(np.floor(v).astype(np.intp), 0, h - 2)
    return x0, y0, u - x0, v - y0


def _bilinear(data, u, v):
    x0, y0, fx, fy = _cell(data, u, v)
    i00 = data[y0, x0]
    i01 = data[y0, x0 + 1]
    i10 = data[y0 + 1, x0]
    i11 = data[y0 + 1, x0 + 1]
    return (1 - fy) * ((1 - fx) * i00 + fx * i01) + fy * ((1 - fx) * i10 + fx * i11)


def _check_inside(image: Image, u, v, margin=0.0):
    if not np.all(image.contains(u, v, margin)):
        raise OutOfBounds(f"sample outside {image.width}x{image.height} image (margin {margin})")


def sample_many(image: Image, u, v) -> np.ndarray:
    """Vectorised bilinear intensities at arrays of coordinates."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_inside(image, u, v)
    return _bilinear(image.data, u, v)


def sample_bilinear(image, p) -> float:
    image = as_image(image)
    return float(sample_many(image, p[0], p[1]))


def bilinear_derivative(image: Image, u, v):
    """Exact partial derivatives of the bilinear interpolant.

    Used for the alignment Jacobians so they agree with finite differences
    of :func:`sample_many`. On a grid line the derivative of the cell whose
    lower corner is ``floor(u), floor(v)`` is returned.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_inside(image, u, v)
    data = image.data
    x0, y0, fx, fy = _cell(data, u, v)
    i00 = data[y0, x0]
    i01 = data[y0, x0 + 1]
    i10 = data[y0 + 1, x0]
    i11 = data[y0 + 1, x0 + 1]
    du = (1 - fy) * (i01 - i00) + fy * (i11 - i10)
    dv = (1 - fx) * (i10 - i00) + fx * (i11 - i01)
    return du, dv


def central_gradient(image: Image, u, v):
    """Unit-step central differences of bilinear samples (vectorised)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_inside(image, u, v, margin=1.0)
    data = image.data
    g_u = (_bilinear(data, u + 1.0, v) - _bilinear(data, u - 1.0, v)) / 2.0
    g_v = (_bilinear(data, u, v + 1.0) - _bilinear(data, u, v - 1.0)) / 2.0
    return g_u, g_v


def gradient_angle(g_u, g_v):
    """Orientation of the iso-intensity direction, in ``[0, pi)``.

    This is ``arctan(-g_u / g_v)`` reduced modulo pi, i.e. the angle of the
    line perpendicular to the gradient.
    """
    return wrap_pi(np.arctan2(-np.asarray(g_u, dtype=np.float64), np.asarray(g_v, dtype=np.float64)))


def gradient_at(image, p) -> GradientInfo:
    image = as_image(image)
    g_u, g_v = central_gradient(image, p[0], p[1])
    g_u, g_v = float(g_u), float(g_v)
    mag = math.hypot(g_u, g_v)
    if g_u == 0.0 and g_v == 0.0:
        angle = 0.0
    else:
        angle = float(gradient_angle(g_u, g_v))
    return GradientInfo(g_u, g_v, mag, angle)


def eigen_sym2(a, b, c):
    """Eigenvalues ``(lo, hi)`` of ``[[a, b], [b, c]]``; works on arrays."""
    half_tr = (a + c) / 2.0
    disc = np.sqrt(((a - c) / 2.0) ** 2 + b * b)
    return half_tr - disc, half_tr + disc


def structure_tensor(image, p, half_window: int = 3) -> StructureTensor:
    image = as_image(image)
    hw = int(half_window)
    offs = np.arange(-hw, hw + 1, dtype=np.float64)
    du, dv = np.meshgrid(offs, offs)
    g_u, g_v = central_gradient(image, p[0] + du.ravel(), p[1] + dv.ravel())
    a = float(np.dot(g_u, g_u))
    b = float(np.dot(g_u, g_v))
    c = float(np.dot(g_v, g_v))
    lo, hi = eigen_sym2(a, b, c)
    return StructureTensor(a, b, c, max(float(lo), 0.0), float(hi))


def structure_eigenvalues(image: Image, u, v, half_window: int = 3):
    """Vectorised ``(lambda_min, lambda_max)`` at many points."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    offs = np.arange(-half_window, half_window + 1, dtype=np.float64)
    du, dv = np.meshgrid(offs, offs)
    g_u, g_v = central_gradient(image, u[:, None] + du.ravel(), v[:, None] + dv.ravel())
    a = np.sum(g_u * g_u, axis=1)
    b = np.sum(g_u * g_v, axis=1)
    c = np.sum(g_v * g_v, axis=1)
    lo, hi = eigen_sym2(a, b, c)
    return np.maximum(lo, 0.0), hi


# --------------------------------------------------------------------------
# PGM I/O

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def read_pgm(path) -> Image:
    """Load a binary (P5) 8-bit PGM file."""
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = tokens
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = raw[pos:pos + w * h]
    if len(payload) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, found {len(payload)}")
    return Image(np.frombuffer(payload, dtype=np.uint8).reshape(h, w))


def write_pgm(path, image) -> None:
    image = as_image(image)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.to_uint8().tobytes())
