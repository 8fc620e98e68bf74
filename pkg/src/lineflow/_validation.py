"""Input validation helpers shared by the estimator and the CLI."""
from __future__ import annotations

import numpy as np

from .exceptions import DegenerateSegment
from .geometry import Intrinsics, LineSegment
from .image import Image


def check_image(image) -> Image:
    """Accept an :class:`Image` or a 2-D array of intensities in ``[0, 255]``."""
    if isinstance(image, Image):
        return image
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"image dtype {arr.dtype} is not numeric")
    if arr.size and (np.nanmin(arr) < 0 or np.nanmax(arr) > 255 or not np.all(np.isfinite(arr))):
        raise ValueError("image intensities must be finite and lie in [0, 255]")
    return Image(arr)


def check_segment(seg) -> LineSegment:
    if isinstance(seg, LineSegment):
        return seg
    if isinstance(seg, dict):
        return LineSegment(tuple(seg["s"]), tuple(seg["e"]))
    arr = np.asarray(seg, dtype=np.float64)
    if arr.shape == (4,):
        arr = arr.reshape(2, 2)
    if arr.shape != (2, 2):
        raise ValueError(f"a segment needs two 2-D endpoints, got shape {arr.shape}")
    return LineSegment(tuple(arr[0]), tuple(arr[1]))


def check_segments(segments, image: Image = None, skip_invalid=False) -> list:
    """Coerce a collection of segments; optionally drop degenerate or out-of-image ones."""
    out = []
    for seg in segments:
        try:
            seg = check_segment(seg)
        except DegenerateSegment:
            if skip_invalid:
                continue
            raise
        if image is not None:
            pts = seg.as_array()
            if not image.contains(pts[:, 0], pts[:, 1]).all():
                if skip_invalid:
                    continue
                raise ValueError(f"segment {seg} lies outside the {image.width}x{image.height} image")
        out.append(seg)
    return out


def check_rotation(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.size != 9:
        raise ValueError(f"rotation must have 9 entries, got {R.size}")
    return R.reshape(3, 3)


def check_intrinsics(K) -> Intrinsics:
    if isinstance(K, Intrinsics):
        return K
    if isinstance(K, dict):
        return Intrinsics(**{k: float(K[k]) for k in ("fx", "fy", "cx", "cy")})
    K = np.asarray(K, dtype=np.float64)
    if K.shape == (3, 3):
        return Intrinsics(K[0, 0], K[1, 1], K[0, 2], K[1, 2])
    if K.shape == (4,):
        return Intrinsics(*K)
    raise ValueError("intrinsics must be an Intrinsics, a dict, a 3x3 matrix or (fx, fy, cx, cy)")
