"""Independent reference computations used by the unit and acceptance tests."""
import math

import numpy as np
from scipy.ndimage import affine_transform, map_coordinates

from conftest import smooth_texture
from lineflow.alignment import extract_template, photometric_jacobian, residuals, structural_jacobian
from lineflow.sampling import PointClass


def bilinear(img, u, v):
    """Bilinear lookup via scipy (order-1 spline == bilinear)."""
    return map_coordinates(img.data, [np.ravel(v), np.ravel(u)], order=1, mode="nearest").reshape(np.shape(u))


def warped_template(image_l, p, A, half_window):
    """Warp the whole previous image by ``x -> p + A^-1 (x - p)`` and cut a window at ``p``.

    ``p`` must be integer so the window falls on the warped grid.
    """
    A_inv = np.linalg.inv(A)
    # scipy works in (row, col) = (v, u)
    P = np.array([[0, 1], [1, 0]])
    M = P @ A_inv @ P
    pr = np.array([p[1], p[0]], dtype=float)
    offset = pr - M @ pr
    warped = affine_transform(image_l.data, M, offset=offset, order=1, mode="nearest")
    r = np.arange(-half_window, half_window + 1)
    hu, hv = np.meshgrid(r, r)
    return warped[int(p[1]) + hv.ravel(), int(p[0]) + hu.ravel()]


def jacobian_audit(seed, eps=1e-5):
    """Max relative error between analytic and central-difference Jacobians.

    Random smooth textures, random corner/edge points with fractional
    coordinates away from the pixel grid lines (where the bilinear
    interpolant is smooth), random line parameters.
    """
    rng = np.random.default_rng(seed)
    image_l = smooth_texture(seed, 72, 72)
    image_c = smooth_texture(seed + 10_000, 72, 72)
    n = int(rng.integers(3, 7))
    pos = np.floor(rng.uniform(14, 56, (n, 2))) + rng.uniform(0.2, 0.8, (n, 2))
    pos_l = np.floor(rng.uniform(14, 56, (n, 2))) + rng.uniform(0.2, 0.8, (n, 2))
    kinds = [PointClass.CORNER if k else PointClass.EDGE for k in rng.integers(0, 2, n)]
    beta, d = rng.uniform(0, math.pi), rng.uniform(-40, 40)
    w = 441.0
    templates = [extract_template(image_l, p, None, 10) for p in pos_l]
    m = 21 * 21

    def res(P, b=beta, dd=d):
        return residuals(P, b, dd, templates, image_c, w)[0]

    worst = 0.0
    nrm = np.array([math.cos(beta), math.sin(beta)])
    J_photo = photometric_jacobian(pos, kinds, beta, templates, image_c)
    for i, kind in enumerate(kinds):
        dirs = [np.array([1.0, 0.0]), np.array([0.0, 1.0])] if kind is PointClass.CORNER else [nrm]
        for k, dvec in enumerate(dirs):
            P1, P0 = pos.copy(), pos.copy()
            P1[i] += eps * dvec
            P0[i] -= eps * dvec
            fd = (res(P1) - res(P0)) / (2 * eps)
            fd_photo = fd[i * m:(i + 1) * m]
            an = J_photo[i][:, k]
            worst = max(worst, np.linalg.norm(an - fd_photo) / max(np.linalg.norm(fd_photo), 1e-12))
            # structural derivative w.r.t. the point
            jp, _, _ = structural_jacobian(pos[i], beta, d, w)
            fd_s = fd[n * m + i]
            worst = max(worst, abs(jp @ dvec - fd_s) / max(abs(fd_s), 1e-12))
    # structural derivatives w.r.t. the line
    fb = (res(pos, beta + eps) - res(pos, beta - eps))[n * m:] / (2 * eps)
    fdd = (res(pos, beta, d + eps) - res(pos, beta, d - eps))[n * m:] / (2 * eps)
    jb = np.array([structural_jacobian(p, beta, d, w)[1] for p in pos])
    jd = np.array([structural_jacobian(p, beta, d, w)[2] for p in pos])
    worst = max(worst, np.linalg.norm(jb - fb) / np.linalg.norm(fb))
    worst = max(worst, np.linalg.norm(jd - fdd) / np.linalg.norm(fdd))
    return worst


def perpendicular_displacement(image_l, image_c, seg, half_width=3, span=6.0, inset=12.0):
    """Brute-force 1-D search for the shift of ``seg`` along its normal.

    Minimises the SSD between a strip around the segment interior in
    ``image_l`` and the same strip shifted by ``s * n`` in ``image_c``;
    coarse sweep at 0.1 px, then a fine sweep at 0.002 px.
    """
    d = seg.direction
    nrm = np.array([-d[1], d[0]])
    L = seg.length
    t = np.arange(inset, L - inset, 1.0)
    o = np.arange(-half_width, half_width + 1, 1.0)
    T, O = np.meshgrid(t, o)
    base = seg.start[None, None, :] + T[..., None] * d + O[..., None] * nrm
    ref = bilinear(image_l, base[..., 0], base[..., 1])

    def sweep(shifts):
        costs = []
        for s in shifts:
            q = base + s * nrm
            costs.append(np.sum((bilinear(image_c, q[..., 0], q[..., 1]) - ref) ** 2))
        return shifts[int(np.argmin(costs))]

    s0 = sweep(np.arange(-span, span + 1e-9, 0.1))
    return sweep(np.arange(s0 - 0.12, s0 + 0.12, 0.002)), nrm


def gradient_score(image, line_normal, pts):
    """Reference implementation of the rotation-sweep score, point by point."""
    total = 0.0
    for p in pts:
        a = bilinear(image, np.array([p[0] + line_normal[0]]), np.array([p[1] + line_normal[1]]))[0]
        b = bilinear(image, np.array([p[0] - line_normal[0]]), np.array([p[1] - line_normal[1]]))[0]
        total += abs(a - b) / 2.0
    return total
