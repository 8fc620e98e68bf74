"""Joint point/line alignment between two frames.

A line is tracked by jointly estimating the positions of its sample points
in the current image and its normal-form parameters ``(beta, d)``. The cost
for each point is the photometric error of a ``(2W+1)^2`` template window
plus a structural term that ties the point to the line::

    sum_h (T(h) - I_c(p + h))^2  +  lambda_s * (cos(beta) p_u + sin(beta) p_v - d)^2

The problem is solved by Gauss-Newton in inverse-compositional form: the
photometric Jacobian comes from the template gradient and is computed once
per point and level. Corner-like points move freely in 2-D, edge-like points
only along the current line normal. Alignment runs in two phases (all
points, then only the quickly converged ones) on every pyramid level,
coarsest first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import (
    AlignmentFailure,
    LineLost,
    MaxIterations,
    OutOfBounds,
    SingularSystem,
    SingularWarp,
    TooFewPoints,
)
from .geometry import Homography, LinearLine, NormalLine, angle_distance, linear_to_normal, wrap_pi
from .image import Image, Pyramid, _bilinear, bilinear_derivative, central_gradient, gradient_angle, sample_many
from .image import structure_eigenvalues
from .sampling import PointClass, PointStatus, SamplePoint, SamplingConfig, classify_points

FIRST = "first"
SECOND = "second"


@dataclass
class AlignConfig:
    half_window: int = 10
    max_iterations: int = 30
    point_epsilon: float = 0.05
    angle_epsilon: float = 0.002
    distance_epsilon: float = 0.05
    convergence_fraction: float = 0.4
    structural_weight: float = 441.0
    pyramid_scale: float = 1.5
    pyramid_height: int = 4
    two_step: bool = True
    high_eig_filter: bool = True
    high_eig_factor: float = 10.0
    max_halvings: int = 5
    initial_damping: float = 1e-3
    max_damping: float = 1e6

    def __post_init__(self):
        if not 0 < self.convergence_fraction < 1:
            raise ValueError("convergence_fraction must lie in (0, 1)")
        for name in ("point_epsilon", "angle_epsilon", "distance_epsilon", "structural_weight"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.half_window < 1 or self.max_iterations < 1:
            raise ValueError("half_window and max_iterations must be >= 1")


@dataclass
class TemplatePatch:
    """Fixed template window around a point of the previous image.

    ``values[k] = I_l(center_l + A^-1 h_k)`` and ``gradients[k]`` is
    ``dT/dh`` at ``h_k``, i.e. ``A^-T`` times the image gradient.
    """

    center_l: np.ndarray
    values: np.ndarray
    gradients: np.ndarray
    half_window: int

    @property
    def hessian(self) -> np.ndarray:
        return self.gradients.T @ self.gradients


@dataclass
class AlignResult:
    line_c: NormalLine
    points_c: list
    converged_line: bool
    first_step_iterations: int = 0
    second_step_iterations: int = 0
    failure_reason: Optional[str] = None
    diagnostics: list = field(default_factory=list, repr=False)

    @property
    def tracked_points(self) -> list:
        return [p for p in self.points_c if p.status is PointStatus.CONVERGED]

    @property
    def iterations(self) -> int:
        return self.first_step_iterations + self.second_step_iterations


@dataclass
class LevelResult:
    positions: np.ndarray
    beta: float
    d: float
    converged: np.ndarray
    failed: np.ndarray
    first_iterations: int
    second_iterations: int


def window_offsets(half_window: int) -> np.ndarray:
    r = np.arange(-half_window, half_window + 1, dtype=np.float64)
    hu, hv = np.meshgrid(r, r)
    return np.column_stack([hu.ravel(), hv.ravel()])


def extract_template(image_l: Image, p_l, A=None, half_window: int = 10) -> TemplatePatch:
    A = np.eye(2) if A is None else np.asarray(A, dtype=np.float64)
    if abs(np.linalg.det(A)) < 1e-12:
        raise SingularWarp("template warp is singular")
    A_inv = np.linalg.inv(A)
    p_l = np.asarray(p_l, dtype=np.float64)
    h = window_offsets(half_window)
    pts = p_l[None, :] + h @ A_inv.T
    values = sample_many(image_l, pts[:, 0], pts[:, 1])
    du, dv = bilinear_derivative(image_l, pts[:, 0], pts[:, 1])
    grads = np.column_stack([du, dv]) @ A_inv
    return TemplatePatch(p_l.copy(), values, grads, int(half_window))


def template_fits(image: Image, p, A_inv, half_window, margin=0.0):
    corners = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=np.float64) * half_window
    pts = np.asarray(p, dtype=np.float64)[None, :] + corners @ np.asarray(A_inv).T
    return bool(np.all(image.contains(pts[:, 0], pts[:, 1], margin)))


def window_fits(image: Image, p, half_window, margin=0.0):
    p = np.asarray(p, dtype=np.float64)
    m = half_window + margin
    return image.contains(p[..., 0], p[..., 1], m)


def residuals(positions, beta, d, templates, image_c: Image, structural_weight: float):
    """Stacked residual vector and cost for a set of points and a line.

    Photometric residuals are ``T(h) - I_c(p + h)`` (one block of
    ``(2W+1)^2`` per point) followed by one structural residual per point,
    ``sqrt(lambda_s) * (n . p - d)``. Raises :class:`OutOfBounds` if any
    window leaves ``image_c``.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    photo = _photometric(positions, templates, image_c)
    n = np.array([math.cos(beta), math.sin(beta)])
    struct = math.sqrt(structural_weight) * (positions @ n - d)
    r = np.concatenate([photo.ravel(), struct])
    return r, float(r @ r)


def _photometric(positions, templates, image_c: Image):
    h = window_offsets(templates[0].half_window)
    pts = positions[:, None, :] + h[None, :, :]
    sampled = sample_many(image_c, pts[..., 0], pts[..., 1])
    values = np.stack([t.values for t in templates])
    return values - sampled


def photometric_jacobian(positions, kinds, beta, templates, image_c: Image):
    """Forward-additive Jacobian of the photometric residuals.

    Per point: ``-grad I_c(p + h)`` (``m x 2``) for corners, and its
    projection onto ``(cos beta, sin beta)`` (``m x 1``) for edges. This is
    the exact derivative of :func:`residuals`; the solver itself uses the
    template-side counterpart.
    """
    h = window_offsets(templates[0].half_window)
    n = np.array([math.cos(beta), math.sin(beta)])
    out = []
    for p, kind in zip(np.atleast_2d(positions), kinds):
        pts = p[None, :] + h
        du, dv = bilinear_derivative(image_c, pts[:, 0], pts[:, 1])
        J = -np.column_stack([du, dv])
        out.append(J if kind is PointClass.CORNER else (J @ n)[:, None])
    return out


def structural_jacobian(p, beta, d, structural_weight: float):
    """Derivatives of ``sqrt(w) (cos(beta) u + sin(beta) v - d)``.

    Returns ``(d/dp, d/dbeta, d/dd)``.
    """
    w = math.sqrt(structural_weight)
    c, s = math.cos(beta), math.sin(beta)
    return w * np.array([c, s]), w * (-s * p[0] + c * p[1]), -w


def _normal_system(positions, kinds, beta, d, templates, photo_res, cfg: AlignConfig):
    """Assemble ``H`` and ``g = J^T r`` with template-side photometric Jacobians."""
    n_pts = len(positions)
    dofs = [2 if k is PointClass.CORNER else 1 for k in kinds]
    offsets = np.concatenate([[0], np.cumsum(dofs)]).astype(int)
    size = offsets[-1] + 2
    H = np.zeros((size, size))
    g = np.zeros(size)
    nrm = np.array([math.cos(beta), math.sin(beta)])
    w = cfg.structural_weight
    lb = size - 2
    for i in range(n_pts):
        t = templates[i]
        o = offsets[i]
        p = positions[i]
        jp, jb, jd = structural_jacobian(p, beta, d, w)
        rs = math.sqrt(w) * (p @ nrm - d)
        # d r_photo / d p  ~=  -dT/dh
        gp = -(t.gradients.T @ photo_res[i])
        Hp = t.hessian
        if dofs[i] == 2:
            H[o:o + 2, o:o + 2] += Hp + np.outer(jp, jp)
            g[o:o + 2] += gp + jp * rs
            H[o:o + 2, lb] += jp * jb
            H[o:o + 2, lb + 1] += jp * jd
        else:
            jpe = jp @ nrm
            H[o, o] += nrm @ Hp @ nrm + jpe * jpe
            g[o] += gp @ nrm + jpe * rs
            H[o, lb] += jpe * jb
            H[o, lb + 1] += jpe * jd
        H[lb, lb] += jb * jb
        H[lb, lb + 1] += jb * jd
        H[lb + 1, lb + 1] += jd * jd
        g[lb] += jb * rs
        g[lb + 1] += jd * rs
    iu = np.triu_indices(size, 1)
    H[(iu[1], iu[0])] = H[iu]
    return H, g, offsets


def solve_increment(H, g, cfg: AlignConfig = None):
    """Gauss-Newton step ``-H^-1 g`` with Levenberg damping when needed."""
    cfg = cfg or AlignConfig()
    if not np.any(g):
        return np.zeros_like(g)
    diag = np.diag(H).copy()
    diag[diag <= 0] = 1.0
    mu = 0.0
    while True:
        A = H + mu * np.diag(diag)
        try:
            L = np.linalg.cholesky(A)
            if np.linalg.cond(L) ** 2 < 1e12:
                y = np.linalg.solve(L, -g)
                return np.linalg.solve(L.T, y)
        except np.linalg.LinAlgError:
            pass
        mu = cfg.initial_damping if mu == 0.0 else mu * 10.0
        if mu > cfg.max_damping:
            raise SingularSystem("normal equations remain singular after damping")


def _apply_step(positions, kinds, beta, d, step, offsets, scale=1.0):
    nrm = np.array([math.cos(beta), math.sin(beta)])
    new = positions.copy()
    moves = np.zeros_like(positions)
    for i, kind in enumerate(kinds):
        o = offsets[i]
        if kind is PointClass.CORNER:
            moves[i] = scale * step[o:o + 2]
        else:
            moves[i] = scale * step[o] * nrm
    new += moves
    return new, beta + scale * step[-2], d + scale * step[-1], moves


def _appropriate(image: Image, pts, beta, sampling: SamplingConfig):
    pts = np.atleast_2d(pts)
    ok = image.contains(pts[:, 0], pts[:, 1], 1.0)
    out = np.zeros(len(pts), dtype=bool)
    if ok.any():
        g_u, g_v = central_gradient(image, pts[ok, 0], pts[ok, 1])
        alpha = wrap_pi(beta + math.pi / 2)
        out[ok] = (np.hypot(g_u, g_v) > sampling.grad_threshold) & (
            angle_distance(alpha, gradient_angle(g_u, g_v)) < sampling.angle_threshold
        )
    return out


def align_one_level(image_l: Image, image_c: Image, beta, d, positions, kinds, templates,
                    cfg: AlignConfig, sampling: SamplingConfig, phase: str = FIRST,
                    log=None, level=0):
    """Iterate Gauss-Newton on one pyramid level for one phase.

    ``positions`` are current estimates in ``image_c``. Returns
    ``(positions, beta, d, converged_mask, failed_mask, iterations)``.
    First phase stops once at least ``convergence_fraction`` of the points
    moved less than ``point_epsilon`` and pass the gradient criterion in the
    same iteration; second phase stops once every point and the line are
    below their epsilons.
    """
    positions = np.array(positions, dtype=np.float64)
    n_total = len(positions)
    kinds = list(kinds)
    failed = ~window_fits(image_c, positions, cfg.half_window)
    idx = np.flatnonzero(~failed)
    if len(idx) < 3:
        raise TooFewPoints(f"only {len(idx)} points inside the current image")
    photo = _photometric(positions[idx], [templates[i] for i in idx], image_c)
    cost = _cost(photo, positions[idx], beta, d, cfg.structural_weight)

    for it in range(1, cfg.max_iterations + 1):
        k_idx = [kinds[i] for i in idx]
        t_idx = [templates[i] for i in idx]
        H, g, offsets = _normal_system(positions[idx], k_idx, beta, d, t_idx, photo, cfg)
        step = solve_increment(H, g, cfg)

        scale = 1.0
        accepted = False
        dropped = False
        for _ in range(cfg.max_halvings + 1):
            new_pos, new_beta, new_d, moves = _apply_step(positions[idx], k_idx, beta, d, step, offsets, scale)
            inside = window_fits(image_c, new_pos, cfg.half_window)
            if not inside.all():
                # windows leaving the image mark their point failed; the rest re-solve
                failed[idx[~inside]] = True
                idx = idx[inside]
                if len(idx) < 3:
                    raise TooFewPoints("points left the image during alignment")
                photo = _photometric(positions[idx], [templates[i] for i in idx], image_c)
                cost = _cost(photo, positions[idx], beta, d, cfg.structural_weight)
                dropped = True
                break
            new_photo = _photometric(new_pos, t_idx, image_c)
            new_cost = _cost(new_photo, new_pos, new_beta, new_d, cfg.structural_weight)
            if new_cost <= cost:
                accepted = True
                break
            scale *= 0.5
        if dropped:
            continue
        if accepted:
            positions[idx] = new_pos
            beta, d, cost, photo = new_beta, new_d, new_cost, new_photo
            move_norm = np.linalg.norm(moves, axis=1)
            d_beta, d_d = abs(scale * step[-2]), abs(scale * step[-1])
        else:
            move_norm = np.zeros(len(idx))
            d_beta = d_d = 0.0

        small = move_norm < cfg.point_epsilon
        if phase == FIRST:
            good = small & _appropriate(image_c, positions[idx], beta, sampling)
            n_conv = int(good.sum())
            done = n_conv >= cfg.convergence_fraction * n_total
        else:
            good = small
            n_conv = int(good.sum())
            done = bool(small.all()) and d_beta < cfg.angle_epsilon and d_d < cfg.distance_epsilon
        if log is not None:
            log.append({"level": level, "phase": phase, "iter": it, "cost": cost,
                        "beta": beta, "d": d, "n_converged": n_conv})
        if done:
            converged = np.zeros(n_total, dtype=bool)
            converged[idx[good]] = True
            return positions, beta, d, converged, failed, it
    raise MaxIterations(f"{phase} phase did not converge in {cfg.max_iterations} iterations")


def _cost(photo, positions, beta, d, weight):
    n = np.array([math.cos(beta), math.sin(beta)])
    s = positions @ n - d
    return float(np.sum(photo * photo) + weight * np.dot(s, s))


def _level_align(image_l, image_c, pos_l, pos_c, beta, d, kinds, A, cfg, sampling, log, level):
    A_inv = np.linalg.inv(A)
    templates = [extract_template(image_l, p, A, cfg.half_window) for p in pos_l]
    n = len(pos_l)
    first_it = second_it = 0
    if cfg.two_step:
        pos, beta1, d1, conv, failed, first_it = align_one_level(
            image_l, image_c, beta, d, pos_c, kinds, templates, cfg, sampling, FIRST, log, level)
        sel = np.flatnonzero(conv)
        if len(sel) < 3:
            raise TooFewPoints(f"only {len(sel)} points converged in the first step")
        pos2, beta, d, conv2, failed2, second_it = align_one_level(
            image_l, image_c, beta1, d1, pos[sel], [kinds[i] for i in sel],
            [templates[i] for i in sel], cfg, sampling, SECOND, log, level)
        converged = np.zeros(n, dtype=bool)
        converged[sel[conv2]] = True
        failed_all = failed.copy()
        failed_all[sel[failed2]] = True
        positions = pos_c.copy()
        positions[sel] = pos2
    else:
        positions, beta, d, converged, failed_all, second_it = align_one_level(
            image_l, image_c, beta, d, pos_c, kinds, templates, cfg, sampling, SECOND, log, level)
    return LevelResult(positions, beta, d, converged, failed_all, first_it, second_it)


def pyramidal_align(pyr_l: Pyramid, pyr_c: Pyramid, line_l: LinearLine, points_l,
                    cfg: AlignConfig = None, sampling: SamplingConfig = None,
                    init: Homography = None, log=None, level_inits=None) -> AlignResult:
    """Coarse-to-fine line alignment.

    Parameters
    ----------
    pyr_l, pyr_c : Pyramid
        Previous and current image pyramids (same scale and height).
    line_l : LinearLine
        Line in the previous image.
    points_l : array, shape (n, 2)
        Vetted sample positions on ``line_l`` (level-0 pixels).
    init : Homography, optional
        Prediction of the inter-frame motion; identity when omitted.
    level_inits : dict, optional
        ``{level: (beta, d, positions)}`` overriding the propagated initial
        state at that level (level-0 units). Used for diagnostics and tests.

    Raises
    ------
    LineLost
        A level failed to converge or its system was singular.
    TooFewPoints
        Fewer than three usable points at some level.
    """
    cfg = cfg or AlignConfig()
    sampling = sampling or SamplingConfig()
    if pyr_l.height != pyr_c.height or abs(pyr_l.scale - pyr_c.scale) > 1e-12:
        raise ValueError("pyramids must share scale and height")
    H = init or Homography.identity()
    A = H.affine
    A_inv = np.linalg.inv(A)
    pos_l0 = np.atleast_2d(np.asarray(points_l, dtype=np.float64))
    pos_c0 = H.apply(pos_l0)
    U = linear_to_normal(LinearLine(*(H.inverse_matrix.T @ line_l.coeffs)))
    beta, d = U.beta, U.d
    s = pyr_l.scale
    n = len(pos_l0)
    first_total = second_total = 0
    converged = np.zeros(n, dtype=bool)
    level_pts = np.arange(n)

    for level in range(pyr_l.height - 1, -1, -1):
        f = s ** level
        img_l, img_c = pyr_l[level], pyr_c[level]
        if level_inits and level in level_inits:
            beta, d, pos_override = level_inits[level]
            if pos_override is not None:
                pos_c0 = np.array(pos_override, dtype=np.float64)
        pl, pc = pos_l0 / f, pos_c0 / f
        dl = d / f
        usable = np.array([
            template_fits(img_l, pl[i], A_inv, cfg.half_window, 1.0)
            and bool(window_fits(img_c, pc[i], cfg.half_window, 1.0))
            for i in range(n)
        ], dtype=bool)
        if level == 0 and cfg.high_eig_filter and usable.any():
            idx = np.flatnonzero(usable)
            lmin, _ = structure_eigenvalues(img_l, pl[idx, 0], pl[idx, 1], sampling.tensor_half_window)
            usable[idx[lmin > cfg.high_eig_factor * sampling.corner_min_eig]] = False
        idx = np.flatnonzero(usable)
        kinds_all = classify_points(img_l, pl[idx], sampling) if len(idx) else []
        keep = [i for i, k in zip(idx, kinds_all) if k is not PointClass.REJECT]
        kinds = [k for k in kinds_all if k is not PointClass.REJECT]
        if len(keep) < 3:
            if level > 0:
                # border-limited coarse level: leave the state to the finer levels
                continue
            raise TooFewPoints(f"{len(keep)} usable points at level {level}")
        keep = np.array(keep)
        try:
            res = _level_align(img_l, img_c, pl[keep], pc[keep], beta, dl, kinds, A, cfg,
                               sampling, log, level)
        except TooFewPoints:
            if level > 0:
                continue
            raise
        except (MaxIterations, SingularSystem) as exc:
            raise LineLost(f"level {level}: {exc}") from exc
        except OutOfBounds as exc:
            raise LineLost(f"level {level}: {exc}") from exc
        first_total += res.first_iterations
        second_total += res.second_iterations
        beta, d = res.beta, res.d * f
        # non-converged points restart from their initial value projected on the line
        new_pc = pc.copy()
        conv_local = res.converged
        new_pc[keep[conv_local]] = res.positions[conv_local]
        nrm = np.array([math.cos(beta), math.sin(beta)])
        others = np.setdiff1d(np.arange(n), keep[conv_local])
        if len(others):
            r = new_pc[others] @ nrm - res.d
            new_pc[others] -= r[:, None] * nrm
        pos_c0 = new_pc * f
        converged = np.zeros(n, dtype=bool)
        converged[keep[conv_local]] = True
        level_pts = keep

    line_c = NormalLine(beta, d)
    img_c = pyr_c[0]
    final_ok = np.zeros(n, dtype=bool)
    final_ok[level_pts] = _appropriate(img_c, pos_c0[level_pts], beta, sampling)
    points = []
    nrm = np.array([math.cos(beta), math.sin(beta)])
    for i in range(n):
        pc = pos_c0[i].copy()
        if final_ok[i]:
            status = PointStatus.CONVERGED
        else:
            status = PointStatus.FAILED
            pc = pc - (pc @ nrm - d) * nrm
        points.append(SamplePoint(pos_l0[i].copy(), pc, status=status))
    if sum(final_ok) < 3:
        return AlignResult(line_c, points, False, first_total, second_total, "too_few_points",
                           log if log is not None else [])
    return AlignResult(line_c, points, True, first_total, second_total, None,
                       log if log is not None else [])
