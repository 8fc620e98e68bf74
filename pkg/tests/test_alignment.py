import math

import numpy as np
import pytest

from conftest import smooth_texture
from lineflow.alignment import (
    AlignConfig,
    extract_template,
    pyramidal_align,
    residuals,
    solve_increment,
)
from lineflow.exceptions import SingularWarp, TooFewPoints
from lineflow.geometry import Homography, line_from_endpoints, normal_to_linear, point_line_distance
from lineflow.image import build_pyramid
from lineflow.sampling import PointStatus, SamplingConfig, vet_line_points
from lineflow.synth import SceneSpec, ground_truth, render_frame
from oracles import jacobian_audit, warped_template


def shifted_scene(step, lines=None, seed=1):
    spec = SceneSpec.from_dict({
        "width": 200, "height": 160, "noise": {"seed": seed},
        "lines": lines or [{"s": [30, 50], "e": [170, 62]}],
        "motion": {"type": "translation", "steps": [list(step)]},
    })
    return render_frame(spec, 0), render_frame(spec, 1), ground_truth(spec)


@pytest.mark.parametrize("seed", range(8))
def test_jacobians_match_finite_differences(seed):
    assert jacobian_audit(seed) < 1e-5


@pytest.mark.parametrize("A", [np.eye(2), np.array([[1.05, 0.02], [-0.03, 0.97]]),
                               np.array([[math.cos(0.1), -math.sin(0.1)], [math.sin(0.1), math.cos(0.1)]])])
def test_template_matches_whole_image_warp(A):
    img = smooth_texture(5, 80, 80)
    p = (40, 38)
    t = extract_template(img, p, A, 10)
    assert np.allclose(t.values, warped_template(img, p, A, 10), atol=1e-9)


def test_template_rejects_singular_warp():
    with pytest.raises(SingularWarp):
        extract_template(smooth_texture(1), (30, 30), np.zeros((2, 2)))


def test_residual_cost_is_sum_of_squares():
    img = smooth_texture(2, 60, 60)
    t = [extract_template(img, (30, 30)), extract_template(img, (32, 25))]
    r, cost = residuals(np.array([[30.0, 30.0], [32.0, 25.0]]), 0.3, 10.0, t, img, 441.0)
    assert cost == pytest.approx(r @ r)
    assert np.allclose(r[:2 * 441], 0.0)


def test_solve_increment_undamped_and_damped():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(6, 6))
    H = M @ M.T + 6 * np.eye(6)
    g = rng.normal(size=6)
    assert np.allclose(solve_increment(H, g), -np.linalg.solve(H, g))
    # rank-deficient system still yields a finite damped step
    Hs = np.outer(g, g)
    step = solve_increment(Hs, g)
    assert np.all(np.isfinite(step)) and step @ g < 0
    assert not np.any(solve_increment(H, np.zeros(6)))


def test_identity_motion_is_a_fixed_point():
    f0, _, gt = shifted_scene((0, 0))
    seg = gt.segment(0, 0)
    pts = vet_line_points(seg, f0)
    pyr = build_pyramid(f0)
    res = pyramidal_align(pyr, pyr, line_from_endpoints(seg), pts)
    assert res.converged_line
    err = point_line_distance(np.array([seg.s, seg.e]), normal_to_linear(res.line_c))
    assert err.max() < 1e-6


@pytest.mark.parametrize("step", [(0.4, -0.7), (2.5, 1.5), (-1.0, 3.0)])
def test_small_translation_recovered(step):
    f0, f1, gt = shifted_scene(step)
    seg = gt.segment(0, 0)
    res = pyramidal_align(build_pyramid(f0), build_pyramid(f1), line_from_endpoints(seg), vet_line_points(seg, f0))
    truth = gt.segment(1, 0)
    err = point_line_distance(np.array([truth.s, truth.e]), normal_to_linear(res.line_c))
    assert res.converged_line and err.max() < 0.1
    tracked = [p for p in res.points_c if p.status is PointStatus.CONVERGED]
    assert len(tracked) >= 0.8 * len(res.points_c)


def test_prior_homography_initialises_alignment():
    f0, f1, gt = shifted_scene((0, 12))
    seg = gt.segment(0, 0)
    cfg = AlignConfig(pyramid_height=1)
    res = pyramidal_align(build_pyramid(f0, height=1), build_pyramid(f1, height=1), line_from_endpoints(seg),
                          vet_line_points(seg, f0), cfg, init=Homography.translation(0, 12))
    truth = gt.segment(1, 0)
    assert point_line_distance(np.array([truth.s, truth.e]), normal_to_linear(res.line_c)).max() < 0.1


def test_diagnostic_log_records_iterations():
    f0, f1, gt = shifted_scene((1, 1))
    seg = gt.segment(0, 0)
    log = []
    res = pyramidal_align(build_pyramid(f0), build_pyramid(f1), line_from_endpoints(seg),
                          vet_line_points(seg, f0), log=log)
    assert len(log) == res.iterations
    assert {"level", "phase", "iter", "cost", "beta", "d", "n_converged"} <= set(log[0])
    assert log[-1]["level"] == 0


def test_too_few_points():
    f0, f1, gt = shifted_scene((0, 0))
    seg = gt.segment(0, 0)
    with pytest.raises(TooFewPoints):
        pyramidal_align(build_pyramid(f0), build_pyramid(f1), line_from_endpoints(seg),
                        vet_line_points(seg, f0)[:2], AlignConfig(), SamplingConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        AlignConfig(convergence_fraction=1.5)
    with pytest.raises(ValueError):
        AlignConfig(half_window=0)
