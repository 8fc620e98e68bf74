import json

import numpy as np
import pytest

from lineflow.exceptions import FrameOutOfRange, SceneSpecError
from lineflow.geometry import LineSegment, line_from_endpoints, predict_line
from lineflow.synth import (
    GroundTruth,
    SceneSpec,
    ground_truth,
    lcg_stream,
    occlusion_fraction,
    render_frame,
    render_sequence,
    scene_intensity,
)

BASE = {"width": 160, "height": 120, "noise": {"seed": 4},
        "lines": [{"s": [20, 30], "e": [140, 40]}, {"s": [30, 100], "e": [60, 60]}]}


def spec_with(**kw):
    return SceneSpec.from_dict({**BASE, **kw})


def test_lcg_reference_values():
    x, ref = 42, []
    for _ in range(4):
        x = (6364136223846793005 * x + 1442695040888963407) % 2**64
        ref.append((x >> 40) / 2**24)
    assert lcg_stream(42, 4).tolist() == ref
    assert np.all((lcg_stream(7, 1000) >= 0) & (lcg_stream(7, 1000) < 1))


def test_render_is_deterministic():
    spec = spec_with(motion={"type": "translation", "steps": [[1.5, 0.5]]})
    a, b = render_frame(spec, 1), render_frame(spec, 1)
    assert np.array_equal(a.to_uint8(), b.to_uint8())
    assert np.array_equal(render_sequence(spec)[1].to_uint8(), a.to_uint8())


def test_identity_frame_equals_direct_rasterisation():
    spec = spec_with(motion={"type": "static", "frames": 2})
    U, V = np.meshgrid(np.arange(160.0), np.arange(120.0))
    direct = np.clip(np.rint(scene_intensity(spec, U, V)), 0, 255).astype(np.uint8)
    assert np.array_equal(render_frame(spec, 0).to_uint8(), direct)
    assert np.array_equal(render_frame(spec, 1).to_uint8(), direct)


def test_translation_correlation_peak():
    spec = spec_with(motion={"type": "translation", "steps": [[5, 0]]})
    f0, f1 = render_frame(spec, 0).data, render_frame(spec, 1).data
    best, arg = np.inf, None
    for du in range(-8, 9):
        for dv in range(-8, 9):
            a = f0[20:100, 20:140]
            b = f1[20 + dv:100 + dv, 20 + du:140 + du]
            ssd = np.sum((a - b) ** 2)
            if ssd < best:
                best, arg = ssd, (du, dv)
    assert arg == (5, 0)
    assert best == 0


def test_ground_truth_static_and_translation():
    gt = ground_truth(spec_with(motion={"type": "static", "frames": 3}))
    for f in range(3):
        assert gt.frames[f][0]["s"] == [20.0, 30.0] and gt.frames[f][0]["e"] == [140.0, 40.0]
    gt = ground_truth(spec_with(motion={"type": "translation", "steps": [[2.5, -1], [1, 1]]}))
    assert np.allclose(gt.segment(2, 1).start - gt.segment(0, 1).start, [3.5, 0.0], atol=1e-12)
    assert np.allclose(gt.segment(2, 1).end - gt.segment(0, 1).end, [3.5, 0.0], atol=1e-12)
    assert np.allclose(gt.homographies[0].h, np.eye(3))


def test_ground_truth_consistent_with_prediction():
    spec = spec_with(width=320, height=240, lines=[{"s": [100, 80], "e": [220, 95]}],
                     motion={"type": "rotation", "intrinsics": {"fx": 300, "fy": 300, "cx": 160, "cy": 120},
                             "axis": [0.2, 1, 0.1], "degrees_per_frame": 1.0, "frames": 4})
    gt = ground_truth(spec)
    l0 = line_from_endpoints(gt.segment(0, 0))
    for f in range(1, 4):
        lf = predict_line(gt.homographies[f], l0)
        seg = gt.segment(f, 0)
        assert abs(lf.residual(seg.start)) < 1e-9 and abs(lf.residual(seg.end)) < 1e-9
        # relative rotations chain into the absolute homography
        rel = predict_line(gt.homographies[f] @ gt.homographies[f - 1].inverse(), line_from_endpoints(gt.segment(f - 1, 0)))
        assert abs(rel.residual(seg.start)) < 1e-9


def test_occlusion_fraction_middle_third():
    assert occlusion_fraction((30, 50), (120, 50), [(60, 40, 90, 60)]) == pytest.approx(1 / 3, abs=1e-6)
    # overlapping rectangles are unioned
    assert occlusion_fraction((0, 0), (100, 0), [(10, -1, 30, 1), (20, -1, 40, 1)]) == pytest.approx(0.3)
    spec = spec_with(lines=[{"s": [30, 50], "e": [120, 50]}],
                     occluders=[{"rect": [60, 40, 90, 60]}], motion={"type": "static", "frames": 1})
    assert ground_truth(spec).frames[0][0]["occlusion"] == pytest.approx(1 / 3, abs=1e-6)


def test_edge_profiles_are_monotone():
    spec = spec_with(motion={"type": "static", "frames": 1})
    for ln in spec.lines:
        seg = LineSegment(ln.s, ln.e)
        d = seg.direction
        n = np.array([-d[1], d[0]])
        for t in np.linspace(0.2, 0.8, 10):
            p = seg.start + t * (seg.end - seg.start)
            offs = np.linspace(-1.5, 1.5, 31)
            prof = scene_intensity(spec, p[0] + offs * n[0], p[1] + offs * n[1])
            steps = np.diff(prof) * np.sign(ln.contrast)
            assert np.all(steps > 0)


def test_occluder_is_drawn_on_top():
    spec = spec_with(occluders=[{"rect": [70, 20, 100, 50], "translation": [2, 0], "intensity": 30}],
                     motion={"type": "static", "frames": 2})
    assert render_frame(spec, 0).data[35, 85] == 30
    assert render_frame(spec, 1).data[35, 100] == 30


@pytest.mark.parametrize("bad,match", [
    ({"occluders": [{"rect": [150, 10, 170, 20]}]}, "occluder 0"),
    ({"lines": [{"s": [20, 30], "e": [170, 40]}]}, "line 0"),
    ({"motion": {"type": "warp"}}, "unknown motion"),
    ({"lines": [{"s": [20, 30]}]}, "malformed"),
    ({"motion": {"type": "translation", "steps": [[50, 0]]}}, "leaves the canvas at frame 1"),
])
def test_spec_validation(bad, match):
    with pytest.raises(SceneSpecError, match=match):
        SceneSpec.from_dict({**BASE, **bad})


def test_frame_out_of_range():
    with pytest.raises(FrameOutOfRange):
        render_frame(spec_with(), 1)


def test_ground_truth_json_round_trip(tmp_path):
    spec = spec_with(motion={"type": "rotation", "intrinsics": {"fx": 300, "fy": 300, "cx": 80, "cy": 60},
                             "axis": [0, 1, 0], "degrees_per_frame": 0.5, "frames": 3})
    gt = ground_truth(spec)
    gt.save(tmp_path / "gt.json")
    back = GroundTruth.load(tmp_path / "gt.json")
    assert back.to_dict() == json.loads(json.dumps(gt.to_dict()))
    assert np.allclose(back.rotations[2], gt.rotations[2])
