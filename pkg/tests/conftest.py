import functools
from pathlib import Path

import numpy as np
import pytest

from lineflow.image import Image
from lineflow.synth import SceneSpec, ground_truth, render_sequence

GOLDEN = Path(__file__).resolve().parent.parent / "golden"


@functools.lru_cache(maxsize=None)
def golden(name):
    """(spec, frames, ground truth) for a committed golden scene; cached per session."""
    spec = SceneSpec.load(GOLDEN / f"{name}.json")
    return spec, render_sequence(spec), ground_truth(spec)


def smooth_texture(seed, width=64, height=64, cutoff=6):
    """Band-limited random image in [20, 235] built from a few low-frequency cosines."""
    rng = np.random.default_rng(seed)
    U, V = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    img = np.full((height, width), 128.0)
    for _ in range(cutoff):
        fu, fv = rng.uniform(-0.25, 0.25, size=2)
        img += rng.uniform(10, 25) * np.cos(fu * U + fv * V + rng.uniform(0, 2 * np.pi))
    return Image(np.clip(img, 0, 255))


def step_edge(width=80, height=80, angle=0.0, offset=(40.0, 40.0), contrast=80.0, sigma=1.0):
    """Blurred straight edge through ``offset`` with direction ``angle``."""
    from scipy.special import ndtr

    U, V = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    n = np.array([-np.sin(angle), np.cos(angle)])
    dist = (U - offset[0]) * n[0] + (V - offset[1]) * n[1]
    return Image(100.0 + contrast * ndtr(dist / sigma))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
