"""Deterministic synthetic sequences with exact line ground truth.

The scene lives in frame-0 coordinates as a continuous intensity model:

* a constant background plus band-limited value noise whose lattice is
  filled by a 64-bit linear congruential generator
  (``x <- 6364136223846793005 * x + 1442695040888963407 mod 2**64``; the
  lattice value is ``(x >> 40) / 2**24``), interpolated with smoothstep
  weights;
* blurred step edges along each line segment. Across the line the profile is
  ``contrast * (Phi(dist / blur) - 1/2) * exp(-dist^2 / (2 fade^2))`` and it is
  cut off at the endpoints by ``Phi(t / blur) * Phi((L - t) / blur)``.

Frame ``f`` is rendered by mapping each pixel through ``H_f^-1`` into the
scene and evaluating the model there (warp, then rasterize), after which
occluder rectangles are composited in image coordinates.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .exceptions import FrameOutOfRange, SceneSpecError
from .geometry import (
    Homography,
    Intrinsics,
    LineSegment,
    clip_segment,
    homography_from_rotation,
    rotation_matrix,
)
from .image import Image

LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407
_MASK64 = (1 << 64) - 1


def lcg_stream(seed: int, count: int) -> np.ndarray:
    """``count`` uniforms in ``[0, 1)`` from the documented 64-bit LCG."""
    x = int(seed) & _MASK64
    out = np.empty(count, dtype=np.float64)
    for i in range(count):
        x = (LCG_MULTIPLIER * x + LCG_INCREMENT) & _MASK64
        out[i] = (x >> 40) / float(1 << 24)
    return out


@dataclass
class LineSpec:
    s: tuple
    e: tuple
    contrast: float = 80.0
    blur: float = 1.0


@dataclass
class OccluderSpec:
    rect: tuple  # (u0, v0, u1, v1) at frame 0, image coordinates
    translation: tuple = (0.0, 0.0)  # per frame
    intensity: float = 40.0

    def rect_at(self, frame: int):
        u0, v0, u1, v1 = self.rect
        du, dv = self.translation
        return (u0 + frame * du, v0 + frame * dv, u1 + frame * du, v1 + frame * dv)


@dataclass
class SceneSpec:
    width: int = 320
    height: int = 240
    background: float = 128.0
    seed: int = 1
    noise_amplitude: float = 15.0
    noise_cell: float = 8.0
    fade: float = 20.0
    lines: list = field(default_factory=list)
    occluders: list = field(default_factory=list)
    homographies: list = field(default_factory=list)  # frame 0 -> frame f
    intrinsics: Intrinsics = None
    rotations: list = None  # relative rotation f-1 -> f, when the motion is rotational
    name: str = ""

    @property
    def n_frames(self) -> int:
        return len(self.homographies)

    def validate(self):
        if self.width < 16 or self.height < 16:
            raise SceneSpecError("canvas must be at least 16x16")
        if not self.homographies:
            raise SceneSpecError("motion defines no frames")
        if not np.allclose(self.homographies[0].h / self.homographies[0].h[2, 2], np.eye(3), atol=1e-12):
            raise SceneSpecError("frame-0 homography must be the identity")
        W, Ht = self.width - 1, self.height - 1
        for i, ln in enumerate(self.lines):
            if math.hypot(ln.e[0] - ln.s[0], ln.e[1] - ln.s[1]) < 2.0:
                raise SceneSpecError(f"line {i} is shorter than 2 px")
            if ln.blur <= 0:
                raise SceneSpecError(f"line {i} has non-positive blur")
            for f, H in enumerate(self.homographies):
                pts = H.apply(np.array([ln.s, ln.e], dtype=np.float64))
                if np.any(pts < 0) or np.any(pts[:, 0] > W) or np.any(pts[:, 1] > Ht):
                    raise SceneSpecError(f"line {i} leaves the canvas at frame {f}")
        for i, occ in enumerate(self.occluders):
            u0, v0, u1, v1 = occ.rect
            if not (u1 > u0 and v1 > v0):
                raise SceneSpecError(f"occluder {i} has an empty rectangle")
            for f in range(self.n_frames):
                a0, b0, a1, b1 = occ.rect_at(f)
                if a0 < 0 or b0 < 0 or a1 > W or b1 > Ht:
                    raise SceneSpecError(f"occluder {i} lies outside the canvas at frame {f}")
        return self

    # ------------------------------------------------------------------ JSON
    @classmethod
    def from_dict(cls, obj) -> "SceneSpec":
        try:
            noise = obj.get("noise", {})
            lines = [LineSpec(tuple(l["s"]), tuple(l["e"]), float(l.get("contrast", 80.0)),
                              float(l.get("blur", 1.0))) for l in obj.get("lines", [])]
            occs = [OccluderSpec(tuple(o["rect"]), tuple(o.get("translation", (0.0, 0.0))),
                                 float(o.get("intensity", 40.0))) for o in obj.get("occluders", [])]
            homs, intr, rots = _motion(obj.get("motion", {"type": "static", "frames": 1}))
            spec = cls(
                width=int(obj.get("width", 320)),
                height=int(obj.get("height", 240)),
                background=float(obj.get("background", 128.0)),
                seed=int(noise.get("seed", obj.get("seed", 1))),
                noise_amplitude=float(noise.get("amplitude", 15.0)),
                noise_cell=float(noise.get("cell", 8.0)),
                fade=float(obj.get("fade", 20.0)),
                lines=lines,
                occluders=occs,
                homographies=homs,
                intrinsics=intr,
                rotations=rots,
                name=str(obj.get("name", "")),
            )
        except SceneSpecError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise SceneSpecError(f"malformed scene spec: {exc!r}") from exc
        return spec.validate()

    @classmethod
    def load(cls, path) -> "SceneSpec":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SceneSpecError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(obj)


def _motion(m):
    kind = m.get("type", "static")
    if kind == "static":
        return [Homography.identity() for _ in range(int(m.get("frames", 1)))], None, None
    if kind == "translation":
        homs = [Homography.identity()]
        tu = tv = 0.0
        for du, dv in m["steps"]:
            tu += float(du)
            tv += float(dv)
            homs.append(Homography.translation(tu, tv))
        return homs, None, None
    if kind == "rotation":
        K = Intrinsics(**m["intrinsics"])
        steps = m.get("steps")
        if steps is None:
            n = int(m["frames"]) - 1
            steps = [{"axis": m["axis"], "degrees": m["degrees_per_frame"]}] * n
        R = np.eye(3)
        homs = [Homography.identity()]
        rots = [np.eye(3)]
        for st in steps:
            Rs = rotation_matrix(st["axis"], math.radians(float(st["degrees"])))
            R = Rs @ R
            rots.append(Rs)
            homs.append(homography_from_rotation(K, R))
        return homs, K, rots
    if kind == "homography":
        return [Homography.from_list(h) for h in m["matrices"]], None, None
    raise SceneSpecError(f"unknown motion type {kind!r}")


# ---------------------------------------------------------------------- noise

class _ValueNoise:
    def __init__(self, spec: SceneSpec):
        self.cell = spec.noise_cell
        self.amp = spec.noise_amplitude
        gw = int(math.ceil(3 * spec.width / self.cell)) + 1
        gh = int(math.ceil(3 * spec.height / self.cell)) + 1
        self.origin = (-float(spec.width), -float(spec.height))
        vals = lcg_stream(spec.seed, gw * gh) if self.amp else np.full(gw * gh, 0.5)
        self.grid = (vals.reshape(gh, gw) - 0.5) * self.amp

    def __call__(self, X, Y):
        if not self.amp:
            return np.zeros_like(X)
        gh, gw = self.grid.shape
        x = (X - self.origin[0]) / self.cell
        y = (Y - self.origin[1]) / self.cell
        x0 = np.floor(x)
        y0 = np.floor(y)
        fx = x - x0
        fy = y - y0
        sx = fx * fx * (3 - 2 * fx)
        sy = fy * fy * (3 - 2 * fy)
        i0 = np.mod(x0.astype(np.int64), gw)
        j0 = np.mod(y0.astype(np.int64), gh)
        i1 = np.mod(i0 + 1, gw)
        j1 = np.mod(j0 + 1, gh)
        g = self.grid
        top = g[j0, i0] * (1 - sx) + g[j0, i1] * sx
        bot = g[j1, i0] * (1 - sx) + g[j1, i1] * sx
        return top * (1 - sy) + bot * sy


def scene_intensity(spec: SceneSpec, X, Y, noise: _ValueNoise = None):
    """Continuous scene model at frame-0 coordinates (no occluders)."""
    noise = noise or _ValueNoise(spec)
    out = spec.background + noise(X, Y)
    for ln in spec.lines:
        s = np.asarray(ln.s, dtype=np.float64)
        e = np.asarray(ln.e, dtype=np.float64)
        L = float(np.linalg.norm(e - s))
        t_dir = (e - s) / L
        n_dir = np.array([-t_dir[1], t_dir[0]])
        dx, dy = X - s[0], Y - s[1]
        t = dx * t_dir[0] + dy * t_dir[1]
        dist = dx * n_dir[0] + dy * n_dir[1]
        along = ndtr(t / ln.blur) * ndtr((L - t) / ln.blur)
        across = (ndtr(dist / ln.blur) - 0.5) * np.exp(-dist * dist / (2.0 * spec.fade ** 2))
        out = out + ln.contrast * across * along
    return out


def _occluder_coverage(rect, U, V, blur=0.5):
    u0, v0, u1, v1 = rect
    cu = ndtr((U - u0) / blur) - ndtr((U - u1) / blur)
    cv = ndtr((V - v0) / blur) - ndtr((V - v1) / blur)
    return cu * cv


def render_frame(spec: SceneSpec, frame: int, noise: _ValueNoise = None) -> Image:
    if not 0 <= frame < spec.n_frames:
        raise FrameOutOfRange(f"frame {frame} outside 0..{spec.n_frames - 1}")
    U, V = np.meshgrid(np.arange(spec.width, dtype=np.float64), np.arange(spec.height, dtype=np.float64))
    Hinv = spec.homographies[frame].inverse_matrix
    x = Hinv[0, 0] * U + Hinv[0, 1] * V + Hinv[0, 2]
    y = Hinv[1, 0] * U + Hinv[1, 1] * V + Hinv[1, 2]
    w = Hinv[2, 0] * U + Hinv[2, 1] * V + Hinv[2, 2]
    img = scene_intensity(spec, x / w, y / w, noise)
    for occ in spec.occluders:
        c = _occluder_coverage(occ.rect_at(frame), U, V)
        img = (1.0 - c) * img + c * occ.intensity
    return Image(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def render_sequence(spec: SceneSpec):
    noise = _ValueNoise(spec)
    return [render_frame(spec, f, noise) for f in range(spec.n_frames)]


# ---------------------------------------------------------------- ground truth

@dataclass
class GroundTruth:
    width: int
    height: int
    homographies: list
    # frames[f] is a list of dicts {id, frame, s, e, occlusion} (None when clipped away)
    frames: list
    intrinsics: Intrinsics = None
    rotations: list = None

    @property
    def n_frames(self):
        return len(self.frames)

    def segment(self, frame, line_id):
        rec = self.frames[frame][line_id]
        if rec is None:
            return None
        return LineSegment(tuple(rec["s"]), tuple(rec["e"]))

    def to_dict(self):
        out = {
            "width": self.width,
            "height": self.height,
            "n_frames": self.n_frames,
            "frames": [
                {"frame": f, "homography": self.homographies[f].as_list(),
                 "lines": [r for r in recs if r is not None]}
                for f, recs in enumerate(self.frames)
            ],
        }
        if self.intrinsics is not None:
            K = self.intrinsics
            out["intrinsics"] = {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy}
            out["rotations"] = [[float(x) for x in np.asarray(R).ravel()] for R in self.rotations]
        return out

    @classmethod
    def from_dict(cls, obj):
        frames = []
        homs = []
        n_lines = 0
        for fr in obj["frames"]:
            n_lines = max([n_lines] + [int(r["id"]) + 1 for r in fr["lines"]])
        for fr in obj["frames"]:
            recs = [None] * n_lines
            for r in fr["lines"]:
                recs[int(r["id"])] = r
            frames.append(recs)
            homs.append(Homography.from_list(fr["homography"]))
        intr = rots = None
        if "intrinsics" in obj:
            intr = Intrinsics(**obj["intrinsics"])
            rots = [np.asarray(r, dtype=np.float64).reshape(3, 3) for r in obj["rotations"]]
        return cls(int(obj["width"]), int(obj["height"]), homs, frames, intr, rots)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def occlusion_fraction(s, e, rects) -> float:
    """Fraction of segment ``s-e`` covered by the union of axis-aligned rectangles."""
    s = np.asarray(s, dtype=np.float64)
    d = np.asarray(e, dtype=np.float64) - s
    intervals = []
    for u0, v0, u1, v1 in rects:
        lo, hi = 0.0, 1.0
        ok = True
        for axis, (a, b) in enumerate(((u0, u1), (v0, v1))):
            if d[axis] == 0.0:
                if not a <= s[axis] <= b:
                    ok = False
                continue
            t0, t1 = (a - s[axis]) / d[axis], (b - s[axis]) / d[axis]
            lo, hi = max(lo, min(t0, t1)), min(hi, max(t0, t1))
        if ok and hi > lo:
            intervals.append((lo, hi))
    intervals.sort()
    total, cur_lo, cur_hi = 0.0, None, None
    for lo, hi in intervals:
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo
    return total


def ground_truth(spec: SceneSpec) -> GroundTruth:
    frames = []
    for f, H in enumerate(spec.homographies):
        rects = [o.rect_at(f) for o in spec.occluders]
        recs = []
        for i, ln in enumerate(spec.lines):
            pts = H.apply(np.array([ln.s, ln.e], dtype=np.float64))
            clipped = clip_segment(pts[0], pts[1], spec.width, spec.height)
            if clipped is None or np.linalg.norm(clipped[1] - clipped[0]) < 2.0:
                recs.append(None)
                continue
            s, e = clipped
            recs.append({
                "id": i,
                "frame": f,
                "s": [float(s[0]), float(s[1])],
                "e": [float(e[0]), float(e[1])],
                "occlusion": occlusion_fraction(s, e, rects),
            })
        frames.append(recs)
    return GroundTruth(spec.width, spec.height, list(spec.homographies), frames,
                       spec.intrinsics, spec.rotations)
