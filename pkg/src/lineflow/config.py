"""Run configuration: ``key = value`` files with ``#`` comments."""
from __future__ import annotations

from pathlib import Path

from .exceptions import ConfigError
from .tracker import LineFlowTracker

# Tunables surfaced in config files; n_jobs and diagnostics are CLI flags.
_RUNTIME_ONLY = {"n_jobs", "keep_diagnostics"}
EVAL_DEFAULTS = {"threshold": 5.0, "min_overlap": 0.5}

DESCRIPTIONS = {
    "n_lines": "target number of live lines per frame",
    "spacing": "sample spacing along a line (px)",
    "min_points": "minimum sample points per line",
    "max_points": "maximum sample points per line",
    "grad_threshold": "gradient magnitude threshold",
    "angle_threshold_deg": "gradient/line angle threshold (deg)",
    "remediation_step": "step when moving a rejected sample (px)",
    "remediation_max_steps": "remediation attempts per side",
    "corner_min_eig": "minimum structure-tensor eigenvalue for a corner",
    "edge_ratio": "eigenvalue ratio for an edge",
    "half_window": "template half width (px)",
    "max_iterations": "iterations per alignment phase",
    "point_epsilon": "point convergence (px)",
    "angle_epsilon": "line angle convergence (rad)",
    "distance_epsilon": "line distance convergence (px)",
    "convergence_fraction": "fraction of converged points ending phase one",
    "structural_weight": "weight of the point-on-line residual",
    "pyramid_scale": "pyramid scale factor",
    "pyramid_height": "pyramid levels",
    "two_step": "run the second alignment phase on converged points",
    "high_eig_filter": "drop level-0 points with very large minimum eigenvalue",
    "high_eig_factor": "multiple of corner_min_eig used by that filter",
    "rotation_cap": "maximum number of rotation candidates",
    "rotation_steps_per_degree": "rotation candidates per degree of deviation",
    "extension_step": "endpoint march step (px)",
    "extension_max": "maximum endpoint march per side (px)",
    "photometric_window": "half width of the anchor-selection window (px)",
    "refine_orientation": "run orientation/position refinement",
    "extend_endpoints": "march endpoints outward",
    "exclusion_radius": "dilation of live lines when replenishing (px)",
    "exclusion_overlap": "maximum overlap with that mask for a new line",
    "threshold": "correct-match distance threshold (px)",
    "min_overlap": "correct-match overlap fraction",
}


def defaults() -> dict:
    params = {k: v for k, v in LineFlowTracker().get_params().items() if k not in _RUNTIME_ONLY}
    return {**params, **EVAL_DEFAULTS}


def _coerce(key, text, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


class RunConfig(dict):
    """Mapping of every tunable to its value, starting from the defaults."""

    def __init__(self, **overrides):
        super().__init__(defaults())
        for k, v in overrides.items():
            self.set(k, v)

    def set(self, key, value):
        base = defaults()
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        self[key] = _coerce(key, value, base[key]) if isinstance(value, str) else type(base[key])(value)

    def update_from_text(self, text: str, source: str = "<config>"):
        for no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{no}: expected key = value")
            key, value = (x.strip() for x in line.split("=", 1))
            try:
                self.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{no}: {exc}") from None
        return self

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls().update_from_text(text, str(path))

    def apply_overrides(self, pairs):
        for pair in pairs or ():
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} must look like key=value")
            k, v = pair.split("=", 1)
            self.set(k.strip(), v)
        return self

    def tracker_params(self) -> dict:
        return {k: v for k, v in self.items() if k not in EVAL_DEFAULTS}

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())


def describe_keys() -> str:
    lines = ["config keys (key = default):"]
    for k, v in defaults().items():
        lines.append(f"  {k} = {v}    {DESCRIPTIONS.get(k, '')}".rstrip())
    return "\n".join(lines)
