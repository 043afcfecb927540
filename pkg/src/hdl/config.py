"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import re
from dataclasses import dataclass, fields, replace

from .grid import DiskGrid


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


_GRID_RE = re.compile(r"^\s*(\d+)\s*x\s*(\d+)\s*@\s*([0-9.eE+-]+)\s*$")


def parse_grid(text: str) -> DiskGrid:
    """``"<n_r>x<n_theta>@<r_max>"`` to a grid."""
    m = _GRID_RE.match(text)
    if not m:
        raise ValueError(f"grid must look like 64x128@0.95, got {text!r}")
    return DiskGrid(int(m.group(1)), int(m.group(2)), float(m.group(3)))


def format_grid(grid: DiskGrid) -> str:
    return f"{grid.n_r}x{grid.n_theta}@{grid.r_max!r}"


@dataclass(frozen=True)
class RunConfig:
    grid: DiskGrid = DiskGrid(64, 128, 0.95)
    curvature: str = "constant:-1"
    boundary: str = "identity"
    metric_tol: float = 1e-10
    map_tol: float = 1e-8
    steps: int = 11
    seed: int = 0
    budget: float = 0.5
    init: str = "douady-earle"
    out: str | None = None
    report: str | None = None
    plot_data: str | None = None

    def __post_init__(self):
        for name in ("metric_tol", "map_tol", "budget"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.steps < 2:
            raise ValueError("steps must be at least 2")

    def updated(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


_CASTS = {
    "grid": parse_grid,
    "metric_tol": float,
    "map_tol": float,
    "budget": float,
    "steps": int,
    "seed": int,
}


def parse_config(text: str, required=()) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Errors carry line numbers."""
    known = {f.name for f in fields(RunConfig)}
    values: dict = {}
    lines: dict = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", n)
        key, _, val = (p.strip() for p in line.partition("="))
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", n)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", n)
        try:
            values[key] = _CASTS.get(key, str)(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", n) from None
        lines[key] = n
        try:
            RunConfig(**{key: values[key]})
        except ValueError as exc:
            raise ConfigError(str(exc), n) from None
    missing = [k for k in required if k not in values]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
