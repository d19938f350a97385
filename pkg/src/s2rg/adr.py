"""Automatic domain randomization with boundary sampling."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .core import InvariantError
from .randomization import ParamRange

LO, HI = "lo", "hi"
Tag = Tuple[str, str]


@dataclass
class AdrState:
    """Per-parameter bounds plus the performance buffers that move them.

    Bounds start at the calibration value (zero width). ``scale`` sets the
    unit used by :func:`adr_entropy`.
    """

    calibration: Dict[str, float]
    bounds: Dict[str, List[float]]
    step_size: Dict[str, float]
    scale: Dict[str, float]
    capacity: int = 10
    t_low: float = 5.0
    t_high: float = 20.0
    p_boundary: float = 0.5
    buffers: Dict[Tag, List[int]] = field(default_factory=dict)
    updates: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise InvariantError("buffer capacity must be >= 1")
        if not self.t_low < self.t_high:
            raise InvariantError("t_low must be below t_high")
        if not 0.0 <= self.p_boundary <= 1.0:
            raise InvariantError("p_boundary must lie in [0, 1]")
        for name, cal in self.calibration.items():
            lo, hi = self.bounds[name]
            if not lo <= cal <= hi:
                raise InvariantError(f"bounds of {name} do not bracket its calibration value")
            if self.step_size[name] <= 0 or self.scale[name] <= 0:
                raise InvariantError(f"step size and scale of {name} must be positive")
        for tag in self.tags():
            self.buffers.setdefault(tag, [])

    @classmethod
    def from_ranges(cls, ranges: Sequence[ParamRange], step_fraction: float = 0.1, **kw) -> "AdrState":
        """Zero-width state at the calibration values; steps are a fraction of each DR half-width."""
        cal = {r.name: r.calibration for r in ranges}
        steps = {}
        for r in ranges:
            base = r.half_width if r.half_width > 0 else max(abs(r.calibration), 1.0) * 0.1
            steps[r.name] = step_fraction * base
        scale = {r.name: max(abs(r.calibration), 1.0) for r in ranges}
        return cls(cal, {k: [v, v] for k, v in cal.items()}, steps, scale, **kw)

    @property
    def names(self) -> List[str]:
        return list(self.calibration)

    def tags(self) -> List[Tag]:
        return [(n, s) for n in self.calibration for s in (LO, HI)]

    def widths(self) -> Dict[str, float]:
        return {n: self.bounds[n][1] - self.bounds[n][0] for n in self.calibration}

    def copy(self) -> "AdrState":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "calibration": dict(self.calibration),
            "bounds": {k: list(v) for k, v in self.bounds.items()},
            "step_size": dict(self.step_size),
            "scale": dict(self.scale),
            "capacity": self.capacity,
            "t_low": self.t_low,
            "t_high": self.t_high,
            "p_boundary": self.p_boundary,
            "buffers": {f"{n}:{s}": list(v) for (n, s), v in self.buffers.items()},
            "updates": self.updates,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdrState":
        d = dict(d)
        bufs = {tuple(k.split(":")): list(v) for k, v in (d.pop("buffers", None) or {}).items()}
        return cls(buffers=bufs, **d)


def adr_sample(state: AdrState, rng, base, clamp=None) -> Tuple[object, Optional[Tag]]:
    """Sample physical parameters from the current ADR distribution.

    With probability ``p_boundary`` one uniformly chosen (parameter, side) is
    pinned to that bound and returned as the tag.
    """
    clamp = clamp or base.clamp
    tag = None
    if rng.random() < state.p_boundary:
        tags = state.tags()
        tag = tags[int(rng.integers(len(tags)))]
    values = {}
    for name in state.names:
        lo, hi = state.bounds[name]
        if tag is not None and tag[0] == name:
            v = lo if tag[1] == LO else hi
        else:
            v = float(rng.uniform(lo, hi))
        values[name] = clamp(name, v)
    return base.with_values(values), tag


def adr_update(state: AdrState, tag: Tag, episode_successes: int, clamp=None) -> AdrState:
    """Record a boundary episode; move the bound once its buffer fills."""
    if tag not in state.buffers:
        raise KeyError(f"unknown ADR tag {tag!r}")
    new = state.copy()
    buf = new.buffers[tag]
    buf.append(int(episode_successes))
    if len(buf) < new.capacity:
        return new
    m = sum(buf) / len(buf)
    buf.clear()
    name, side = tag
    cal = new.calibration[name]
    lo, hi = new.bounds[name]
    step = new.step_size[name]
    if m >= new.t_high:
        if side == HI:
            hi = hi + step
        else:
            lo = lo - step
            if clamp is not None:
                lo = min(clamp(name, lo), cal)
    elif m <= new.t_low:
        if side == HI:
            hi = max(hi - step, cal)
        else:
            lo = min(lo + step, cal)
    new.bounds[name] = [lo, hi]
    new.updates += 1
    return new


def adr_entropy(state: AdrState) -> float:
    """Mean log-width of the bounds in nats per dimension; ``-inf`` if any width is zero."""
    d = len(state.calibration)
    total = 0.0
    for name in state.calibration:
        lo, hi = state.bounds[name]
        width = hi - lo
        if width <= 0.0:
            return -math.inf
        total += math.log(width / state.scale[name])
    return total / d
