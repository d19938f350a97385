"""Parameter randomization (cal / ext / rand) and custom physics effects.

Custom effects are applied per step in a fixed order:
latency -> backlash -> action noise -> dynamics with wind torque -> freeze.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Dict, List, Sequence

import numpy as np

from .core import InvariantError

MAX_LATENCY = 16


class SamplingMode(str, Enum):
    CAL = "cal"
    EXT = "ext"
    RAND = "rand"


class CustomLevel(str, Enum):
    NONE = "none"
    PARTIAL = "partial"
    ALL = "all"


EFFECTS_BY_LEVEL = {
    CustomLevel.NONE: frozenset(),
    CustomLevel.PARTIAL: frozenset({"latency", "noise"}),
    CustomLevel.ALL: frozenset({"freeze", "backlash", "wind", "latency", "noise"}),
}


@dataclass(frozen=True)
class ParamRange:
    name: str
    calibration: float
    half_width: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.calibration) and math.isfinite(self.half_width)) or self.half_width < 0:
            raise InvariantError(f"bad range for {self.name}: half_width must be finite and >= 0")

    @property
    def lo(self) -> float:
        return self.calibration - self.half_width

    @property
    def hi(self) -> float:
        return self.calibration + self.half_width

    def draw(self, mode: SamplingMode, rng) -> float:
        if mode == SamplingMode.CAL:
            return self.calibration
        if mode == SamplingMode.EXT:
            return self.hi if rng.random() < 0.5 else self.lo
        if self.half_width == 0.0:
            return self.calibration
        return float(rng.uniform(self.lo, self.hi))


@dataclass(frozen=True)
class EffectParams:
    """Realised custom-physics values for one episode; zeros disable an effect."""

    latency: int = 0
    backlash: float = 0.0
    noise: float = 0.0
    wind_kappa: float = 0.0
    wind_sigma: float = 0.0
    freeze_prob: float = 0.0
    freeze_duration: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise InvariantError(f"effect parameter {f.name} must be finite and >= 0")
        if self.latency > MAX_LATENCY:
            raise InvariantError(f"latency above {MAX_LATENCY} steps")
        if self.wind_kappa > 1 or self.freeze_prob > 1:
            raise InvariantError("wind_kappa and freeze_prob must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    def is_identity(self) -> bool:
        return not (self.latency or self.backlash or self.noise or self.wind_sigma or (self.freeze_prob and self.freeze_duration))


_EFFECT_OF = {
    "latency": "latency",
    "backlash": "backlash",
    "noise": "noise",
    "wind_kappa": "wind",
    "wind_sigma": "wind",
    "freeze_prob": "freeze",
    "freeze_duration": "freeze",
}
_INTEGER_EFFECTS = {"latency", "freeze_duration"}


@dataclass(frozen=True)
class CustomPhysicsSet:
    level: CustomLevel = CustomLevel.NONE
    effects: EffectParams = field(default_factory=EffectParams)

    def active(self) -> EffectParams:
        """Effect values with everything outside ``level`` switched off."""
        on = EFFECTS_BY_LEVEL[CustomLevel(self.level)]
        kept = {k: v for k, v in asdict(self.effects).items() if _EFFECT_OF[k] in on}
        return EffectParams(**kept)


def default_effect_ranges() -> Dict[str, ParamRange]:
    return {
        "latency": ParamRange("latency", 1.0, 1.0),
        "backlash": ParamRange("backlash", 0.15, 0.1),
        "noise": ParamRange("noise", 0.1, 0.05),
        "wind_kappa": ParamRange("wind_kappa", 0.1, 0.0),
        "wind_sigma": ParamRange("wind_sigma", 0.15, 0.05),
        "freeze_prob": ParamRange("freeze_prob", 0.02, 0.01),
        "freeze_duration": ParamRange("freeze_duration", 10.0, 5.0),
    }


def default_block_ranges() -> List[ParamRange]:
    return [
        ParamRange("inertia", 0.1, 0.03),
        ParamRange("damping", 0.05, 0.015),
        ParamRange("torque_scale", 1.0, 0.3),
        ParamRange("friction", 0.05, 0.05),
        ParamRange("gravity_bias", 0.0, 0.2),
    ]


@dataclass(frozen=True)
class RandomizationConfig:
    ranges: Sequence[ParamRange] = ()
    mode: SamplingMode = SamplingMode.CAL
    custom: CustomLevel = CustomLevel.NONE
    effect_ranges: Dict[str, ParamRange] = field(default_factory=default_effect_ranges)

    def __post_init__(self):
        object.__setattr__(self, "ranges", tuple(self.ranges))
        object.__setattr__(self, "mode", SamplingMode(self.mode))
        object.__setattr__(self, "custom", CustomLevel(self.custom))
        names = [r.name for r in self.ranges]
        if len(set(names)) != len(names):
            raise InvariantError("duplicate parameter names in randomization ranges")
        unknown = set(self.effect_ranges) - set(_EFFECT_OF)
        if unknown:
            raise InvariantError(f"unknown custom-physics parameters: {sorted(unknown)}")

    def with_cell(self, mode, custom) -> "RandomizationConfig":
        return replace(self, mode=SamplingMode(mode), custom=CustomLevel(custom))

    @property
    def cell(self) -> str:
        return f"{self.mode.value},{self.custom.value}"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "custom": self.custom.value,
            "ranges": [asdict(r) for r in self.ranges],
            "effect_ranges": {k: asdict(v) for k, v in sorted(self.effect_ranges.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomizationConfig":
        eff = default_effect_ranges()
        for k, v in (d.get("effect_ranges") or {}).items():
            eff[k] = ParamRange(**{"name": k, **{kk: vv for kk, vv in v.items() if kk != "name"}})
        return cls(
            ranges=[ParamRange(**r) for r in d.get("ranges", [])],
            mode=d.get("mode", "cal"),
            custom=d.get("custom", "none"),
            effect_ranges=eff,
        )


def parse_cell(text: str):
    """Parse grid notation such as ``rand,partial`` into (mode, custom)."""
    try:
        mode, custom = (p.strip() for p in text.split(","))
        return SamplingMode(mode), CustomLevel(custom)
    except ValueError:
        raise InvariantError(f"bad cell {text!r}; expected '<cal|ext|rand>,<none|partial|all>'") from None


def grid_cells():
    return [(m, c) for m in SamplingMode for c in CustomLevel]


def sample_params(cfg: RandomizationConfig, rng, base):
    """Draw physical parameters; unlisted parameters keep their ``base`` value."""
    names = set(base.names())
    values = {}
    for r in cfg.ranges:
        if r.name not in names:
            raise KeyError(f"unknown parameter {r.name!r}")
        values[r.name] = base.clamp(r.name, r.draw(cfg.mode, rng))
    return base.with_values(values)


def sample_custom(cfg: RandomizationConfig, rng) -> CustomPhysicsSet:
    """Draw custom-physics values for one episode with the config's sampling mode."""
    if cfg.custom == CustomLevel.NONE:
        return CustomPhysicsSet()
    on = EFFECTS_BY_LEVEL[cfg.custom]
    vals = {}
    for name in (f.name for f in fields(EffectParams)):
        r = cfg.effect_ranges.get(name)
        if r is None or _EFFECT_OF[name] not in on:
            continue
        v = r.draw(cfg.mode, rng)
        if name in _INTEGER_EFFECTS:
            v = int(round(v))
        vals[name] = min(max(v, 0), 1.0) if name in ("wind_kappa", "freeze_prob") else max(v, 0)
    return CustomPhysicsSet(cfg.custom, EffectParams(**vals))


class CustomPhysicsWrapper:
    """Environment wrapper applying custom physics effects.

    Holds per-episode buffers (latency FIFO, wind state, freeze counter), so
    one instance serves one episode at a time. Every step draws
    ``action_dim + 1`` standard normals and one uniform from ``rng`` whether
    or not the corresponding effects are active.
    """

    def __init__(self, env, effects: EffectParams, rng):
        self.env = env
        self.effects = effects
        self.rng = rng
        self.action_dim = env.action_dim
        self.state_dim = env.state_dim
        self._reset_buffers()

    @property
    def horizon(self):
        return self.env.horizon

    @horizon.setter
    def horizon(self, value):
        self.env.horizon = value

    def _reset_buffers(self):
        L = self.effects.latency
        self._fifo = deque([np.zeros(self.action_dim) for _ in range(L)])
        self._wind = 0.0
        self._frozen_left = 0

    def reset(self, params, rng):
        self._reset_buffers()
        return self.env.reset(params, rng)

    def step(self, params, state, action, rng=None):
        e = self.effects
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if e.latency:
            self._fifo.append(a)
            a = self._fifo.popleft()
        out = []
        for x in a.tolist():
            m = abs(x) - e.backlash
            out.append(((x > 0.0) - (x < 0.0)) * (m if m > 0.0 else 0.0))
        eps = self.rng.standard_normal(self.action_dim)
        a = np.array([out[i] + e.noise * float(eps[i]) for i in range(self.action_dim)])
        xi = float(self.rng.standard_normal())
        w = self._wind
        self._wind = (1.0 - e.wind_kappa) * w + e.wind_sigma * xi
        u = float(self.rng.random())
        if self._frozen_left == 0 and u < e.freeze_prob:
            self._frozen_left = e.freeze_duration
        if self._frozen_left > 0:
            self._frozen_left -= 1
            return self.env.hold(state)
        return self.env.step(params, state, a, rng, disturbance=w)

    def hold(self, state):
        return self.env.hold(state)

    def termination(self, state):
        return self.env.termination(state)

    def successes(self, state):
        return self.env.successes(state)


def wrap_custom(env, custom: CustomPhysicsSet, rng):
    """Wrap ``env`` with the active effects of ``custom``; ``none`` returns ``env`` itself."""
    effects = custom.active()
    if CustomLevel(custom.level) == CustomLevel.NONE:
        return env
    return CustomPhysicsWrapper(env, effects, rng)
