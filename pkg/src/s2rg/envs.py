"""Desk-scale parameterised environments.

``BlockRotate2D`` is a 1-DoF block that must be turned to a sequence of goal
angles; ``LinearSystem`` has linear dynamics and exists so that dynamics
model learning can be checked against a closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Callable, Dict, List, Tuple

import numpy as np

from .core import InvariantError, Trajectory

DT = 0.05
SUCCESS_TOL = 0.1
DROP_OMEGA = 20.0
SUCCESS_BONUS = 5.0
MAX_SUCCESSES = 50
TWO_PI = 2.0 * math.pi


def wrap(x: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    y = math.remainder(x, TWO_PI)
    if y <= -math.pi:
        y += TWO_PI
    return y


def wrap_array(x: np.ndarray) -> np.ndarray:
    y = np.remainder(np.asarray(x, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    return np.where(y <= -math.pi, y + TWO_PI, y)


class Termination(str, Enum):
    MAX_SUCCESSES = "max_successes"
    DROP = "drop"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class EpisodeOutcome:
    successes: int
    terminated_by: Termination

    def __post_init__(self):
        if not 0 <= self.successes <= MAX_SUCCESSES:
            raise InvariantError(f"successes out of range: {self.successes}")


# -- parameters ---------------------------------------------------------------

@dataclass(frozen=True)
class BlockParams:
    inertia: float = 0.1
    damping: float = 0.05
    torque_scale: float = 1.0
    friction: float = 0.05
    gravity_bias: float = 0.0

    def __post_init__(self):
        vals = [getattr(self, f.name) for f in fields(self)]
        if not all(math.isfinite(v) for v in vals):
            raise InvariantError("non-finite physical parameter")
        if self.inertia <= 0 or self.torque_scale <= 0:
            raise InvariantError("inertia and torque_scale must be positive")
        if self.damping < 0 or self.friction < 0:
            raise InvariantError("damping and friction must be non-negative")

    @staticmethod
    def names() -> List[str]:
        return [f.name for f in fields(BlockParams)]

    def get(self, name: str) -> float:
        if name not in self.names():
            raise KeyError(name)
        return getattr(self, name)

    def with_values(self, values: Dict[str, float]) -> "BlockParams":
        for k in values:
            if k not in self.names():
                raise KeyError(k)
        return replace(self, **{k: float(v) for k, v in values.items()})

    @staticmethod
    def clamp(name: str, value: float) -> float:
        if name in ("inertia", "torque_scale"):
            return max(value, 1e-3)
        if name in ("damping", "friction"):
            return max(value, 0.0)
        return value

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names()], dtype=np.float64)

    def to_dict(self) -> Dict[str, float]:
        return {n: getattr(self, n) for n in self.names()}


@dataclass(frozen=True)
class LinearParams:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        B = np.array(self.B, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise InvariantError("A must be n x n and B n x m")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise InvariantError("non-finite system matrix")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    def names(self) -> List[str]:
        n, m = self.B.shape
        return [f"A_{i}_{j}" for i in range(n) for j in range(n)] + [f"B_{i}_{j}" for i in range(n) for j in range(m)]

    def _locate(self, name: str):
        try:
            mat, i, j = name.split("_")
            i, j = int(i), int(j)
            M = {"A": self.A, "B": self.B}[mat]
            M[i, j]
        except (ValueError, KeyError, IndexError):
            raise KeyError(name) from None
        return mat, i, j

    def get(self, name: str) -> float:
        mat, i, j = self._locate(name)
        return float({"A": self.A, "B": self.B}[mat][i, j])

    def with_values(self, values: Dict[str, float]) -> "LinearParams":
        A, B = self.A.copy(), self.B.copy()
        for k, v in values.items():
            mat, i, j = self._locate(k)
            ({"A": A, "B": B}[mat])[i, j] = v
        return LinearParams(A, B)

    @staticmethod
    def clamp(name: str, value: float) -> float:
        return value

    def to_dict(self) -> Dict[str, list]:
        return {"A": self.A.tolist(), "B": self.B.tolist()}

    def __eq__(self, other):
        return isinstance(other, LinearParams) and np.array_equal(self.A, other.A) and np.array_equal(self.B, other.B)

    __hash__ = None


# -- states -------------------------------------------------------------------

@dataclass(frozen=True)
class BlockState:
    """Block angle, angular velocity and goal angle, plus episode counters."""

    theta: float
    omega: float
    goal: float
    t: int = 0
    successes: int = 0

    def vector(self) -> np.ndarray:
        return np.array([self.theta, self.omega, self.goal], dtype=np.float64)


@dataclass(frozen=True)
class LinearState:
    x: np.ndarray
    t: int = 0

    def vector(self) -> np.ndarray:
        return np.array(self.x, dtype=np.float64)


def _check_action(action, dim: int) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape[0] != dim:
        raise InvariantError(f"action has dimension {a.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(a)):
        raise InvariantError("non-finite action")
    return np.clip(a, -1.0, 1.0)


class BlockRotate2D:
    """Rotate a block to randomly drawn goal angles.

    Semi-implicit Euler with ``dt = 0.05``. A goal is reached when the
    wrapped angle error drops below 0.1 rad; a new goal is then drawn. The
    episode ends at 50 successes, when ``|omega|`` exceeds 20 rad/s (the
    analogue of dropping the object) or at the horizon.
    """

    name = "block"
    state_dim = 3
    action_dim = 1
    angular_dims = (0, 2)
    param_type = BlockParams

    def __init__(self, horizon: int = 400):
        if horizon < 1:
            raise InvariantError("horizon must be >= 1")
        self.horizon = int(horizon)

    def default_params(self) -> BlockParams:
        return BlockParams()

    def reset(self, params: BlockParams, rng) -> BlockState:
        if not isinstance(params, BlockParams):
            raise InvariantError("BlockRotate2D needs BlockParams")
        theta = wrap(rng.uniform(-math.pi, math.pi))
        goal = wrap(rng.uniform(-math.pi, math.pi))
        return BlockState(theta, 0.0, goal)

    def step(self, params: BlockParams, state: BlockState, action, rng, disturbance: float = 0.0):
        a = float(_check_action(action, 1)[0])
        omega = state.omega
        sgn = (omega > 0.0) - (omega < 0.0)
        torque = params.torque_scale * a - params.damping * omega - params.friction * sgn - params.gravity_bias + disturbance
        omega2 = omega + DT * torque / params.inertia
        theta2 = wrap(state.theta + DT * omega2)
        err = wrap(theta2 - state.goal)
        success = abs(err) < SUCCESS_TOL
        reward = -abs(err) + (SUCCESS_BONUS if success else 0.0)
        goal = state.goal
        successes = state.successes
        if success:
            successes += 1
            goal = wrap(rng.uniform(-math.pi, math.pi))
        t = state.t + 1
        done = successes >= MAX_SUCCESSES or abs(omega2) > DROP_OMEGA or t >= self.horizon
        return BlockState(theta2, omega2, goal, t, successes), reward, done, success

    def hold(self, state: BlockState):
        """Advance time without moving the block (used while frozen)."""
        reward = -abs(wrap(state.theta - state.goal))
        t = state.t + 1
        return replace(state, t=t), reward, t >= self.horizon, False

    @staticmethod
    def termination(state: BlockState) -> Termination:
        if state.successes >= MAX_SUCCESSES:
            return Termination.MAX_SUCCESSES
        if abs(state.omega) > DROP_OMEGA:
            return Termination.DROP
        return Termination.TIMEOUT

    @staticmethod
    def successes(state: BlockState) -> int:
        return state.successes


class LinearSystem:
    """``s' = A s + B a``; reward ``-|s'|^2``; ends only at the horizon."""

    name = "linear"
    angular_dims = ()
    param_type = LinearParams

    def __init__(self, state_dim: int = 2, action_dim: int = 2, horizon: int = 50):
        if state_dim < 1 or action_dim < 1 or horizon < 1:
            raise InvariantError("bad LinearSystem dimensions")
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.horizon = int(horizon)

    def default_params(self) -> LinearParams:
        n, m = self.state_dim, self.action_dim
        A = 0.9 * np.eye(n)
        if n > 1:
            A += 0.1 * np.eye(n, k=1)
        return LinearParams(A, np.eye(n, m))

    def _check(self, params):
        if not isinstance(params, LinearParams) or params.B.shape != (self.state_dim, self.action_dim):
            raise InvariantError("LinearParams shape does not match the environment")

    def reset(self, params: LinearParams, rng) -> LinearState:
        self._check(params)
        return LinearState(np.asarray(rng.uniform(-1.0, 1.0, self.state_dim), dtype=np.float64))

    def step(self, params: LinearParams, state: LinearState, action, rng=None, disturbance: float = 0.0):
        self._check(params)
        a = _check_action(action, self.action_dim)
        x2 = params.A @ state.x + params.B @ a
        if disturbance != 0.0:
            x2 = x2 + disturbance
        t = state.t + 1
        return LinearState(x2, t), -float(x2 @ x2), t >= self.horizon, False

    def hold(self, state: LinearState):
        t = state.t + 1
        return LinearState(state.x, t), -float(state.x @ state.x), t >= self.horizon, False

    @staticmethod
    def termination(state) -> Termination:
        return Termination.TIMEOUT

    @staticmethod
    def successes(state) -> int:
        return 0


ENVS = {"block": BlockRotate2D, "linear": LinearSystem}


def make_env(name: str, **kwargs):
    try:
        return ENVS[name](**kwargs)
    except KeyError:
        raise InvariantError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None


def env_reset(env, params, rng):
    return env.reset(params, rng)


def env_step(env, params, state, action, rng=None):
    return env.step(params, state, action, rng)


def pd_policy(kp: float = 3.0, kd: float = 0.4) -> "PDPolicy":
    return PDPolicy(kp, kd)


@dataclass(frozen=True)
class PDPolicy:
    """Clipped PD controller on the wrapped goal error of ``BlockRotate2D``."""

    kp: float = 3.0
    kd: float = 0.4
    action_dim: int = 1

    def __call__(self, state) -> np.ndarray:
        s = np.asarray(state, dtype=np.float64)
        u = self.kp * wrap(s[2] - s[0]) - self.kd * s[1]
        return np.array([min(1.0, max(-1.0, u))])


def run_episode(env, params, policy: Callable, horizon: int, rng, meta=None) -> Tuple[Trajectory, EpisodeOutcome]:
    """Roll out ``policy`` step by step. ``env`` may be a custom-physics wrapper."""
    env.horizon = horizon
    state = env.reset(params, rng)
    states, actions, rewards = [], [], []
    adim = env.action_dim
    while True:
        s = state.vector()
        a = np.asarray(policy(s), dtype=np.float64).reshape(-1)
        if a.shape[0] != adim:
            raise InvariantError(f"policy returned {a.shape[0]} actions, expected {adim}")
        a = np.clip(a, -1.0, 1.0)
        states.append(s)
        actions.append(a)
        state, r, done, _ = env.step(params, state, a, rng)
        rewards.append(r)
        if done:
            break
    traj = Trajectory(states, actions, rewards, state.vector(), meta or {})
    return traj, EpisodeOutcome(env.successes(state), env.termination(state))
