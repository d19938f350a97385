"""Episode execution: random tapes, kernel dispatch and parallel batches."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .core import InvariantError, SeedStream, Trajectory, derive_rng
from .envs import MAX_SUCCESSES, BlockRotate2D, EpisodeOutcome, PDPolicy, Termination, run_episode
from .randomization import CustomPhysicsSet, wrap_custom

_TERMS = {0: Termination.MAX_SUCCESSES, 1: Termination.DROP, 2: Termination.TIMEOUT}


@dataclass
class EpisodeTape:
    """All random numbers one BlockRotate2D episode can consume.

    ``goals`` holds the initial angle, the initial goal and one value per goal
    resample; ``normals`` holds, per step, the action-noise draws followed by
    the wind innovation; ``uniforms`` holds one freeze draw per step.
    """

    goals: np.ndarray
    normals: np.ndarray
    uniforms: np.ndarray

    @classmethod
    def draw(cls, rng, horizon: int, action_dim: int = 1) -> "EpisodeTape":
        goals = rng.uniform(-math.pi, math.pi, 2 + MAX_SUCCESSES)
        normals = rng.standard_normal(horizon * (action_dim + 1))
        uniforms = rng.random(horizon)
        return cls(goals, normals, uniforms)


class TapeRng:
    """Generator look-alike that replays an :class:`EpisodeTape` in order."""

    def __init__(self, tape: EpisodeTape):
        self.tape = tape
        self._g = self._n = self._u = 0

    def uniform(self, low=0.0, high=1.0, size=None):
        if size is not None:
            raise TypeError("TapeRng.uniform only serves scalars")
        v = self.tape.goals[self._g]
        self._g += 1
        return float(v)

    def standard_normal(self, size=None):
        if size is None:
            v = self.tape.normals[self._n]
            self._n += 1
            return float(v)
        v = self.tape.normals[self._n:self._n + size].copy()
        self._n += size
        return v

    def random(self, size=None):
        v = self.tape.uniforms[self._u]
        self._u += 1
        return float(v)


def _kernel_policy(policy) -> Optional[Tuple[int, np.ndarray, int]]:
    from .policy import Policy

    if isinstance(policy, PDPolicy):
        return kernels.POLICY_PD, np.array([policy.kp, policy.kd], dtype=np.float64), 0
    if isinstance(policy, Policy) and policy.state_dim == 3 and policy.action_dim == 1:
        return kernels.POLICY_MLP, np.ascontiguousarray(policy.weights, dtype=np.float64), policy.hidden
    return None


def rollout(env, params, custom: Optional[CustomPhysicsSet], policy: Callable, rng,
            meta=None, backend: Optional[str] = None, generic: bool = False) -> Tuple[Trajectory, EpisodeOutcome]:
    """Run one episode of ``policy`` under ``params`` and custom physics.

    BlockRotate2D episodes with an MLP or PD policy go through the episode
    kernel; anything else steps the (wrapped) environment in Python. Both
    paths consume the same tape, so they agree.
    """
    custom = custom or CustomPhysicsSet()
    meta = dict(meta or {})
    if isinstance(env, BlockRotate2D):
        tape = EpisodeTape.draw(rng, env.horizon, env.action_dim)
        kp = None if generic else _kernel_policy(policy)
        if kp is None:
            trng = TapeRng(tape)
            wrapped = wrap_custom(env, custom, trng)
            return run_episode(wrapped, params, policy, env.horizon, trng, meta)
        kind, w, hidden = kp
        H = env.horizon
        states = np.empty((H + 1, 3))
        actions = np.empty(H)
        rewards = np.empty(H)
        fn = kernels.block_episode if backend is None else kernels.get(backend)
        T, succ, term = fn(params.as_array(), custom.active().as_array(), kind, w, hidden, H,
                           tape.goals, tape.normals, tape.uniforms, states, actions, rewards)
        traj = Trajectory(states[:T], actions[:T, None], rewards[:T], states[T], meta)
        return traj, EpisodeOutcome(int(succ), _TERMS[int(term)])
    child = np.random.Generator(np.random.Philox(key=int(rng.integers(0, 2**63 - 1))))
    wrapped = wrap_custom(env, custom, child)
    return run_episode(wrapped, params, policy, env.horizon, rng, meta)


@dataclass(frozen=True)
class EpisodeJob:
    params: object
    custom: CustomPhysicsSet
    seed: SeedStream
    meta: dict


def run_jobs(env, jobs: Sequence[EpisodeJob], policies: Sequence[Callable], n_workers: int = 1
             ) -> List[Tuple[Trajectory, EpisodeOutcome]]:
    """Run ``jobs[i]`` with ``policies[i]``; results come back in job order."""
    if len(jobs) != len(policies):
        raise InvariantError("one policy per job required")

    def one(i):
        j = jobs[i]
        return rollout(env, j.params, j.custom, policies[i], derive_rng(j.seed), j.meta)

    if n_workers <= 1 or len(jobs) < 2:
        return [one(i) for i in range(len(jobs))]
    with ThreadPoolExecutor(max_workers=n_workers) as ex:
        return list(ex.map(one, range(len(jobs))))
