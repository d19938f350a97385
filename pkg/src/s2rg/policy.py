"""Feed-forward policies, cross-entropy-method training and evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .adr import AdrState, adr_sample, adr_update
from .core import InvariantError, SeedStream, Trajectory, spawn_seed
from .randomization import RandomizationConfig, sample_custom, sample_params
from .rollout import EpisodeJob, run_jobs


class Policy:
    """One hidden tanh layer, tanh-squashed output in ``[-1, 1]^action_dim``.

    ``weights`` is flat: ``W1`` (hidden x state_dim, row-major), ``b1``,
    ``W2`` (action_dim x hidden), ``b2``.
    """

    def __init__(self, state_dim: int, action_dim: int, hidden: int = 32, weights=None):
        self.state_dim, self.action_dim, self.hidden = int(state_dim), int(action_dim), int(hidden)
        n = self.n_weights(self.state_dim, self.action_dim, self.hidden)
        w = np.zeros(n) if weights is None else np.array(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise InvariantError(f"expected {n} weights, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise InvariantError("non-finite policy weights")
        w.setflags(write=False)
        self.weights = w

    @staticmethod
    def n_weights(state_dim: int, action_dim: int, hidden: int) -> int:
        return (state_dim + 1) * hidden + (hidden + 1) * action_dim

    def unpack(self):
        S, A, H = self.state_dim, self.action_dim, self.hidden
        w = self.weights
        i = 0
        W1 = w[i:i + H * S].reshape(H, S); i += H * S
        b1 = w[i:i + H]; i += H
        W2 = w[i:i + A * H].reshape(A, H); i += A * H
        b2 = w[i:i + A]
        return W1, b1, W2, b2

    def __call__(self, state) -> np.ndarray:
        return policy_act(self, state)

    def to_dict(self) -> dict:
        return {"state_dim": self.state_dim, "action_dim": self.action_dim, "hidden": self.hidden,
                "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        return cls(d["state_dim"], d["action_dim"], d["hidden"], d["weights"])

    def __eq__(self, other):
        return (isinstance(other, Policy)
                and (self.state_dim, self.action_dim, self.hidden) == (other.state_dim, other.action_dim, other.hidden)
                and self.weights.tobytes() == other.weights.tobytes())

    __hash__ = None


def policy_act(p: Policy, state) -> np.ndarray:
    s = np.asarray(state, dtype=np.float64).reshape(-1)
    if s.shape[0] != p.state_dim:
        raise InvariantError(f"state has dimension {s.shape[0]}, policy expects {p.state_dim}")
    if not np.all(np.isfinite(s)):
        raise InvariantError("non-finite state")
    W1, b1, W2, b2 = p.unpack()
    return np.tanh(W2 @ np.tanh(W1 @ s + b1) + b2)


def save_policy(p: Policy, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(p.to_dict(), fh)


def load_policy(path) -> Policy:
    with open(path, "r", encoding="utf-8") as fh:
        return Policy.from_dict(json.load(fh))


# -- environment samplers -------------------------------------------------------

class DRSampler:
    """Draws per-episode physics from a fixed randomization config."""

    def __init__(self, cfg: RandomizationConfig, base):
        self.cfg, self.base = cfg, base

    def sample(self, rng):
        params = sample_params(self.cfg, rng, self.base)
        return params, sample_custom(self.cfg, rng), None

    def report(self, tag, successes):
        pass


class AdrSampler:
    """Draws physics from an ADR state and feeds boundary results back to it.

    Custom physics come from ``custom_cfg`` (its ranges and mode); physical
    parameters from the ADR bounds. With ``frozen=True`` reports are ignored.
    """

    def __init__(self, state: AdrState, base, custom_cfg: Optional[RandomizationConfig] = None, frozen: bool = False):
        self.state, self.base, self.frozen = state, base, frozen
        self.custom_cfg = custom_cfg or RandomizationConfig()

    def sample(self, rng):
        params, tag = adr_sample(self.state, rng, self.base)
        return params, sample_custom(self.custom_cfg, rng), tag

    def report(self, tag, successes):
        if tag is not None and not self.frozen:
            self.state = adr_update(self.state, tag, successes, clamp=self.base.clamp)


def make_sampler(env_sampler, base, custom_cfg=None):
    if isinstance(env_sampler, (DRSampler, AdrSampler)):
        return env_sampler
    if isinstance(env_sampler, RandomizationConfig):
        return DRSampler(env_sampler, base)
    if isinstance(env_sampler, AdrState):
        return AdrSampler(env_sampler, base, custom_cfg)
    raise InvariantError(f"cannot sample environments from {type(env_sampler).__name__}")


# -- cross-entropy method ----------------------------------------------------------

@dataclass(frozen=True)
class CemConfig:
    population: int = 32
    elite_frac: float = 0.25
    iterations: int = 40
    init_std: float = 0.3
    episodes_per_candidate: int = 3
    noise_floor: float = 0.05

    def __post_init__(self):
        if self.population < 4:
            raise InvariantError("population must be >= 4")
        if not 0.0 < self.elite_frac <= 1.0:
            raise InvariantError("elite_frac must lie in (0, 1]")
        if self.iterations < 0 or self.episodes_per_candidate < 1:
            raise InvariantError("iterations >= 0 and episodes_per_candidate >= 1 required")
        if self.init_std <= 0 or self.noise_floor < 0:
            raise InvariantError("init_std must be positive and noise_floor non-negative")

    @property
    def n_elite(self) -> int:
        return max(1, math.ceil(self.elite_frac * self.population - 1e-12))


class CEM:
    """Diagonal-Gaussian cross-entropy search over a flat parameter vector.

    ``score`` maps an ``(population, dim)`` array of candidates to their
    scores; one call per iteration.
    """

    def __init__(self, dim: int, cfg: CemConfig, rng, mean=None):
        self.cfg, self.rng = cfg, rng
        self.mean = np.zeros(dim) if mean is None else np.array(mean, dtype=np.float64)
        self.std = np.full(dim, cfg.init_std)
        self.iteration = 0

    def ask(self) -> np.ndarray:
        eps = self.rng.standard_normal((self.cfg.population, self.mean.shape[0]))
        return self.mean + eps * self.std

    def tell(self, candidates: np.ndarray, scores: np.ndarray) -> Dict[str, float]:
        scores = np.asarray(scores, dtype=np.float64)
        order = np.argsort(-scores, kind="stable")
        elite = candidates[order[: self.cfg.n_elite]]
        self.mean = elite.mean(axis=0)
        self.std = np.maximum(elite.std(axis=0), self.cfg.noise_floor)
        self.iteration += 1
        return {
            "iteration": self.iteration,
            "score_mean": float(scores.mean()),
            "score_elite": float(scores[order[: self.cfg.n_elite]].mean()),
            "score_best": float(scores[order[0]]),
        }

    def step(self, score: Callable[[np.ndarray], np.ndarray]) -> Dict[str, float]:
        cands = self.ask()
        return self.tell(cands, score(cands))


def cem_optimize(score: Callable[[np.ndarray], np.ndarray], dim: int, cfg: CemConfig, rng, mean=None):
    """Plain CEM loop; returns the final mean and the per-iteration log."""
    cem = CEM(dim, cfg, rng, mean)
    log = [cem.step(score) for _ in range(cfg.iterations)]
    return cem.mean, log


@dataclass
class PolicyTrainer:
    """CEM over policy weights with a shared rollout buffer.

    Every scoring episode is appended to ``buffer``. With an ADR sampler, the
    environments of one iteration are drawn from a snapshot of the ADR state
    and the boundary results are applied afterwards in candidate order.
    """

    env: object
    sampler: object
    cfg: CemConfig
    rng: np.random.Generator
    hidden: int = 32
    jobs: int = 1
    buffer: List[Trajectory] = field(default_factory=list)
    log: List[dict] = field(default_factory=list)

    def __post_init__(self):
        dim = Policy.n_weights(self.env.state_dim, self.env.action_dim, self.hidden)
        self.cem = CEM(dim, self.cfg, self.rng)

    def policy(self) -> Policy:
        return Policy(self.env.state_dim, self.env.action_dim, self.hidden, self.cem.mean)

    def _score(self, cands: np.ndarray) -> np.ndarray:
        E = self.cfg.episodes_per_candidate
        it = self.cem.iteration
        root = spawn_seed(self.rng)
        jobs, tags, pols = [], [], []
        for c in range(cands.shape[0]):
            pol = Policy(self.env.state_dim, self.env.action_dim, self.hidden, cands[c])
            for e in range(E):
                srng = np.random.Generator(np.random.Philox(key=spawn_seed(self.rng)))
                params, custom, tag = self.sampler.sample(srng)
                jobs.append(EpisodeJob(params, custom, SeedStream(root, f"cem/{it}/{c}/{e}"),
                                       {"iteration": str(it), "candidate": str(c), "episode": str(e)}))
                tags.append(tag)
                pols.append(pol)
        results = run_jobs(self.env, jobs, pols, self.jobs)
        scores = np.zeros(cands.shape[0])
        for k, (traj, out) in enumerate(results):
            self.buffer.append(traj)
            scores[k // E] += out.successes / E
            self.sampler.report(tags[k], out.successes)
        return scores

    def step(self) -> dict:
        row = self.cem.step(self._score)
        self.log.append(row)
        return row


def cem_train(env_sampler, cfg: CemConfig, rng, env, base=None, hidden: int = 32, custom_cfg=None, jobs: int = 1):
    """Train a policy by CEM; returns ``(policy, training_log, rollout_buffer)``."""
    base = base if base is not None else env.default_params()
    trainer = PolicyTrainer(env, make_sampler(env_sampler, base, custom_cfg), cfg, rng, hidden, jobs)
    for _ in range(cfg.iterations):
        trainer.step()
    return trainer.policy(), trainer.log, trainer.buffer


def evaluate_policy(p, cfg: RandomizationConfig, episodes: int, rng, env, base=None, jobs: int = 1,
                    meta=None) -> Tuple[float, List[int], List[Trajectory]]:
    """Mean successes of ``p`` over ``episodes`` freshly sampled environments."""
    if episodes < 1:
        raise InvariantError("episodes must be >= 1")
    sampler = make_sampler(cfg, base if base is not None else env.default_params())
    root = spawn_seed(rng)
    jobs_, pols = [], []
    for e in range(episodes):
        params, custom, _ = sampler.sample(rng)
        m = dict(meta or {})
        m.update({"episode": str(e), "cell": cfg.cell if isinstance(cfg, RandomizationConfig) else "adr"})
        jobs_.append(EpisodeJob(params, custom, SeedStream(root, f"eval/{e}"), m))
        pols.append(p)
    results = run_jobs(env, jobs_, pols, jobs)
    succ = [out.successes for _, out in results]
    return float(np.mean(succ)), succ, [t for t, _ in results]
