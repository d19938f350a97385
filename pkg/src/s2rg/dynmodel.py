"""Quantized probabilistic forward dynamics model.

The model predicts the relative next state ``s_{t+1} - s_t`` (wrapped on
angular dimensions) as an independent categorical distribution per state
dimension over ``K`` uniform bins spanning ``(-delta_max, delta_max)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import InvariantError, Trajectory
from .envs import wrap_array


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Quantizer:
    bins: int
    delta_max: np.ndarray

    def __post_init__(self):
        dm = np.array(self.delta_max, dtype=np.float64).reshape(-1)
        if self.bins < 2:
            raise InvariantError("need at least two bins")
        if not np.all(np.isfinite(dm)) or np.any(dm <= 0):
            raise InvariantError("delta_max must be positive and finite")
        dm.setflags(write=False)
        object.__setattr__(self, "delta_max", dm)

    @property
    def dims(self) -> int:
        return self.delta_max.shape[0]

    def bin_width(self) -> np.ndarray:
        return 2.0 * self.delta_max / self.bins

    def centers(self) -> np.ndarray:
        """``(dims, bins)`` array of bin centres."""
        k = np.arange(self.bins) + 0.5
        return -self.delta_max[:, None] + k[None, :] * self.bin_width()[:, None]


def quantize(q: Quantizer, delta) -> np.ndarray:
    """Bin indices for one delta vector or a ``(N, dims)`` batch; edges clamp."""
    d = np.asarray(delta, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise InvariantError("cannot quantize non-finite values")
    if d.shape[-1] != q.dims:
        raise InvariantError(f"delta has dimension {d.shape[-1]}, quantizer has {q.dims}")
    idx = np.floor((d + q.delta_max) / q.bin_width())
    return np.clip(idx, 0, q.bins - 1).astype(np.int64)


def relative_targets(states: np.ndarray, next_states: np.ndarray, angular_dims: Sequence[int] = ()) -> np.ndarray:
    delta = np.asarray(next_states, dtype=np.float64) - np.asarray(states, dtype=np.float64)
    for d in angular_dims:
        delta[..., d] = wrap_array(delta[..., d])
    return delta


def transitions(trajs: Sequence[Trajectory], angular_dims: Sequence[int] = ()) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack ``(s_t, a_t, delta_t)`` over all steps of all trajectories."""
    if not trajs:
        raise InvariantError("no trajectories given")
    S = np.concatenate([t.states for t in trajs])
    A = np.concatenate([t.actions for t in trajs])
    S2 = np.concatenate([t.next_states() for t in trajs])
    return S, A, relative_targets(S, S2, angular_dims)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class DynModel:
    """MLP with one tanh hidden layer and ``bins`` logits per state dimension.

    Inputs are standardised with statistics frozen at creation; those and the
    quantizer are constants, not parameters. ``theta`` is flat:
    ``W1`` (hidden x (state_dim + action_dim)), ``b1``, ``W2`` ((bins * state_dim) x hidden), ``b2``.
    Adam moments live alongside.
    """

    def __init__(self, state_dim: int, action_dim: int, quantizer: Quantizer, hidden: int = 64,
                 theta=None, angular_dims: Sequence[int] = (), input_mean=None, input_std=None):
        self.state_dim, self.action_dim, self.hidden = int(state_dim), int(action_dim), int(hidden)
        if quantizer.dims != self.state_dim:
            raise InvariantError("quantizer dimensions differ from state_dim")
        self.quantizer = quantizer
        self.angular_dims = tuple(int(d) for d in angular_dims)
        n_in = self.state_dim + self.action_dim
        self.input_mean = np.zeros(n_in) if input_mean is None else np.array(input_mean, dtype=np.float64)
        self.input_std = np.ones(n_in) if input_std is None else np.array(input_std, dtype=np.float64)
        n = self.n_params(self.state_dim, self.action_dim, self.hidden, quantizer.bins)
        self.theta = np.zeros(n) if theta is None else np.array(theta, dtype=np.float64).reshape(-1)
        if self.theta.shape[0] != n:
            raise InvariantError(f"expected {n} model parameters, got {self.theta.shape[0]}")
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.steps = 0

    @staticmethod
    def n_params(state_dim: int, action_dim: int, hidden: int, bins: int) -> int:
        return (state_dim + action_dim + 1) * hidden + (hidden + 1) * bins * state_dim

    @property
    def bins(self) -> int:
        return self.quantizer.bins

    @classmethod
    def from_buffer(cls, buffer: Sequence[Trajectory], rng, bins: int = 33, hidden: int = 64,
                    angular_dims: Sequence[int] = (), percentile: float = 99.9) -> "DynModel":
        """Freeze the quantizer range and input statistics from ``buffer``; random hidden layer, zero output layer."""
        if not buffer:
            raise InvariantError("empty rollout buffer")
        S, A, D = transitions(buffer, angular_dims)
        dmax = np.percentile(np.abs(D), percentile, axis=0)
        dmax = np.where(dmax > 0, dmax, 1e-6)
        X = np.hstack([S, A])
        std = X.std(axis=0)
        model = cls(S.shape[1], A.shape[1], Quantizer(bins, dmax), hidden, angular_dims=angular_dims,
                    input_mean=X.mean(axis=0), input_std=np.where(std > 1e-8, std, 1.0))
        n_in = S.shape[1] + A.shape[1]
        W1 = rng.standard_normal((hidden, n_in)) / math.sqrt(n_in)
        model.theta[: hidden * n_in] = W1.ravel()
        return model

    def unpack(self, theta=None):
        th = self.theta if theta is None else theta
        H, n_in, KD = self.hidden, self.state_dim + self.action_dim, self.bins * self.state_dim
        i = 0
        W1 = th[i:i + H * n_in].reshape(H, n_in); i += H * n_in
        b1 = th[i:i + H]; i += H
        W2 = th[i:i + KD * H].reshape(KD, H); i += KD * H
        b2 = th[i:i + KD]
        return W1, b1, W2, b2

    def _inputs(self, states, actions) -> np.ndarray:
        S = np.atleast_2d(np.asarray(states, dtype=np.float64))
        A = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if S.shape[1] != self.state_dim or A.shape[1] != self.action_dim:
            raise InvariantError(
                f"model expects state/action dims ({self.state_dim}, {self.action_dim}), got ({S.shape[1]}, {A.shape[1]})")
        X = np.hstack([S, A])
        if not np.all(np.isfinite(X)):
            raise InvariantError("non-finite model input")
        return (X - self.input_mean) / self.input_std

    def logits(self, states, actions, theta=None):
        X = self._inputs(states, actions)
        W1, b1, W2, b2 = self.unpack(theta)
        Hh = np.tanh(X @ W1.T + b1)
        L = (Hh @ W2.T + b2).reshape(X.shape[0], self.state_dim, self.bins)
        return L, Hh, X

    def log_probs(self, states, actions, theta=None) -> np.ndarray:
        """``(N, state_dim, bins)`` log-probabilities."""
        return _log_softmax(self.logits(states, actions, theta)[0])

    def nll_batch(self, states, actions, deltas, theta=None) -> np.ndarray:
        """Per-transition NLL in nats for a batch of ``(s, a, delta)``."""
        logp = self.log_probs(states, actions, theta)
        idx = quantize(self.quantizer, np.atleast_2d(deltas))
        picked = np.take_along_axis(logp, idx[:, :, None], axis=2)[:, :, 0]
        return -picked.sum(axis=1)

    def loss_and_grad(self, states, actions, bins_idx, theta=None) -> Tuple[float, np.ndarray]:
        """Mean NLL over the batch and its gradient with respect to ``theta``."""
        L, Hh, X = self.logits(states, actions, theta)
        N = X.shape[0]
        logp = _log_softmax(L)
        picked = np.take_along_axis(logp, bins_idx[:, :, None], axis=2)[:, :, 0]
        loss = -picked.sum() / N
        G = np.exp(logp)
        np.put_along_axis(G, bins_idx[:, :, None], np.take_along_axis(G, bins_idx[:, :, None], axis=2) - 1.0, axis=2)
        G = G.reshape(N, -1) / N
        W1, b1, W2, b2 = self.unpack(theta)
        gW2 = G.T @ Hh
        gb2 = G.sum(axis=0)
        dH = (G @ W2) * (1.0 - Hh * Hh)
        gW1 = dH.T @ X
        gb1 = dH.sum(axis=0)
        return float(loss), np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])

    def copy(self) -> "DynModel":
        m = DynModel(self.state_dim, self.action_dim, self.quantizer, self.hidden, self.theta.copy(),
                     self.angular_dims, self.input_mean.copy(), self.input_std.copy())
        m.m, m.v, m.steps = self.m.copy(), self.v.copy(), self.steps
        return m

    def to_dict(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "hidden": self.hidden,
            "bins": self.bins,
            "delta_max": self.quantizer.delta_max.tolist(),
            "angular_dims": list(self.angular_dims),
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DynModel":
        return cls(d["state_dim"], d["action_dim"], Quantizer(d["bins"], d["delta_max"]), d["hidden"],
                   d["theta"], d.get("angular_dims", ()), d.get("input_mean"), d.get("input_std"))


def model_forward(m: DynModel, state, action) -> np.ndarray:
    """Per-dimension categorical probabilities, shape ``(state_dim, bins)``."""
    return np.exp(m.log_probs(np.reshape(state, (1, -1)), np.reshape(action, (1, -1)))[0])


def nll(m: DynModel, state, action, target) -> float:
    """NLL in nats of one relative-next-state target."""
    return float(m.nll_batch(np.reshape(state, (1, -1)), np.reshape(action, (1, -1)), np.reshape(target, (1, -1)))[0])


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def train_model(m: DynModel, buffer: Sequence[Trajectory], epochs: int, batch_size: int, learning_rate: float,
                rng, max_transitions: Optional[int] = None, adam: AdamConfig = AdamConfig()) -> Tuple[DynModel, List[float]]:
    """Mini-batch Adam on mean NLL over the buffer's transitions (in place).

    ``max_transitions`` keeps only the most recent transitions of the buffer.
    Returns the model and the mean training loss of each epoch.
    """
    if not buffer:
        raise InvariantError("empty rollout buffer")
    S, A, D = transitions(buffer, m.angular_dims)
    if max_transitions is not None and S.shape[0] > max_transitions:
        S, A, D = S[-max_transitions:], A[-max_transitions:], D[-max_transitions:]
    idx_all = quantize(m.quantizer, D)
    N = S.shape[0]
    curve = []
    b1, b2, eps = adam.beta1, adam.beta2, adam.eps
    for epoch in range(epochs):
        order = rng.permutation(N)
        total, count = 0.0, 0
        for start in range(0, N, batch_size):
            sel = order[start:start + batch_size]
            loss, g = m.loss_and_grad(S[sel], A[sel], idx_all[sel])
            if not math.isfinite(loss) or not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {m.steps}: loss={loss}")
            m.steps += 1
            m.m = b1 * m.m + (1 - b1) * g
            m.v = b2 * m.v + (1 - b2) * g * g
            mhat = m.m / (1 - b1 ** m.steps)
            vhat = m.v / (1 - b2 ** m.steps)
            m.theta = m.theta - learning_rate * mhat / (np.sqrt(vhat) + eps)
            total += loss * sel.shape[0]
            count += sel.shape[0]
        curve.append(total / count)
    return m, curve


def save_model(m: DynModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(m.to_dict(), fh)


def load_model(path) -> DynModel:
    with open(path, "r", encoding="utf-8") as fh:
        return DynModel.from_dict(json.load(fh))


def attach_to_frozen_policy(p, env_sampler, episodes: int, rng, env, base=None, custom_cfg=None,
                            bins: int = 33, hidden: int = 64, epochs: int = 20, batch_size: int = 256,
                            learning_rate: float = 1e-3, max_transitions: Optional[int] = None,
                            jobs: int = 1) -> DynModel:
    """Fit a fresh dynamics model to rollouts of a frozen policy.

    ``env_sampler`` is a randomization config or an ADR state; ADR bounds are
    read but never updated. Only the model's parameters are optimised.
    """
    from .adr import AdrState
    from .core import SeedStream, spawn_seed
    from .policy import AdrSampler, make_sampler
    from .rollout import EpisodeJob, run_jobs

    base = base if base is not None else env.default_params()
    if isinstance(env_sampler, AdrState):
        sampler = AdrSampler(env_sampler.copy(), base, custom_cfg, frozen=True)
    else:
        sampler = make_sampler(env_sampler, base, custom_cfg)
    root = spawn_seed(rng)
    jobs_ = []
    for e in range(episodes):
        params, custom, _ = sampler.sample(rng)
        jobs_.append(EpisodeJob(params, custom, SeedStream(root, f"attach/{e}"), {"episode": str(e)}))
    buffer = [t for t, _ in run_jobs(env, jobs_, [p] * episodes, jobs)]
    if max_transitions is not None:
        buffer = _tail(buffer, max_transitions)
    model = DynModel.from_buffer(buffer, rng, bins, hidden, env.angular_dims)
    train_model(model, buffer, epochs, batch_size, learning_rate, rng)
    return model


def _tail(buffer: Sequence[Trajectory], max_transitions: int) -> List[Trajectory]:
    """Most recent whole trajectories holding at most ``max_transitions`` steps (at least one)."""
    out, n = [], 0
    for t in reversed(buffer):
        if out and n + len(t) > max_transitions:
            break
        out.append(t)
        n += len(t)
    return out[::-1]
