"""Shared domain types, seeded RNG streams and the trajectory file format."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, List, Mapping, Sequence

import numpy as np

TRAJ_VERSION = 1
TRAJ_SUFFIX = ".traj.jsonl"


class TrajectoryFormatError(Exception):
    """Base class for trajectory file problems."""


class VersionMismatchError(TrajectoryFormatError):
    pass


class SchemaError(TrajectoryFormatError):
    pass


class InvariantError(ValueError):
    """A domain value violates its declared invariants."""


@dataclass(frozen=True)
class MdpSpec:
    state_dim: int
    action_dim: int
    gamma: float = 1.0
    horizon: int = 400

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise InvariantError("state_dim and action_dim must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvariantError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.horizon < 1:
            raise InvariantError("horizon must be >= 1")


@dataclass(frozen=True)
class Step:
    state: np.ndarray
    action: np.ndarray
    reward: float


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise InvariantError(f"expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class Trajectory:
    """A recorded episode ``(s_0, a_0, r_0, ..., s_{T-1}, a_{T-1}, r_{T-1}, s_T)``.

    Stored column-wise: ``states`` is ``(T, state_dim)``, ``actions`` is
    ``(T, action_dim)``, ``rewards`` is ``(T,)``. ``steps`` gives the
    row-wise view. Instances are immutable.
    """

    __slots__ = ("states", "actions", "rewards", "terminal_state", "meta")

    def __init__(self, states, actions, rewards, terminal_state, meta: Mapping[str, str] | None = None):
        states = _frozen(states, 2)
        actions = _frozen(actions, 2)
        rewards = _frozen(rewards, 1)
        terminal_state = _frozen(terminal_state, 1)
        T = states.shape[0]
        if T < 1:
            raise InvariantError("trajectory needs at least one step")
        if actions.shape[0] != T or rewards.shape[0] != T:
            raise InvariantError("states, actions and rewards disagree on length")
        if terminal_state.shape[0] != states.shape[1]:
            raise InvariantError("terminal state dimension differs from step states")
        if states.shape[1] < 1 or actions.shape[1] < 1:
            raise InvariantError("zero-dimensional state or action")
        for name, arr in (("states", states), ("actions", actions), ("rewards", rewards), ("terminal_state", terminal_state)):
            if not np.all(np.isfinite(arr)):
                raise InvariantError(f"non-finite values in {name}")
        meta = {str(k): str(v) for k, v in (meta or {}).items()}
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "terminal_state", terminal_state)
        object.__setattr__(self, "meta", meta)

    def __setattr__(self, name, value):
        raise AttributeError("Trajectory is immutable")

    @classmethod
    def from_steps(cls, steps: Sequence[Step], terminal_state, meta=None) -> "Trajectory":
        if not steps:
            raise InvariantError("trajectory needs at least one step")
        return cls(
            [s.state for s in steps],
            [s.action for s in steps],
            [s.reward for s in steps],
            terminal_state,
            meta,
        )

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def steps(self) -> List[Step]:
        return [Step(self.states[t], self.actions[t], float(self.rewards[t])) for t in range(len(self))]

    def next_states(self) -> np.ndarray:
        """States ``s_1 .. s_T`` aligned with ``states``."""
        return np.vstack([self.states[1:], self.terminal_state[None, :]])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.meta == other.meta
            and _bit_equal(self.states, other.states)
            and _bit_equal(self.actions, other.actions)
            and _bit_equal(self.rewards, other.rewards)
            and _bit_equal(self.terminal_state, other.terminal_state)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"Trajectory(T={len(self)}, state_dim={self.state_dim}, action_dim={self.action_dim}, meta={self.meta})"


def _bit_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass(frozen=True)
class SeedStream:
    root_seed: int
    stream_id: str

    def child(self, *labels) -> "SeedStream":
        return SeedStream(self.root_seed, "/".join([self.stream_id, *map(str, labels)]))


def _stream_key(root_seed: int, stream_id: str) -> int:
    digest = hashlib.sha256(f"{int(root_seed) & 0xFFFFFFFFFFFFFFFF}:{stream_id}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


def derive_rng(stream: SeedStream) -> np.random.Generator:
    """Counter-based generator keyed by a hash of ``(root_seed, stream_id)``."""
    return np.random.Generator(np.random.Philox(key=_stream_key(stream.root_seed, stream.stream_id)))


def spawn_seed(rng: np.random.Generator) -> int:
    """Draw a 64-bit seed for a child stream."""
    return int(rng.integers(0, 2**63 - 1))


# -- trajectory files ---------------------------------------------------------

def _floats(arr: Iterable[float]) -> List[float]:
    return [float(x) for x in arr]


def traj_save(traj: Trajectory, path: str | os.PathLike) -> None:
    if not isinstance(traj, Trajectory):
        raise InvariantError("traj_save expects a Trajectory")
    header = {
        "version": TRAJ_VERSION,
        "state_dim": traj.state_dim,
        "action_dim": traj.action_dim,
        "meta": traj.meta,
    }
    lines = [json.dumps(header, sort_keys=True)]
    S, A, R = traj.states.tolist(), traj.actions.tolist(), traj.rewards.tolist()
    for t in range(len(traj)):
        lines.append(json.dumps({"s": S[t], "a": A[t], "r": R[t]}))
    lines.append(json.dumps({"s_T": traj.terminal_state.tolist()}))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def _vector(obj, key: str, dim: int, lineno: int) -> List[float]:
    v = obj.get(key)
    if not isinstance(v, list) or len(v) != dim:
        raise SchemaError(f"line {lineno}: '{key}' must be a list of {dim} numbers")
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise SchemaError(f"line {lineno}: '{key}' holds a non-finite or non-numeric entry")
    return _floats(v)


def traj_load(path: str | os.PathLike) -> Trajectory:
    if not os.path.exists(path):
        raise FileNotFoundError(f"trajectory file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SchemaError("empty trajectory file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"unreadable header: {exc}") from None
    if not isinstance(header, dict) or "version" not in header:
        raise SchemaError("header lacks a version field")
    if header["version"] != TRAJ_VERSION:
        raise VersionMismatchError(f"unsupported trajectory version {header['version']!r}; expected {TRAJ_VERSION}")
    try:
        sdim, adim = int(header["state_dim"]), int(header["action_dim"])
        meta = header["meta"]
    except (KeyError, TypeError, ValueError):
        raise SchemaError("header must carry state_dim, action_dim and meta") from None
    if sdim < 1 or adim < 1 or not isinstance(meta, dict):
        raise SchemaError("bad header dimensions or meta")
    if len(lines) < 3:
        raise SchemaError("trajectory file truncated: needs a header, at least one step and a terminal state")

    states, actions, rewards = [], [], []
    for lineno, line in enumerate(lines[1:-1], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
        if not isinstance(obj, dict) or set(obj) != {"s", "a", "r"}:
            raise SchemaError(f"line {lineno}: step records need exactly the keys s, a, r")
        states.append(_vector(obj, "s", sdim, lineno))
        actions.append(_vector(obj, "a", adim, lineno))
        r = obj["r"]
        if isinstance(r, bool) or not isinstance(r, (int, float)) or not math.isfinite(r):
            raise SchemaError(f"line {lineno}: reward must be a finite number")
        rewards.append(float(r))
    try:
        trailer = json.loads(lines[-1])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"terminal line unreadable (truncated file?): {exc}") from None
    if not isinstance(trailer, dict) or set(trailer) != {"s_T"}:
        raise SchemaError("last line must hold only the terminal state 's_T' (truncated file?)")
    s_T = _vector(trailer, "s_T", sdim, len(lines))
    try:
        return Trajectory(
            np.array(states, dtype=np.float64).reshape(len(states), sdim),
            np.array(actions, dtype=np.float64).reshape(len(actions), adim),
            np.array(rewards, dtype=np.float64),
            s_T,
            meta,
        )
    except InvariantError as exc:
        raise SchemaError(str(exc)) from None


def save_recordings(trajs: Sequence[Trajectory], directory: str | os.PathLike, prefix: str = "ep") -> List[str]:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, tr in enumerate(trajs):
        p = os.path.join(directory, f"{prefix}{i:05d}{TRAJ_SUFFIX}")
        traj_save(tr, p)
        paths.append(p)
    return paths


def load_recordings(directory: str | os.PathLike) -> List[Trajectory]:
    names = sorted(n for n in os.listdir(directory) if n.endswith(TRAJ_SUFFIX))
    return [traj_load(os.path.join(directory, n)) for n in names]


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serialisable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]

