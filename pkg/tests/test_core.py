import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from s2rg.core import (InvariantError, MdpSpec, SchemaError, SeedStream, Step, Trajectory, VersionMismatchError,
                       config_hash, derive_rng, load_recordings, save_recordings, traj_load, traj_save)


def _traj(T, sdim=3, adim=1, seed=0, meta=None):
    g = np.random.default_rng(seed)
    return Trajectory(g.standard_normal((T, sdim)), g.uniform(-1, 1, (T, adim)), g.standard_normal(T),
                      g.standard_normal(sdim), meta or {})


def test_mdp_spec_validation():
    MdpSpec(3, 1, 0.99, 400)
    for bad in [dict(state_dim=0, action_dim=1), dict(state_dim=1, action_dim=0),
                dict(state_dim=1, action_dim=1, gamma=1.5), dict(state_dim=1, action_dim=1, horizon=0)]:
        with pytest.raises(InvariantError):
            MdpSpec(**bad)


def test_trajectory_invariants():
    with pytest.raises(InvariantError):
        Trajectory(np.zeros((0, 3)), np.zeros((0, 1)), np.zeros(0), np.zeros(3))
    with pytest.raises(InvariantError):
        Trajectory(np.zeros((2, 3)), np.zeros((3, 1)), np.zeros(2), np.zeros(3))
    with pytest.raises(InvariantError):
        Trajectory(np.zeros((1, 3)), np.zeros((1, 1)), np.zeros(1), [0.0, math.nan, 0.0])
    t = _traj(5)
    with pytest.raises(AttributeError):
        t.rewards = np.zeros(5)
    assert not t.states.flags.writeable


def test_from_steps_matches_columns():
    t = _traj(4)
    steps = t.steps
    assert isinstance(steps[0], Step)
    assert Trajectory.from_steps(steps, t.terminal_state, t.meta) == t
    assert np.array_equal(t.next_states()[-1], t.terminal_state)


def test_round_trip_minimal(tmp_path):
    t = Trajectory([[0.1, 0.2]], [[0.5]], [1.0], [0.3, 0.4])
    p = tmp_path / "a.traj.jsonl"
    traj_save(t, p)
    assert traj_load(p) == t


def test_round_trip_negative_zero(tmp_path):
    t = Trajectory([[-0.0, 0.0, 1.0]], [[-0.0]], [-0.0], [-0.0, 5e-324, 1.7976931348623157e308])
    p = tmp_path / "z.traj.jsonl"
    traj_save(t, p)
    back = traj_load(p)
    assert back == t
    assert math.copysign(1.0, back.states[0, 0]) == -1.0
    assert math.copysign(1.0, back.rewards[0]) == -1.0


def test_round_trip_recorded_set_scale(tmp_path):
    g = np.random.default_rng(7)
    lengths = [20, 3000] + list(g.integers(20, 3001, 498))
    trajs = [_traj(int(T), seed=i, meta={"env": "block", "seed": str(i)}) for i, T in enumerate(lengths)]
    save_recordings(trajs, tmp_path)
    back = load_recordings(tmp_path)
    assert len(back) == 500
    assert all(a == b for a, b in zip(trajs, back))


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 12), st.data())
def test_round_trip_property(tmp_path_factory, sdim, adim, T, data):
    S = data.draw(st.lists(st.lists(finite, min_size=sdim, max_size=sdim), min_size=T, max_size=T))
    A = data.draw(st.lists(st.lists(finite, min_size=adim, max_size=adim), min_size=T, max_size=T))
    R = data.draw(st.lists(finite, min_size=T, max_size=T))
    sT = data.draw(st.lists(finite, min_size=sdim, max_size=sdim))
    meta = data.draw(st.dictionaries(st.text(max_size=5), st.text(max_size=5), max_size=3))
    t = Trajectory(S, A, R, sT, meta)
    p = tmp_path_factory.mktemp("rt") / "x.traj.jsonl"
    traj_save(t, p)
    assert traj_load(p) == t


def test_load_errors_are_distinct(tmp_path):
    with pytest.raises(FileNotFoundError):
        traj_load(tmp_path / "missing.traj.jsonl")
    t = _traj(3)
    p = tmp_path / "t.traj.jsonl"
    traj_save(t, p)
    lines = p.read_text().splitlines()

    trunc = tmp_path / "trunc.traj.jsonl"
    trunc.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(SchemaError):
        traj_load(trunc)
    half = tmp_path / "half.traj.jsonl"
    text = p.read_text()
    half.write_text(text[: len(text) // 2])
    with pytest.raises(SchemaError):
        traj_load(half)

    hdr = json.loads(lines[0])
    hdr["version"] = "999"
    bad = tmp_path / "v.traj.jsonl"
    bad.write_text("\n".join([json.dumps(hdr)] + lines[1:]) + "\n")
    with pytest.raises(VersionMismatchError):
        traj_load(bad)


def test_header_format(tmp_path):
    p = tmp_path / "h.traj.jsonl"
    traj_save(_traj(2, meta={"env": "block"}), p)
    lines = p.read_text().splitlines()
    hdr = json.loads(lines[0])
    assert hdr == {"version": 1, "state_dim": 3, "action_dim": 1, "meta": {"env": "block"}}
    assert set(json.loads(lines[1])) == {"s", "a", "r"}
    assert set(json.loads(lines[-1])) == {"s_T"}


def test_derive_rng_streams():
    a = derive_rng(SeedStream(42, "rollout")).random(100)
    b = derive_rng(SeedStream(42, "rollout")).random(100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, derive_rng(SeedStream(42, "model")).random(100))
    assert not np.array_equal(derive_rng(SeedStream(42, "x")).random(100),
                              derive_rng(SeedStream(43, "x")).random(100))
    assert SeedStream(1, "a").child("b", 2) == SeedStream(1, "a/b/2")


def test_config_hash_stable():
    assert config_hash({"b": 1, "a": [1, 2]}) == config_hash({"a": [1, 2], "b": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
