import json
import math
import os

import pytest

from s2rg.cli import main
from s2rg.harness import ArtifactError, near_minimum, read_csv, read_json, select_checkpoints

TINY_BLOCK = [
    "env.horizon=60", "cem.population=4", "cem.iterations=3", "cem.episodes_per_candidate=1",
    "checkpoint_every=1", "model.epochs=1", "model.batch_size=64", "model.hidden=8", "model.bins=11",
    "policy.hidden=4", "evaluation.episodes=4", "evaluation.record_episodes=3",
    "evaluation.episodes_per_policy=4", "evaluation.block=2",
]


def _sets(pairs):
    out = []
    for p in pairs:
        out += ["--set", p]
    return out


def _gen(tmp_path, preset, name="cfg.json", extra=()):
    path = str(tmp_path / name)
    assert main(["gen-config", "--preset", preset, "--out", path] + _sets(extra)) == 0
    return path


@pytest.fixture(scope="module")
def block_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("block")
    cfg = _gen(d, "adr", extra=TINY_BLOCK)
    run = str(d / "run")
    assert main(["train", "--config", cfg, "--out", run]) == 0
    return d, cfg, run


def test_gen_config_round_trip(tmp_path, capsys):
    assert main(["gen-config"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["env"]["name"] == "block" and doc["model"]["bins"] == 33
    path = _gen(tmp_path, "linear", extra=["seed=7"])
    assert read_json(path)["seed"] == 7


def test_linear_train_outputs_and_determinism(tmp_path):
    cfg = _gen(tmp_path, "linear")
    outs = []
    for k, jobs in enumerate(["1", "1", "2"]):
        out = str(tmp_path / f"run{k}")
        assert main(["train", "--config", cfg, "--out", out, "--jobs", jobs]) == 0
        outs.append(out)
    chash, header, rows = read_csv(os.path.join(outs[0], "train.csv"))
    assert header == ["iteration", "mean_successes", "train_nll", "adr_entropy"]
    assert [r[0] for r in rows] == ["5"] and rows[0][3] == ""
    assert os.path.exists(os.path.join(outs[0], "policy-run-5.json"))
    assert os.path.exists(os.path.join(outs[0], "dynmodel-run-5.json"))
    ref = open(os.path.join(outs[0], "train.csv"), "rb").read()
    assert ref.startswith(b"# config_hash=")
    for o in outs[1:]:
        assert open(os.path.join(o, "train.csv"), "rb").read() == ref
        assert open(os.path.join(o, "dynmodel-run-5.json"), "rb").read() == \
            open(os.path.join(outs[0], "dynmodel-run-5.json"), "rb").read()


def test_adr_entropy_starts_at_minus_infinity(block_run):
    _, _, run = block_run
    _, header, rows = read_csv(os.path.join(run, "train.csv"))
    ent = [float(r[header.index("adr_entropy")]) for r in rows]
    assert ent[0] == -math.inf
    assert len(rows) == 3
    assert len(read_json(os.path.join(run, "checkpoints.json"))["checkpoints"]) == 3


def test_record_and_metric(block_run, tmp_path, capsys):
    _, cfg, run = block_run
    recs = str(tmp_path / "recs")
    assert main(["record", "--config", cfg, "--policy", os.path.join(run, "policy-adr-3.json"),
                 "--episodes", "5", "--out", recs]) == 0
    assert len([f for f in os.listdir(recs) if f.endswith(".jsonl")]) == 5
    rep = str(tmp_path / "rep.json")
    assert main(["metric", "--model", os.path.join(run, "dynmodel-adr-3.json"), "--recordings", recs,
                 "--out", rep]) == 0
    r = read_json(rep)
    assert len(r["per_trajectory_nll"]) == 5 and r["aggregate"] >= 0
    assert "transfer metric" in capsys.readouterr().out
    # same seed, same recordings
    recs2 = str(tmp_path / "recs2")
    assert main(["record", "--config", cfg, "--policy", "pd", "--episodes", "2", "--out", recs2]) == 0
    recs3 = str(tmp_path / "recs3")
    assert main(["record", "--config", cfg, "--policy", "pd", "--episodes", "2", "--out", recs3, "--jobs", "2"]) == 0
    for f in sorted(os.listdir(recs2)):
        assert open(os.path.join(recs2, f), "rb").read() == open(os.path.join(recs3, f), "rb").read()


def test_exit_codes(block_run, tmp_path, capsys):
    d, cfg, run = block_run
    assert main(["train", "--set", "no_such_key=1", "--out", str(tmp_path / "x")]) == 2
    assert main(["train", "--set", "env.name=cartpole", "--out", str(tmp_path / "x")]) == 2
    assert main(["record", "--config", cfg, "--policy", "pd", "--target", "hot,cold", "--out",
                 str(tmp_path / "y")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["metric", "--model", str(tmp_path / "missing.json"), "--recordings", str(tmp_path)]) == 3
    assert main(["metric", "--model", os.path.join(run, "dynmodel-adr-3.json"),
                 "--recordings", str(tmp_path / "nope")]) == 3
    # linear recordings against a block model
    lin = _gen(tmp_path, "linear", "lin.json")
    lrec = str(tmp_path / "lrec")
    assert main(["record", "--config", lin, "--policy", "pd", "--episodes", "2", "--out", lrec]) == 4
    lpol = str(tmp_path / "lrun")
    assert main(["train", "--config", lin, "--out", lpol]) == 0
    assert main(["record", "--config", lin, "--policy", os.path.join(lpol, "policy-run-5.json"),
                 "--episodes", "2", "--out", lrec]) == 0
    assert main(["metric", "--model", os.path.join(run, "dynmodel-adr-3.json"), "--recordings", lrec]) == 4
    assert main(["sweep-holdout", "--run", str(tmp_path / "not-a-run")]) == 4
    capsys.readouterr()


def test_seed_env_and_set(tmp_path, monkeypatch):
    monkeypatch.setenv("S2RG_SEED", "123")
    path = _gen(tmp_path, "linear", extra=["seed=5", "cem.population=6"])
    doc = read_json(path)
    assert doc["seed"] == 123 and doc["cem"]["population"] == 6
    monkeypatch.setenv("S2RG_SEED", "x")
    assert main(["gen-config"]) == 2


def test_sweep_holdout(block_run, tmp_path, capsys):
    _, _, run = block_run
    out = str(tmp_path / "sweep")
    assert main(["sweep-holdout", "--run", run, "--out", out]) == 0
    _, header, rows = read_csv(os.path.join(out, "sweep.csv"))
    assert len(rows) == 9 and header[:2] == ["mode", "custom"]
    assert open(os.path.join(out, "sweep.svg")).read().startswith("<svg")
    out2 = str(tmp_path / "sweep2")
    assert main(["sweep-holdout", "--run", run, "--out", out2, "--jobs", "2"]) == 0
    for f in ("sweep.csv", "sweep.json", "sweep.svg"):
        assert open(os.path.join(out, f), "rb").read() == open(os.path.join(out2, f), "rb").read()
    assert "pearson r" in capsys.readouterr().out


def test_checkpoints_report(block_run, tmp_path, capsys):
    d, cfg, run = block_run
    recs = str(tmp_path / "recs")
    assert main(["record", "--config", cfg, "--policy", "pd", "--episodes", "3", "--out", recs]) == 0
    out = str(tmp_path / "rep")
    assert main(["checkpoints-report", "--run", run, "--recordings", recs, "--checkpoints", "1,2,3",
                 "--out", out]) == 0
    r = read_json(os.path.join(out, "checkpoints.json"))
    assert r["iterations"] == [1, 2, 3] and len(r["welch_p"]) == 3
    assert all(0.0 <= p <= 1.0 for p in r["welch_p"])
    _, header, rows = read_csv(os.path.join(out, "checkpoints.csv"))
    assert len(rows) == 3 and "welch_p_next" in header
    # the same checkpoint twice: identical policies on interleaved conditions
    out = str(tmp_path / "same")
    assert main(["checkpoints-report", "--run", run, "--recordings", recs, "--checkpoints", "3,3",
                 "--out", out, "--episodes-per-policy", "20", "--block", "5"]) == 0
    r = read_json(os.path.join(out, "checkpoints.json"))
    assert r["welch_p"][0] > 0.05
    assert main(["checkpoints-report", "--run", run, "--recordings", recs, "--checkpoints", "auto",
                 "--out", str(tmp_path / "auto")]) == 0
    assert main(["checkpoints-report", "--run", run, "--recordings", recs, "--checkpoints", "one"]) == 2
    capsys.readouterr()


def test_compare_sources_contract(tmp_path, capsys):
    runs = {}
    for preset in ("cal", "dr", "adr"):
        cfg = _gen(tmp_path, preset, f"{preset}.json", TINY_BLOCK)
        runs[preset] = str(tmp_path / preset)
        assert main(["train", "--config", cfg, "--out", runs[preset]]) == 0
    out = str(tmp_path / "cmp")
    assert main(["compare-sources", "--cal", runs["cal"], "--dr", runs["dr"], "--adr", runs["adr"],
                 "--record-episodes", "3", "--episodes", "6", "--out", out]) == 0
    text = capsys.readouterr().out
    assert "verdict" in text
    r = read_json(os.path.join(out, "compare.json"))
    assert set(r["final"]) == {"cal", "dr", "adr"} and isinstance(r["ordering_holds"], bool)
    _, header, rows = read_csv(os.path.join(out, "compare_final.csv"))
    assert [row[0] for row in rows] == ["cal", "dr", "adr"]


def test_select_checkpoints_rule():
    its = list(range(10, 110, 10))
    metric = [5.0, 4.2, 3.6, 3.52, 3.5, 3.55, 3.49, 3.51, 3.5, 3.53]
    series = [(i, m, 0.1 * i) for i, m in zip(its, metric)]
    # plateau level is the second-half median 3.51; 3.6 is outside 2%, 3.52 inside
    assert select_checkpoints(series) == [10, 40, 60]
    assert select_checkpoints(series, spacing=100.0) == [10, 40, 100]
    with pytest.raises(ArtifactError):
        select_checkpoints(series[:2])


def test_near_minimum():
    assert near_minimum([1.0, 2.0, 5.0], 0) and near_minimum([1.0, 2.0, 5.0], 1)
    assert not near_minimum([1.0, 2.0, 5.0], 2)
