"""Experiment harness: training runs, recordings, held-out sweeps and reports.

Every function here is a pure function of (config, seed, input files); all
random streams are derived from the run seed plus a fixed label.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .adr import AdrState, adr_entropy
from .core import SeedStream, Trajectory, derive_rng, load_recordings, save_recordings
from .dynmodel import DynModel, _tail, attach_to_frozen_policy, load_model, save_model, train_model
from .envs import BlockRotate2D, LinearSystem, PDPolicy, make_env
from .metric import DegenerateInputError, interleaved_eval, linear_fit, pearson, sem, transfer_metric, welch_ttest
from .policy import AdrSampler, CemConfig, DRSampler, PolicyTrainer, evaluate_policy, load_policy, save_policy
from .randomization import (ParamRange, RandomizationConfig, default_block_ranges, default_effect_ranges,
                            grid_cells)
from . import svg


class ArtifactError(ValueError):
    """A checkpoint or recording set is incompatible with the request."""


def default_linear_ranges(env: LinearSystem) -> List[ParamRange]:
    p = env.default_params()
    out = [ParamRange(f"A_{i}_{i}", float(p.A[i, i]), 0.05) for i in range(env.state_dim)]
    out += [ParamRange(f"B_{i}_{i}", float(p.B[i, i]), 0.2) for i in range(min(env.state_dim, env.action_dim))]
    return out


def _ranges(spec, default) -> List[ParamRange]:
    if spec is None:
        return list(default)
    return [ParamRange(r["name"], float(r["calibration"]), float(r.get("half_width", 0.0))) for r in spec]


@dataclass
class Setup:
    """Typed objects built from a resolved config."""

    cfg: dict
    env: object
    base: object
    ranges: List[ParamRange]
    target_ranges: List[ParamRange]
    effect_ranges: Dict[str, ParamRange]
    cem: CemConfig

    @property
    def source(self) -> dict:
        return self.cfg["source"]

    def source_config(self) -> RandomizationConfig:
        return RandomizationConfig(self.ranges, self.source["mode"], self.source["custom"], self.effect_ranges)

    def adr_state(self) -> AdrState:
        a = self.source.get("adr") or {}
        kw = {k: a[k] for k in ("capacity", "t_low", "t_high", "p_boundary") if k in a}
        return AdrState.from_ranges(self.ranges, a.get("step_fraction", 0.1), **kw)

    def sampler(self):
        if self.source["kind"] == "adr":
            return AdrSampler(self.adr_state(), self.base, self.source_config())
        return DRSampler(self.source_config(), self.base)

    def cell(self, mode, custom) -> RandomizationConfig:
        return RandomizationConfig(self.target_ranges, mode, custom, self.effect_ranges)


def build_setup(cfg: dict) -> Setup:
    e = dict(cfg["env"])
    name = e.pop("name")
    env = make_env(name, **e)
    if isinstance(env, BlockRotate2D):
        ranges = _ranges(cfg["ranges"], default_block_ranges())
    else:
        ranges = _ranges(cfg["ranges"], default_linear_ranges(env))
    target = _ranges(cfg["target_ranges"], ranges)
    eff = default_effect_ranges()
    for k, v in (cfg["effect_ranges"] or {}).items():
        eff[k] = ParamRange(k, float(v["calibration"]), float(v.get("half_width", 0.0)))
    base = env.default_params()
    base = base.with_values({r.name: r.calibration for r in ranges})
    for r in target:
        base.get(r.name)
    setup = Setup(cfg, env, base, ranges, target, eff, CemConfig(**cfg["cem"]))
    setup.source_config()
    setup.cell("rand", "all")
    if cfg["source"]["kind"] == "adr":
        setup.adr_state()
    return setup


# -- file helpers ----------------------------------------------------------------

def _num(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence], chash: str) -> None:
    buf = io.StringIO()
    buf.write(f"# config_hash={chash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(x) for x in r])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path) -> Tuple[str, List[str], List[List[str]]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    chash = ""
    body = []
    for ln in lines:
        if ln.startswith("#"):
            m = re.match(r"#\s*config_hash=(\S+)", ln)
            chash = m.group(1) if m else chash
        else:
            body.append(ln)
    rows = list(csv.reader(body))
    return chash, rows[0], rows[1:]


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def rng_for(cfg: dict, *labels) -> np.random.Generator:
    return derive_rng(SeedStream(int(cfg["seed"]), "/".join(str(x) for x in labels)))


# -- training ----------------------------------------------------------------------

@dataclass
class Checkpoint:
    iteration: int
    policy_path: str
    model_path: str
    adr_path: Optional[str] = None


def policy_name(run_id: str, it: int) -> str:
    return f"policy-{run_id}-{it}.json"


def model_name(run_id: str, it: int) -> str:
    return f"dynmodel-{run_id}-{it}.json"


def adr_name(run_id: str, it: int) -> str:
    return f"adr-{run_id}-{it}.json"


def train(cfg: dict, out_dir, jobs: int = 1, progress=None) -> List[Checkpoint]:
    """CEM training with a dynamics model co-trained on the shared rollout buffer.

    At every ``checkpoint_every`` iterations (and at the last one) the model is
    trained for ``model.epochs`` further epochs on the most recent
    ``model.max_transitions`` buffer steps; its input scaling and bin range
    are frozen at the first checkpoint.
    """
    from .config import hash_of

    setup = build_setup(cfg)
    chash = hash_of(cfg)
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "config.json"), {"config": cfg, "config_hash": chash})
    run_id = cfg["run_id"]
    mc = cfg["model"]
    sampler = setup.sampler()
    trainer = PolicyTrainer(setup.env, sampler, setup.cem, rng_for(cfg, "train", "cem"),
                            cfg["policy"]["hidden"], jobs)
    model: Optional[DynModel] = None
    rows, cps = [], []
    n_iter = setup.cem.iterations
    every = cfg["checkpoint_every"]
    for it in range(1, n_iter + 1):
        row = trainer.step()
        # the model only ever sees the newest window, so older rollouts can go
        trainer.buffer[:] = _tail(trainer.buffer, mc["max_transitions"])
        if it % every and it != n_iter:
            continue
        buf = trainer.buffer
        if model is None:
            model = DynModel.from_buffer(buf, rng_for(cfg, "model", "init"), mc["bins"], mc["hidden"],
                                         setup.env.angular_dims, mc["percentile"])
        model, curve = train_model(model, buf, mc["epochs"], mc["batch_size"], mc["learning_rate"],
                                   rng_for(cfg, "model", "train", it))
        ent = adr_entropy(sampler.state) if isinstance(sampler, AdrSampler) else float("nan")
        cp = Checkpoint(it, os.path.join(out_dir, policy_name(run_id, it)), os.path.join(out_dir, model_name(run_id, it)))
        save_policy(trainer.policy(), cp.policy_path)
        save_model(model, cp.model_path)
        if isinstance(sampler, AdrSampler):
            cp.adr_path = os.path.join(out_dir, adr_name(run_id, it))
            write_json(cp.adr_path, sampler.state.to_dict())
        cps.append(cp)
        rows.append([it, float(row["score_mean"]), float(curve[-1]) if curve else float("nan"),
                     ent if isinstance(sampler, AdrSampler) else ""])
        if progress:
            progress(f"iteration {it}: mean successes {row['score_mean']:.3f}, train nll {rows[-1][2]:.4f}")
    write_csv(os.path.join(out_dir, "train.csv"), ["iteration", "mean_successes", "train_nll", "adr_entropy"],
              rows, chash)
    write_json(os.path.join(out_dir, "checkpoints.json"),
               {"config_hash": chash, "checkpoints": [
                   {"iteration": c.iteration, "policy": os.path.basename(c.policy_path),
                    "model": os.path.basename(c.model_path),
                    "adr": os.path.basename(c.adr_path) if c.adr_path else None} for c in cps]})
    return cps


@dataclass
class Run:
    """A completed training run loaded back from disk."""

    path: str
    cfg: dict
    config_hash: str
    checkpoints: List[Checkpoint]

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]

    def checkpoint(self, iteration: int) -> Checkpoint:
        for c in self.checkpoints:
            if c.iteration == iteration:
                return c
        raise ArtifactError(f"run {self.path} has no checkpoint at iteration {iteration}")

    def entropy(self, cp: Checkpoint) -> float:
        if cp.adr_path is None:
            return float("nan")
        return adr_entropy(AdrState.from_dict(read_json(cp.adr_path)))


def load_run(path) -> Run:
    try:
        c = read_json(os.path.join(path, "config.json"))
        idx = read_json(os.path.join(path, "checkpoints.json"))
    except FileNotFoundError as exc:
        raise ArtifactError(f"{path} is not a completed run ({exc.filename} missing)") from exc
    cps = [Checkpoint(e["iteration"], os.path.join(path, e["policy"]), os.path.join(path, e["model"]),
                      os.path.join(path, e["adr"]) if e.get("adr") else None) for e in idx["checkpoints"]]
    if not cps:
        raise ArtifactError(f"run {path} has no checkpoints")
    return Run(path, c["config"], c["config_hash"], cps)


# -- recordings and metric ------------------------------------------------------------

def load_behavior(spec: str):
    """``pd`` selects the PD oracle; anything else is a policy checkpoint path."""
    if spec == "pd":
        return PDPolicy()
    return load_policy(spec)


def record(setup: Setup, policy, mode, custom, episodes: int, seed: int, out_dir, jobs: int = 1,
           label: str = "") -> List[str]:
    """Record ``episodes`` trajectories of ``policy`` in target cell (mode, custom)."""
    if isinstance(policy, PDPolicy) and not isinstance(setup.env, BlockRotate2D):
        raise ArtifactError("the PD oracle only drives BlockRotate2D")
    dims = (getattr(policy, "state_dim", None), getattr(policy, "action_dim", None))
    if dims[0] is not None and dims != (setup.env.state_dim, setup.env.action_dim):
        raise ArtifactError(f"policy dims {dims} do not match environment "
                            f"({setup.env.state_dim}, {setup.env.action_dim})")
    cell = setup.cell(mode, custom)
    rng = derive_rng(SeedStream(int(seed), f"record/{cell.cell}"))
    meta = {"target": cell.cell, "behavior": label or type(policy).__name__, "env": setup.env.name}
    _, _, trajs = evaluate_policy(policy, cell, episodes, rng, setup.env, setup.base, jobs, meta)
    return save_recordings(trajs, out_dir)


def check_compatible(model: DynModel, recs: Sequence[Trajectory]) -> None:
    if not recs:
        raise ArtifactError("recording set is empty")
    for r in recs:
        if r.state_dim != model.state_dim or r.action_dim != model.action_dim:
            raise ArtifactError(f"recording dims ({r.state_dim}, {r.action_dim}) do not match the model "
                                f"({model.state_dim}, {model.action_dim})")


def metric_report(model_path, rec_dir) -> dict:
    model = load_model(model_path)
    recs = load_recordings(rec_dir)
    check_compatible(model, recs)
    rep = transfer_metric(model, recs, os.path.basename(str(model_path)), os.path.basename(os.path.normpath(str(rec_dir))))
    return rep.to_dict()


# -- held-out sweep ----------------------------------------------------------------------

SWEEP_HEADER = ["mode", "custom", "mean_successes", "sem_successes", "transfer_metric", "steps"]


def sweep_holdout(run: Run, out_dir, episodes: Optional[int] = None, record_episodes: Optional[int] = None,
                  behavior=None, jobs: int = 1) -> dict:
    """Evaluate the final policy and its model on all nine held-out cells."""
    cfg = run.cfg
    setup = build_setup(cfg)
    ev = cfg["evaluation"]
    episodes = episodes or ev["episodes"]
    record_episodes = record_episodes or ev["record_episodes"]
    pol = load_policy(run.final.policy_path)
    model = load_model(run.final.model_path)
    beh = behavior if behavior is not None else pol
    rows = []
    os.makedirs(out_dir, exist_ok=True)
    for mode, custom in grid_cells():
        cell = setup.cell(mode, custom)
        mean, succ, _ = evaluate_policy(pol, cell, episodes, rng_for(cfg, "sweep", "eval", cell.cell),
                                        setup.env, setup.base, jobs)
        _, _, recs = evaluate_policy(beh, cell, record_episodes, rng_for(cfg, "sweep", "record", cell.cell),
                                     setup.env, setup.base, jobs, {"target": cell.cell})
        rep = transfer_metric(model, recs)
        rows.append([mode.value, custom.value, mean, sem(succ), rep.aggregate, rep.step_count])
    csv_path = os.path.join(out_dir, "sweep.csv")
    write_csv(csv_path, SWEEP_HEADER, rows, run.config_hash)
    summary = sweep_summary(csv_path)
    with open(os.path.join(out_dir, "sweep.svg"), "w", encoding="utf-8") as fh:
        fh.write(plot_sweep_csv(csv_path))
    write_json(os.path.join(out_dir, "sweep.json"), summary)
    return summary


def sweep_summary(csv_path) -> dict:
    chash, header, rows = read_csv(csv_path)
    i_m, i_s = header.index("transfer_metric"), header.index("mean_successes")
    xs = [float(r[i_m]) for r in rows]
    ys = [float(r[i_s]) for r in rows]
    try:
        r = pearson(xs, ys)
        slope, icpt, r2 = linear_fit(xs, ys)
    except DegenerateInputError:
        # e.g. a task where no cell ever scores: the statistics are undefined
        r = slope = icpt = r2 = float("nan")
    cells = [f"{row[0]},{row[1]}" for row in rows]
    return {"config_hash": chash, "pearson_r": r, "slope": slope, "intercept": icpt, "r_squared": r2,
            "cells": cells, "transfer_metric": xs, "mean_successes": ys,
            "min_metric_cell": cells[int(np.argmin(xs))]}


def plot_sweep_csv(csv_path) -> str:
    s = sweep_summary(csv_path)
    return svg.plot([("held-out cells", s["transfer_metric"], s["mean_successes"], "dots")],
                    "transfer metric (nats/step)", "mean successes",
                    f"r = {s['pearson_r']:.3f}, R^2 = {s['r_squared']:.3f}",
                    (s["slope"], s["intercept"]) if math.isfinite(s["slope"]) else None)


def near_minimum(values: Sequence[float], index: int, fraction: float = 0.25) -> bool:
    """True if ``values[index]`` lies within the lowest ``fraction`` of the value span."""
    lo, hi = min(values), max(values)
    return values[index] <= lo + fraction * (hi - lo)


# -- source comparison -------------------------------------------------------------------

def moving_average(v: Sequence[float], window: int = 30) -> List[float]:
    """Trailing moving average; the first points average what is available."""
    out, acc = [], 0.0
    for i, x in enumerate(v):
        acc += x
        if i >= window:
            acc -= v[i - window]
        out.append(acc / min(i + 1, window))
    return out


def metric_series(run: Run, recs: Sequence[Trajectory]) -> List[Tuple[int, float]]:
    out = []
    for cp in run.checkpoints:
        m = load_model(cp.model_path)
        check_compatible(m, recs)
        out.append((cp.iteration, transfer_metric(m, recs).aggregate))
    return out


def compare_sources(runs: Dict[str, Run], recs: Sequence[Trajectory], out_dir, episodes: int,
                    target=("rand", "all"), seed: int = 0, jobs: int = 1, window: int = 30) -> dict:
    """Metric curves and held-out performance of the Cal, DR and ADR sources.

    The verdict compares final-checkpoint metrics on the shared recordings
    and final-policy performance in the target cell; each ordering gap is
    tested against the pooled standard error of its pair.
    """
    names = ("cal", "dr", "adr")
    os.makedirs(out_dir, exist_ok=True)
    series, final, perf = {}, {}, {}
    ref = build_setup(runs["adr"].cfg)
    cell = ref.cell(*target)
    for n in names:
        run = runs[n]
        s = metric_series(run, recs)
        vals = [v for _, v in s]
        series[n] = {"iteration": [i for i, _ in s], "metric": vals,
                     "smoothed": moving_average(vals, window) if n == "adr" else vals,
                     "time_average": float(np.mean(vals))}
        rep = transfer_metric(load_model(run.final.model_path), recs)
        per = [x for x in rep.per_trajectory_nll if math.isfinite(x)]
        final[n] = {"aggregate": rep.aggregate, "sem": sem(per) if len(per) > 1 else 0.0}
        pol = load_policy(run.final.policy_path)
        mean, succ, _ = evaluate_policy(pol, cell, episodes,
                                        derive_rng(SeedStream(int(seed), f"compare/eval/{cell.cell}")),
                                        ref.env, ref.base, jobs)
        perf[n] = {"mean_successes": mean, "sem": sem(succ)}

    def gap(d, a, b, key, sign):
        diff = sign * (d[b][key] - d[a][key])
        pooled = math.hypot(d[a]["sem"], d[b]["sem"])
        return {"pair": f"{a}<{b}" if sign > 0 else f"{a}>{b}", "gap": diff, "pooled_sem": pooled,
                "holds": diff > pooled}

    metric_gaps = [gap(final, "adr", "dr", "aggregate", 1), gap(final, "dr", "cal", "aggregate", 1)]
    perf_gaps = [gap(perf, "adr", "dr", "mean_successes", -1), gap(perf, "dr", "cal", "mean_successes", -1)]
    verdict = all(g["holds"] for g in metric_gaps + perf_gaps)
    dip = _has_initial_dip(series["adr"]["smoothed"])
    chash = runs["adr"].config_hash
    rows = []
    for n in names:
        for it, v, sm in zip(series[n]["iteration"], series[n]["metric"], series[n]["smoothed"]):
            rows.append([n, it, v, sm])
    write_csv(os.path.join(out_dir, "compare_series.csv"), ["source", "iteration", "metric", "smoothed"], rows, chash)
    write_csv(os.path.join(out_dir, "compare_final.csv"),
              ["source", "final_metric", "metric_sem", "time_average_metric", "mean_successes", "successes_sem"],
              [[n, final[n]["aggregate"], final[n]["sem"], series[n]["time_average"],
                perf[n]["mean_successes"], perf[n]["sem"]] for n in names], chash)
    with open(os.path.join(out_dir, "compare.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg.plot([(n, series[n]["iteration"], series[n]["smoothed"], "line") for n in names],
                          "training iteration", "transfer metric (nats/step)", "source comparison"))
    out = {"config_hash": chash, "series": series, "final": final, "performance": perf,
           "metric_gaps": metric_gaps, "performance_gaps": perf_gaps, "ordering_holds": verdict,
           "adr_initial_dip": dip, "target": f"{target[0]},{target[1]}"}
    write_json(os.path.join(out_dir, "compare.json"), out)
    return out


def _has_initial_dip(v: Sequence[float]) -> bool:
    if len(v) < 3:
        return False
    k = int(np.argmin(v))
    return 0 < k < len(v) - 1 and v[-1] > v[k]


# -- checkpoint report -------------------------------------------------------------------

def select_checkpoints(series: Sequence[Tuple[int, float, float]], flat_tol: float = 0.02,
                       spacing: float = 1.4) -> List[int]:
    """Pick three checkpoints: the first, the start of the metric plateau, a later plateau point.

    ``series`` holds (iteration, metric, entropy). The plateau level is the
    median metric over the second half of the run; the plateau starts at the
    first checkpoint within ``flat_tol`` (relative) of that level. The third
    checkpoint is the first one at least ``spacing`` times further into
    training than the second, falling back to the last.
    """
    if len(series) < 3:
        raise ArtifactError("need at least 3 checkpoints")
    its = [s[0] for s in series]
    vals = [s[1] for s in series]
    level = float(np.median(vals[len(vals) // 2:]))
    k2 = next(k for k in range(1, len(vals)) if vals[k] <= level + flat_tol * abs(level))
    k2 = min(k2, len(vals) - 2)
    k3 = next((k for k in range(k2 + 1, len(vals)) if its[k] >= spacing * its[k2]), len(vals) - 1)
    return [its[0], its[k2], its[k3]]


REPORT_HEADER = ["iteration", "transfer_metric", "adr_entropy", "mean_successes", "sem_successes",
                 "welch_p_next", "flat_metric_rising_entropy"]


def checkpoints_report(run: Run, iterations: Sequence[int], recs: Sequence[Trajectory], out_dir,
                       episodes_per_policy: Optional[int] = None, block: Optional[int] = None,
                       target=("rand", "all"), seed: Optional[int] = None, jobs: int = 1,
                       flat_tol: float = 0.02) -> dict:
    """Per-checkpoint metric, entropy and interleaved performance with Welch p-values.

    The p-value in row k compares checkpoint k with checkpoint k+1, wrapping
    from the last row to the first.
    """
    cfg = run.cfg
    setup = build_setup(cfg)
    ev = cfg["evaluation"]
    episodes_per_policy = episodes_per_policy or ev["episodes_per_policy"]
    block = block or ev["block"]
    cps = [run.checkpoint(i) for i in iterations]
    metrics, ents, pols = [], [], []
    for cp in cps:
        m = load_model(cp.model_path)
        check_compatible(m, recs)
        metrics.append(transfer_metric(m, recs).aggregate)
        ents.append(run.entropy(cp))
        pols.append(load_policy(cp.policy_path))
    cell = setup.cell(*target)
    seed = int(cfg["seed"]) if seed is None else int(seed)
    res = interleaved_eval(pols, cell, episodes_per_policy, block,
                           derive_rng(SeedStream(seed, f"checkpoints/{cell.cell}")), setup.env, setup.base, jobs)
    n = len(cps)
    pvals, flags = [], []
    for k in range(n):
        j = (k + 1) % n
        pvals.append(welch_ttest(res.successes[k], res.successes[j])[2] if n > 1 else 1.0)
        flat = abs(metrics[j] - metrics[k]) <= flat_tol * abs(metrics[k])
        rising = j > k and _gt(ents[j], ents[k])
        flags.append(bool(flat and rising))
    rows = [[cp.iteration, metrics[k], ents[k], float(np.mean(res.successes[k])), sem(res.successes[k]),
             pvals[k], int(flags[k])] for k, cp in enumerate(cps)]
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "checkpoints.csv"), REPORT_HEADER, rows, run.config_hash)
    out = {"config_hash": run.config_hash, "iterations": [c.iteration for c in cps], "transfer_metric": metrics,
           "adr_entropy": ents, "successes": res.successes, "welch_p": pvals, "flat_metric_rising_entropy": flags}
    write_json(os.path.join(out_dir, "checkpoints.json"), out)
    return out


def _gt(a: float, b: float) -> bool:
    if math.isnan(a) or math.isnan(b):
        return False
    return a > b


def retrofit_model(run: Run, iteration: Optional[int] = None, jobs: int = 1) -> DynModel:
    """Attach a fresh model to a frozen checkpoint policy with the run's data budget."""
    cfg = run.cfg
    setup = build_setup(cfg)
    cp = run.final if iteration is None else run.checkpoint(iteration)
    mc = cfg["model"]
    pol = load_policy(cp.policy_path)
    if cp.adr_path:
        sampler = AdrState.from_dict(read_json(cp.adr_path))
    else:
        sampler = setup.source_config()
    # episodes may end early, so roll out twice the horizon-limited count and keep the newest steps
    episodes = 2 * max(1, -(-mc["max_transitions"] // setup.env.horizon))
    return attach_to_frozen_policy(pol, sampler, episodes, rng_for(cfg, "retrofit", cp.iteration), setup.env,
                                   setup.base, setup.source_config(), mc["bins"], mc["hidden"], mc["epochs"],
                                   mc["batch_size"], mc["learning_rate"], mc["max_transitions"], jobs)
