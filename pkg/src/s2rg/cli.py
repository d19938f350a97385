"""Command-line entry point: ``s2rg <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from .config import ConfigError, hash_of, load_config, resolve
from .core import InvariantError, TrajectoryFormatError, load_recordings
from .metric import IncompatibleError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ARTIFACT = 0, 2, 3, 4

log = logging.getLogger("s2rg")

PRESETS = {
    "default": {},
    "linear": {"env": {"name": "linear", "horizon": 50}, "source": {"mode": "rand", "custom": "partial"},
               "cem": {"iterations": 5, "population": 8, "episodes_per_candidate": 2},
               "model": {"epochs": 5, "batch_size": 64}, "checkpoint_every": 5},
    "cal": {"run_id": "cal", "source": {"kind": "dr", "mode": "cal", "custom": "all"}},
    "dr": {"run_id": "dr", "source": {"kind": "dr", "mode": "rand", "custom": "all"}},
    # with every effect active a trained policy scores about 15, so expansion needs a lower bar
    "adr": {"run_id": "adr", "source": {"kind": "adr", "mode": "rand", "custom": "all", "adr": {"t_high": 12.0}}},
}


class UsageError(Exception):
    pass


def _cell(text: str):
    from .randomization import parse_cell

    try:
        return parse_cell(text)
    except InvariantError as exc:
        raise UsageError(str(exc)) from None


def _config(args) -> dict:
    if args.config is None:
        return resolve({}, args.set or [])
    if not os.path.exists(args.config):
        raise ConfigError(f"config file {args.config} not found")
    return load_config(args.config, args.set or [])


def _out(path: Optional[str], default: str) -> str:
    return path if path else default


def cmd_gen_config(args) -> int:
    cfg = resolve(PRESETS[args.preset], args.set or [])
    text = json.dumps(cfg, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out} (config_hash {hash_of(cfg)})")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args) -> int:
    from .harness import train

    cfg = _config(args)
    out = _out(args.out, os.path.join("runs", cfg["run_id"]))
    cps = train(cfg, out, args.jobs, progress=log.info)
    print(f"trained {cfg['run_id']}: {len(cps)} checkpoints in {out} (config_hash {hash_of(cfg)})")
    return EXIT_OK


def cmd_record(args) -> int:
    from .harness import build_setup, load_behavior, record

    cfg = _config(args)
    mode, custom = _cell(args.target)
    setup = build_setup(cfg)
    pol = load_behavior(args.policy)
    seed = cfg["seed"] if args.seed is None else args.seed
    paths = record(setup, pol, mode, custom, args.episodes, seed, args.out, args.jobs,
                   "pd" if args.policy == "pd" else os.path.basename(args.policy))
    print(f"recorded {len(paths)} episodes in {args.out} (target {mode.value},{custom.value})")
    return EXIT_OK


def cmd_metric(args) -> int:
    from .harness import metric_report, write_json

    if not os.path.isdir(args.recordings):
        raise FileNotFoundError(args.recordings)
    rep = metric_report(args.model, args.recordings)
    if args.out:
        write_json(args.out, rep)
    print(f"transfer metric {rep['aggregate']:.6f} nats/step over {rep['step_count']} steps "
          f"({len(rep['per_trajectory_nll'])} trajectories)")
    return EXIT_OK


def cmd_sweep_holdout(args) -> int:
    from .harness import load_behavior, load_run, near_minimum, sweep_holdout

    run = load_run(args.run)
    beh = load_behavior(args.behavior) if args.behavior else None
    out = _out(args.out, os.path.join(args.run, "sweep"))
    s = sweep_holdout(run, out, args.episodes, args.record_episodes, beh, args.jobs)
    for c, m, p in zip(s["cells"], s["transfer_metric"], s["mean_successes"]):
        print(f"{c:>14}  metric {m:8.4f}  successes {p:6.2f}")
    src = f"{run.cfg['source']['mode']},{run.cfg['source']['custom']}"
    if src in s["cells"]:
        near = near_minimum(s["transfer_metric"], s["cells"].index(src))
        print(f"training cell {src} near minimum metric: {near}")
    print(f"pearson r = {s['pearson_r']:.4f}, R^2 = {s['r_squared']:.4f}")
    return EXIT_OK


def cmd_compare_sources(args) -> int:
    from .harness import build_setup, compare_sources, load_policy, load_run, record

    runs = {"cal": load_run(args.cal), "dr": load_run(args.dr), "adr": load_run(args.adr)}
    mode, custom = _cell(args.target)
    out = args.out
    rec_dir = args.recordings
    if rec_dir is None:
        # default behavioral policy: the calibration-trained policy
        rec_dir = os.path.join(out, "recordings")
        cfg = runs["adr"].cfg
        record(build_setup(cfg), load_policy(runs["cal"].final.policy_path), mode, custom,
               args.record_episodes, cfg["seed"], rec_dir, args.jobs, "cal-final")
    recs = load_recordings(rec_dir)
    res = compare_sources(runs, recs, out, args.episodes, (mode.value, custom.value),
                          runs["adr"].cfg["seed"], args.jobs)
    for n in ("cal", "dr", "adr"):
        print(f"{n:>4}: final metric {res['final'][n]['aggregate']:.4f} +- {res['final'][n]['sem']:.4f}, "
              f"time-avg {res['series'][n]['time_average']:.4f}, successes "
              f"{res['performance'][n]['mean_successes']:.2f} +- {res['performance'][n]['sem']:.2f}")
    print(f"ADR metric initial dip: {res['adr_initial_dip']}")
    print("verdict: NLL(ADR) < NLL(DR) < NLL(Cal) and successes ADR > DR > Cal "
          + ("HOLDS" if res["ordering_holds"] else "DOES NOT HOLD"))
    return EXIT_OK


def cmd_checkpoints_report(args) -> int:
    from .harness import checkpoints_report, load_run, metric_series, select_checkpoints

    run = load_run(args.run)
    recs = load_recordings(args.recordings)
    mode, custom = _cell(args.target)
    if args.checkpoints == "auto":
        ms = metric_series(run, recs)
        series = [(it, m, run.entropy(run.checkpoint(it))) for it, m in ms]
        its = select_checkpoints(series)
    else:
        try:
            its = [int(x) for x in args.checkpoints.split(",")]
        except ValueError:
            raise UsageError("--checkpoints takes 'auto' or a comma-separated list of iterations") from None
    out = _out(args.out, os.path.join(args.run, "report"))
    r = checkpoints_report(run, its, recs, out, args.episodes_per_policy, args.block, (mode.value, custom.value),
                           args.seed, args.jobs)
    print(f"{'iteration':>9} {'metric':>9} {'entropy':>9} {'successes':>9} {'p(next)':>8}  flag")
    for k, it in enumerate(r["iterations"]):
        print(f"{it:>9} {r['transfer_metric'][k]:9.4f} {r['adr_entropy'][k]:9.3f} "
              f"{np.mean(r['successes'][k]):9.2f} {r['welch_p'][k]:8.4f}  "
              f"{'flat-metric/rising-entropy' if r['flat_metric_rising_entropy'][k] else ''}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="s2rg", description="Sim-to-sim transfer-metric toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON run config (defaults when omitted)")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--jobs", type=int, default=1, help="parallel episode workers")

    sp = sub.add_parser("gen-config", help="write a config document")
    sp.add_argument("--preset", choices=sorted(PRESETS), default="default")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_gen_config)

    sp = sub.add_parser("train", help="train a policy with a co-trained dynamics model")
    common(sp)
    sp.add_argument("--out", help="run directory (default runs/<run_id>)")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("record", help="record target-environment trajectories")
    common(sp)
    sp.add_argument("--policy", required=True, help="policy checkpoint, or 'pd' for the PD oracle")
    sp.add_argument("--target", default="rand,all", help="target cell, e.g. rand,all")
    sp.add_argument("--episodes", type=int, default=30)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_record)

    sp = sub.add_parser("metric", help="transfer metric of a model on a recording set")
    sp.add_argument("--model", required=True)
    sp.add_argument("--recordings", required=True)
    sp.add_argument("--out", help="write the report JSON here")
    sp.set_defaults(fn=cmd_metric)

    sp = sub.add_parser("sweep-holdout", help="metric and performance over the 9 held-out cells")
    common(sp, config=False)
    sp.add_argument("--run", required=True)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--record-episodes", type=int)
    sp.add_argument("--behavior", help="behavioral policy for recordings (default: the trained policy)")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_sweep_holdout)

    sp = sub.add_parser("compare-sources", help="Cal / DR / ADR metric curves and ordering verdict")
    common(sp, config=False)
    sp.add_argument("--cal", required=True)
    sp.add_argument("--dr", required=True)
    sp.add_argument("--adr", required=True)
    sp.add_argument("--recordings", help="shared recording set (default: record with the Cal policy)")
    sp.add_argument("--record-episodes", type=int, default=30)
    sp.add_argument("--target", default="rand,all")
    sp.add_argument("--episodes", type=int, default=1000, help="evaluation episodes per final policy")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_compare_sources)

    sp = sub.add_parser("checkpoints-report", help="per-checkpoint metric, entropy and Welch tests")
    common(sp, config=False)
    sp.add_argument("--run", required=True)
    sp.add_argument("--recordings", required=True)
    sp.add_argument("--checkpoints", default="auto", help="'auto' or comma-separated iterations")
    sp.add_argument("--episodes-per-policy", type=int)
    sp.add_argument("--block", type=int)
    sp.add_argument("--target", default="rand,all")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_checkpoints_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    from .harness import ArtifactError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.fn(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArtifactError, IncompatibleError, TrajectoryFormatError) as exc:
        print(f"incompatible artifact: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, InvariantError) as exc:
        print(f"incompatible artifact: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
