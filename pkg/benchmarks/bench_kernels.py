"""Compare episode throughput of the compiled kernel, its Python fallback, and the generic step loop.

    python benchmarks/bench_kernels.py --episodes 200
"""

import argparse
import time

import numpy as np

from s2rg import kernels
from s2rg.envs import BlockRotate2D
from s2rg.policy import Policy
from s2rg.randomization import RandomizationConfig, default_block_ranges, sample_custom, sample_params
from s2rg.rollout import rollout


def _conditions(n, seed):
    env = BlockRotate2D()
    cfg = RandomizationConfig(default_block_ranges(), "rand", "all")
    rng = np.random.default_rng(seed)
    return env, [(sample_params(cfg, rng, env.default_params()), sample_custom(cfg, rng)) for _ in range(n)]


def bench(label, env, conds, policy, seed, **kw):
    t0 = time.perf_counter()
    steps = 0
    outs = []
    for k, (params, custom) in enumerate(conds):
        traj, out = rollout(env, params, custom, policy, np.random.default_rng([seed, k]), **kw)
        steps += len(traj)
        outs.append((out.successes, traj.terminal_state.tobytes()))
    dt = time.perf_counter() - t0
    print(f"{label:>10}: {len(conds) / dt:9.1f} episodes/s  {steps / dt / 1e3:8.1f} ksteps/s  ({dt:.2f} s)")
    return dt, outs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=200)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    env, conds = _conditions(args.episodes, args.seed)
    g = np.random.default_rng(args.seed)
    pol = Policy(3, 1, args.hidden, 0.3 * g.standard_normal(Policy.n_weights(3, 1, args.hidden)))
    print(f"backends available: {sorted(kernels.BACKENDS)}; horizon {env.horizon}, hidden {args.hidden}")
    results = {}
    if "compiled" in kernels.BACKENDS:
        results["compiled"] = bench("compiled", env, conds, pol, args.seed, backend="compiled")
    results["python"] = bench("python", env, conds, pol, args.seed, backend="python")
    # the generic loop is slow; time a slice of the episodes
    n_gen = max(1, len(conds) // 10)
    results["generic"] = bench("generic", env, conds[:n_gen], pol, args.seed, generic=True)
    ref = results["python"][1]
    if "compiled" in results:
        print(f"compiled matches the fallback bit for bit: {results['compiled'][1] == ref}")
    # the generic loop sums the MLP in numpy order, so only outcomes are compared
    gen = [s for s, _ in results["generic"][1]]
    print(f"generic loop agrees on success counts: {gen == [s for s, _ in ref[:len(gen)]]}")
    if "compiled" in results:
        print(f"speedup compiled / python: {results['python'][0] / results['compiled'][0]:.1f}x")


if __name__ == "__main__":
    main()
