"""Transfer-metric evaluation and the statistics used to validate it."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .core import InvariantError, SeedStream, Trajectory, spawn_seed
from .dynmodel import DynModel, transitions
from .rollout import EpisodeJob, run_jobs


class DegenerateInputError(ValueError):
    """Statistic undefined for the given input (e.g. zero variance)."""


class IncompatibleError(ValueError):
    """Recordings do not match the model's dimensions."""


@dataclass
class MetricReport:
    per_trajectory_nll: List[float]
    aggregate: float
    step_count: int
    model_id: str = ""
    recording_id: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def transfer_metric(m: DynModel, recordings: Sequence[Trajectory], model_id: str = "",
                    recording_id: str = "") -> MetricReport:
    """Mean per-step NLL of ``m`` over every transition in ``recordings``.

    Per-trajectory means are reported alongside; the aggregate weighs each
    trajectory by its length.
    """
    if not recordings:
        raise InvariantError("empty recording set")
    per, total, count = [], 0.0, 0
    for k, tr in enumerate(recordings):
        if tr.state_dim != m.state_dim or tr.action_dim != m.action_dim:
            raise IncompatibleError(
                f"recording {k} has dims ({tr.state_dim}, {tr.action_dim}), "
                f"model expects ({m.state_dim}, {m.action_dim})")
        if len(tr) == 0:
            per.append(float("nan"))
            continue
        S, A, D = transitions([tr], m.angular_dims)
        v = m.nll_batch(S, A, D)
        s = math.fsum(v.tolist())
        per.append(s / len(v))
        total += s
        count += len(v)
    if count == 0:
        raise InvariantError("recordings contain no transitions")
    return MetricReport(per, total / count, count, model_id, recording_id)


# -- descriptive statistics ------------------------------------------------------

def _pair(xs, ys) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=np.float64).reshape(-1)
    y = np.asarray(ys, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise InvariantError("xs and ys differ in length")
    if x.shape[0] < 3:
        raise InvariantError("need at least 3 points")
    return x, y


def pearson(xs, ys) -> float:
    x, y = _pair(xs, ys)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def linear_fit(xs, ys) -> Tuple[float, float, float]:
    """Least-squares line; returns ``(slope, intercept, r_squared)``."""
    x, y = _pair(xs, ys)
    dx, dy = x - x.mean(), y - y.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateInputError("zero x-variance")
    slope = float(dx @ dy) / sxx
    intercept = float(y.mean()) - slope * float(x.mean())
    syy = float(dy @ dy)
    r2 = 1.0 if syy == 0.0 else pearson(x, y) ** 2
    return slope, intercept, r2


def sem(values) -> float:
    """Standard error of the mean (sample std with ddof=1)."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.shape[0] < 2:
        raise InvariantError("need at least 2 values")
    return float(v.std(ddof=1) / math.sqrt(v.shape[0]))


def _ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    r = np.empty(len(v))
    r[order] = np.arange(len(v), dtype=np.float64)
    # average ties
    for val in np.unique(v):
        idx = v == val
        r[idx] = r[idx].mean()
    return r


def spearman(xs, ys) -> float:
    x, y = _pair(xs, ys)
    return pearson(_ranks(x), _ranks(y))


# -- Student t via the regularized incomplete beta ------------------------------

def _betacf(a: float, b: float, x: float, tol: float = 1e-12, max_iter: int = 10000) -> float:
    # modified Lentz evaluation of the continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise InvariantError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise InvariantError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    lbt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
           + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(lbt) * _betacf(a, b, x) / a
    return 1.0 - math.exp(lbt) * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, dof: float) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)``."""
    if dof <= 0:
        raise InvariantError("dof must be positive")
    if math.isinf(t):
        return 0.0
    return min(1.0, max(0.0, betainc(dof / 2.0, 0.5, dof / (dof + t * t))))


def student_t_cdf(t: float, dof: float) -> float:
    tail = 0.5 * student_t_sf2(t, dof)
    return 1.0 - tail if t > 0 else tail


def welch_ttest(a, b) -> Tuple[float, float, float]:
    """Two-sided unequal-variance t-test; returns ``(t, dof, p)``."""
    x = np.asarray(a, dtype=np.float64).reshape(-1)
    y = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise InvariantError("each sample needs at least 2 values")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvariantError("non-finite sample values")
    n1, n2 = x.shape[0], y.shape[0]
    v1, v2 = float(x.var(ddof=1)) / n1, float(y.var(ddof=1)) / n2
    diff = float(x.mean()) - float(y.mean())
    se2 = v1 + v2
    if se2 == 0.0:
        if diff == 0.0:
            return 0.0, float(n1 + n2 - 2), 1.0
        return math.copysign(math.inf, diff), float(n1 + n2 - 2), 0.0
    t = diff / math.sqrt(se2)
    dof = se2 * se2 / (v1 * v1 / (n1 - 1) + v2 * v2 / (n2 - 1))
    return t, dof, student_t_sf2(t, dof)


@dataclass
class StatsResult:
    pearson_r: float
    slope: float
    intercept: float
    r_squared: float
    welch: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    sem: Dict[str, float] = field(default_factory=dict)


# -- interleaved evaluation ------------------------------------------------------

@dataclass
class InterleavedResult:
    successes: List[List[int]]
    schedule: List[int]

    def means(self) -> List[float]:
        return [float(np.mean(s)) for s in self.successes]


def interleave_schedule(n_policies: int, episodes_per_policy: int = 20, block: int = 5) -> List[int]:
    if block < 1 or episodes_per_policy % block:
        raise InvariantError("block must divide episodes_per_policy")
    rounds = episodes_per_policy // block
    return [i for _ in range(rounds) for i in range(n_policies) for _ in range(block)]


def interleaved_eval(policies: Sequence, cfg, episodes_per_policy: int = 20, block: int = 5, rng=None,
                     env=None, base=None, jobs: int = 1) -> InterleavedResult:
    """Evaluate policies in rotating blocks with environments from one shared stream.

    Conditions are drawn in schedule order, so neighbouring blocks of
    different policies see comparable environments.
    """
    from .envs import BlockRotate2D
    from .policy import make_sampler

    env = env if env is not None else BlockRotate2D()
    rng = rng if rng is not None else np.random.default_rng(0)
    sched = interleave_schedule(len(policies), episodes_per_policy, block)
    sampler = make_sampler(cfg, base if base is not None else env.default_params())
    root = spawn_seed(rng)
    jobs_, pols = [], []
    for k, i in enumerate(sched):
        params, custom, _ = sampler.sample(rng)
        jobs_.append(EpisodeJob(params, custom, SeedStream(root, f"interleave/{k}"),
                                {"policy": str(i), "slot": str(k)}))
        pols.append(policies[i])
    results = run_jobs(env, jobs_, pols, jobs)
    succ: List[List[int]] = [[] for _ in policies]
    for i, (_, out) in zip(sched, results):
        succ[i].append(out.successes)
    return InterleavedResult(succ, sched)
