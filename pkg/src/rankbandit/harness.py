"""Oracle solutions, regret accounting and the seeded experiment runner."""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numba as nb
import numpy as np

from . import rng as _rng
from .environment import _reward_magnitude, _step
from .estimators import _record
from .model import (
    Permutation,
    ProblemInstance,
    UtilityFunction,
    _cuf,
    _user_value,
    utility_value,
)
from .optimizer import (
    DEFAULT_CAP,
    _check_cap,
    _unrank,
    count_permutations,
    cuf_objective,
)
from .policies import PolicyConfig, PolicyState, _decide, _params, _sort_match
from .rng import derive_seed

CSV_FIELDS = (
    "policy_id", "seed", "t", "cumulative_regret", "cumulative_reward",
    "optimal_action_rate", "wall_clock_s",
)

PERSONALIZED_REGRET, EQUAL_REGRET = 0, 1


class Checkpoint(NamedTuple):
    t: int
    cumulative_regret: float
    cumulative_reward: float
    wall_clock_s: float
    optimal_action_rate: float
    optimal_actions: int


@dataclass
class RegretTrace:
    policy_id: str
    seed: int
    checkpoints: list[Checkpoint] = field(default_factory=list)
    init_rounds: int | None = None

    def at(self, t: int) -> Checkpoint:
        for c in self.checkpoints:
            if c.t == t:
                return c
        raise KeyError(f"no checkpoint at t={t} in trace {self.policy_id}/{self.seed}")

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]

    def window_optimal_rate(self, t_from: int, t_to: int) -> float:
        """Fraction of optimal actions over rounds t_from+1 .. t_to."""
        a, b = self.at(t_from), self.at(t_to)
        return (b.optimal_actions - a.optimal_actions) / (t_to - t_from)


@dataclass
class OracleSolution:
    personalized_optima: list[tuple[Permutation, float]]
    equal_optimum: tuple[Permutation, float] | None
    gap: float | None
    utility: UtilityFunction

    def to_dict(self) -> dict:
        d = {
            "utility": self.utility.kind,
            "personalized": [
                {"user_type": i, "slots": list(p.slots), "value": v}
                for i, (p, v) in enumerate(self.personalized_optima)
            ],
        }
        if self.equal_optimum is not None:
            d["equal"] = {"slots": list(self.equal_optimum[0].slots),
                          "value": self.equal_optimum[1]}
            d["gap"] = self.gap
        return d


@nb.njit(cache=True)
def _cuf_top2(w, rho, mu, code, floor, sign, out):
    """Best value of sign*objective (lexicographic tie-break) and the best value
    among all other permutations."""
    M = mu.shape[1]
    K = rho.shape[1]
    P = 1
    for q in range(M - K + 1, M + 1):
        P *= q
    bonus = np.zeros(M)
    ws = w * sign
    cur = np.empty(K, dtype=np.int64)
    avail = np.empty(M, dtype=np.int64)
    best = -np.inf
    second = -np.inf
    for r in range(P):
        _unrank(r, M, K, cur, avail)
        v = cuf_objective(ws, rho, mu, bonus, code, floor, cur)
        if v > best:
            second = best
            best = v
            out[:] = cur
        elif v > second:
            second = v
    return best, second


def personalized_optimum(instance: ProblemInstance, user_type: int) -> tuple[Permutation, float]:
    out = np.empty(instance.num_positions, dtype=np.int64)
    _sort_match(instance.position_prefs[user_type], instance.arm_means[user_type], out)
    v = _user_value(instance.position_prefs[user_type], instance.arm_means[user_type], out)
    return Permutation(out), float(v)


def solve_oracle(instance: ProblemInstance, utility: UtilityFunction | None = None,
                 cap: int = DEFAULT_CAP, need_equal: bool = True,
                 cross_check: bool = True) -> OracleSolution:
    """Per-type optima by sorting, and the collective-utility optimum by enumeration."""
    utility = utility or UtilityFunction()
    N, M, K = instance.num_user_types, instance.num_arms, instance.num_positions
    pers = [personalized_optimum(instance, i) for i in range(N)]
    feasible = count_permutations(M, K) <= cap
    if cross_check and feasible:
        ones = np.ones(1)
        for i, (_, v) in enumerate(pers):
            out = np.empty(K, dtype=np.int64)
            best, _ = _cuf_top2(ones, instance.position_prefs[i:i + 1],
                                instance.arm_means[i:i + 1], 0, 1.0, 1.0, out)
            if abs(best - v) > 1e-12:
                raise AssertionError(f"sort-match optimum for type {i} disagrees with enumeration")
    if not need_equal:
        return OracleSolution(pers, None, None, utility)
    _check_cap(M, K, cap)
    out = np.empty(K, dtype=np.int64)
    best, second = _cuf_top2(instance.arrival_rates, instance.position_prefs,
                             instance.arm_means, utility.code, utility.u_floor, 1.0, out)
    gap = best - second if math.isfinite(second) else 0.0
    return OracleSolution(pers, (Permutation(out), float(best)), float(gap), utility)


def worst_permutations(instance: ProblemInstance, notion: str,
                       utility: UtilityFunction) -> np.ndarray:
    """Per-type rows of the value-minimizing permutation under the given regret notion."""
    N, K = instance.num_user_types, instance.num_positions
    table = np.empty((N, K), dtype=np.int64)
    if notion == "personalized":
        for i in range(N):
            _sort_match(instance.position_prefs[i], -instance.arm_means[i], table[i])
        return table
    _check_cap(instance.num_arms, K, DEFAULT_CAP)
    out = np.empty(K, dtype=np.int64)
    _cuf_top2(instance.arrival_rates, instance.position_prefs, instance.arm_means,
              utility.code, utility.u_floor, -1.0, out)
    table[:] = out
    return table


@nb.njit(cache=True)
def _simulate(lam, rho, mu, rcode, conc, ip, fp, cursor, warm, prng,
              T, S, S_sum, neff, arrivals, rho_hat, meta, fixed, env,
              notion, rcode_u, rfloor, opt_slots, opt_vals, t0, t1, acc, init_at):
    K = rho.shape[1]
    pooled = ip[8]
    out = np.empty(K, dtype=np.int64)
    for t in range(t0 + 1, t1 + 1):
        i = _rng.categorical(env, lam)
        _decide(ip, fp, cursor, warm, prng, T, S, S_sum, neff, arrivals, rho_hat, meta,
                fixed, i, t, out)
        k, clicked = _step(rho[i], mu[i], out, env)
        mag = _reward_magnitude(mu[i, out[k]], clicked, rcode, conc, env)
        li = 0 if pooled else i
        was_init = meta[2]
        if clicked:
            _record(T, S, S_sum, neff, arrivals, rho_hat, meta, li, out, 1, k)
        else:
            _record(T, S, S_sum, neff, arrivals, rho_hat, meta, li, out, 0, -1)
        if was_init == 0 and meta[2] == 1:
            init_at[0] = t
        if notion == 0:
            gap = opt_vals[i] - _user_value(rho[i], mu[i], out)
            ref = i
        else:
            gap = opt_vals[0] - _cuf(lam, rho, mu, out, rcode_u, rfloor)
            ref = 0
        # equal-valued permutations can leave a rounding-level negative gap
        if gap > 0.0:
            acc[0] += gap
        acc[1] += mag
        same = True
        for p in range(K):
            if out[p] != opt_slots[ref, p]:
                same = False
                break
        if same:
            acc[2] += 1.0


def geometric_checkpoints(horizon: int, extra: Iterable[int] = ()) -> list[int]:
    pts = {horizon}
    p = 1
    while p < horizon:
        pts.add(p)
        p *= 2
    pts.update(int(e) for e in extra if 1 <= int(e) <= horizon)
    return sorted(pts)


def _regret_targets(instance, config, oracle):
    N, K = instance.num_user_types, instance.num_positions
    if config.regret_notion == "personalized":
        slots = np.array([p.as_array() for p, _ in oracle.personalized_optima], dtype=np.int64)
        vals = np.array([v for _, v in oracle.personalized_optima])
        return 0, slots, vals
    p, v = oracle.equal_optimum
    return 1, np.tile(p.as_array(), (N, 1)), np.array([v])


def _fixed_table(instance, config, oracle):
    N, K = instance.num_user_types, instance.num_positions
    if config.family == "oracle":
        return _regret_targets(instance, config, oracle)[1]
    if config.family == "worst":
        return worst_permutations(instance, config.regret_notion, config.utility)
    if config.family == "fixed":
        if config.fixed_slots is None:
            raise ValueError("fixed policy needs fixed_slots")
        t = np.zeros((N, K), dtype=np.int64)
        t[:] = np.asarray(config.fixed_slots, dtype=np.int64)
        for row in t:
            Permutation(row).check(instance.num_arms, K)
        return t
    return None


def run(instance: ProblemInstance, config: PolicyConfig, horizon: int, seed: int,
        checkpoints: Sequence[int] | None = None, policy_id: str = "policy",
        oracle: OracleSolution | None = None) -> RegretTrace:
    """Simulate ``horizon`` rounds and return cumulative regret at each checkpoint.

    Regret is accumulated from ground-truth expected gaps, not realized clicks.
    The environment and the policy draw from independent streams derived from
    ``seed``.
    """
    instance.check()
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    N, M, K = instance.num_user_types, instance.num_arms, instance.num_positions
    cps = sorted(set(int(c) for c in (checkpoints or geometric_checkpoints(horizon))))
    if cps[0] < 1 or cps[-1] > horizon:
        raise ValueError("checkpoints must lie in [1, horizon]")
    if cps[-1] != horizon:
        cps.append(horizon)
    notion = config.regret_notion
    if oracle is None or (notion == "equal" and oracle.equal_optimum is None) \
            or oracle.utility != config.utility:
        oracle = solve_oracle(instance, config.utility, need_equal=notion == "equal",
                              cross_check=False)
    family = config.family
    if family in ("oracle", "worst"):
        family = "fixed"
    cfg = config if family == config.family else _replace_family(config, family)
    state = PolicyState.fresh(cfg, N, M, K, derive_seed(seed, 1),
                              fixed=_fixed_table(instance, config, oracle))
    if family in ("greedy", "ucb") and cfg.treatment == "equal" \
            and cfg.optimizer.kind == "brute_force":
        _check_cap(M, K, cfg.optimizer.cap)
    env = _rng.RngStream(derive_seed(seed, 0))
    ip, fp = _params(cfg, N)
    code, slots, vals = _regret_targets(instance, config, oracle)
    rm = instance.reward_model
    L = state.learner
    acc = np.zeros(3)
    init_at = np.array([-1], dtype=np.int64)
    trace = RegretTrace(policy_id, int(seed))
    t_prev = 0
    elapsed = 0.0
    for cp in cps:
        start = time.perf_counter()
        _simulate(instance.arrival_rates, instance.position_prefs, instance.arm_means,
                  rm.code, rm.concentration or 0.0, ip, fp, state.explore_cursor, state.warm,
                  state.rng.state, L.T, L.S, L.S_sum, L.neff, L.arrival_counts, L.rho_hat,
                  L.meta, state.fixed, env.state, code, config.utility.code,
                  config.utility.u_floor, slots, vals, t_prev, cp, acc, init_at)
        elapsed += time.perf_counter() - start
        trace.checkpoints.append(
            Checkpoint(cp, float(acc[0]), float(acc[1]), elapsed, acc[2] / cp, int(acc[2]))
        )
        t_prev = cp
    trace.init_rounds = int(init_at[0]) if init_at[0] >= 0 else None
    return trace


def _replace_family(config: PolicyConfig, family: str) -> PolicyConfig:
    return replace(config, family=family)


def sublinearity_check(traces: Iterable[RegretTrace], t1: int, t2: int) -> dict:
    """Mean over traces of R(t2)/R(t1); traces with R(t1) = 0 are excluded."""
    if t2 != 2 * t1:
        raise ValueError("sublinearity check needs t2 = 2 * t1")
    ratios, excluded = [], []
    for tr in traces:
        r1, r2 = tr.at(t1).cumulative_regret, tr.at(t2).cumulative_regret
        if r1 == 0.0:
            excluded.append(tr.seed)
        else:
            ratios.append(r2 / r1)
    return {
        "t1": t1,
        "t2": t2,
        "mean_ratio": float(np.mean(ratios)) if ratios else None,
        "ratios": ratios,
        "excluded_seeds": excluded,
    }


def _run_job(args):
    instance, config, horizon, seed, checkpoints, pid = args
    return run(instance, config, horizon, seed, checkpoints, pid)


def run_many(instance: ProblemInstance, policies: dict[str, PolicyConfig], horizon: int,
             seeds: Sequence[int], checkpoints: Sequence[int] | None = None,
             jobs: int = 1) -> list[RegretTrace]:
    """Every (policy, seed) pair; results are sorted by (policy_id, seed)."""
    jobs_list = [(instance, cfg, horizon, s, checkpoints, pid)
                 for pid, cfg in policies.items() for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            traces = list(ex.map(_run_job, jobs_list))
    else:
        traces = [_run_job(j) for j in jobs_list]
    return sorted(traces, key=lambda tr: (tr.policy_id, tr.seed))


def write_csv(traces: Iterable[RegretTrace], fh) -> None:
    rows = []
    for tr in traces:
        for c in tr.checkpoints:
            rows.append((tr.policy_id, tr.seed, c.t, c.cumulative_regret, c.cumulative_reward,
                         c.optimal_action_rate, c.wall_clock_s))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for pid, seed, t, reg, rew, rate, wall in rows:
        w.writerow([pid, seed, t, f"{reg:.10g}", f"{rew:.10g}", f"{rate:.10g}", f"{wall:.10g}"])


def csv_text(traces: Iterable[RegretTrace]) -> str:
    buf = io.StringIO()
    write_csv(traces, buf)
    return buf.getvalue()


def read_csv(fh) -> list[RegretTrace]:
    by_key: dict[tuple[str, int], RegretTrace] = {}
    for row in csv.DictReader(fh):
        key = (row["policy_id"], int(row["seed"]))
        tr = by_key.setdefault(key, RegretTrace(*key))
        t = int(row["t"])
        rate = float(row["optimal_action_rate"])
        tr.checkpoints.append(Checkpoint(t, float(row["cumulative_regret"]),
                                         float(row["cumulative_reward"]),
                                         float(row["wall_clock_s"]), rate, round(rate * t)))
    return [by_key[k] for k in sorted(by_key)]
