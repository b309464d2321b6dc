"""GreedyRank and UCBRank with personalized or equal treatment, plus the
single-type UCB baseline and the fixed/random reference policies.

Decisions are made by one jitted routine, :func:`_decide`, which the
simulation kernel calls directly; the Python functions here wrap it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import rng as _rng
from .environment import Feedback
from .estimators import LearnerState, _arm_mean, _neff_value, record
from .model import Permutation, UtilityFunction
from .optimizer import (
    OptimizerConfig,
    _check_cap,
    _fraction,
    cuf_argmax_enumerate,
    cuf_argmax_pruned,
    cuf_argmax_sampled,
)
from .rng import RngStream

GREEDY, UCB, FIXED, RANDOM = 0, 1, 2, 3
PERSONALIZED, EQUAL = 0, 1
_FAMILIES = {"greedy": GREEDY, "ucb": UCB, "fixed": FIXED, "random": RANDOM}


@dataclass(frozen=True)
class PolicyConfig:
    """``scale`` is the epsilon scale for greedy and the confidence scale for UCB.

    ``fixed`` plays ``fixed_slots`` (one row per user type, or a single row);
    the harness also accepts the ``oracle`` and ``worst`` shorthands, which it
    resolves against the ground truth.
    """

    family: str = "ucb"
    scale: float = 1.0
    treatment: str = "personalized"
    utility: UtilityFunction = field(default_factory=UtilityFunction)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    baseline_single_type: bool = False
    neff_rule: str = "incremental"
    fixed_slots: tuple | None = None
    regret: str | None = None

    def __post_init__(self):
        if self.family not in (*_FAMILIES, "oracle", "worst"):
            raise ValueError(f"unknown policy family {self.family!r}")
        if self.treatment not in ("personalized", "equal"):
            raise ValueError(f"unknown treatment {self.treatment!r}")
        if self.family in ("greedy", "ucb") and not self.scale >= 0:
            raise ValueError("scale must be nonnegative")
        if self.baseline_single_type and (self.family != "ucb" or self.treatment != "personalized"):
            raise ValueError("the single-type baseline is personalized UCB")
        if self.regret not in (None, "personalized", "equal"):
            raise ValueError(f"unknown regret notion {self.regret!r}")

    @property
    def regret_notion(self) -> str:
        if self.regret:
            return self.regret
        return "equal" if self.treatment == "equal" else "personalized"

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        d = dict(d)
        d.pop("id", None)
        if "utility" in d:
            u = d["utility"]
            d["utility"] = UtilityFunction(u) if isinstance(u, str) else UtilityFunction(**u)
        if "optimizer" in d:
            d["optimizer"] = OptimizerConfig.from_dict(d["optimizer"])
        if d.get("fixed_slots") is not None:
            d["fixed_slots"] = tuple(tuple(r) if isinstance(r, (list, tuple)) else r
                                     for r in d["fixed_slots"])
        return cls(**d)


@dataclass(eq=False)
class PolicyState:
    learner: LearnerState
    rng: RngStream
    explore_cursor: np.ndarray = field(default_factory=lambda: np.array([1], dtype=np.int64))
    warm: np.ndarray | None = None
    fixed: np.ndarray | None = None

    @classmethod
    def fresh(cls, config: PolicyConfig, N: int, M: int, K: int, seed: int,
              fixed: np.ndarray | None = None) -> "PolicyState":
        n_learn = 1 if config.baseline_single_type else N
        if fixed is None:
            fixed = np.zeros((N, K), dtype=np.int64)
            if config.fixed_slots is not None:
                fixed[:] = np.asarray(config.fixed_slots, dtype=np.int64)
        return cls(
            learner=LearnerState.empty(n_learn, M, K, config.neff_rule),
            rng=RngStream(seed),
            warm=np.full(K, -1, dtype=np.int64),
            fixed=np.ascontiguousarray(fixed, dtype=np.int64),
        )

    @property
    def init_done(self) -> bool:
        return self.learner.initialized

    @property
    def cursor(self) -> int:
        return int(self.explore_cursor[0])


def init_permutation(t: int, M: int, K: int) -> Permutation:
    """Round-robin start-up ranking: position p shows arm (t + p + 1) mod M."""
    out = np.empty(K, dtype=np.int64)
    _rotation(t, M, K, out)
    return Permutation(out)


def explore_permutation(cursor: int, M: int, K: int) -> Permutation:
    out = np.empty(K, dtype=np.int64)
    _rotation(cursor, M, K, out)
    return Permutation(out)


@nb.njit(cache=True)
def _rotation(offset, M, K, out):
    for p in range(K):
        out[p] = (offset + p + 1) % M


@nb.njit(cache=True)
def _sort_match(pos_scores, arm_scores, out):
    arms = np.argsort(-arm_scores, kind="mergesort")
    positions = np.argsort(-pos_scores, kind="mergesort")
    for a in range(out.shape[0]):
        out[positions[a]] = arms[a]


def personalized_rank(rho_row, arm_scores, K: int) -> Permutation:
    """Best-scoring arm to the most-preferred position, second to second, ...

    Ties go to the lower arm index and the lower position index.
    """
    rho_row = np.ascontiguousarray(rho_row, dtype=np.float64)
    if rho_row.shape[0] != K:
        raise ValueError(f"position row has {rho_row.shape[0]} entries, expected {K}")
    out = np.empty(K, dtype=np.int64)
    _sort_match(rho_row, np.ascontiguousarray(arm_scores, dtype=np.float64), out)
    return Permutation(out)


@nb.njit(cache=True)
def _ucb_bonus(scale, t, n):
    if n <= 0.0:
        raise ValueError("effective pull count is zero after initialization")
    return scale * math.log(t) / n


@nb.njit(cache=True)
def _decide(ip, fp, cursor, warm, prng, T, S, S_sum, neff, arrivals, rho_hat, meta,
            fixed, user_type, t, out):
    family, treatment, ucode, opt_kind = ip[0], ip[1], ip[2], ip[3]
    prune, min_samples, cap, rule, pooled, num_types = ip[4], ip[5], ip[6], ip[7], ip[8], ip[9]
    floor, scale, frac_start, frac_ramp = fp[0], fp[1], fp[2], fp[3]
    Nl, M, K = T.shape[0], T.shape[1], T.shape[2]

    if family == FIXED:
        out[:] = fixed[user_type]
        return
    if family == RANDOM:
        pool = np.arange(M)
        for p in range(K):
            j = p + _rng.randint(prng, M - p)
            tmp = pool[p]
            pool[p] = pool[j]
            pool[j] = tmp
            out[p] = pool[p]
        return
    if meta[2] == 0:
        _rotation(t, M, K, out)
        return

    i = 0 if pooled else user_type
    if family == GREEDY:
        rate = scale / math.sqrt(t)
        if treatment == EQUAL:
            rate *= num_types
        if _rng.uniform(prng) < rate:
            _rotation(cursor[0], M, K, out)
            cursor[0] = cursor[0] % M + 1
            return

    if treatment == PERSONALIZED:
        scores = np.empty(M)
        for j in range(M):
            scores[j] = _arm_mean(T, S_sum, neff, rho_hat, i, j, rule)
            if family == UCB:
                scores[j] += _ucb_bonus(scale, t, _neff_value(T, neff, rho_hat, i, j, rule))
        _sort_match(rho_hat[i], scores, out)
        return

    total = 0.0
    for q in range(Nl):
        total += arrivals[q]
    w = np.empty(Nl)
    for q in range(Nl):
        w[q] = arrivals[q] / total
    mu_hat = np.empty((Nl, M))
    bonus = np.zeros(M)
    for q in range(Nl):
        for j in range(M):
            mu_hat[q, j] = _arm_mean(T, S_sum, neff, rho_hat, q, j, rule)
            if family == UCB:
                bonus[j] += _ucb_bonus(scale, t, _neff_value(T, neff, rho_hat, q, j, rule))
    if opt_kind == 0:
        if prune:
            cuf_argmax_pruned(w, rho_hat, mu_hat, bonus, ucode, floor, warm, out)
        else:
            cuf_argmax_enumerate(w, rho_hat, mu_hat, bonus, ucode, floor, out)
    else:
        P = 1
        for q in range(M - K + 1, M + 1):
            P *= q
        replace = P > cap
        n = int(math.ceil(_fraction(frac_start, frac_ramp, t) * P))
        if n < min_samples:
            n = min_samples
        if not replace and n > P:
            n = P
        cuf_argmax_sampled(w, rho_hat, mu_hat, bonus, ucode, floor, P, n, replace, prng, out)
    warm[:] = out


def _params(config: PolicyConfig, num_types: int):
    fam = _FAMILIES.get(config.family, FIXED)
    opt = config.optimizer
    ip = np.array(
        [
            fam,
            EQUAL if config.treatment == "equal" else PERSONALIZED,
            config.utility.code,
            0 if opt.kind == "brute_force" else 1,
            int(opt.prune),
            opt.min_samples,
            opt.cap,
            1 if config.neff_rule == "recomputed" else 0,
            int(config.baseline_single_type),
            num_types,
        ],
        dtype=np.int64,
    )
    fp = np.array(
        [config.utility.u_floor, config.scale, opt.schedule.start, opt.schedule.ramp_rounds]
    )
    return ip, fp


def decide(state: PolicyState, config: PolicyConfig, user_type: int, t: int,
           num_types: int | None = None) -> Permutation:
    """The permutation the policy shows at round ``t`` (1-based) to ``user_type``."""
    if t < 1:
        raise ValueError("rounds are numbered from 1")
    L = state.learner
    N = num_types if num_types is not None else L.shape[0]
    if (config.family in ("greedy", "ucb") and config.treatment == "equal"
            and config.optimizer.kind == "brute_force"):
        _check_cap(L.shape[1], L.shape[2], config.optimizer.cap)
    ip, fp = _params(config, N)
    out = np.empty(L.shape[2], dtype=np.int64)
    _decide(ip, fp, state.explore_cursor, state.warm, state.rng.state, L.T, L.S, L.S_sum,
            L.neff, L.arrival_counts, L.rho_hat, L.meta, state.fixed, user_type, t, out)
    return Permutation(out)


def observe(state: PolicyState, config: PolicyConfig, user_type: int, perm,
            feedback: Feedback) -> None:
    """Record a round into the policy's learner (type 0 for the pooled baseline)."""
    if config.baseline_single_type:
        user_type = 0
        feedback = Feedback(0, feedback.reward, feedback.clicked_arm)
    record(state.learner, user_type, perm, feedback)


def _require(config: PolicyConfig, family: str, state: PolicyState):
    if config.family != family:
        raise ValueError(f"expected a {family} configuration, got {config.family}")
    if not state.init_done:
        raise ValueError("initialization phase has not finished")


def greedy_decide(state: PolicyState, config: PolicyConfig, user_type: int, t: int,
                  num_types: int | None = None) -> Permutation:
    _require(config, "greedy", state)
    return decide(state, config, user_type, t, num_types)


def ucb_decide(state: PolicyState, config: PolicyConfig, user_type: int, t: int,
               num_types: int | None = None) -> Permutation:
    _require(config, "ucb", state)
    return decide(state, config, user_type, t, num_types)


def baseline_decide(state: PolicyState, config: PolicyConfig, t: int) -> Permutation:
    """Personalized UCB on counters pooled over all user types."""
    if not config.baseline_single_type:
        raise ValueError("not a single-type baseline configuration")
    _require(config, "ucb", state)
    return decide(state, config, 0, t)
