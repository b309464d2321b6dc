"""Argmax over K-permutations: exhaustive enumeration and uniform subsampling.

Permutations are ordered lexicographically by their slot tuples, and the rank
of a permutation is its index in that order. All routines break ties toward
the lexicographically smallest permutation.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numba as nb
import numpy as np

from . import rng as _rng
from .model import Permutation, utility_value

DEFAULT_CAP = 10**7
_BOUND_SLACK = 1e-12


class SearchSpaceTooLarge(ValueError):
    pass


def count_permutations(M: int, K: int) -> int:
    if not 0 <= K <= M:
        raise ValueError(f"need 0 <= K <= M, got K={K}, M={M}")
    return math.perm(M, K)


def _check_cap(M: int, K: int, cap: int) -> int:
    n = count_permutations(M, K)
    if n > cap:
        raise SearchSpaceTooLarge(
            f"{n} permutations of {K} out of {M} arms exceed the enumeration cap {cap}; "
            "use the sampled optimizer"
        )
    return n


def enumerate_permutations(M: int, K: int, cap: int = DEFAULT_CAP) -> Iterator[Permutation]:
    _check_cap(M, K, cap)
    for slots in itertools.permutations(range(M), K):
        yield Permutation(slots)


def rank_permutation(slots, M: int) -> int:
    """Lexicographic rank of ``slots`` among all K-permutations of M arms."""
    K = len(slots)
    avail = list(range(M))
    r = 0
    for p, a in enumerate(slots):
        d = avail.index(a)
        r += d * math.perm(M - p - 1, K - p - 1)
        avail.pop(d)
    return r


@nb.njit(cache=True)
def _unrank(r, M, K, out, avail):
    for a in range(M):
        avail[a] = a
    n_avail = M
    block = 1
    for q in range(M - K + 1, M):
        block *= q
    for p in range(K):
        d = r // block
        r -= d * block
        out[p] = avail[d]
        for q in range(d, n_avail - 1):
            avail[q] = avail[q + 1]
        n_avail -= 1
        if p < K - 1:
            block //= M - p - 1


def unrank_permutation(r: int, M: int, K: int) -> Permutation:
    n = count_permutations(M, K)
    if not 0 <= r < n:
        raise ValueError(f"rank {r} outside [0, {n})")
    out = np.empty(K, dtype=np.int64)
    _unrank(r, M, K, out, np.empty(M, dtype=np.int64))
    return Permutation(out)


@nb.njit(cache=True)
def _sample_ranks(P, n, replace, state):
    """Uniform sample of ``n`` ranks from [0, P), in no particular order."""
    if replace:
        out = np.empty(n, dtype=np.int64)
        for s in range(n):
            out[s] = _rng.randint(state, P)
        return out
    if 16 * n < P:
        # Floyd's algorithm
        out = np.empty(n, dtype=np.int64)
        chosen = set()
        chosen.add(np.int64(-1))
        chosen.discard(np.int64(-1))
        for j in range(P - n, P):
            v = np.int64(_rng.randint(state, j + 1))
            if v in chosen:
                chosen.add(np.int64(j))
            else:
                chosen.add(v)
        s = 0
        for v in chosen:
            out[s] = v
            s += 1
        return out
    # partial Fisher-Yates; past half the space, shuffle out the excluded ranks
    pool = np.arange(P)
    m = n if 2 * n <= P else P - n
    for s in range(m):
        j = s + _rng.randint(state, P - s)
        tmp = pool[s]
        pool[s] = pool[j]
        pool[j] = tmp
    return pool[:n] if m == n else pool[m:]


def sample_size(delta: float, P: int, min_samples: int, replace: bool) -> int:
    n = max(int(min_samples), math.ceil(delta * P))
    return n if replace else min(n, P)


@dataclass(frozen=True)
class FractionSchedule:
    """Sampled fraction of the permutation space at round t.

    Linear ramp from ``start`` at t=0 to 1 at ``ramp_rounds``; a constant
    ``start`` when ``ramp_rounds`` is 0.
    """

    start: float = 1.0
    ramp_rounds: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.start <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")
        if self.ramp_rounds < 0:
            raise ValueError("ramp_rounds must be nonnegative")

    def __call__(self, t: float) -> float:
        return _fraction(self.start, self.ramp_rounds, t)


@nb.njit(cache=True)
def _fraction(start, ramp, t):
    if ramp <= 0.0:
        return start
    d = start + (1.0 - start) * t / ramp
    return d if d < 1.0 else 1.0


@dataclass(frozen=True)
class OptimizerConfig:
    """``brute_force`` enumerates every permutation; ``sampled`` keeps a
    ``schedule(t)`` fraction of them (at least ``min_samples``).

    With ``prune`` set, brute force skips subtrees whose utility upper bound
    cannot beat the incumbent. The returned permutation is unchanged.
    """

    kind: str = "brute_force"
    schedule: FractionSchedule = FractionSchedule()
    min_samples: int = 1
    prune: bool = True
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.kind not in ("brute_force", "sampled"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.min_samples < 1:
            raise ValueError("min_samples must be at least 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "OptimizerConfig":
        d = dict(d or {})
        sched = FractionSchedule(
            float(d.pop("fraction_start", 1.0)), float(d.pop("fraction_ramp_rounds", 0.0))
        )
        return cls(schedule=sched, **d)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "fraction_start": self.schedule.start,
            "fraction_ramp_rounds": self.schedule.ramp_rounds,
            "min_samples": self.min_samples,
            "prune": self.prune,
            "cap": self.cap,
        }


def argmax_exact(
    M: int, K: int, objective: Callable[[Permutation], float], cap: int = DEFAULT_CAP
) -> tuple[Permutation, float]:
    best, best_val = None, -math.inf
    for perm in enumerate_permutations(M, K, cap):
        v = float(objective(perm))
        if not math.isfinite(v):
            raise ValueError(f"objective is not finite at {perm.slots}: {v}")
        if v > best_val:
            best, best_val = perm, v
    return best, best_val


def argmax_sampled(
    M: int,
    K: int,
    objective: Callable[[Permutation], float],
    delta: float,
    rng: _rng.RngStream,
    min_samples: int = 1,
    cap: int = DEFAULT_CAP,
) -> tuple[Permutation, float, int]:
    """Best of ``max(min_samples, ceil(delta * P))`` uniformly sampled permutations."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    P = count_permutations(M, K)
    replace = P > cap
    n = sample_size(delta, P, min_samples, replace)
    ranks = np.sort(_sample_ranks(P, n, replace, rng.state))
    best, best_val = None, -math.inf
    for r in ranks:
        perm = unrank_permutation(int(r), M, K)
        v = float(objective(perm))
        if not math.isfinite(v):
            raise ValueError(f"objective is not finite at {perm.slots}: {v}")
        if v > best_val:
            best, best_val = perm, v
    return best, best_val, n


# --- collective-utility objectives, shared with the simulation kernel ---
#
# objective(slots) = sum_i w[i] * f(sum_k rho[i,k] * mu[i, slots[k]]) + sum_k bonus[slots[k]]
# Every routine below evaluates it with the same operation order, so values
# agree bit for bit across exhaustive, pruned and sampled search.


@nb.njit(cache=True)
def cuf_objective(w, rho, mu, bonus, code, floor, slots):
    N = w.shape[0]
    K = slots.shape[0]
    total = 0.0
    for i in range(N):
        u = 0.0
        for k in range(K):
            u += rho[i, k] * mu[i, slots[k]]
        total += w[i] * utility_value(code, floor, u)
    b = 0.0
    for k in range(K):
        b += bonus[slots[k]]
    return total + b


@nb.njit(cache=True)
def cuf_argmax_enumerate(w, rho, mu, bonus, code, floor, out):
    M = mu.shape[1]
    K = rho.shape[1]
    P = 1
    for q in range(M - K + 1, M + 1):
        P *= q
    cur = np.empty(K, dtype=np.int64)
    avail = np.empty(M, dtype=np.int64)
    best = -np.inf
    for r in range(P):
        _unrank(r, M, K, cur, avail)
        v = cuf_objective(w, rho, mu, bonus, code, floor, cur)
        if not np.isfinite(v):
            raise ValueError("objective is not finite")
        if v > best:
            best = v
            out[:] = cur
    return best


@nb.njit(cache=True)
def cuf_argmax_sampled(w, rho, mu, bonus, code, floor, P, n, replace, state, out):
    M = mu.shape[1]
    K = rho.shape[1]
    ranks = _sample_ranks(P, n, replace, state)
    cur = np.empty(K, dtype=np.int64)
    avail = np.empty(M, dtype=np.int64)
    best = -np.inf
    best_rank = P
    for s in range(n):
        r = ranks[s]
        _unrank(r, M, K, cur, avail)
        v = cuf_objective(w, rho, mu, bonus, code, floor, cur)
        if not np.isfinite(v):
            raise ValueError("objective is not finite")
        # ranks arrive unordered; the lower rank wins ties
        if v > best or (v == best and r < best_rank):
            best = v
            best_rank = r
            out[:] = cur
    return best


_MAX_EXACT_ROWS = 4
_TANGENT_ROUNDS = 8


@nb.njit(cache=True)
def _assignment_bound(c, used, d, arms):
    """Max of sum_k c[k, j_k] over distinct unused arms for positions d..K-1.

    Exact for up to four open positions (an optimal assignment only needs each
    position's top-r arms), otherwise the looser per-position maximum, whose
    arms may repeat. The maximizing arms are written to ``arms[d:]``.
    """
    K, M = c.shape
    r = K - d
    if r > _MAX_EXACT_ROWS:
        total = 0.0
        for k in range(d, K):
            best = -np.inf
            for j in range(M):
                if not used[j] and c[k, j] > best:
                    best = c[k, j]
                    arms[k] = j
            total += best
        return total
    # top-r unused arms per open position
    top = np.full((r, r), -1, dtype=np.int64)
    for q in range(r):
        k = d + q
        for j in range(M):
            if used[j]:
                continue
            v = c[k, j]
            s = r - 1
            if top[q, s] >= 0 and c[k, top[q, s]] >= v:
                continue
            while s > 0 and (top[q, s - 1] < 0 or c[k, top[q, s - 1]] < v):
                top[q, s] = top[q, s - 1]
                s -= 1
            top[q, s] = j
    best = -np.inf
    idx = np.zeros(r, dtype=np.int64)
    combos = 1
    for q in range(r):
        combos *= r
    for _ in range(combos):
        total = 0.0
        ok = True
        for q in range(r):
            j = top[q, idx[q]]
            if j < 0:
                ok = False
                break
            for p in range(q):
                if top[p, idx[p]] == j:
                    ok = False
                    break
            if not ok:
                break
            total += c[d + q, j]
        if ok and total > best:
            best = total
            for p in range(r):
                arms[d + p] = top[p, idx[p]]
        q = 0
        while q < r:
            idx[q] += 1
            if idx[q] < r:
                break
            idx[q] = 0
            q += 1
    return best


@nb.njit(cache=True)
def cuf_argmax_pruned(w, rho, mu, bonus, code, floor, warm, out):
    """Depth-first lexicographic search with upper-bound pruning.

    Two bounds per node, the smaller one is used. The first places each
    type's best arm in every open slot. The second replaces f by a tangent
    line (f itself when utilitarian), which turns the rest into an assignment
    problem over the unused arms. ``warm`` (a permutation, or ``warm[0] < 0``)
    supplies the tangent points and the pruning threshold (a greedy ranking
    stands in when absent); the result is the lexicographically first
    maximizer either way.
    """
    N = w.shape[0]
    M = mu.shape[1]
    K = rho.shape[1]
    maxmu = np.empty(N)
    minmu = np.empty(N)
    for i in range(N):
        maxmu[i] = mu[i].max()
        minmu[i] = mu[i].min()
    tail = np.zeros((N, K + 1))
    low = np.zeros((N, K + 1))
    for i in range(N):
        for d in range(K - 1, -1, -1):
            tail[i, d] = tail[i, d + 1] + rho[i, d] * maxmu[i]
            low[i, d] = low[i, d + 1] + rho[i, d] * minmu[i]
    bs = np.sort(bonus)[::-1]
    btail = np.zeros(K + 1)
    for d in range(K - 1, -1, -1):
        btail[d] = btail[d + 1] + bs[K - 1 - d]

    if warm[0] < 0:
        # greedy slot-by-slot start on the linear part
        warm = np.empty(K, dtype=np.int64)
        taken = np.zeros(M, dtype=np.bool_)
        for k in range(K):
            bj, bv = -1, -np.inf
            for j in range(M):
                if taken[j]:
                    continue
                v = bonus[j]
                for i in range(N):
                    v += w[i] * rho[i, k] * mu[i, j]
                if v > bv:
                    bj, bv = j, v
            warm[k] = bj
            taken[bj] = True
    threshold = cuf_objective(w, rho, mu, bonus, code, floor, warm)

    # tangent slopes g and intercepts h: f(u) <= h_i + g_i * u
    g = np.empty(N)
    h = np.zeros(N)
    for i in range(N):
        if code == 0:
            g[i] = w[i]
        else:
            a = 0.0
            for k in range(K):
                a += rho[i, k] * mu[i, warm[k]]
            if a < floor:
                a = floor
            g[i] = w[i] / a
            h[i] = w[i] * (math.log(a) - 1.0)
    c = np.empty((K, M))
    for k in range(K):
        for j in range(M):
            v = bonus[j]
            for i in range(N):
                v += g[i] * rho[i, k] * mu[i, j]
            c[k, j] = v

    fill = np.empty(K, dtype=np.int64)
    g2 = np.empty(N)
    R = np.empty(N)
    c2 = np.empty((K, M))
    best = -np.inf
    U = np.zeros((K + 1, N))
    B = np.zeros(K + 1)
    used = np.zeros(M, dtype=np.bool_)
    cur = np.empty(K, dtype=np.int64)
    nxt = np.zeros(K + 1, dtype=np.int64)
    d = 0
    while d >= 0:
        if d == K:
            total = 0.0
            for i in range(N):
                total += w[i] * utility_value(code, floor, U[K, i])
            v = total + B[K]
            if not np.isfinite(v):
                raise ValueError("objective is not finite")
            if v > best:
                best = v
                out[:] = cur
            d -= 1
            used[cur[d]] = False
            continue
        a = nxt[d]
        while a < M and used[a]:
            a += 1
        if a >= M:
            d -= 1
            if d >= 0:
                used[cur[d]] = False
            continue
        nxt[d] = a + 1
        cur[d] = a
        for i in range(N):
            U[d + 1, i] = U[d, i] + rho[i, d] * mu[i, a]
        B[d + 1] = B[d] + bonus[a]
        used[a] = True
        e = d + 1
        if e < K:
            cut = threshold if threshold > best else best
            ub = B[e] + btail[e]
            for i in range(N):
                ub += w[i] * utility_value(code, floor, U[e, i] + tail[i, e])
            prune = ub + _BOUND_SLACK * (1.0 + abs(ub)) <= cut
            if not prune and e == K - 1 and code != 0:
                # one slot left: the exact best completion is cheap
                ub = -np.inf
                for j in range(M):
                    if used[j]:
                        continue
                    v = B[e] + bonus[j]
                    for i in range(N):
                        v += w[i] * utility_value(code, floor, U[e, i] + rho[i, e] * mu[i, j])
                    if v > ub:
                        ub = v
                prune = ub + _BOUND_SLACK * (1.0 + abs(ub)) <= cut
            elif not prune:
                tangent_ok = True
                lin = B[e]
                for i in range(N):
                    if code != 0 and U[e, i] + low[i, e] < floor:
                        tangent_ok = False
                        break
                    lin += h[i] + g[i] * U[e, i]
                if tangent_ok:
                    lin += _assignment_bound(c, used, e, fill)
                    prune = lin + _BOUND_SLACK * (1.0 + abs(lin)) <= cut
                    # Frank-Wolfe on the fractional completion: every tangent
                    # point gives a valid bound, mixtures tighten it
                    if not prune and code != 0:
                        for i in range(N):
                            r_i = 0.0
                            for k in range(e, K):
                                r_i += rho[i, k] * mu[i, fill[k]]
                            R[i] = r_i
                    it = 0
                    while not prune and code != 0 and it < _TANGENT_ROUNDS:
                        it += 1
                        lin = B[e]
                        for i in range(N):
                            a_i = U[e, i] + R[i]
                            if a_i < floor:
                                a_i = floor
                            gi = w[i] / a_i
                            g2[i] = gi
                            lin += w[i] * (math.log(a_i) - 1.0) + gi * U[e, i]
                        for k in range(e, K):
                            for j in range(M):
                                v = bonus[j]
                                for i in range(N):
                                    v += g2[i] * rho[i, k] * mu[i, j]
                                c2[k, j] = v
                        lin += _assignment_bound(c2, used, e, fill)
                        prune = lin + _BOUND_SLACK * (1.0 + abs(lin)) <= cut
                        step = 2.0 / (it + 2.0)
                        for i in range(N):
                            r_i = 0.0
                            for k in range(e, K):
                                r_i += rho[i, k] * mu[i, fill[k]]
                            R[i] += step * (r_i - R[i])
            # the slack makes both comparisons strict, so pruned subtrees
            # cannot hold a tie with the warm value or the incumbent
            if prune:
                used[a] = False
                continue
        d += 1
        nxt[d] = 0
    return best
