"""Pull/click counters and the position-preference, arm-mean, arrival and CUF estimates."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numba as nb
import numpy as np

from .environment import Feedback
from .model import Permutation, UtilityFunction
from .optimizer import cuf_objective

INCREMENTAL = 0
RECOMPUTED = 1
_NEFF_RULES = {"incremental": INCREMENTAL, "recomputed": RECOMPUTED}

# meta slots
_T, _ZERO_CELLS, _INIT = 0, 1, 2


@dataclass(eq=False)
class LearnerState:
    """Observable counters for N user types, M arms and K positions.

    ``T[i,j,k]`` counts displays of arm j at position k to type i and ``S`` the
    clicks there. ``neff[i,j]`` is the effective pull count: every display adds
    the position-preference estimate of the slot it was shown in.
    """

    T: np.ndarray
    S: np.ndarray
    S_sum: np.ndarray
    neff: np.ndarray
    arrival_counts: np.ndarray
    rho_hat: np.ndarray
    meta: np.ndarray
    neff_rule: str = "incremental"

    @classmethod
    def empty(cls, N: int, M: int, K: int, neff_rule: str = "incremental") -> "LearnerState":
        if neff_rule not in _NEFF_RULES:
            raise ValueError(f"unknown effective-pull rule {neff_rule!r}")
        return cls(
            T=np.zeros((N, M, K), dtype=np.int64),
            S=np.zeros((N, M, K), dtype=np.int64),
            S_sum=np.zeros((N, M), dtype=np.int64),
            neff=np.zeros((N, M)),
            arrival_counts=np.zeros(N, dtype=np.int64),
            rho_hat=np.full((N, K), 1.0 / K),
            meta=np.array([0, N * M * K, 0], dtype=np.int64),
            neff_rule=neff_rule,
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.T.shape

    @property
    def t(self) -> int:
        return int(self.meta[_T])

    @property
    def initialized(self) -> bool:
        return bool(self.meta[_INIT])

    @property
    def neff_code(self) -> int:
        return _NEFF_RULES[self.neff_rule]

    def copy(self) -> "LearnerState":
        return LearnerState(
            self.T.copy(), self.S.copy(), self.S_sum.copy(), self.neff.copy(),
            self.arrival_counts.copy(), self.rho_hat.copy(), self.meta.copy(), self.neff_rule,
        )

    def effective_pulls(self) -> np.ndarray:
        """N x M effective pull counts under the configured rule."""
        if self.neff_code == RECOMPUTED:
            return np.einsum("ijk,ik->ij", self.T, self.rho_hat)
        return self.neff.copy()

    def snapshot(self) -> dict:
        return {
            "t": self.t,
            "T": self.T.ravel().tolist(),
            "S": self.S.ravel().tolist(),
            "N_eff": self.neff.ravel().tolist(),
            "arrival_counts": self.arrival_counts.tolist(),
            "shape": list(self.shape),
            "neff_rule": self.neff_rule,
        }

    def to_json(self) -> str:
        return json.dumps(self.snapshot())

    @classmethod
    def from_snapshot(cls, d: dict) -> "LearnerState":
        N, M, K = d["shape"]
        st = cls.empty(N, M, K, d.get("neff_rule", "incremental"))
        st.T[:] = np.asarray(d["T"], dtype=np.int64).reshape(N, M, K)
        st.S[:] = np.asarray(d["S"], dtype=np.int64).reshape(N, M, K)
        st.S_sum[:] = st.S.sum(axis=2)
        st.neff[:] = np.asarray(d["N_eff"], dtype=np.float64).reshape(N, M)
        st.arrival_counts[:] = np.asarray(d["arrival_counts"], dtype=np.int64)
        st.meta[_T] = int(d["t"])
        st.meta[_ZERO_CELLS] = int((st.S == 0).sum())
        if st.meta[_ZERO_CELLS] == 0:
            st.meta[_INIT] = 1
            _refresh_all(st.T, st.S, st.rho_hat)
        return st


@nb.njit(cache=True)
def _refresh_row(T, S, rho_hat, i):
    M, K = T.shape[1], T.shape[2]
    acc = np.zeros(K)
    ratio = np.empty(K)
    for j in range(M):
        tot = 0.0
        for k in range(K):
            ratio[k] = S[i, j, k] / T[i, j, k]
            tot += ratio[k]
        for k in range(K):
            acc[k] += ratio[k] / tot
    for k in range(K):
        rho_hat[i, k] = acc[k] / M


@nb.njit(cache=True)
def _refresh_all(T, S, rho_hat):
    for i in range(T.shape[0]):
        _refresh_row(T, S, rho_hat, i)


@nb.njit(cache=True)
def _record(T, S, S_sum, neff, arrivals, rho_hat, meta, i, slots, reward, clicked_pos):
    K = slots.shape[0]
    for k in range(K):
        j = slots[k]
        T[i, j, k] += 1
        neff[i, j] += rho_hat[i, k]
    if reward == 1:
        j = slots[clicked_pos]
        if S[i, j, clicked_pos] == 0:
            meta[1] -= 1
        S[i, j, clicked_pos] += 1
        S_sum[i, j] += 1
    arrivals[i] += 1
    meta[0] += 1
    if meta[2] == 1:
        _refresh_row(T, S, rho_hat, i)
    elif meta[1] == 0:
        meta[2] = 1
        _refresh_all(T, S, rho_hat)


@nb.njit(cache=True)
def _neff_value(T, neff, rho_hat, i, j, rule):
    if rule == RECOMPUTED:
        v = 0.0
        for k in range(T.shape[2]):
            v += T[i, j, k] * rho_hat[i, k]
        return v
    return neff[i, j]


@nb.njit(cache=True)
def _arm_mean(T, S_sum, neff, rho_hat, i, j, rule):
    n = _neff_value(T, neff, rho_hat, i, j, rule)
    if n <= 0.0:
        return 1.0
    m = S_sum[i, j] / n
    return m if m < 1.0 else 1.0


@nb.njit(cache=True)
def _arm_means_row(T, S_sum, neff, rho_hat, i, rule, out):
    for j in range(T.shape[1]):
        out[j] = _arm_mean(T, S_sum, neff, rho_hat, i, j, rule)


def _slots_and_pos(state: LearnerState, perm, feedback: Feedback):
    if not isinstance(perm, Permutation):
        perm = Permutation(perm)
    N, M, K = state.shape
    slots = perm.check(M, K).as_array()
    if feedback.reward == 1:
        pos = perm.position_of(feedback.clicked_arm)
        if pos is None:
            raise ValueError(
                f"clicked arm {feedback.clicked_arm} is not in the displayed permutation {perm.slots}"
            )
        return slots, pos
    return slots, -1


def record(state: LearnerState, user_type: int, perm, feedback: Feedback) -> LearnerState:
    """Fold one round into the counters (in place) and refresh the position estimate."""
    N = state.shape[0]
    if not 0 <= user_type < N:
        raise IndexError(f"user type {user_type} out of range [0, {N})")
    if feedback.user_type != user_type:
        raise ValueError(f"feedback is for user type {feedback.user_type}, not {user_type}")
    slots, pos = _slots_and_pos(state, perm, feedback)
    _record(
        state.T, state.S, state.S_sum, state.neff, state.arrival_counts,
        state.rho_hat, state.meta, user_type, slots, feedback.reward, pos,
    )
    return state


def estimate_position_prefs(state: LearnerState) -> np.ndarray:
    """Normalize each arm's per-position click ratios, then average over arms.

    Before every (type, arm, position) cell has a click the estimate is uniform.
    """
    if state.initialized:
        _refresh_all(state.T, state.S, state.rho_hat)
    return state.rho_hat.copy()


def position_prefs_from_ratios(ratios: np.ndarray) -> np.ndarray:
    """The same normalization on an explicit N x M x K array of click ratios."""
    ratios = np.ascontiguousarray(ratios, dtype=np.float64)
    out = np.empty((ratios.shape[0], ratios.shape[2]))
    _refresh_all(np.ones_like(ratios), ratios, out)
    return out


def estimate_arm_mean(state: LearnerState, user_type: int, arm: int) -> float:
    """Clicks over effective pulls, clamped to [0, 1]; 1.0 before any pull."""
    return float(
        _arm_mean(state.T, state.S_sum, state.neff, state.rho_hat, user_type, arm, state.neff_code)
    )


def estimate_arm_means(state: LearnerState) -> np.ndarray:
    N, M, _ = state.shape
    out = np.empty((N, M))
    for i in range(N):
        _arm_means_row(state.T, state.S_sum, state.neff, state.rho_hat, i, state.neff_code, out[i])
    return out


def estimate_arrival_rates(state: LearnerState) -> np.ndarray:
    if state.t == 0:
        raise ValueError("no arrivals recorded yet")
    return state.arrival_counts / state.t


def estimate_cuf(state: LearnerState, utility: UtilityFunction, perm) -> float:
    """Plug-in collective utility from the current arrival, position and arm estimates."""
    total = state.arrival_counts.sum()
    if total == 0:
        raise ValueError("no arrivals recorded yet")
    if not isinstance(perm, Permutation):
        perm = Permutation(perm)
    slots = perm.check(state.shape[1], state.shape[2]).as_array()
    w = state.arrival_counts / total
    bonus = np.zeros(state.shape[1])
    return float(
        cuf_objective(
            w, state.rho_hat, estimate_arm_means(state), bonus, utility.code, utility.u_floor, slots
        )
    )
