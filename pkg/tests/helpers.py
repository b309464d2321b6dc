import numba as nb
import numpy as np

from rankbandit import rng as _rng
from rankbandit.environment import _step
from rankbandit.estimators import LearnerState, _record
from rankbandit.model import ProblemInstance, random_instance


def two_arm(mu=(0.5, 0.1)):
    return ProblemInstance([1.0], [[1.0]], [list(mu)])


def small_instances(n, seed=0, max_types=3, max_arms=6, max_positions=3):
    """Random instances with N <= 3, M <= 6, K <= 3."""
    g = np.random.default_rng(seed)
    for _ in range(n):
        N = int(g.integers(1, max_types + 1))
        M = int(g.integers(1, max_arms + 1))
        K = int(g.integers(1, min(M, max_positions) + 1))
        yield random_instance(N, M, K, seed=int(g.integers(2**31)))


@nb.njit
def _round_robin(lam, rho, mu, rounds, state, T, S, S_sum, neff, arrivals, rho_hat, meta):
    M, K = mu.shape[1], rho.shape[1]
    slots = np.empty(K, dtype=np.int64)
    t0 = meta[0]
    for r in range(rounds):
        i = _rng.categorical(state, lam)
        for p in range(K):
            slots[p] = (t0 + r + p + 1) % M
        k, clicked = _step(rho[i], mu[i], slots, state)
        _record(T, S, S_sum, neff, arrivals, rho_hat, meta, i, slots, 1 if clicked else 0,
                k if clicked else -1)


def round_robin(instance, rounds, seed, learner=None, neff_rule="incremental"):
    """Feed ``rounds`` rotating displays into a learner (continuing ``learner``)."""
    L = learner or LearnerState.empty(instance.num_user_types, instance.num_arms,
                                      instance.num_positions, neff_rule)
    stream = seed if isinstance(seed, _rng.RngStream) else _rng.RngStream(seed)
    _round_robin(instance.arrival_rates, instance.position_prefs, instance.arm_means, rounds,
                 stream.state, L.T, L.S, L.S_sum, L.neff, L.arrival_counts, L.rho_hat, L.meta)
    return L
