"""Position-based click simulator with bandit feedback."""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from . import rng as _rng
from .model import BETA, Permutation, ProblemInstance
from .rng import RngStream


@dataclass(frozen=True)
class Feedback:
    """One round's observation. ``clicked_arm`` is set iff ``reward == 1``."""

    user_type: int
    reward: int
    clicked_arm: int | None = None

    def __post_init__(self):
        if self.reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {self.reward}")
        if (self.reward == 1) != (self.clicked_arm is not None):
            raise ValueError("clicked_arm must be present exactly when reward is 1")


@nb.njit(cache=True)
def _step(rho_row, mu_row, slots, state):
    """Returns (observed position, clicked)."""
    k = _rng.categorical(state, rho_row)
    clicked = _rng.uniform(state) < mu_row[slots[k]]
    return k, clicked


@nb.njit(cache=True)
def _reward_magnitude(mu_ij, clicked, reward_code, concentration, state):
    if reward_code == BETA:
        return _rng.beta(state, concentration * mu_ij, concentration * (1.0 - mu_ij))
    return 1.0 if clicked else 0.0


def sample_arrival(instance: ProblemInstance, rng: RngStream) -> int:
    return _rng.categorical(rng.state, instance.arrival_rates)


def _slots_of(perm, instance: ProblemInstance) -> np.ndarray:
    if not isinstance(perm, Permutation):
        perm = Permutation(perm)
    return perm.check(instance.num_arms, instance.num_positions).as_array()


def step(instance: ProblemInstance, user_type: int, perm, rng: RngStream) -> Feedback:
    """User ``user_type`` looks at one position drawn from its preferences and
    clicks the arm shown there with that arm's mean. A miss reveals nothing."""
    fb, _ = step_with_reward(instance, user_type, perm, rng)
    return fb


def step_with_reward(
    instance: ProblemInstance, user_type: int, perm, rng: RngStream
) -> tuple[Feedback, float]:
    """Like :func:`step`, also returning the realized reward magnitude.

    Under the Beta reward model the magnitude is a Beta(c*mu, c*(1-mu)) draw
    for the observed arm; otherwise it equals the click indicator.
    """
    slots = _slots_of(perm, instance)
    mu_row = instance.arm_means[user_type]
    k, clicked = _step(instance.position_prefs[user_type], mu_row, slots, rng.state)
    rm = instance.reward_model
    mag = _reward_magnitude(
        mu_row[slots[k]], clicked, rm.code, rm.concentration or 0.0, rng.state
    )
    if clicked:
        return Feedback(user_type, 1, int(slots[k])), mag
    return Feedback(user_type, 0, None), mag
