"""Ground-truth problem instances, permutations and collective utilities."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

NORM_TOL = 1e-9
MU_MIN = 1e-6
NASH_FLOOR = 1e-6

# integer codes shared with the jitted code
UTILITARIAN = 0
NASH = 1
BERNOULLI = 0
BETA = 1


@dataclass(frozen=True)
class RewardModel:
    kind: str = "bernoulli"
    concentration: float | None = None

    def __post_init__(self):
        if self.kind not in ("bernoulli", "beta"):
            raise ValueError(f"unknown reward model {self.kind!r}")
        if self.kind == "beta" and not (self.concentration and self.concentration > 0):
            raise ValueError("beta reward model needs a positive concentration")

    @property
    def code(self) -> int:
        return BETA if self.kind == "beta" else BERNOULLI

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.concentration is not None:
            d["concentration"] = self.concentration
        return d


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Hidden environment parameters: arrival rates, position preferences, arm means.

    ``position_prefs`` is N x K and ``arm_means`` is N x M. Construction does not
    validate; call :func:`validate` (or :meth:`check`) to get the violations.
    """

    arrival_rates: np.ndarray
    position_prefs: np.ndarray
    arm_means: np.ndarray
    reward_model: RewardModel = field(default_factory=RewardModel)

    def __post_init__(self):
        for name in ("arrival_rates", "position_prefs", "arm_means"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_user_types(self) -> int:
        return self.arrival_rates.shape[0]

    @property
    def num_arms(self) -> int:
        return self.arm_means.shape[1]

    @property
    def num_positions(self) -> int:
        return self.position_prefs.shape[1]

    def check(self) -> "ProblemInstance":
        problems = validate(self)
        if problems:
            raise ValueError("invalid instance: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return {
            "num_user_types": self.num_user_types,
            "num_arms": self.num_arms,
            "num_positions": self.num_positions,
            "arrival_rates": self.arrival_rates.tolist(),
            "position_prefs": self.position_prefs.ravel().tolist(),
            "arm_means": self.arm_means.ravel().tolist(),
            "reward_model": self.reward_model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemInstance":
        n, m, k = int(d["num_user_types"]), int(d["num_arms"]), int(d["num_positions"])
        rho = np.asarray(d["position_prefs"], dtype=np.float64)
        mu = np.asarray(d["arm_means"], dtype=np.float64)
        if rho.size != n * k or mu.size != n * m or len(d["arrival_rates"]) != n:
            raise ValueError("array sizes do not match num_user_types/num_arms/num_positions")
        rm = d.get("reward_model") or {"kind": "bernoulli"}
        return cls(
            arrival_rates=np.asarray(d["arrival_rates"], dtype=np.float64),
            position_prefs=rho.reshape(n, k),
            arm_means=mu.reshape(n, m),
            reward_model=RewardModel(rm.get("kind", "bernoulli"), rm.get("concentration")),
        )

    def to_json(self) -> str:
        # json writes floats with repr(), the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ProblemInstance":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ProblemInstance":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def validate(instance: ProblemInstance) -> list[str]:
    """Return every violated invariant; an empty list means the instance is valid."""
    out = []
    lam, rho, mu = instance.arrival_rates, instance.position_prefs, instance.arm_means
    if lam.ndim != 1 or rho.ndim != 2 or mu.ndim != 2:
        return ["arrays have wrong dimensionality"]
    n = lam.shape[0]
    if n < 1:
        out.append("num_user_types must be positive")
    if rho.shape[0] != n or mu.shape[0] != n:
        out.append(f"position_prefs/arm_means must have {n} rows")
        return out
    m, k = mu.shape[1], rho.shape[1]
    if m < 1 or k < 1:
        out.append("num_arms and num_positions must be positive")
    if k > m:
        out.append(f"num_positions {k} exceeds num_arms {m}")
    if not np.all(np.isfinite(lam)) or not np.all(np.isfinite(rho)) or not np.all(np.isfinite(mu)):
        out.append("non-finite parameter")
        return out
    for i in np.flatnonzero((lam < 0) | (lam > 1)):
        out.append(f"arrival_rates[{i}] = {lam[i]:g} outside [0, 1]")
    if abs(lam.sum() - 1.0) > NORM_TOL:
        out.append(f"arrival_rates sum to {lam.sum():.12g}")
    for i, kk in zip(*np.nonzero((rho < 0) | (rho > 1))):
        out.append(f"position_prefs[{i},{kk}] = {rho[i, kk]:g} outside [0, 1]")
    for i, s in enumerate(rho.sum(axis=1)):
        if abs(s - 1.0) > NORM_TOL:
            out.append(f"position_prefs row {i} sums to {s:.12g}")
    for i, j in zip(*np.nonzero((mu < MU_MIN) | (mu > 1))):
        out.append(f"arm_means[{i},{j}] = {mu[i, j]:g} outside [{MU_MIN:g}, 1]")
    return out


@dataclass(frozen=True)
class Permutation:
    """K distinct arms; ``slots[k]`` is the arm shown at position k."""

    slots: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(int(a) for a in self.slots))
        if len(set(self.slots)) != len(self.slots):
            raise ValueError(f"repeated arm in {self.slots}")
        if any(a < 0 for a in self.slots):
            raise ValueError(f"negative arm id in {self.slots}")

    def __len__(self):
        return len(self.slots)

    def __iter__(self):
        return iter(self.slots)

    def position_of(self, arm: int) -> int | None:
        """Forward map: the position of ``arm``, or None when not displayed."""
        try:
            return self.slots.index(arm)
        except ValueError:
            return None

    def check(self, num_arms: int, num_positions: int) -> "Permutation":
        if len(self.slots) != num_positions:
            raise ValueError(f"expected {num_positions} slots, got {len(self.slots)}")
        if any(a >= num_arms for a in self.slots):
            raise ValueError(f"arm id out of range in {self.slots} (M={num_arms})")
        return self

    def as_array(self) -> np.ndarray:
        return np.array(self.slots, dtype=np.int64)


@dataclass(frozen=True)
class UtilityFunction:
    kind: str = "utilitarian"
    u_floor: float = NASH_FLOOR
    lipschitz_L: float | None = None

    def __post_init__(self):
        if self.kind not in ("utilitarian", "nash"):
            raise ValueError(f"unknown utility {self.kind!r}")
        if self.u_floor <= 0:
            raise ValueError("u_floor must be positive")
        if self.lipschitz_L is None:
            # log is 1/x-Lipschitz, steepest at the floor
            object.__setattr__(
                self, "lipschitz_L", 1.0 if self.kind == "utilitarian" else 1.0 / self.u_floor
            )

    @property
    def code(self) -> int:
        return NASH if self.kind == "nash" else UTILITARIAN

    def __call__(self, x):
        return apply_utility(self.code, self.u_floor, x)


def apply_utility(code, floor, x):
    if code == NASH:
        return np.log(np.maximum(x, floor))
    return x


@nb.njit(cache=True)
def utility_value(code, floor, x):
    if code == NASH:
        return math.log(x if x > floor else floor)
    return x


def _slots(perm) -> np.ndarray:
    if isinstance(perm, Permutation):
        return perm.as_array()
    return np.asarray(perm, dtype=np.int64)


def expected_user_value(instance: ProblemInstance, user_type: int, perm) -> float:
    """Click probability of a user of the given type: sum_k rho[i,k] * mu[i, slots[k]]."""
    s = _slots(perm)
    n = instance.num_user_types
    if not 0 <= user_type < n:
        raise IndexError(f"user type {user_type} out of range [0, {n})")
    if s.shape[0] != instance.num_positions or s.min() < 0 or s.max() >= instance.num_arms:
        raise IndexError(f"permutation {s.tolist()} does not fit the instance")
    return float(
        _user_value(instance.position_prefs[user_type], instance.arm_means[user_type], s)
    )


@nb.njit(cache=True)
def _user_value(rho_row, mu_row, slots):
    u = 0.0
    for k in range(slots.shape[0]):
        u += rho_row[k] * mu_row[slots[k]]
    return u


@nb.njit(cache=True)
def _cuf(weights, rho, mu, slots, code, floor):
    total = 0.0
    for i in range(weights.shape[0]):
        total += weights[i] * utility_value(code, floor, _user_value(rho[i], mu[i], slots))
    return total


def cuf_value(instance: ProblemInstance, utility: UtilityFunction, perm) -> float:
    """Ground-truth collective utility sum_i lambda_i f(user value_i).

    Nash user values below ``u_floor`` are clamped to the floor before the log.
    """
    s = _slots(perm)
    if s.shape[0] != instance.num_positions or s.min() < 0 or s.max() >= instance.num_arms:
        raise IndexError(f"permutation {s.tolist()} does not fit the instance")
    return float(
        _cuf(
            instance.arrival_rates, instance.position_prefs, instance.arm_means,
            s, utility.code, utility.u_floor,
        )
    )


def table1_instance() -> ProblemInstance:
    """Two user types (male, female), five ads, two positions."""
    return ProblemInstance(
        arrival_rates=np.array([0.52, 0.48]),
        position_prefs=np.array([[0.323, 0.677], [0.416, 0.584]]),
        arm_means=np.array(
            [[0.357, 0.471, 0.604, 0.808, 0.564], [0.247, 0.327, 0.491, 0.49, 0.303]]
        ),
    )


def random_instance(
    num_user_types: int,
    num_arms: int,
    num_positions: int,
    seed: int,
    mu_range: tuple[float, float] = (0.1, 0.9),
    rho_floor: float = 0.2,
    reward_model: RewardModel | None = None,
) -> ProblemInstance:
    """Random instance with all parameters bounded away from zero.

    Arrival rates and position preferences are normalized uniforms on
    [rho_floor, 1]; arm means are uniform on ``mu_range``.
    """
    g = np.random.default_rng(seed)
    lam = g.uniform(rho_floor, 1.0, num_user_types)
    rho = g.uniform(rho_floor, 1.0, (num_user_types, num_positions))
    mu = g.uniform(mu_range[0], mu_range[1], (num_user_types, num_arms))
    return ProblemInstance(
        arrival_rates=lam / lam.sum(),
        position_prefs=rho / rho.sum(axis=1, keepdims=True),
        arm_means=mu,
        reward_model=reward_model or RewardModel(),
    )
