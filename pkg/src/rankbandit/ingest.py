"""Fit problem instances from ranked-impression click logs, and generate such logs.

Log format: UTF-8 TSV with columns user_type, arm, position, clicked; 0-indexed,
no header, one impression per line.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numba as nb
import numpy as np

from . import rng as _rng
from .environment import _step
from .estimators import _refresh_row
from .model import MU_MIN, ProblemInstance, RewardModel
from .rng import RngStream

DEFAULT_MIN_COUNT = 100
FILL_MEAN = 0.5


class LogFormatError(ValueError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


@dataclass(frozen=True)
class ClickRecord:
    user_type: int
    arm: int
    position: int
    clicked: int

    def __post_init__(self):
        if min(self.user_type, self.arm, self.position) < 0:
            raise ValueError(f"negative index in {self}")
        if self.clicked not in (0, 1):
            raise ValueError(f"clicked must be 0 or 1, got {self.clicked}")


class ClickLog:
    """Column-oriented record list; iterating yields :class:`ClickRecord`."""

    def __init__(self, user_type, arm, position, clicked):
        cols = [np.asarray(c, dtype=np.int64).ravel() for c in (user_type, arm, position, clicked)]
        if len({c.shape[0] for c in cols}) != 1:
            raise ValueError("log columns differ in length")
        self.user_type, self.arm, self.position, self.clicked = cols

    @classmethod
    def from_records(cls, records: Iterable[ClickRecord]) -> "ClickLog":
        rows = [(r.user_type, r.arm, r.position, r.clicked) for r in records]
        arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
        return cls(*arr.T)

    def __len__(self):
        return self.user_type.shape[0]

    def __iter__(self) -> Iterator[ClickRecord]:
        for row in zip(self.user_type, self.arm, self.position, self.clicked):
            yield ClickRecord(*map(int, row))

    def __getitem__(self, n: int) -> ClickRecord:
        return ClickRecord(int(self.user_type[n]), int(self.arm[n]), int(self.position[n]),
                           int(self.clicked[n]))


@nb.njit(cache=True)
def _generate(lam, rho, mu, rounds, state, ut, arm, pos, clk):
    M, K = mu.shape[1], rho.shape[1]
    slots = np.empty(K, dtype=np.int64)
    n = 0
    for r in range(rounds):
        i = _rng.categorical(state, lam)
        for p in range(K):
            slots[p] = (r + p) % M
        k, clicked = _step(rho[i], mu[i], slots, state)
        for p in range(K):
            ut[n] = i
            arm[n] = slots[p]
            pos[n] = p
            clk[n] = 1 if (clicked and p == k) else 0
            n += 1


def generate_log(instance: ProblemInstance, rounds: int, rng: RngStream) -> ClickLog:
    """Simulated impression log under a rotating display.

    Round r shows arm (r + p) mod M at position p, so every arm visits every
    position equally often. Each round emits one record per displayed arm;
    only the arm at the observed position can be clicked.
    """
    if rounds < 0:
        raise ValueError("rounds must be nonnegative")
    inst = instance.check()
    K = inst.num_positions
    cols = [np.empty(rounds * K, dtype=np.int64) for _ in range(4)]
    _generate(inst.arrival_rates, inst.position_prefs, inst.arm_means, rounds, rng.state, *cols)
    return ClickLog(*cols)


@dataclass
class CoverageReport:
    """Per-cell impression and click counts plus the cells below ``min_count``.

    ``filled_position_rows`` lists user types whose position row fell back to
    uniform, ``filled_arm_means`` the (type, arm) pairs filled with 0.5.
    """

    min_count: int
    impressions: np.ndarray
    clicks: np.ndarray
    uncovered: list = field(default_factory=list)
    filled_position_rows: list = field(default_factory=list)
    filled_arm_means: list = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.uncovered

    def to_dict(self) -> dict:
        return {
            "min_count": self.min_count,
            "shape": list(self.impressions.shape),
            "impressions": self.impressions.tolist(),
            "clicks": self.clicks.tolist(),
            "uncovered": [list(c) for c in self.uncovered],
            "filled_position_rows": list(self.filled_position_rows),
            "filled_arm_means": [list(c) for c in self.filled_arm_means],
        }


def _as_log(records) -> ClickLog:
    return records if isinstance(records, ClickLog) else ClickLog.from_records(records)


def count_cells(records, N: int, M: int, K: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(per-type record counts, N x M x K impressions, N x M x K clicks)."""
    log = _as_log(records)
    for name, col, bound in (("user_type", log.user_type, N), ("arm", log.arm, M),
                             ("position", log.position, K)):
        bad = np.flatnonzero((col < 0) | (col >= bound))
        if bad.size:
            raise ValueError(f"record {bad[0]} has {name} {col[bad[0]]} outside [0, {bound})")
    if np.any((log.clicked != 0) & (log.clicked != 1)):
        raise ValueError("clicked must be 0 or 1")
    flat = (log.user_type * M + log.arm) * K + log.position
    imp = np.bincount(flat, minlength=N * M * K).reshape(N, M, K)
    clk = np.bincount(flat, weights=log.clicked, minlength=N * M * K).astype(np.int64)
    types = np.bincount(log.user_type, minlength=N)
    return types, imp, clk.reshape(N, M, K)


def fit_instance(records, N: int, M: int, K: int, min_count: int = DEFAULT_MIN_COUNT,
                 reward_model: RewardModel | None = None) -> tuple[ProblemInstance, CoverageReport]:
    """Empirical instance from an impression log.

    Arrival rates are per-type record shares. Position rows apply the online
    normalization (per-arm click ratios normalized over positions, averaged
    over arms) to the aggregate counts, using only arms whose cells are all
    covered and that have at least one click. Arm means are clicks over
    preference-weighted impressions on covered cells, clamped to [1e-6, 1].
    """
    if K > M:
        raise ValueError(f"K={K} exceeds M={M}")
    log = _as_log(records)
    if len(log) == 0:
        raise ValueError("no records")
    types, imp, clk = count_cells(log, N, M, K)
    covered = imp >= max(int(min_count), 1)
    report = CoverageReport(int(min_count), imp, clk,
                            uncovered=[tuple(map(int, c)) for c in np.argwhere(~covered)])

    lam = types / types.sum()
    rho = np.full((N, K), 1.0 / K)
    for i in range(N):
        usable = covered[i].all(axis=1) & (clk[i].sum(axis=1) > 0)
        if not usable.any():
            report.filled_position_rows.append(i)
            continue
        row = np.empty((1, K))
        _refresh_row(imp[i:i + 1, usable], clk[i:i + 1, usable], row, 0)
        rho[i] = row[0]

    mu = np.full((N, M), FILL_MEAN)
    for i in range(N):
        for j in range(M):
            c = covered[i, j]
            n_eff = float(np.dot(imp[i, j, c], rho[i, c]))
            if n_eff <= 0.0:
                report.filled_arm_means.append((i, j))
                continue
            mu[i, j] = clk[i, j, c].sum() / n_eff
    np.clip(mu, MU_MIN, 1.0, out=mu)
    rho /= rho.sum(axis=1, keepdims=True)
    lam /= lam.sum()
    inst = ProblemInstance(lam, rho, mu, reward_model or RewardModel())
    return inst, report


def write_log(records, path) -> None:
    log = _as_log(records)
    arr = np.column_stack([log.user_type, log.arm, log.position, log.clicked])
    with open(path, "w", encoding="utf-8") as fh:
        np.savetxt(fh, arr, fmt="%d", delimiter="\t")


def read_log(path) -> ClickLog:
    """Parse a TSV click log; malformed lines raise :class:`LogFormatError`."""
    cols = ([], [], [], [])
    with open(Path(path), encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise LogFormatError(n, f"expected 4 tab-separated fields, got {len(parts)}")
            try:
                vals = [int(p) for p in parts]
            except ValueError:
                raise LogFormatError(n, f"non-integer field in {line!r}") from None
            if min(vals) < 0:
                raise LogFormatError(n, "negative index")
            if vals[3] not in (0, 1):
                raise LogFormatError(n, f"clicked must be 0 or 1, got {vals[3]}")
            for c, v in zip(cols, vals):
                c.append(v)
    return ClickLog(*cols)
