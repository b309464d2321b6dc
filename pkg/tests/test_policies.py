import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import small_instances
from rankbandit.environment import Feedback
from rankbandit.estimators import LearnerState
from rankbandit.harness import personalized_optimum, run, solve_oracle
from rankbandit.model import ProblemInstance, UtilityFunction, cuf_value, random_instance
from rankbandit.optimizer import FractionSchedule, OptimizerConfig
from rankbandit.policies import (
    PolicyConfig,
    PolicyState,
    baseline_decide,
    decide,
    explore_permutation,
    greedy_decide,
    init_permutation,
    observe,
    personalized_rank,
    ucb_decide,
)

EXACT = 2.0 ** 40


def _inject_truth(state, inst, neff=EXACT):
    """Counters whose plug-in estimates equal the instance (to 2**-40)."""
    L = state.learner
    L.rho_hat[:] = inst.position_prefs
    L.neff[:] = neff
    L.S_sum[:] = np.rint(inst.arm_means * neff).astype(np.int64)
    L.arrival_counts[:] = np.rint(inst.arrival_rates * 1e6).astype(np.int64)
    L.meta[0] = L.arrival_counts.sum()
    L.meta[1] = 0
    L.meta[2] = 1
    return state


def _state(inst, config, seed=0):
    return PolicyState.fresh(config, inst.num_user_types, inst.num_arms, inst.num_positions, seed)


def test_init_permutation_examples():
    assert init_permutation(0, 3, 2).slots == (1, 2)
    assert init_permutation(1, 3, 2).slots == (2, 0)
    for t in range(5):
        assert init_permutation(t, 1, 1).slots == (0,)


@given(st.integers(0, 10**6), st.integers(1, 12), st.data())
def test_init_permutation_valid(t, M, data):
    K = data.draw(st.integers(1, M))
    perm = init_permutation(t, M, K)
    assert len(set(perm.slots)) == K
    assert all(0 <= a < M for a in perm.slots)


def test_init_covers_pairs_every_M_rounds():
    M, K = 5, 3
    for start in range(7):
        seen = {(a, p) for t in range(start, start + M)
                for p, a in enumerate(init_permutation(t, M, K).slots)}
        assert seen == {(a, p) for a in range(M) for p in range(K)}


def test_personalized_rank_examples(table1):
    perm = personalized_rank(table1.position_prefs[0], table1.arm_means[0], 2)
    assert perm.slots == (2, 3)
    assert personalized_rank([0.5, 0.5], [0.3, 0.3, 0.3], 2).slots == (0, 1)
    assert personalized_rank([1.0], [0.1, 0.9, 0.4], 1).slots == (1,)
    with pytest.raises(ValueError):
        personalized_rank([0.5, 0.5], [0.1, 0.2], 3)


@settings(max_examples=100)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_personalized_rank_scale_invariant(seed, c):
    g = np.random.default_rng(seed)
    rho, scores = g.dirichlet(np.ones(3)), g.random(6)
    assert personalized_rank(rho, scores, 3) == personalized_rank(rho, scores * c, 3)


def test_greedy_explore_example():
    inst = random_instance(1, 3, 2, seed=1)
    cfg = PolicyConfig("greedy", scale=1e9)
    s = _inject_truth(_state(inst, cfg), inst)
    assert s.cursor == 1
    assert greedy_decide(s, cfg, 0, 5).slots == (2, 0)
    assert s.cursor == 2
    assert explore_permutation(1, 3, 2).slots == (2, 0)
    # the cursor wraps within [1, M]
    for _ in range(10):
        greedy_decide(s, cfg, 0, 5)
        assert 1 <= s.cursor <= 3


def test_greedy_exploit_examples(table1):
    cfg = PolicyConfig("greedy", scale=0.0)
    s = _inject_truth(_state(table1, cfg), table1)
    assert greedy_decide(s, cfg, 0, 100).slots == (2, 3)
    assert s.cursor == 1
    et = PolicyConfig("greedy", scale=0.0, treatment="equal")
    s = _inject_truth(_state(table1, et), table1)
    assert greedy_decide(s, et, 1, 100).slots == (2, 3)


def test_head_rate_matches_schedule():
    inst = random_instance(2, 4, 2, seed=3)
    for treatment, mult in (("personalized", 1), ("equal", 2)):
        cfg = PolicyConfig("greedy", scale=0.5, treatment=treatment)
        s = _inject_truth(_state(inst, cfg, seed=11), inst)
        t, n, heads = 400, 20000, 0
        for _ in range(n):
            before = s.cursor
            decide(s, cfg, 0, t)
            heads += s.cursor != before
        p = min(1.0, 0.5 * mult / math.sqrt(t))
        assert abs(heads / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_greedy_matches_oracle_on_random_instances():
    cfg = PolicyConfig("greedy", scale=0.0)
    for inst in small_instances(200, seed=5):
        s = _inject_truth(_state(inst, cfg), inst)
        for i in range(inst.num_user_types):
            assert decide(s, cfg, i, 50) == personalized_optimum(inst, i)[0]


def test_ucb_bonus_example():
    inst = ProblemInstance([1.0], [[1.0]], [[0.5, 0.5]])
    cfg = PolicyConfig("ucb", scale=0.1)
    s = _inject_truth(_state(inst, cfg), inst)
    s.learner.neff[0] = [10.0, 1000.0]
    s.learner.S_sum[0] = [5, 500]
    assert ucb_decide(s, cfg, 0, 100).slots == (0,)
    s.learner.neff[0] = [1000.0, 10.0]
    s.learner.S_sum[0] = [500, 5]
    assert ucb_decide(s, cfg, 0, 100).slots == (1,)


def test_ucb_zero_scale_matches_greedy(table1):
    for treatment in ("personalized", "equal"):
        u = PolicyConfig("ucb", scale=0.0, treatment=treatment)
        g = PolicyConfig("greedy", scale=0.0, treatment=treatment)
        su = _inject_truth(_state(table1, u), table1)
        sg = _inject_truth(_state(table1, g), table1)
        for i in (0, 1):
            assert decide(su, u, i, 1000) == decide(sg, g, i, 1000)


def test_ucb_first_round_is_pure_exploitation():
    inst = ProblemInstance([1.0], [[1.0]], [[0.4, 0.6]])
    cfg = PolicyConfig("ucb", scale=100.0)
    s = _inject_truth(_state(inst, cfg), inst)
    s.learner.neff[0] = [1.0, 1e6]
    s.learner.S_sum[0] = [0, 600000]
    assert decide(s, cfg, 0, 1).slots == (1,)
    assert decide(s, cfg, 0, 3).slots == (0,)


def test_ucb_zero_pulls_after_init_is_a_fault():
    inst = ProblemInstance([1.0], [[1.0]], [[0.4, 0.6]])
    cfg = PolicyConfig("ucb")
    s = _inject_truth(_state(inst, cfg), inst)
    s.learner.neff[0, 1] = 0.0
    with pytest.raises(ValueError, match="effective pull count"):
        decide(s, cfg, 0, 10)


def test_ucb_equal_treatment_sums_bonus_over_types():
    inst = ProblemInstance([0.5, 0.5], [[1.0], [1.0]], [[0.5, 0.52], [0.5, 0.52]])
    cfg = PolicyConfig("ucb", scale=0.01, treatment="equal")
    s = _inject_truth(_state(inst, cfg), inst)
    # arm 0 under-pulled by one type only: bonus 0.01 ln 100 / 10 = 0.0046 < 0.02 gap
    s.learner.neff[0, 0] = 10.0
    s.learner.S_sum[0, 0] = 5
    assert decide(s, cfg, 0, 100).slots == (1,)
    # under-pulled by both: summed bonus 0.0092, still below the gap
    s.learner.neff[1, 0] = 10.0
    s.learner.S_sum[1, 0] = 5
    assert decide(s, cfg, 0, 100).slots == (1,)
    s.learner.neff[:, 0] = 1.0
    s.learner.S_sum[:, 0] = 1
    assert decide(s, cfg, 0, 100).slots == (0,)


@settings(max_examples=60)
@given(st.floats(1.0, 1e4), st.floats(1.0, 1e4))
def test_ucb_score_monotone_in_pulls(n_small, extra):
    # the less-pulled of two equal-mean arms always wins
    inst = ProblemInstance([1.0], [[1.0]], [[0.5, 0.5]])
    cfg = PolicyConfig("ucb", scale=1.0)
    s = _inject_truth(_state(inst, cfg), inst)
    L = s.learner
    L.neff[0] = [n_small + extra, n_small]
    L.S_sum[0] = [0, 0]
    assert decide(s, cfg, 0, 100).slots == (1,)


def test_equal_treatment_exact_matches_oracle(table1):
    for kind in ("utilitarian", "nash"):
        f = UtilityFunction(kind)
        cfg = PolicyConfig("greedy", scale=0.0, treatment="equal", utility=f)
        s = _inject_truth(_state(table1, cfg), table1)
        s.learner.arrival_counts[:] = np.rint(table1.arrival_rates * EXACT).astype(np.int64)
        s.learner.meta[0] = s.learner.arrival_counts.sum()
        got = decide(s, cfg, 0, 10)
        assert got == solve_oracle(table1, f).equal_optimum[0]
        assert cuf_value(table1, f, got) == pytest.approx(
            solve_oracle(table1, f).equal_optimum[1], abs=1e-12)


def test_sampled_full_fraction_equals_exact(table1):
    exact = PolicyConfig("ucb", 0.5, "equal")
    sampled = PolicyConfig("ucb", 0.5, "equal", optimizer=OptimizerConfig(
        kind="sampled", schedule=FractionSchedule(1.0, 0.0)))
    a = run(table1, exact, 3000, 4, [1000, 3000])
    b = run(table1, sampled, 3000, 4, [1000, 3000])
    assert [c[:3] for c in a.checkpoints] == [c[:3] for c in b.checkpoints]


def test_emitted_permutations_valid():
    inst = random_instance(2, 5, 3, seed=8)
    for cfg in (PolicyConfig("greedy", 1.0), PolicyConfig("ucb", 1.0, "equal"),
                PolicyConfig("random"), PolicyConfig("greedy", 5.0, "equal",
                                                     utility=UtilityFunction("nash"))):
        s = _state(inst, cfg, seed=2)
        rng = np.random.default_rng(0)
        for t in range(1, 400):
            i = int(rng.integers(2))
            perm = decide(s, cfg, i, t)
            assert len(set(perm.slots)) == 3 and max(perm.slots) < 5
            k = int(rng.integers(3))
            if rng.random() < 0.5:
                observe(s, cfg, i, perm, Feedback(i, 1, perm.slots[k]))
            else:
                observe(s, cfg, i, perm, Feedback(i, 0))


def test_init_phase_uses_rotation():
    inst = random_instance(1, 4, 2, seed=0)
    cfg = PolicyConfig("ucb")
    s = _state(inst, cfg)
    for t in range(1, 6):
        assert decide(s, cfg, 0, t) == init_permutation(t, 4, 2)


def test_require_init_and_family():
    inst = random_instance(1, 4, 2, seed=0)
    cfg = PolicyConfig("ucb")
    s = _state(inst, cfg)
    with pytest.raises(ValueError, match="initialization"):
        ucb_decide(s, cfg, 0, 3)
    _inject_truth(s, inst)
    with pytest.raises(ValueError, match="greedy"):
        greedy_decide(s, cfg, 0, 3)
    with pytest.raises(ValueError, match="single-type"):
        baseline_decide(s, cfg, 3)


def test_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig("softmax")
    with pytest.raises(ValueError):
        PolicyConfig("ucb", treatment="fair")
    with pytest.raises(ValueError):
        PolicyConfig("ucb", scale=-1.0)
    with pytest.raises(ValueError):
        PolicyConfig("greedy", baseline_single_type=True)
    cfg = PolicyConfig.from_dict({"id": "x", "family": "greedy", "scale": 5,
                                  "treatment": "equal", "utility": "nash"})
    assert cfg.utility.kind == "nash" and cfg.regret_notion == "equal"


def test_baseline_equals_ucb_on_one_type():
    inst = random_instance(1, 6, 3, seed=4)
    pt = PolicyConfig("ucb", 1.0)
    base = PolicyConfig("ucb", 1.0, baseline_single_type=True)
    for seed in range(3):
        a, b = run(inst, pt, 5000, seed), run(inst, base, 5000, seed)
        assert a.checkpoints == [c._replace(wall_clock_s=a.checkpoints[n].wall_clock_s)
                                 for n, c in enumerate(b.checkpoints)]


def test_baseline_equals_ucb_on_identical_types():
    base_inst = random_instance(1, 5, 2, seed=9)
    inst = ProblemInstance([0.3, 0.7], np.repeat(base_inst.position_prefs, 2, axis=0),
                           np.repeat(base_inst.arm_means, 2, axis=0))
    pt = PolicyConfig("ucb", 1.0)
    base = PolicyConfig("ucb", 1.0, baseline_single_type=True)
    sp, sb = _state(inst, pt), _state(inst, base)
    _inject_truth(sb, base_inst)
    sp.learner.neff[:] = EXACT
    for i in range(2):
        sp.learner.rho_hat[i] = base_inst.position_prefs[0]
        sp.learner.S_sum[i] = sb.learner.S_sum[0]
    sp.learner.meta[2] = 1
    for i in range(2):
        assert decide(sp, pt, i, 77) == baseline_decide(sb, base, 77)


def test_baseline_pools_counters(table1):
    cfg = PolicyConfig("ucb", baseline_single_type=True)
    s = _state(table1, cfg)
    assert s.learner.shape == (1, 5, 2)
    perm = decide(s, cfg, 1, 1)
    observe(s, cfg, 1, perm, Feedback(1, 1, perm.slots[0]))
    assert s.learner.arrival_counts.tolist() == [1]
    assert isinstance(s.learner, LearnerState)
