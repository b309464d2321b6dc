import io

import numpy as np
import pytest

from helpers import two_arm
from rankbandit.environment import sample_arrival, step_with_reward
from rankbandit.harness import (
    CSV_FIELDS,
    Checkpoint,
    RegretTrace,
    csv_text,
    geometric_checkpoints,
    read_csv,
    run,
    run_many,
    solve_oracle,
    sublinearity_check,
    worst_permutations,
)
from rankbandit.model import (
    ProblemInstance,
    RewardModel,
    UtilityFunction,
    cuf_value,
    expected_user_value,
    random_instance,
)
from rankbandit.optimizer import SearchSpaceTooLarge
from rankbandit.policies import PolicyConfig, PolicyState, decide, observe
from rankbandit.rng import RngStream, derive_seed

NASH = UtilityFunction("nash")


def test_oracle_table1(table1):
    sol = solve_oracle(table1)
    (m, vm), (f, vf) = sol.personalized_optima
    assert m.slots == (2, 3) and vm == pytest.approx(0.742108, abs=1e-12)
    assert f.slots == (3, 2) and vf == pytest.approx(0.490584, abs=1e-12)
    p, v = sol.equal_optimum
    assert p.slots == (2, 3) and v == pytest.approx(0.62129584, abs=1e-12)
    assert sol.gap > 0
    d = sol.to_dict()
    assert d["equal"]["slots"] == [2, 3] and d["utility"] == "utilitarian"


def test_oracle_single_type_and_minimal(minimal):
    inst = random_instance(1, 6, 3, seed=2)
    sol = solve_oracle(inst)
    assert sol.equal_optimum[0] == sol.personalized_optima[0][0]
    assert sol.equal_optimum[1] == pytest.approx(sol.personalized_optima[0][1], abs=1e-12)
    m = solve_oracle(minimal)
    assert m.equal_optimum[0].slots == (0,) and m.equal_optimum[1] == 0.5
    assert m.gap == 0.0


def test_oracle_is_a_maximum():
    inst = random_instance(2, 5, 2, seed=7)
    from rankbandit.optimizer import enumerate_permutations
    for f in (UtilityFunction(), NASH):
        sol = solve_oracle(inst, f)
        vals = sorted((cuf_value(inst, f, p) for p in enumerate_permutations(5, 2)), reverse=True)
        assert sol.equal_optimum[1] == pytest.approx(vals[0], abs=1e-12)
        assert sol.gap == pytest.approx(vals[0] - vals[1], abs=1e-12)


def test_oracle_cap():
    inst = random_instance(2, 12, 6, seed=0)
    with pytest.raises(SearchSpaceTooLarge):
        solve_oracle(inst, cap=1000)
    sol = solve_oracle(inst, cap=1000, need_equal=False)
    assert sol.equal_optimum is None and len(sol.personalized_optima) == 2


@pytest.mark.parametrize("treatment,utility", [
    ("personalized", UtilityFunction()), ("equal", UtilityFunction()), ("equal", NASH)])
def test_oracle_policy_has_zero_regret(table1, treatment, utility):
    cfg = PolicyConfig("oracle", treatment=treatment, utility=utility)
    tr = run(table1, cfg, 5000, 3, [100, 1000, 5000])
    assert all(c.cumulative_regret == 0.0 for c in tr.checkpoints)
    assert all(c.optimal_action_rate == 1.0 for c in tr.checkpoints)


def test_oracle_excluded_from_ratio(table1):
    tr = run(table1, PolicyConfig("oracle"), 2000, 1, [1000, 2000])
    res = sublinearity_check([tr], 1000, 2000)
    assert res["mean_ratio"] is None and res["excluded_seeds"] == [1]
    with pytest.raises(ValueError):
        sublinearity_check([tr], 1000, 1500)


def test_worst_permutation_regret_is_exact():
    inst = two_arm((0.5, 0.1))
    tr = run(inst, PolicyConfig("worst"), 1000, 0, [1, 10, 1000])
    for c in tr.checkpoints:
        assert c.cumulative_regret == pytest.approx(0.4 * c.t, rel=1e-12)
        assert c.optimal_action_rate == 0.0
    assert worst_permutations(inst, "personalized", UtilityFunction()).tolist() == [[1]]


def test_regret_bounded_and_monotone(table1):
    sol = solve_oracle(table1)
    worst = worst_permutations(table1, "equal", UtilityFunction())[0]
    max_gap = sol.equal_optimum[1] - cuf_value(table1, UtilityFunction(), worst)
    for cfg in (PolicyConfig("random", treatment="equal"), PolicyConfig("ucb", 0.5, "equal")):
        tr = run(table1, cfg, 4000, 5)
        regs = [c.cumulative_regret for c in tr.checkpoints]
        assert regs == sorted(regs)
        for c in tr.checkpoints:
            assert c.cumulative_regret <= c.t * max_gap + 1e-9
            assert 0.0 <= c.optimal_action_rate <= 1.0


def _python_run(inst, cfg, horizon, seed):
    """Protocol loop through the public API, for comparison with the kernel."""
    sol = solve_oracle(inst, cfg.utility)
    N, M, K = inst.num_user_types, inst.num_arms, inst.num_positions
    state = PolicyState.fresh(cfg, N, M, K, derive_seed(seed, 1))
    env = RngStream(derive_seed(seed, 0))
    regret = reward = 0.0
    hits = 0
    for t in range(1, horizon + 1):
        i = sample_arrival(inst, env)
        perm = decide(state, cfg, i, t, N)
        fb, mag = step_with_reward(inst, i, perm, env)
        observe(state, cfg, i, perm, fb)
        if cfg.regret_notion == "personalized":
            best, v = sol.personalized_optima[i]
            gap = v - expected_user_value(inst, i, perm)
        else:
            best, v = sol.equal_optimum
            gap = v - cuf_value(inst, cfg.utility, perm)
        regret += max(gap, 0.0)
        reward += mag
        hits += perm == best
    return regret, reward, hits


@pytest.mark.parametrize("cfg", [
    PolicyConfig("ucb", 0.25),
    PolicyConfig("greedy", 0.5, "equal", utility=NASH),
    PolicyConfig("ucb", 0.25, baseline_single_type=True),
])
def test_kernel_matches_public_api(table1, cfg):
    horizon = 1500
    tr = run(table1, cfg, horizon, 9, [horizon])
    regret, reward, hits = _python_run(table1, cfg, horizon, 9)
    c = tr.final
    assert c.optimal_actions == hits
    assert c.cumulative_reward == reward
    assert c.cumulative_regret == pytest.approx(regret, rel=1e-12, abs=1e-12)


def test_beta_rewards_flow_through():
    inst = random_instance(2, 4, 2, seed=1)
    inst = ProblemInstance(inst.arrival_rates, inst.position_prefs, inst.arm_means,
                           RewardModel("beta", 10.0))
    tr = run(inst, PolicyConfig("ucb"), 2000, 0)
    assert 0 < tr.final.cumulative_reward < 2000
    assert tr.final.cumulative_reward != round(tr.final.cumulative_reward)


def test_determinism_and_csv_round_trip(table1):
    policies = {"pt-ucb": PolicyConfig("ucb", 0.25), "et-greedy": PolicyConfig("greedy", 0.5, "equal")}
    a = run_many(table1, policies, 3000, [1, 2], [1000, 3000])
    b = run_many(table1, policies, 3000, [1, 2], [1000, 3000])

    def strip(text):
        return [line.rsplit(",", 1)[0] for line in text.splitlines()]

    ta, tb = csv_text(a), csv_text(b)
    assert strip(ta) == strip(tb)
    lines = ta.splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert [ln.split(",")[0] for ln in lines[1:]] == sorted(ln.split(",")[0] for ln in lines[1:])
    back = read_csv(io.StringIO(ta))
    assert [(t.policy_id, t.seed) for t in back] == [(t.policy_id, t.seed) for t in a]
    for x, y in zip(back, a):
        for cx, cy in zip(x.checkpoints, y.checkpoints):
            assert cx.t == cy.t and cx.optimal_actions == cy.optimal_actions
            assert cx.cumulative_regret == pytest.approx(cy.cumulative_regret, rel=1e-9)


def test_parallel_jobs_do_not_change_output(table1):
    policies = {"a": PolicyConfig("ucb", 0.25), "b": PolicyConfig("random")}
    one = run_many(table1, policies, 500, [3, 4], jobs=1)
    two = run_many(table1, policies, 500, [3, 4], jobs=2)
    assert [c[:3] for t in one for c in t.checkpoints] == [c[:3] for t in two for c in t.checkpoints]


def test_random_policy_is_linear(table1):
    traces = [run(table1, PolicyConfig("random"), 20000, s, [10000, 20000]) for s in range(5)]
    res = sublinearity_check(traces, 10000, 20000)
    assert res["mean_ratio"] == pytest.approx(2.0, abs=0.05)


def test_single_type_notions_agree():
    inst = random_instance(1, 6, 3, seed=11)
    pt = PolicyConfig("greedy", 1.0)
    et = PolicyConfig("greedy", 1.0, "equal")
    a, b = run(inst, pt, 4000, 2), run(inst, et, 4000, 2)
    assert [c[:3] for c in a.checkpoints] == [c[:3] for c in b.checkpoints]
    base_p = run(inst, PolicyConfig("ucb", baseline_single_type=True), 4000, 2)
    base_e = run(inst, PolicyConfig("ucb", baseline_single_type=True, regret="equal"), 4000, 2)
    for cp, ce in zip(base_p.checkpoints, base_e.checkpoints):
        assert cp.cumulative_regret == pytest.approx(ce.cumulative_regret, rel=1e-12, abs=1e-12)


def test_checkpoints_and_trace_access():
    assert geometric_checkpoints(10) == [1, 2, 4, 8, 10]
    assert geometric_checkpoints(10, [5, 50]) == [1, 2, 4, 5, 8, 10]
    tr = RegretTrace("p", 0, [Checkpoint(10, 1.0, 2.0, 0.1, 0.5, 5),
                              Checkpoint(20, 1.5, 4.0, 0.2, 0.75, 15)])
    assert tr.window_optimal_rate(10, 20) == 1.0
    assert tr.final.t == 20
    with pytest.raises(KeyError):
        tr.at(15)


def test_run_rejects_bad_arguments(table1):
    with pytest.raises(ValueError):
        run(table1, PolicyConfig("ucb"), 0, 0)
    with pytest.raises(ValueError):
        run(table1, PolicyConfig("ucb"), 10, 0, [0, 10])
    with pytest.raises(ValueError):
        run(table1, PolicyConfig("fixed"), 10, 0)
    tr = run(table1, PolicyConfig("fixed", fixed_slots=((0, 1), (1, 0))), 10, 0, [5])
    assert [c.t for c in tr.checkpoints] == [5, 10]
