"""Environment and adversary tests: plans, budgets, instances, replay."""

import numpy as np
import pytest

from robustbandits.envs import (
    Environment,
    FunctionalAdversary,
    MisspecifiedInstance,
    ProtocolError,
    SignFlipAdversary,
    StrongTargetedAdversary,
    WeakBudgetAdversary,
    ZeroAdversary,
    aa_to_plan,
    make_adversary,
    make_gap_misspecified,
    make_packing,
)
from robustbandits.model import ActionSet, regret

E2 = ActionSet(np.vstack([np.eye(2), -np.eye(2)]))


# ---------------------------------------------------------------- basic stepping


def test_clean_environment_exact_rewards():
    env = Environment(E2, theta=[0.7, 0.2], adversary=ZeroAdversary(), noise=0.0, horizon=4, seed=0)
    assert env.step(0) == pytest.approx(0.7)
    assert env.step(1) == pytest.approx(0.2)
    assert env.step(2) == pytest.approx(-0.7)
    rec_reward = env.step(3)
    assert rec_reward == pytest.approx(-0.2)
    assert env.ledger.C == 0.0


def test_sign_flip_mean():
    # a^T theta = 0.5, cap 0.3: corrupted mean 0.2
    A = ActionSet(np.array([[1.0, 0.0]]))
    env = Environment(A, theta=[0.5, 0.0], adversary=SignFlipAdversary(cap=0.3), noise=0.0, horizon=1, seed=0)
    assert env.step(0) == pytest.approx(0.2)
    assert env.ledger.C == pytest.approx(0.3)


def test_noise_is_bounded_and_seeded():
    env1 = Environment(E2, theta=[0.5, 0.0], noise=1.0, horizon=50, seed=9)
    env2 = Environment(E2, theta=[0.5, 0.0], noise=1.0, horizon=50, seed=9)
    r1 = [env1.step(0) for _ in range(50)]
    r2 = [env2.step(0) for _ in range(50)]
    assert r1 == r2
    assert all(-0.5 <= r <= 1.5 for r in r1)


def test_horizon_and_index_protocol_errors():
    env = Environment(E2, theta=[0.5, 0.0], noise=0.0, horizon=1, seed=0)
    env.step(0)
    with pytest.raises(ProtocolError, match="horizon"):
        env.step(0)
    env2 = Environment(E2, theta=[0.5, 0.0], noise=0.0, horizon=1, seed=0)
    with pytest.raises(ProtocolError, match="range"):
        env2.step(7)


def test_construction_validation():
    with pytest.raises(ValueError, match="exactly one"):
        Environment(E2, theta=[0.5, 0.0], theta_schedule=lambda t: [0.5, 0.0])
    with pytest.raises(ValueError, match="exactly one"):
        Environment(E2)
    with pytest.raises(ValueError, match="noise"):
        Environment(E2, theta=[0.5, 0.0], noise=1.5)


# ---------------------------------------------------------------- adversaries


def test_weak_budget_saturation():
    """Weak measure drains by the per-round max; C tracks only what was played."""
    env = Environment(E2, theta=[0.9, 0.0], adversary=WeakBudgetAdversary(budget=3.5), noise=0.0, horizon=6, seed=0)
    for _ in range(6):
        env.step(1)  # never the corrupted (best) action
    assert env.ledger.Cinf == pytest.approx(3.5)  # 1 + 1 + 1 + 0.5 + 0 + 0
    assert env.ledger.C == 0.0


def test_weak_budget_charges_played_best():
    env = Environment(E2, theta=[0.9, 0.0], adversary=WeakBudgetAdversary(budget=2.0), noise=0.0, horizon=4, seed=0)
    rewards = [env.step(0) for _ in range(4)]
    assert rewards[:2] == [pytest.approx(0.9 - 1.0)] * 2
    assert rewards[2:] == [pytest.approx(0.9)] * 2
    assert env.ledger.C == pytest.approx(2.0)
    assert env.ledger.Cinf == pytest.approx(2.0)


def test_strong_budget_drains_only_when_hit():
    adv = StrongTargetedAdversary(budget=2.0)
    env = Environment(E2, theta=[0.9, 0.0], adversary=adv, noise=0.0, horizon=10, seed=0)
    for _ in range(5):
        env.step(1)
    assert adv.remaining == pytest.approx(2.0)
    assert env.ledger.C == 0.0
    assert env.ledger.Cinf == pytest.approx(5.0)  # the plan kept offering 1.0
    env.step(0)
    env.step(0)
    assert adv.remaining == pytest.approx(0.0)
    assert env.ledger.C == pytest.approx(2.0)


def test_make_adversary_registry():
    adv = make_adversary({"name": "weak_budget", "budget": 2.0, "cap": 0.5})
    assert isinstance(adv, WeakBudgetAdversary) and adv.cap == 0.5
    with pytest.raises(ValueError, match="unknown"):
        make_adversary({"name": "nope"})


def test_aa_cm_bitwise_equivalence():
    """Reactive adversary vs its dense-plan adapter, identical seeds."""

    def attack(ctx, a):
        lin = float(a @ ctx.theta)
        return -np.sign(lin) * (0.25 if ctx.t % 2 else 0.125)

    for seed in range(5):
        env_aa = Environment(
            E2, theta=[0.6, 0.3], adversary=FunctionalAdversary(attack), noise=1.0, horizon=40, seed=seed, aa_mode=True
        )
        env_cm = Environment(
            E2, theta=[0.6, 0.3], adversary=aa_to_plan(attack), noise=1.0, horizon=40, seed=seed
        )
        pol = np.random.default_rng(1000 + seed)
        choices = pol.integers(0, 4, size=40)
        for c in choices:
            env_aa.step(int(c))
        for c in choices:
            env_cm.step(int(c))
        ra, rc = env_aa.finalize(), env_cm.finalize()
        assert ra.to_csv() == rc.to_csv()  # bitwise, rewards and ledger included


def test_aa_mode_requires_response():
    with pytest.raises(ValueError, match="response"):
        Environment(E2, theta=[0.5, 0.0], adversary=WeakBudgetAdversary(budget=1.0), aa_mode=True)


# ---------------------------------------------------------------- misspecified instances

# linear means {0.8, 0.5, 0.05}; with rho = 0.25 max-adverse the true means
# come out {0.8, 0.4, -0.2}: deviations {0, 0.1, 0.25}, true gaps {0, 0.4, 1.0}
A3 = ActionSet(np.array([[1.0, 0.0], [0.625, 0.5], [0.0625, -0.9]]))
TH3 = np.array([0.8, 0.0])


def test_misspec_worked_example():
    inst = make_gap_misspecified(A3, TH3, rho=0.25)
    np.testing.assert_allclose(inst.f0, [0.8, 0.4, -0.2], atol=1e-12)
    np.testing.assert_allclose(np.abs(inst.delta), [0.0, 0.1, 0.25], atol=1e-12)
    np.testing.assert_allclose(inst.gaps, [0.0, 0.4, 1.0], atol=1e-12)
    assert inst.best == 0


def test_misspec_invariant_tight_for_max_adverse():
    for rho in (0.0, 0.1, 0.25, 0.5):
        inst = make_gap_misspecified(A3, TH3, rho=rho)
        np.testing.assert_allclose(np.abs(inst.delta), rho * inst.gaps, atol=1e-12)


def test_misspec_best_action_untouched():
    inst = make_gap_misspecified(A3, TH3, rho=0.4)
    assert inst.delta[inst.best] == pytest.approx(0.0, abs=1e-12)


def test_misspec_rho_zero_is_linear():
    inst = make_gap_misspecified(A3, TH3, rho=0.0)
    np.testing.assert_allclose(inst.f0, A3.actions @ TH3, atol=0)


def test_misspec_positive_sign_profile():
    inst = make_gap_misspecified(A3, TH3, rho=0.25, sign=1.0)
    # deviations flip direction but stay within budget
    assert np.all(inst.delta[1:] > 0.0)
    assert np.all(np.abs(inst.delta) <= inst.rho * inst.gaps + 1e-12)


def test_misspec_random_shape_within_budget():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        inst = make_gap_misspecified(A3, TH3, rho=0.3, shape="random", rng=rng)
        assert np.all(np.abs(inst.delta) <= 0.3 * inst.gaps + 1e-12)
    with pytest.raises(ValueError, match="rng"):
        make_gap_misspecified(A3, TH3, rho=0.3, shape="random")


def test_misspec_domain_and_range_errors():
    with pytest.raises(ValueError, match="rho"):
        make_gap_misspecified(A3, TH3, rho=1.0)
    with pytest.raises(ValueError, match="rho"):
        make_gap_misspecified(A3, TH3, rho=-0.1)
    pm = ActionSet(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    with pytest.raises(ValueError, match="leaves"):
        make_gap_misspecified(pm, [0.9, 0.0], rho=0.6)  # f0 = -3.6 on the bad arm
    with pytest.raises(ValueError, match="shape"):
        make_gap_misspecified(A3, TH3, rho=0.2, shape="exotic")


def test_misspec_instance_validates_inputs():
    with pytest.raises(ValueError, match="exceeds"):
        MisspecifiedInstance(actions=A3, theta=TH3, f0=np.array([0.8, 0.7, 0.0]), rho=0.05)
    with pytest.raises(ValueError, match="per action"):
        MisspecifiedInstance(actions=A3, theta=TH3, f0=np.zeros(2), rho=0.1)


def test_instance_environment_plays_f0():
    inst = make_gap_misspecified(A3, TH3, rho=0.25)
    env = Environment(A3, instance=inst, noise=0.0, horizon=3, seed=0)
    assert env.step(0) == pytest.approx(0.8)
    assert env.step(1) == pytest.approx(0.4)
    assert env.step(2) == pytest.approx(-0.2)
    rec = env.finalize()
    # deviations are charged to the ledger as corruption
    assert rec.ledger.C == pytest.approx(0.1 + 0.25)
    assert rec.ledger.Cinf == pytest.approx(3 * 0.25)
    # comparator is the best true mean
    assert rec.final_regret == pytest.approx(3 * 0.8 - (0.8 + 0.4 - 0.2))
    with pytest.raises(ValueError, match="corruption"):
        Environment(A3, instance=inst, adversary=ZeroAdversary())


# ---------------------------------------------------------------- packing instances


def test_packing_small_dimension_is_vacuous_but_valid():
    rng = np.random.default_rng(0)
    A, reward, inst = make_packing(16, 40, 1000, eps_gap=0.5, rng=rng)
    G = A.actions @ A.actions.T
    np.testing.assert_allclose(np.diag(G), 1.0, atol=1e-9)
    bound = np.sqrt(8 * np.log(3000.0) / 15)
    assert bound > 1.0  # the cap min(1, bound) is what actually binds
    off = G[~np.eye(40, dtype=bool)]
    assert np.max(np.abs(off)) <= min(1.0, bound)


def test_packing_tight_bound_enforced():
    rng = np.random.default_rng(1)
    d, n, T = 30, 20, 5
    A, reward, inst = make_packing(d, n, T, eps_gap=0.8, rng=rng)
    bound = np.sqrt(8 * np.log(3.0 * T) / (d - 1))
    assert bound < 1.0
    G = A.actions @ A.actions.T
    off = G[~np.eye(n, dtype=bool)]
    assert np.max(np.abs(off)) <= bound + 1e-12
    # theta points along the optimum with the prescribed length
    scale = np.sqrt((d - 1) / (8 * np.log(3.0 * T)))
    i_star = inst.best
    np.testing.assert_allclose(reward.theta, scale * 0.8 * A.actions[i_star], atol=1e-12)
    # every non-optimal true mean is zero
    mask = np.ones(n, dtype=bool)
    mask[i_star] = False
    assert np.all(inst.f0[mask] == 0.0)
    assert inst.f0[i_star] == pytest.approx(scale * 0.8)


def test_packing_zero_gap_degenerate():
    rng = np.random.default_rng(2)
    A, reward, inst = make_packing(6, 5, 50, eps_gap=0.0, rng=rng)
    assert np.all(reward.theta == 0.0)
    assert np.all(inst.f0 == 0.0)


def test_packing_budget_error_reports_achieved():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError, match="achieved"):
        make_packing(8, 50, 100, eps_gap=0.1, rng=rng, budget=3)


# ---------------------------------------------------------------- continuous play


def test_step_point_interior_and_vertex():
    env = Environment(E2, theta=[0.6, 0.2], adversary=ZeroAdversary(), noise=0.0, horizon=3, seed=0)
    r = env.step_point(np.array([0.3, 0.3]))
    assert r == pytest.approx(0.3 * 0.6 + 0.3 * 0.2)
    r = env.step_point(np.array([1.0, 0.0]))
    assert r == pytest.approx(0.6)
    rec_partial_actions = env._played
    assert rec_partial_actions == [-1, 0]


def test_step_point_with_reactive_adversary():
    env = Environment(
        E2, theta=[0.6, 0.2], adversary=SignFlipAdversary(cap=0.1), noise=0.0, horizon=1, seed=0
    )
    r = env.step_point(np.array([0.5, 0.0]))
    assert r == pytest.approx(0.3 - 0.1)
    # strong measure charges the point, max measures the finite plan
    assert env.ledger.C == pytest.approx(0.1)
    assert env.ledger.Cinf == pytest.approx(0.1)


def test_step_point_rejections():
    inst = make_gap_misspecified(A3, TH3, rho=0.2)
    env = Environment(A3, instance=inst, noise=0.0, horizon=5, seed=0)
    with pytest.raises(ProtocolError, match="misspecified"):
        env.step_point(np.array([0.1, 0.0]))
    env2 = Environment(E2, theta=[0.5, 0.0], adversary=WeakBudgetAdversary(budget=1.0), horizon=5, seed=0)
    with pytest.raises(ProtocolError, match="price"):
        env2.step_point(np.array([0.1, 0.0]))
    env3 = Environment(E2, theta=[0.5, 0.0], noise=0.0, horizon=5, seed=0)
    with pytest.raises(ProtocolError, match="ball"):
        env3.step_point(np.array([1.2, 0.0]))


# ---------------------------------------------------------------- schedules, records, replay


def test_theta_schedule():
    env = Environment(
        E2, theta_schedule=lambda t: [0.5 if t <= 2 else -0.5, 0.0], noise=0.0, horizon=4, seed=0
    )
    rewards = [env.step(0) for _ in range(4)]
    assert rewards == [pytest.approx(x) for x in (0.5, 0.5, -0.5, -0.5)]
    rec = env.finalize()
    # every fixed action nets 0 against this sign-flipping schedule
    assert rec.final_regret == pytest.approx(0.0, abs=1e-12)
    assert rec.final_regret == pytest.approx(regret(rec, np.array([[0.5, 0.0], [0.5, 0.0], [-0.5, 0.0], [-0.5, 0.0]]), E2))
    with pytest.raises(ValueError, match="serializable"):
        env.to_json()


def test_finalize_matches_regret_helper():
    env = Environment(E2, theta=[0.7, 0.1], adversary=SignFlipAdversary(cap=0.2), noise=1.0, horizon=30, seed=4)
    pol = np.random.default_rng(77)
    for _ in range(30):
        env.step(int(pol.integers(0, 4)))
    rec = env.finalize()
    assert rec.final_regret == pytest.approx(regret(rec, np.array([0.7, 0.1]), E2))


def test_json_round_trip_replays_bitwise():
    def drive(env):
        pol = np.random.default_rng(123)
        for _ in range(40):
            env.step(int(pol.integers(0, 4)))
        return env.finalize()

    env = Environment(
        E2, theta=[0.8, 0.1], adversary=WeakBudgetAdversary(budget=5.0, cap=0.5), noise=1.0, horizon=40, seed=11
    )
    rec = drive(env)
    env2 = Environment.from_json(env.to_json())
    rec2 = drive(env2)
    assert rec.to_csv() == rec2.to_csv()


def test_json_round_trip_instance():
    inst = make_gap_misspecified(A3, TH3, rho=0.25)
    env = Environment(A3, instance=inst, noise=1.0, horizon=20, seed=3)
    for _ in range(20):
        env.step(int(env.rng.integers(0, 3)))
    rec = env.finalize()
    env2 = Environment.from_json(env.to_json())
    for _ in range(20):
        env2.step(int(env2.rng.integers(0, 3)))
    assert env2.finalize().to_csv() == rec.to_csv()
