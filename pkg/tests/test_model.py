"""Data model tests: validation, ledger measures, CSV round trip, regret."""

import math

import numpy as np
import pytest

from robustbandits.model import (
    ActionSet,
    CorruptionLedger,
    CorruptionPlan,
    RewardVector,
    RunRecord,
    record_round,
    record_round_point,
    regret,
)


def simplex_actions():
    return ActionSet(np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]))


# ---------------------------------------------------------------- validation


def test_action_set_shape_and_counts():
    A = simplex_actions()
    assert A.n == 3 and A.dim == 2 and len(A) == 3


def test_action_set_rejects_long_vectors():
    with pytest.raises(ValueError, match="norm"):
        ActionSet(np.array([[1.0, 0.1]]))


def test_action_set_rejects_empty_and_ragged():
    with pytest.raises(ValueError):
        ActionSet(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        ActionSet(np.zeros(3))


def test_reward_vector_checked():
    A = simplex_actions()
    RewardVector.checked([0.7, 0.1], A)
    with pytest.raises(ValueError, match="theta"):
        RewardVector.checked([0.7, 0.1, 0.0], A)
    with pytest.raises(ValueError, match="sqrt"):
        RewardVector.checked([2.0, 0.1], A)


def test_reward_vector_mean_range():
    # ||theta|| <= sqrt(2) but a^T theta > 1 for the first action
    A = ActionSet(np.array([[1.0, 0.0]]))
    with pytest.raises(ValueError, match="outside"):
        RewardVector.checked([1.2, 0.0], A)


def test_corruption_plan_bounds():
    CorruptionPlan(np.array([1.0, -1.0, 0.0]))
    with pytest.raises(ValueError, match="outside"):
        CorruptionPlan(np.array([0.0, 1.5]))
    assert np.all(CorruptionPlan.zero(4).eps == 0.0)


# ---------------------------------------------------------------- ledger


def test_ledger_worked_example():
    """Three rounds, charged by hand."""
    led = CorruptionLedger()
    led = record_round(led, np.array([0.5, -1.0]), 0)
    led = record_round(led, np.array([-0.25, 0.0]), 0)
    led = record_round(led, np.array([0.0, 0.75]), 1)
    assert led.C == pytest.approx(0.5 + 0.25 + 0.75)
    assert led.Cinf == pytest.approx(1.0 + 0.25 + 0.75)
    assert led.Csq == pytest.approx(math.sqrt(3 * (0.25 + 0.0625 + 0.5625)))
    assert led.Csqinf == pytest.approx(math.sqrt(3 * (1.0 + 0.0625 + 0.5625)))
    assert led.Cms == pytest.approx(3.0)
    led.check_chain()


def test_ledger_chain_random_plans():
    """C <= min(Cinf, Csq) <= Csqinf <= Cms on arbitrary trajectories."""
    for seed in range(40):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(1, 60))
        n = int(rng.integers(1, 6))
        led = CorruptionLedger()
        for _ in range(T):
            eps = rng.uniform(-1, 1, size=n)
            led = record_round(led, eps, int(rng.integers(n)))
        led.check_chain()
        # direct inequality checks, independent of check_chain's slack
        assert led.C <= led.Cinf + 1e-9
        assert led.C <= led.Csq + 1e-9
        assert min(led.Cinf, led.Csq) <= led.Csqinf + 1e-9
        assert led.Csqinf <= led.Cms + 1e-9


def test_ledger_point_charge():
    # continuous play: strong measures use the played value, max measures the plan
    led = record_round_point(CorruptionLedger(), np.array([0.2, -0.6]), 0.1)
    assert led.C == pytest.approx(0.1)
    assert led.Cinf == pytest.approx(0.6)
    assert led.Csq == pytest.approx(0.1)
    assert led.ms_max == pytest.approx(0.6)


def test_ledger_zero_plan():
    led = record_round(CorruptionLedger(), np.zeros(3), 2)
    assert led.as_dict() == {"C": 0.0, "Cinf": 0.0, "Csq": 0.0, "Csqinf": 0.0, "Cms": 0.0, "T": 1}


# ---------------------------------------------------------------- run records


def make_record(seed=7, T=5):
    rng = np.random.default_rng(seed)
    led = CorruptionLedger()
    eps = rng.uniform(-0.5, 0.5, size=(T, 2))
    acts = rng.integers(0, 2, size=T)
    for t in range(T):
        led = record_round(led, eps[t], int(acts[t]))
    return RunRecord(
        t=np.arange(1, T + 1),
        action=acts.astype(np.int64),
        reward=rng.normal(size=T),
        mean_reward=rng.uniform(-1, 1, size=T),
        eps_charged=eps[np.arange(T), acts],
        cum_regret=np.cumsum(rng.uniform(0, 1, size=T)),
        ledger=led,
        seed=seed,
    )


def test_csv_round_trip_exact():
    rec = make_record()
    text = rec.to_csv()
    back = RunRecord.from_csv(text)
    assert back.seed == rec.seed
    np.testing.assert_array_equal(back.t, rec.t)
    np.testing.assert_array_equal(back.action, rec.action)
    for name in ("reward", "mean_reward", "eps_charged", "cum_regret"):
        np.testing.assert_array_equal(getattr(back, name), getattr(rec, name))
    for key, val in rec.ledger.as_dict().items():
        assert back.ledger.as_dict()[key] == pytest.approx(val, abs=1e-12)
    # serialization is deterministic
    assert back.to_csv() == text


def test_csv_rejects_garbage():
    with pytest.raises(ValueError):
        RunRecord.from_csv("not,a,record\n1,2,3\n")


def test_final_regret_property():
    rec = make_record()
    assert rec.final_regret == rec.cum_regret[-1]
    assert rec.horizon == 5


# ---------------------------------------------------------------- regret


def test_regret_fixed_comparator():
    A = ActionSet(np.array([[1.0, 0.0], [0.0, 1.0]]))
    theta = np.array([0.5, 0.2])
    T = 4
    rec = RunRecord(
        t=np.arange(1, T + 1),
        action=np.array([0, 1, 1, 0]),
        reward=np.zeros(T),
        mean_reward=np.array([0.5, 0.2, 0.2, 0.5]),
        eps_charged=np.zeros(T),
        cum_regret=np.zeros(T),
        ledger=CorruptionLedger(rounds=T),
        seed=0,
    )
    # best fixed action earns 4*0.5 = 2.0; played 0.5+0.2+0.2+0.5 = 1.4
    assert regret(rec, theta, A) == pytest.approx(0.6)


def test_regret_continuous_rows_use_recorded_means():
    A = ActionSet(np.array([[1.0, 0.0], [0.0, 1.0]]))
    theta = np.array([0.5, 0.2])
    rec = RunRecord(
        t=np.arange(1, 3),
        action=np.array([-1, 0]),
        reward=np.zeros(2),
        mean_reward=np.array([0.35, 0.5]),
        eps_charged=np.zeros(2),
        cum_regret=np.zeros(2),
        ledger=CorruptionLedger(rounds=2),
        seed=0,
    )
    assert regret(rec, theta, A) == pytest.approx(1.0 - 0.85)


def test_regret_time_varying_theta():
    A = ActionSet(np.array([[1.0, 0.0], [0.0, 1.0]]))
    thetas = np.array([[0.9, 0.0], [0.0, 0.4]])
    rec = RunRecord(
        t=np.arange(1, 3),
        action=np.array([1, 1]),
        reward=np.zeros(2),
        mean_reward=np.zeros(2),
        eps_charged=np.zeros(2),
        cum_regret=np.zeros(2),
        ledger=CorruptionLedger(rounds=2),
        seed=0,
    )
    # comparator fixed in hindsight: e1 earns 0.9, e2 earns 0.4; played e2 twice
    assert regret(rec, thetas, A) == pytest.approx(0.9 - 0.4)
