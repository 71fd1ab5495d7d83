"""Corruption-robust linear bandits: algorithms, adversaries, and a benchmark harness."""

from robustbandits.model import (
    ActionSet,
    CorruptionLedger,
    CorruptionPlan,
    RewardVector,
    RunRecord,
    record_round,
    regret,
)
from robustbandits.design import Design, g_optimal, leverage
from robustbandits.envs import (
    Adversary,
    Environment,
    MisspecifiedInstance,
    aa_to_plan,
    make_gap_misspecified,
    make_packing,
)
from robustbandits.elimination import covering_net, misspec_elim_run, stoch_elim_run
from robustbandits.logdet import FtrlParams, bonus, estimate_theta, ftrl_step, logdet_run
from robustbandits.cew import CewParams, cew_params, cew_round, cew_run
from robustbandits.reduction import CorruptionOracle, beta_schedule, reduce_and_run

__version__ = "0.1.0"
