"""Black-box reduction: run a corruption-robust learner on a misspecified
instance by budgeting the deviations as corruption.

The learner is abstracted as an oracle with a regret guarantee of the form
c1(delta, T) sqrt(T) + c2(delta, T) * C' whenever the realized corruption is
at most the bound C' it is told.  The budget beta is the fixed point of
"corruption charged <= rho * regret + concentration", solved in closed form;
the precondition rho c2 / (1 - rho) <= 1/2 keeps the fixed point stable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from robustbandits.elimination import stoch_elim_run
from robustbandits.model import RunRecord


class ReductionError(ValueError):
    """Precondition failure; carries the offending ratio."""

    def __init__(self, msg: str, ratio: float):
        super().__init__(msg)
        self.ratio = ratio


@dataclass(frozen=True)
class CorruptionOracle:
    """A corruption-robust learner plus its guarantee coefficients.

    run(env, c_bound, delta) executes the learner telling it the corruption is
    at most c_bound; c1/c2 map (delta, T) to the guarantee coefficients.
    """

    run: Callable[..., RunRecord]
    c1: Callable[[float, int], float]
    c2: Callable[[float, int], float]
    name: str = "oracle"


def beta_schedule(rho: float, c1: float, c2: float, T: int, delta: float, H: float = 1.0) -> float:
    """Corruption budget for a rho-misspecified run of a (c1, c2) oracle.

    c1, c2 are the coefficient *values*, already evaluated at the confidence
    the oracle will run at.  Raises ReductionError when
    rho c2 / (1 - rho) > 1/2.
    """
    if not (0.0 <= rho < 1.0):
        raise ValueError(f"rho = {rho} must lie in [0, 1)")
    if T < 1:
        raise ValueError("T must be positive")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must be in (0, 1)")
    if c1 < 0 or c2 < 0:
        raise ValueError("coefficients must be nonnegative")
    ratio = rho * c2 / (1.0 - rho)
    if ratio > 0.5:
        raise ReductionError(
            f"rho c2/(1-rho) = {ratio:.6g} exceeds 1/2: oracle too weak for this rho", ratio
        )
    inner = (rho / (1.0 - rho)) * c1 * np.sqrt(T) + H * np.sqrt(2.0 * T * np.log(1.0 / delta)) + H
    return float(inner / (1.0 - ratio))


def reduce_and_run(
    oracle: CorruptionOracle, env, rho: float, delta: float, doubling: bool = False
) -> RunRecord:
    """Wrap the oracle for a rho-misspecified environment.

    The guarantee coefficients and the oracle's own confidence are evaluated
    at delta / T (union bound over rounds); the concentration term inside the
    budget keeps the original delta.

    doubling restarts the oracle over windows of length 2^j, re-evaluating the
    budget for each window; it exists for fixed-horizon oracles and requires
    the oracle's run to accept a `horizon` keyword.  The default single-shot
    path never passes that keyword.

    The returned record carries the budget, the enforced stability ratio, and
    the stricter single-algorithm tolerance rho <= min(1/2, 1/(4 c2)) in its
    meta block (the latter is reported, not enforced).
    """

    def budget(T_b: int):
        inner = delta / T_b
        c1 = float(oracle.c1(inner, T_b))
        c2 = float(oracle.c2(inner, T_b))
        return beta_schedule(rho, c1, c2, T_b, delta), inner, c1, c2

    if not doubling:
        beta, inner_delta, c1, c2 = budget(env.horizon)
        record = oracle.run(env, beta, inner_delta)
    else:
        record = None
        j = 0
        while env.t < env.horizon:
            h = min(2**j, env.horizon - env.t)
            beta, inner_delta, c1, c2 = budget(h)
            record = oracle.run(env, beta, inner_delta, horizon=h)
            j += 1
        if record is None:
            record = env.finalize()
            beta, inner_delta, c1, c2 = budget(env.horizon)
    ratio = rho * c2 / (1.0 - rho)
    meta = {
        "alg": oracle.name,
        "rho": float(rho),
        "beta": float(beta),
        "c1": c1,
        "c2": c2,
        "ratio": float(ratio),
        "rho_cap_single": float(min(0.5, 0.25 / c2)) if c2 > 0 else 0.5,
        "within_single_cap": int(rho <= (min(0.5, 0.25 / c2) if c2 > 0 else 0.5)),
    }
    if doubling:
        meta["restarts"] = j
    return replace(record, meta={**record.meta, **meta})


def stoch_elim_oracle(d: int, n_actions: int, measure: str = "strong") -> CorruptionOracle:
    """Phased elimination packaged as a reduction oracle.

    measure selects how the corruption bound C' maps to the threshold
    inflation Z: "strong" uses Z = d C', "weak" uses Z = sqrt(d) C'.  The
    coefficients below come from summing the per-epoch threshold over the
    doubling schedule (8 and 2 are the threshold constants; 110 bounds the
    geometric sum 32/(1 - 2^{-1/2}) of the sqrt terms).
    """
    if measure not in ("strong", "weak"):
        raise ValueError("measure must be 'strong' or 'weak'")
    z_factor = (lambda c: d * c) if measure == "strong" else (lambda c: np.sqrt(d) * c)

    def c1(delta: float, T: int) -> float:
        width = np.log(n_actions * T / delta)
        L = np.ceil(d * width)
        return float(2.0 * L / np.sqrt(T) + 110.0 * np.sqrt(d * width))

    def c2(delta: float, T: int) -> float:
        width = np.log(n_actions * T / delta)
        L = max(np.ceil(d * width), 1.0)
        epochs = np.log2(max(T / L, 2.0)) + 2.0
        scale = d if measure == "strong" else np.sqrt(d)
        return float(8.0 * scale * epochs)

    def run(env, c_bound: float, delta: float, horizon: int | None = None) -> RunRecord:
        return stoch_elim_run(env, Z=float(z_factor(c_bound)), delta=delta, horizon=horizon)

    return CorruptionOracle(run=run, c1=c1, c2=c2, name=f"stoch_elim[{measure}]")
