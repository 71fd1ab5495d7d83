"""Exponential weights over the convex hull of the actions, with clipping and
a lazily-triggered bonus.

Per round: sample the log-linear density exp(eta <a, S_t>) over conv(A) by
Monte Carlo, clip the tail where the inverse-covariance norm is large, play a
clipped draw, build the one-sample estimate through the regularized second
moment, and subtract an exploration bonus from the weight vector only on
rounds where a covariance-novelty test fires.  The trigger comparison keeps
the number of bonus rounds logarithmic, which is what the trigger-set bound
in the tests pins down.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from robustbandits.linalg import max_eig, min_eig, psd_pinv, sym
from robustbandits.model import RunRecord
from robustbandits.sampling import PolytopeSampler

DIAG_HEADER = ["t", "triggered", "accept_rate", "lambda_min_B"]


class ClippingAnomalyError(RuntimeError):
    """More than half of one round's Monte Carlo draws failed the clip test."""


@dataclass(frozen=True)
class CewParams:
    """Round-independent parameters.

    eta_scale and alpha_scale multiply the defaults (the theory constants are
    asymptotic; scaled runs are used by the simulation checks and say so).
    Invariants at scale 1: eta <= 1/(160 sqrt(d^3 T)) and beta = 4 log(10 d T).
    """

    gamma: float
    alpha: float
    eta: float
    beta: float
    mc_budget: int


def cew_params(
    d: int,
    T: int,
    delta: float,
    C: float = 0.0,
    mc_budget: int = 4000,
    alpha_scale: float = 1.0,
    eta_scale: float = 1.0,
) -> CewParams:
    """Parameter schedule given dimension, horizon, confidence, corruption."""
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must be in (0, 1)")
    if T < 2 or d < 1:
        raise ValueError("need T >= 2 and d >= 1")
    if C < 0:
        raise ValueError("corruption bound must be nonnegative")
    if mc_budget < 2:
        raise ValueError("mc_budget too small")
    logTd = np.log(T / delta)
    gamma = logTd / T
    alpha = alpha_scale * 8.0 * (d * np.sqrt(T) + np.sqrt(d) * C) * logTd
    eta = eta_scale * min(1.0 / (160.0 * np.sqrt(d**3 * T)), 1.0 / (32.0 * np.sqrt(d) * alpha))
    beta = 4.0 * np.log(10.0 * d * T)
    return CewParams(gamma=float(gamma), alpha=float(alpha), eta=float(eta), beta=float(beta), mc_budget=int(mc_budget))


@dataclass
class CewState:
    """Mutable loop state; S is the accumulated estimate-minus-bonus vector."""

    S: np.ndarray
    B_sum: np.ndarray
    triggers: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def fresh(cls, d: int) -> "CewState":
        return cls(S=np.zeros(d), B_sum=np.zeros((d + 1, d + 1)))


def trigger_matrix(Sigma_tilde_inv, x) -> np.ndarray:
    """I + [[Si, -Si x], [-x^T Si, x^T Si x]]; always dominates the identity."""
    d = x.shape[0]
    B = np.eye(d + 1)
    Six = Sigma_tilde_inv @ x
    B[:d, :d] += Sigma_tilde_inv
    B[:d, d] -= Six
    B[d, :d] -= Six
    B[d, d] += float(x @ Six)
    return sym(B)


def cew_round(state: CewState, params: CewParams, sampler: PolytopeSampler, rng, play):
    """Advance one round.

    play(x) -> observed reward for the continuous point x.  Returns
    (new_state, diagnostics dict).  Raises ClippingAnomalyError when the clip
    rejects more than half of the Monte Carlo draws.
    """
    t = state.t + 1
    d = state.S.shape[0]
    draws = sampler.sample(state.S, params.eta, params.mc_budget, rng)
    Sigma = sym(draws.T @ draws / draws.shape[0])
    lev = np.einsum("mi,ij,mj->m", draws, psd_pinv(Sigma), draws)
    mask = lev <= d * params.beta**2
    accept_rate = float(mask.mean())
    if 1.0 - accept_rate > 0.5:
        raise ClippingAnomalyError(f"round {t}: clip rejected {1.0 - accept_rate:.1%} of draws")
    kept = draws[mask]
    Sigma_tilde = sym(params.gamma * np.eye(d) + kept.T @ kept / kept.shape[0])
    x = draws.mean(axis=0)
    a_t = kept[int(rng.integers(kept.shape[0]))]
    r = float(play(a_t))
    c, low = scipy.linalg.cho_factor(Sigma_tilde)
    theta_hat = scipy.linalg.cho_solve((c, low), a_t) * r
    Sti = scipy.linalg.cho_solve((c, low), np.eye(d))
    Bmat = trigger_matrix(Sti, x)
    triggered = max_eig(Bmat - state.B_sum) > 0.0
    if triggered:
        b = -params.alpha * params.eta * state.S
        new_B = state.B_sum + Bmat
        state.triggers.append(t)
    else:
        b = np.zeros(d)
        new_B = state.B_sum
    new_state = CewState(S=state.S + theta_hat - b, B_sum=new_B, triggers=state.triggers, t=t)
    diag = {
        "t": t,
        "triggered": int(triggered),
        "accept_rate": accept_rate,
        "lambda_min_B": min_eig(Bmat),
        "theta_hat": theta_hat,
        "bonus": b,
        "a": a_t,
        "reward": r,
    }
    return new_state, diag


def trigger_budget(d: int, T: int, gamma: float) -> float:
    """Cap on the number of trigger rounds: d log2(4 T / gamma)."""
    return d * np.log2(4.0 * T / gamma)


def cew_run(
    env,
    C: float,
    delta: float,
    mc_budget: int = 4000,
    alpha_scale: float = 1.0,
    eta_scale: float = 1.0,
    diagnostics: list | None = None,
) -> RunRecord:
    """Full run against an environment supporting continuous play.

    diagnostics, when given, collects the per-round dicts from cew_round
    (write_diagnostics turns them into the CSV schema t,triggered,
    accept_rate,lambda_min_B).
    """
    A = env.actions.actions
    d = A.shape[1]
    T = env.horizon
    params = cew_params(d, T, delta, C, mc_budget, alpha_scale, eta_scale)
    sampler = PolytopeSampler(A)
    state = CewState.fresh(d)
    for _ in range(T):
        state, row = cew_round(state, params, sampler, env.rng, env.step_point)
        if diagnostics is not None:
            diagnostics.append(row)
    return env.finalize()


def write_diagnostics(rows, path):
    """Persist per-round diagnostics as CSV (schema in DIAG_HEADER)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIAG_HEADER)
        for row in rows:
            w.writerow([row["t"], row["triggered"], repr(row["accept_rate"]), repr(row["lambda_min_B"])])
