"""Phased elimination algorithms with corruption- and misspecification-robust thresholds.

Two variants share the structure (explore with a near-optimal design, estimate,
drop provably-bad actions, double the budget):

* stoch_elim_run   randomized per-round sampling from the design, elimination
  threshold widened by 2 Z / m_k where Z upper-bounds the corruption seen by
  the estimator (sqrt(d) * weak measure or d * strong measure);
* misspec_elim_run deterministic pull counts ceil(m * w(a)), threshold widened
  by the phase precision 2^-l, budget quadrupling.

Both keep the empirical argmax if a numerical tie ever empties the active set,
and both stop eliminating when the horizon truncates a phase.
"""

from __future__ import annotations

import numpy as np

from robustbandits.design import g_optimal
from robustbandits.linalg import psd_pinv
from robustbandits.model import ActionSet, RunRecord


def loglog_floor(d: int) -> float:
    """max(1, log log d); the floor binds for d <= 15."""
    if d < 2:
        return 1.0
    return float(max(1.0, np.log(np.log(d))))


def covering_net(actions: ActionSet, T: int):
    """Thin large action sets down to a cover before elimination starts.

    Returns (net_action_set, indices into the original set).  A passthrough
    when n <= T^d; otherwise a greedy farthest-point cover at radius 6 d / T,
    which also collapses duplicate actions onto one representative.
    """
    A = actions.actions
    n, d = A.shape
    if T < 1:
        raise ValueError("T must be positive")
    if np.log(n) <= d * np.log(T):
        return actions, np.arange(n)
    radius = 6.0 * d / T
    chosen = [0]
    dist = np.linalg.norm(A - A[0], axis=1)
    while True:
        j = int(np.argmax(dist))
        if dist[j] <= radius:
            break
        chosen.append(j)
        dist = np.minimum(dist, np.linalg.norm(A - A[j], axis=1))
    idx = np.sort(np.asarray(chosen))
    return ActionSet(A[idx]), idx


def _design_sampler(A_used, active, tol):
    """Design over the active subset; returns (original-index support, probs, cov)."""
    sub = A_used[active]
    des = g_optimal(sub, tol=tol)
    support = active[des.indices]
    return support, des.weights, des.cov


def stoch_elim_run(
    env,
    Z: float,
    delta: float,
    tol: float = 1e-3,
    use_net: bool = True,
    trace: list | None = None,
    horizon: int | None = None,
) -> RunRecord:
    """Randomized phased elimination robust to a corruption bound Z.

    Parameters
    ----------
    env : Environment
        supplies actions, horizon, rewards, and the rng
    Z : float
        any upper bound on the corruption affecting the estimator; the
        elimination threshold is 8 sqrt(d W / m_k) + 2 Z / m_k with
        W = log(n T / delta)
    delta : float
        confidence level in (0, 1)
    use_net : bool
        thin the action set through covering_net first (only fires when
        n > T^d)
    trace : list, optional
        appends one dict per completed epoch: active set (original indices),
        estimate, threshold, epoch sizes
    horizon : int, optional
        believed horizon; play at most this many rounds from here instead of
        the full env.horizon (restart shells run windowed phases this way)

    Returns the finalized RunRecord.
    """
    if Z < 0:
        raise ValueError("Z must be nonnegative")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must be in (0, 1)")
    T = env.horizon if horizon is None else int(min(horizon, env.horizon - env.t))
    if use_net:
        used_set, used_idx = covering_net(env.actions, T)
    else:
        used_set, used_idx = env.actions, np.arange(env.actions.n)
    A = used_set.actions
    n, d = A.shape
    W = float(np.log(n * T / delta))
    L = int(np.ceil(d * W))
    active = np.arange(n)
    k = 1
    t = 0
    while t < T:
        m_k = (2 ** (k - 1)) * L
        take = min(m_k, T - t)
        support, probs, cov = _design_sampler(A, active, tol)
        draws = env.rng.choice(support.shape[0], size=take, p=probs)
        S = np.zeros(d)
        for j in draws:
            local = support[j]
            r = env.step(int(used_idx[local]))
            S += A[local] * r
        t += take
        if take < m_k:
            break  # truncated epoch: no elimination
        theta_hat = psd_pinv(m_k * cov) @ S
        est = A[active] @ theta_hat
        thr = 8.0 * np.sqrt(d * W / m_k) + 2.0 * Z / m_k
        keep = est >= np.max(est) - thr
        new_active = active[keep]
        if new_active.size == 0:
            new_active = active[[int(np.argmax(est))]]
        if trace is not None:
            trace.append(
                {
                    "epoch": k,
                    "m": m_k,
                    "threshold": thr,
                    "theta_hat": theta_hat,
                    "active": used_idx[new_active].copy(),
                }
            )
        active = new_active
        k += 1
    return env.finalize()


def misspec_elim_run(
    env,
    delta: float,
    m1_multiplier: float = 64.0,
    tol: float = 1e-3,
    trace: list | None = None,
) -> RunRecord:
    """Phased elimination for gap-relative misspecification.

    Pull counts are deterministic: each support action of the phase design is
    played ceil(m_l w(a)) times (ascending action index), the estimator is the
    per-action sample mean pushed through the exact phase Gram, and the
    elimination threshold is sqrt(4 d log(n/delta) / m_l) + 2^-l.  Budgets
    quadruple between phases, starting at
    m_1 = ceil(multiplier * d * max(1, loglog d) * log(n/delta)) + 16.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must be in (0, 1)")
    if m1_multiplier <= 0:
        raise ValueError("m1_multiplier must be positive")
    A = env.actions.actions
    n, d = A.shape
    T = env.horizon
    width = float(np.log(n / delta))
    m = int(np.ceil(m1_multiplier * d * loglog_floor(d) * width)) + 16
    active = np.arange(n)
    ell = 1
    t = 0
    while t < T:
        support, probs, _ = _design_sampler(A, active, tol)
        counts = np.ceil(m * probs).astype(int)
        order = np.argsort(support, kind="stable")
        plan = []
        for j in order:
            plan.extend([j] * counts[j])
        truncated = t + len(plan) > T
        if truncated:
            plan = plan[: T - t]
        sums = np.zeros(support.shape[0])
        pulls = np.zeros(support.shape[0], dtype=int)
        for j in plan:
            r = env.step(int(support[j]))
            sums[j] += r
            pulls[j] += 1
        t += len(plan)
        if truncated:
            break
        G = (A[support] * counts[:, None]).T @ A[support]
        theta_hat = psd_pinv(G) @ (A[support].T @ sums)
        est = A[active] @ theta_hat
        thr = float(np.sqrt(4.0 * d * width / m) + 2.0 ** (-ell))
        keep = est >= np.max(est) - thr
        new_active = active[keep]
        if new_active.size == 0:
            new_active = active[[int(np.argmax(est))]]
        if trace is not None:
            trace.append(
                {
                    "phase": ell,
                    "m": m,
                    "threshold": thr,
                    "theta_hat": theta_hat,
                    "active": new_active.copy(),
                    "pulls": int(pulls.sum()),
                }
            )
        active = new_active
        m *= 4
        ell += 1
    return env.finalize()
