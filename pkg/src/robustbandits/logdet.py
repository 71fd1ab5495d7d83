"""Follow-the-regularized-leader over lifted covariances with a log det barrier.

The decision variable is a distribution p over actions, represented through
the lifted second moment H(p) = E_p [ (a,1)(a,1)^T ].  Each round maximizes

    eta * <H, Theta> + log det H      over p in the gamma-mixed simplex,

where Theta accumulates the reward estimates (off-diagonal block) and the
bonus matrix scaled by alpha (top-left block).  The bonus operator keeps a
matrix B that dominates every inverse covariance seen so far while its log det
telescopes, which is what bounds the total bonus paid.

The inner problem is solved by Frank-Wolfe with away steps; line searches are
exact (generalized eigenvalues reduce the step to a scalar concave equation).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from robustbandits.design import g_optimal
from robustbandits.linalg import dominates, min_eig, psd_inv_sqrt, psd_sqrt, sym
from robustbandits.model import RunRecord

DOMINANCE_TOL = 1e-10
SPD_FLOOR = 1e-12


class ConditioningError(np.linalg.LinAlgError):
    """A matrix that must be invertible here is numerically singular."""


class OptimizationError(RuntimeError):
    """Inner solver ran out of iterations; carries the achieved duality gap."""

    def __init__(self, msg: str, gap: float):
        super().__init__(msg)
        self.gap = gap


def bonus(B, Sigma):
    """Smallest-in-logdet update of B that also dominates Sigma^{-1}.

    Returns Sigma^{-1} itself when it already dominates B (B = 0 included).
    Otherwise eigendecomposes B^{-1/2} Sigma^{-1} B^{-1/2} and lifts every
    eigenvalue below 1 up to 1, so the result dominates both arguments.

    Raises ConditioningError when Sigma is singular, or when B is singular
    without being dominated (the lift is undefined off B's range).
    """
    Sigma = sym(np.asarray(Sigma, dtype=np.float64))
    B = sym(np.asarray(B, dtype=np.float64))
    lam = min_eig(Sigma)
    if lam < SPD_FLOOR:
        raise ConditioningError(f"Sigma has min eigenvalue {lam:.3g}")
    Sinv = sym(np.linalg.inv(Sigma))
    if dominates(Sinv, B, tol=DOMINANCE_TOL):
        return Sinv
    wB = np.linalg.eigvalsh(B)
    if wB[0] < SPD_FLOOR * max(wB[-1], 1.0):
        raise ConditioningError("B is singular but not dominated by Sigma^{-1}")
    Bh = psd_sqrt(B)
    Bih = psd_inv_sqrt(B)
    w, V = np.linalg.eigh(sym(Bih @ Sinv @ Bih))
    lifted = (V * np.maximum(w, 1.0)) @ V.T
    return sym(Bh @ lifted @ Bh)


def estimate_theta(Sigma, a, r: float):
    """One-sample least squares estimate Sigma^{-1} a r.

    Raises ConditioningError when Sigma is singular.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    try:
        c, low = scipy.linalg.cho_factor(sym(np.asarray(Sigma, dtype=np.float64)))
    except scipy.linalg.LinAlgError as e:
        raise ConditioningError(f"covariance not positive definite: {e}") from e
    return scipy.linalg.cho_solve((c, low), a) * float(r)


@dataclass(frozen=True)
class FtrlParams:
    """Round-independent parameters of the log det FTRL loop.

    alpha_scale multiplies the bonus weight alpha (the theory fixes alpha only
    up to a constant); solver_tol is the Frank-Wolfe duality gap certificate.
    """

    alpha: float
    eta: float
    gamma: float
    solver_tol: float = 1e-6
    max_iter: int = 10_000

    @classmethod
    def default(cls, d: int, T: int, c_inf: float, alpha_scale: float = 1.0, **kw) -> "FtrlParams":
        if T < 1:
            raise ValueError("T must be at least 1")
        if c_inf < 0:
            raise ValueError("corruption bound must be nonnegative")
        logT = np.log(T)
        if logT == 0.0:
            # T = 1: eta = 0 makes the objective pure log det; alpha is inert
            alpha = alpha_scale * np.sqrt(T)
            eta = 0.0
        else:
            alpha = alpha_scale * max(c_inf / np.sqrt(d * logT), np.sqrt(T))
            if c_inf > 0:
                eta = min(np.sqrt(logT) / (16.0 * c_inf), np.sqrt(logT / T))
            else:
                eta = np.sqrt(logT / T)
        gamma = min(d / np.sqrt(T), 0.5)
        return cls(alpha=float(alpha), eta=float(eta), gamma=float(gamma), **kw)


@dataclass
class FtrlStepResult:
    p: np.ndarray          # full gamma-mixed distribution over actions
    p_prime: np.ndarray    # learner part before mixing
    H: np.ndarray          # lifted second moment of p
    Sigma: np.ndarray      # its top-left d x d block
    gap: float             # Frank-Wolfe duality gap at return
    iters: int


def _line_search(H0, D, Theta, eta, hi):
    """Maximize eta <H0 + s D, Theta> + log det(H0 + s D) over s in [0, hi].

    Uses generalized eigenvalues mu of (D, H0): the derivative is
    eta <D, Theta> + sum_i mu_i / (1 + s mu_i), decreasing in s, so bisection
    finds the root; poles from negative mu cap the feasible range.
    """
    mu = scipy.linalg.eigh(D, H0, eigvals_only=True)
    c = eta * float(np.sum(D * Theta))
    neg = mu[mu < 0]
    if neg.size:
        hi = min(hi, float((1.0 - 1e-12) / -neg.min()))
    if hi <= 0.0:
        return 0.0

    def deriv(s):
        return c + float(np.sum(mu / (1.0 + s * mu)))

    if deriv(0.0) <= 0.0:
        return 0.0
    if deriv(hi) >= 0.0:
        return hi
    lo_s, hi_s = 0.0, hi
    for _ in range(200):
        mid = 0.5 * (lo_s + hi_s)
        if deriv(mid) > 0.0:
            lo_s = mid
        else:
            hi_s = mid
        if hi_s - lo_s <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo_s + hi_s)


def ftrl_step(lifted, Theta, params: FtrlParams, rho: np.ndarray, p_init=None) -> FtrlStepResult:
    """Solve one round's regularized leader problem.

    Parameters
    ----------
    lifted : (n, d+1, d+1) array
        stacked lifted outer products (a,1)(a,1)^T, one per action
    Theta : (d+1, d+1) symmetric array
        accumulated payoff matrix
    params : FtrlParams
    rho : (n,) array
        exploration distribution mixed in with weight gamma
    p_init : (n,) array, optional
        warm start for the learner part (defaults to uniform)

    Returns the mixed distribution with a duality-gap certificate; raises
    OptimizationError (carrying the achieved gap) after max_iter iterations.
    """
    n = lifted.shape[0]
    gamma = params.gamma
    eta = params.eta
    Theta = sym(np.asarray(Theta, dtype=np.float64))
    base = gamma * np.einsum("a,aij->ij", rho, lifted)
    p = np.full(n, 1.0 / n) if p_init is None else np.asarray(p_init, dtype=np.float64).copy()
    Cp = np.einsum("a,aij->ij", p, lifted)
    # linear payoff per action, constant across iterations
    q = eta * np.einsum("aij,ij->a", lifted, Theta)
    gap = np.inf

    for it in range(params.max_iter):
        H = sym(base + (1.0 - gamma) * Cp)
        try:
            c, low = scipy.linalg.cho_factor(H)
            Hinv = scipy.linalg.cho_solve((c, low), np.eye(H.shape[0]))
        except scipy.linalg.LinAlgError as e:
            raise ConditioningError(f"lifted covariance lost rank: {e}") from e
        grad = (1.0 - gamma) * (q + np.einsum("aij,ij->a", lifted, Hinv))
        j = int(np.argmax(grad))
        gap = float(grad[j] - grad @ p)
        if gap <= params.solver_tol:
            return FtrlStepResult(
                p=(1.0 - gamma) * p + gamma * rho,
                p_prime=p,
                H=H,
                Sigma=H[:-1, :-1].copy(),
                gap=gap,
                iters=it,
            )
        support = np.flatnonzero(p > 0.0)
        v = support[int(np.argmin(grad[support]))]
        away_gap = float(grad @ p - grad[v])
        if gap >= away_gap or p[v] >= 1.0 - 1e-15:
            D = (1.0 - gamma) * (lifted[j] - Cp)
            s = _line_search(H, sym(D), Theta, eta, 1.0)
            if s > 0.0:
                p *= 1.0 - s
                p[j] += s
                Cp = Cp * (1.0 - s) + s * lifted[j]
        else:
            D = (1.0 - gamma) * (Cp - lifted[v])
            hi = p[v] / (1.0 - p[v])
            s = _line_search(H, sym(D), Theta, eta, hi)
            if s > 0.0:
                p *= 1.0 + s
                p[v] -= s
                np.clip(p, 0.0, None, out=p)
                p /= p.sum()
                Cp = np.einsum("a,aij->ij", p, lifted)
    raise OptimizationError(f"no duality gap <= {params.solver_tol:.3g} after {params.max_iter} iterations (achieved {gap:.3g})", gap)


def lift(actions) -> np.ndarray:
    """Stacked (a,1)(a,1)^T outer products for an action matrix."""
    A = np.asarray(actions, dtype=np.float64)
    tilde = np.hstack([A, np.ones((A.shape[0], 1))])
    return np.einsum("ai,aj->aij", tilde, tilde)


def logdet_run(
    env,
    c_inf: float,
    alpha_scale: float = 1.0,
    solver_tol: float = 1e-6,
    trace: list | None = None,
) -> RunRecord:
    """Run the log det FTRL learner against an environment.

    c_inf is the assumed weak corruption bound (0 for clean runs).  The action
    set must contain d+1 lifted-independent actions, otherwise the barrier is
    degenerate and a ValueError is raised.

    trace, when given, receives one dict per round with the distribution, the
    bonus margin min_eig(B_t - Sigma_t^{-1}), and solver iteration counts.
    """
    A = env.actions.actions
    n, d = A.shape
    T = env.horizon
    lifted = lift(A)
    tilde = np.hstack([A, np.ones((n, 1))])
    if np.linalg.matrix_rank(tilde) < d + 1:
        raise ValueError("action set is lifted-degenerate: need d+1 affinely independent actions")
    params = FtrlParams.default(d, T, c_inf, alpha_scale=alpha_scale, solver_tol=solver_tol)
    explore = g_optimal(env.actions)
    rho = np.zeros(n)
    rho[explore.indices] = explore.weights

    B = np.zeros((d, d))
    M = np.zeros(d)
    Theta = np.zeros((d + 1, d + 1))
    p_warm = None
    for t in range(1, T + 1):
        Theta[:d, :d] = params.alpha * B
        Theta[:d, d] = 0.5 * M
        Theta[d, :d] = 0.5 * M
        res = ftrl_step(lifted, Theta, params, rho, p_init=p_warm)
        p_warm = res.p_prime
        idx = int(env.rng.choice(n, p=res.p))
        r = env.step(idx)
        theta_hat = estimate_theta(res.Sigma, A[idx], r)
        B_next = bonus(B, res.Sigma)
        if trace is not None:
            Sinv = np.linalg.inv(sym(res.Sigma))
            trace.append(
                {
                    "t": t,
                    "p": res.p.copy(),
                    "iters": res.iters,
                    "gap": res.gap,
                    "bonus_margin": min_eig(B_next - Sinv),
                    "telescope_lhs": float(np.sum(res.Sigma * (B_next - B))),
                    "telescope_rhs": _logdet_diff(B_next, B),
                }
            )
        B = B_next
        M = M + theta_hat
    return env.finalize()


def _logdet_diff(B_new, B_old) -> float:
    """log det B_new - log det B_old, inf-safe for B_old = 0."""
    s_new, ld_new = np.linalg.slogdet(B_new)
    if not np.any(B_old):
        return np.inf
    s_old, ld_old = np.linalg.slogdet(B_old)
    if s_new <= 0 or s_old <= 0:
        return np.inf
    return float(ld_new - ld_old)
