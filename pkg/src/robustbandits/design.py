"""Near-optimal experimental design for exploration rounds.

Maximizes log det of the design covariance with Frank-Wolfe (the D- and
G-optimal problems share their optimum, so the max-leverage target doubles as
the stopping certificate).  Rank-deficient action sets are handled by working
in an orthonormal basis of their span; all leverages are reported against the
span pseudo-inverse.

The relaxed target max_a ||a||^2_{G(pi)^+} <= 2 d' (d' = span rank) keeps the
iteration count and the support size small: support is pruned greedily down to
at most 4 d' loglog d' + 16 points (loglog floored at 1 below d' = 16).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from robustbandits.linalg import psd_pinv, span_basis, sym
from robustbandits.model import ActionSet

SPAN_TOL = 1e-8
LEVERAGE_SLACK = 1e-6


class SpanError(ValueError):
    """Query point lies outside the span of the design's support."""


def support_cap(rank: int) -> int:
    """Largest support size we allow for a rank-`rank` design."""
    if rank <= 0:
        return 1
    ll = np.log(np.log(rank)) if rank >= 2 else 0.0
    return int(np.floor(4.0 * rank * max(1.0, ll) + 16.0))


@dataclass(frozen=True)
class Design:
    """Sparse design over an action set.

    indices / weights: the support (weights sum to 1).
    cov: ambient-coordinate covariance sum_a w(a) a a^T.
    basis: orthonormal columns spanning the action set.
    max_leverage: g(pi) = max over the whole action set of the leverage.
    """

    indices: np.ndarray
    weights: np.ndarray
    cov: np.ndarray
    cov_pinv: np.ndarray
    basis: np.ndarray
    max_leverage: float

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def support_size(self) -> int:
        return int(self.indices.shape[0])


def _actions_array(actions):
    if isinstance(actions, ActionSet):
        return actions.actions
    A = np.asarray(actions, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] == 0:
        raise ValueError("g_optimal requires a non-empty 2-d action array")
    return A


def _leverages(X, w):
    """Leverage of every row of X under the design w (span coordinates)."""
    G = sym(X.T @ (X * w[:, None]))
    try:
        c, low = scipy.linalg.cho_factor(G)
        Y = scipy.linalg.cho_solve((c, low), X.T)
        return np.einsum("ij,ji->i", X, Y), True
    except scipy.linalg.LinAlgError:
        return None, False


def _frank_wolfe(X, w, target, max_iter):
    r = X.shape[1]
    for _ in range(max_iter):
        h, ok = _leverages(X, w)
        if not ok:
            raise RuntimeError("design covariance lost rank during iteration")
        j = int(np.argmax(h))
        g = float(h[j])
        if g <= target:
            return w, g
        lam = (g / r - 1.0) / (g - 1.0)
        w = w * (1.0 - lam)
        w[j] += lam
    h, ok = _leverages(X, w)
    g = float(np.max(h)) if ok else np.inf
    raise RuntimeError(f"design solver did not reach max leverage {target:.6g}; achieved {g:.6g}")


def _prune(X, w, target):
    """Drop support points, smallest weight first, while the target holds.

    Repeats full passes until no removal survives; removals that would drop
    the span rank fail the Cholesky and are skipped.
    """
    changed = True
    while changed:
        changed = False
        support = np.flatnonzero(w > 0.0)
        if support.size <= 1:
            break
        order = support[np.lexsort((support, w[support]))]
        for idx in order:
            if np.count_nonzero(w) <= 1:
                break
            trial = w.copy()
            trial[idx] = 0.0
            s = trial.sum()
            if s <= 0.0:
                continue
            trial /= s
            h, ok = _leverages(X, trial)
            if ok and float(np.max(h)) <= target:
                w = trial
                changed = True
    return w


def g_optimal(actions, tol: float = 1e-3, max_iter: int = 20000) -> Design:
    """Compute a design with max leverage at most 2 * rank over `actions`.

    Parameters
    ----------
    actions : ActionSet or (n, d) array
    tol : float
        the solver stops at max leverage <= 2 * rank * (1 - tol)
    max_iter : int

    Deterministic: fixed iteration order, lowest index wins leverage ties.
    """
    A = _actions_array(actions)
    n, d = A.shape
    Q = span_basis(A)
    r = Q.shape[1]
    if r == 0:
        # all-zero actions; any weights work and every leverage is 0
        return Design(
            indices=np.array([0]),
            weights=np.array([1.0]),
            cov=np.zeros((d, d)),
            cov_pinv=np.zeros((d, d)),
            basis=Q,
            max_leverage=0.0,
        )
    X = A @ Q
    target = 2.0 * r * (1.0 - tol)
    w = np.full(n, 1.0 / n)
    w, _ = _frank_wolfe(X, w, target, max_iter)
    w = _prune(X, w, target)

    if np.count_nonzero(w) > support_cap(r):
        # restart from a deterministic spanning subset; support then grows by
        # at most one point per iteration before pruning
        _, _, piv = scipy.linalg.qr(X.T, pivoting=True)
        w = np.zeros(n)
        w[np.sort(piv[:r])] = 1.0 / r
        w, _ = _frank_wolfe(X, w, target, max_iter)
        w = _prune(X, w, target)
        if np.count_nonzero(w) > support_cap(r):
            raise RuntimeError(f"design support {np.count_nonzero(w)} exceeds cap {support_cap(r)}")

    support = np.flatnonzero(w > 0.0)
    weights = w[support] / w[support].sum()
    cov = sym((A[support] * weights[:, None]).T @ A[support])
    cov_pinv = psd_pinv(cov)
    lev = np.einsum("ij,jk,ik->i", A, cov_pinv, A)
    return Design(
        indices=support,
        weights=weights,
        cov=cov,
        cov_pinv=cov_pinv,
        basis=Q,
        max_leverage=float(np.max(lev)),
    )


def leverage(design: Design, a) -> float:
    """Leverage ||a||^2_{G^+} of a point, which must lie in the design span.

    Raises SpanError when the residual of `a` off the span exceeds 1e-8
    (relative to ||a||).
    """
    v = np.asarray(a, dtype=np.float64).reshape(-1)
    proj = design.basis @ (design.basis.T @ v)
    resid = np.linalg.norm(v - proj)
    if resid > SPAN_TOL * max(1.0, np.linalg.norm(v)):
        raise SpanError(f"point leaves the design span (residual {resid:.3g})")
    return float(v @ design.cov_pinv @ v)
