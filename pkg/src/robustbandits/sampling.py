"""Samplers for log-linear densities over the convex hull of an action set.

Density: p(x) proportional to exp(eta * <x, S>) on conv(A).  The sampler
reduces to the affine span of A first, so degenerate hulls (a point, a
segment, a flat polytope in a bigger ambient space) all work:

  rank 0   the single point
  rank 1   closed-form inverse CDF on the segment
  rank 2   rejection from the bounding box of the polygon
  rank >=3 hit-and-run, vectorized over chains, with exact one-dimensional
           conditional draws (truncated exponentials along each chord)

All draws are a deterministic function of the supplied Generator.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

HULL_TOL = 1e-9
REJECT_CAP = 4_000_000


def _trunc_exp(lo, hi, c, u):
    """Inverse-CDF draws from density exp(c x) restricted to [lo, hi].

    Vectorized over numpy arrays; written against overflow for large |c|
    (the mass is anchored at the favored endpoint).
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), lo.shape)
    u = np.asarray(u, dtype=np.float64)
    width = hi - lo
    z = c * width
    out = np.empty_like(lo)
    flat = np.abs(z) < 1e-12
    out[flat] = lo[flat] + u[flat] * width[flat]
    pos = (~flat) & (c > 0)
    # x = hi + log(u + (1-u) exp(-z)) / c, stable for large positive z
    out[pos] = hi[pos] + np.log(u[pos] + (1.0 - u[pos]) * np.exp(-z[pos])) / c[pos]
    neg = (~flat) & (c < 0)
    out[neg] = lo[neg] + np.log(1.0 - u[neg] + u[neg] * np.exp(z[neg])) / c[neg]
    return np.clip(out, lo, hi)


class PolytopeSampler:
    """Log-linear sampler over conv(A) for a fixed action matrix A."""

    def __init__(self, actions):
        A = np.asarray(actions, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] == 0:
            raise ValueError("need a non-empty (n, d) action matrix")
        self.A = A
        self.origin = A[0].copy()
        diffs = A - self.origin
        _, s, Vt = np.linalg.svd(diffs, full_matrices=False)
        if s.size and s[0] > 0:
            self.rank = int(np.sum(s > 1e-10 * s[0]))
        else:
            self.rank = 0
        self.basis = Vt[: self.rank].T  # (d, rank) orthonormal
        self.Z = diffs @ self.basis      # vertex coordinates in the span
        if self.rank >= 2:
            hull = ConvexHull(self.Z)
            eq = hull.equations
            self.halfspace_A = eq[:, :-1]
            self.halfspace_b = -eq[:, -1]
            self.lo = self.Z.min(axis=0)
            self.hi = self.Z.max(axis=0)
        self._centroid = self.Z.mean(axis=0)

    def _to_ambient(self, Zpts):
        return self.origin + Zpts @ self.basis.T

    def _inside(self, Zpts):
        return np.all(Zpts @ self.halfspace_A.T <= self.halfspace_b + HULL_TOL, axis=1)

    def sample(self, S, eta: float, m: int, rng: np.random.Generator, steps_per_draw: int | None = None):
        """Draw m points (ambient coordinates) from p ∝ exp(eta < x, S >)."""
        S = np.asarray(S, dtype=np.float64).reshape(-1)
        s = eta * (self.basis.T @ S) if self.rank else np.zeros(0)
        if self.rank == 0:
            return np.tile(self.origin, (m, 1))
        if self.rank == 1:
            lo = float(self.Z.min())
            hi = float(self.Z.max())
            u = rng.uniform(size=m)
            z = _trunc_exp(np.full(m, lo), np.full(m, hi), float(s[0]), u)
            return self._to_ambient(z[:, None])
        if self.rank == 2:
            return self._to_ambient(self._sample_rejection(s, m, rng))
        return self._to_ambient(self._sample_hit_and_run(s, m, rng, steps_per_draw))

    def _sample_rejection(self, s, m, rng):
        # bound the tilt by its max over vertices; log-accept test below it
        log_max = float(np.max(self.Z @ s))
        out = np.empty((m, 2))
        got = 0
        total = 0
        batch = max(4 * m, 256)
        while got < m:
            if total > REJECT_CAP:
                raise RuntimeError(f"rejection sampler stalled: {got} of {m} accepted after {total} proposals")
            cand = rng.uniform(self.lo, self.hi, size=(batch, 2))
            logu = np.log(rng.uniform(size=batch))
            ok = self._inside(cand) & (logu <= cand @ s - log_max)
            take = min(int(ok.sum()), m - got)
            out[got : got + take] = cand[ok][:take]
            got += take
            total += batch
        return out

    def _sample_hit_and_run(self, s, m, rng, steps_per_draw):
        r = self.rank
        steps = steps_per_draw if steps_per_draw is not None else 100 * self.A.shape[1]
        X = np.tile(self._centroid, (m, 1))  # m parallel chains
        Ah = self.halfspace_A
        bh = self.halfspace_b
        for _ in range(steps):
            U = rng.normal(size=(m, r))
            U /= np.linalg.norm(U, axis=1, keepdims=True)
            # chord of each chain: max/min step t with A(x + t u) <= b
            num = bh[None, :] - X @ Ah.T
            den = U @ Ah.T
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = num / den
            t_hi = np.where(den > HULL_TOL, ratios, np.inf).min(axis=1)
            t_lo = np.where(den < -HULL_TOL, ratios, -np.inf).max(axis=1)
            t_hi = np.maximum(t_hi, 0.0)
            t_lo = np.minimum(t_lo, 0.0)
            c = U @ s
            u = rng.uniform(size=m)
            t = _trunc_exp(t_lo, t_hi, c, u)
            X = X + t[:, None] * U
        return X
