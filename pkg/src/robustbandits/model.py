"""Core data model: action sets, corruption plans and measures, run records.

Conventions used throughout the package:

* actions live in the euclidean ball (||a||_2 <= 1), rewards means in [-1, 1],
  per-round corruption values in [-1, 1];
* all five corruption measures are tracked simultaneously in a ledger that is
  updated by pure functions (no in-place mutation);
* a run record stores one row per round plus the final ledger and the seed
  that produced the trajectory, and round-trips through CSV exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

NORM_TOL = 1e-9
CHAIN_TOL = 1e-9


def _as_matrix(x):
    A = np.asarray(x, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-d array of actions, got shape {A.shape}")
    return A


@dataclass(frozen=True)
class ActionSet:
    """Finite action set, one unit-ball vector per row."""

    actions: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.actions)
        if A.shape[0] == 0:
            raise ValueError("action set is empty")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms > 1.0 + NORM_TOL):
            bad = int(np.argmax(norms))
            raise ValueError(f"action {bad} has norm {norms[bad]:.12g} > 1")
        object.__setattr__(self, "actions", A)

    @property
    def n(self) -> int:
        return self.actions.shape[0]

    @property
    def dim(self) -> int:
        return self.actions.shape[1]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class RewardVector:
    """Linear reward parameter theta, validated against a companion action set.

    Requires ||theta||_2 <= sqrt(d) and a^T theta in [-1, 1] for every action.
    """

    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "theta", th)

    @classmethod
    def checked(cls, theta, actions: ActionSet) -> "RewardVector":
        th = np.asarray(theta, dtype=np.float64).reshape(-1)
        d = actions.dim
        if th.shape[0] != d:
            raise ValueError(f"theta has dim {th.shape[0]}, actions have dim {d}")
        if np.linalg.norm(th) > np.sqrt(d) + NORM_TOL:
            raise ValueError(f"||theta|| = {np.linalg.norm(th):.12g} exceeds sqrt(d)")
        means = actions.actions @ th
        if np.any(np.abs(means) > 1.0 + NORM_TOL):
            bad = int(np.argmax(np.abs(means)))
            raise ValueError(f"mean reward of action {bad} is {means[bad]:.12g}, outside [-1, 1]")
        return cls(th)


@dataclass(frozen=True)
class CorruptionPlan:
    """Dense per-action corruption vector for one round (the data-model view).

    The plan is fixed before the played action is drawn; adversaries that react
    to the played action are represented by evaluating their response at every
    action (see envs.aa_to_plan).
    """

    eps: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.eps, dtype=np.float64).reshape(-1)
        if np.any(np.abs(e) > 1.0 + NORM_TOL):
            bad = int(np.argmax(np.abs(e)))
            raise ValueError(f"corruption at action {bad} is {e[bad]:.12g}, outside [-1, 1]")
        object.__setattr__(self, "eps", e)

    @classmethod
    def zero(cls, n: int) -> "CorruptionPlan":
        return cls(np.zeros(n))


@dataclass(frozen=True)
class CorruptionLedger:
    """Running values of all corruption measures over one trajectory.

    Raw accumulators, not the measures themselves: the square-family measures
    rescale by the number of rounds, so they are derived properties.
    """

    rounds: int = 0
    strong_sum: float = 0.0       # sum_t |eps_t(a_t)|
    weak_sum: float = 0.0         # sum_t max_a |eps_t(a)|
    sq_sum: float = 0.0           # sum_t eps_t(a_t)^2
    sq_inf_sum: float = 0.0       # sum_t max_a eps_t(a)^2
    ms_max: float = 0.0           # max_{t,a} |eps_t(a)|

    @property
    def C(self) -> float:
        return self.strong_sum

    @property
    def Cinf(self) -> float:
        return self.weak_sum

    @property
    def Csq(self) -> float:
        return float(np.sqrt(self.rounds * self.sq_sum))

    @property
    def Csqinf(self) -> float:
        return float(np.sqrt(self.rounds * self.sq_inf_sum))

    @property
    def Cms(self) -> float:
        return self.rounds * self.ms_max

    def as_dict(self) -> dict:
        return {
            "C": self.C,
            "Cinf": self.Cinf,
            "Csq": self.Csq,
            "Csqinf": self.Csqinf,
            "Cms": self.Cms,
            "T": self.rounds,
        }

    def check_chain(self, tol: float = CHAIN_TOL):
        """Assert C <= min(Cinf, Csq) <= Csqinf <= Cms up to tol (scaled)."""
        s = 1.0 + tol
        slack = tol * max(1.0, self.rounds)
        if not (self.C <= min(self.Cinf, self.Csq) * s + slack):
            raise AssertionError(f"measure chain violated: C={self.C} > min(Cinf, Csq)={min(self.Cinf, self.Csq)}")
        if not (min(self.Cinf, self.Csq) <= self.Csqinf * s + slack):
            raise AssertionError(f"measure chain violated: min(Cinf, Csq) > Csqinf={self.Csqinf}")
        if not (self.Csqinf <= self.Cms * s + slack):
            raise AssertionError(f"measure chain violated: Csqinf={self.Csqinf} > Cms={self.Cms}")


def record_round(ledger: CorruptionLedger, plan, chosen: int) -> CorruptionLedger:
    """Charge one round of corruption to the ledger; returns a new ledger.

    Parameters
    ----------
    ledger : CorruptionLedger
    plan : CorruptionPlan or array
        the round's per-action corruption, fixed before `chosen` was drawn
    chosen : int
        index of the played action
    """
    eps = plan.eps if isinstance(plan, CorruptionPlan) else np.asarray(plan, dtype=np.float64)
    e_played = float(eps[chosen])
    return _charge(ledger, eps, e_played)


def record_round_point(ledger: CorruptionLedger, plan, eps_played: float) -> CorruptionLedger:
    """Variant of record_round for continuous play inside conv(A).

    The strong measures charge the corruption actually applied at the played
    point; the per-round max measures are evaluated over the declared finite
    action set.
    """
    eps = plan.eps if isinstance(plan, CorruptionPlan) else np.asarray(plan, dtype=np.float64)
    return _charge(ledger, eps, float(eps_played))


def _charge(ledger: CorruptionLedger, eps: np.ndarray, e_played: float) -> CorruptionLedger:
    e_max = float(np.max(np.abs(eps))) if eps.size else abs(e_played)
    e_max = max(e_max, abs(e_played))
    return replace(
        ledger,
        rounds=ledger.rounds + 1,
        strong_sum=ledger.strong_sum + abs(e_played),
        weak_sum=ledger.weak_sum + e_max,
        sq_sum=ledger.sq_sum + e_played * e_played,
        sq_inf_sum=ledger.sq_inf_sum + e_max * e_max,
        ms_max=max(ledger.ms_max, e_max),
    )


LEDGER_HEADER = ["C", "Cinf", "Csq", "Csqinf", "Cms", "T"]
ROUND_HEADER = ["t", "action", "reward", "mean_reward", "eps_charged", "cum_regret"]


def _coerce(raw: str):
    """Meta values round-trip as int, then float, else string."""
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


@dataclass(frozen=True)
class RunRecord:
    """Complete trajectory of one bandit run.

    Fields are parallel length-T arrays.  `action` is the index of the played
    action, or -1 for a continuous play strictly inside conv(A); in that case
    `mean_reward` still carries the exact played mean, so regret stays exact.
    `cum_regret` is against the best fixed comparator, chosen at finalization.
    `meta` holds algorithm-attached scalars (str, int, or float values) that
    serialize as extra comment lines in the CSV header block.
    """

    t: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    mean_reward: np.ndarray
    eps_charged: np.ndarray
    cum_regret: np.ndarray
    ledger: CorruptionLedger
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return int(self.t.shape[0])

    @property
    def final_regret(self) -> float:
        return float(self.cum_regret[-1]) if self.horizon else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed}\n")
        for key in sorted(self.meta):
            val = self.meta[key]
            text = repr(float(val)) if isinstance(val, float) else str(val)
            buf.write(f"# {key}={text}\n")
        buf.write(",".join(ROUND_HEADER) + "\n")
        for i in range(self.horizon):
            buf.write(
                f"{int(self.t[i])},{int(self.action[i])},{float(self.reward[i])!r},"
                f"{float(self.mean_reward[i])!r},{float(self.eps_charged[i])!r},{float(self.cum_regret[i])!r}\n"
            )
        buf.write(",".join(LEDGER_HEADER) + "\n")
        led = self.ledger.as_dict()
        buf.write(",".join(repr(float(led[k])) if k != "T" else str(led[k]) for k in LEDGER_HEADER) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RunRecord":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        seed = 0
        meta: dict = {}
        while lines and lines[0].startswith("# "):
            key, _, raw = lines[0][2:].partition("=")
            lines = lines[1:]
            if key == "seed":
                seed = int(raw)
                continue
            meta[key] = _coerce(raw)
        if not lines or lines[0].split(",") != ROUND_HEADER:
            raise ValueError("bad run record: missing round header")
        rows = []
        i = 1
        while i < len(lines) and lines[i].split(",") != LEDGER_HEADER:
            rows.append(lines[i].split(","))
            i += 1
        if i >= len(lines) - 1:
            raise ValueError("bad run record: missing ledger block")
        vals = lines[i + 1].split(",")
        led_vals = dict(zip(LEDGER_HEADER, vals))
        T = int(led_vals["T"])
        # rebuild raw accumulators from the reported measures
        ledger = CorruptionLedger(
            rounds=T,
            strong_sum=float(led_vals["C"]),
            weak_sum=float(led_vals["Cinf"]),
            sq_sum=float(led_vals["Csq"]) ** 2 / T if T else 0.0,
            sq_inf_sum=float(led_vals["Csqinf"]) ** 2 / T if T else 0.0,
            ms_max=float(led_vals["Cms"]) / T if T else 0.0,
        )
        cols = list(zip(*rows)) if rows else [[]] * 6
        return cls(
            t=np.array([int(x) for x in cols[0]], dtype=np.int64),
            action=np.array([int(x) for x in cols[1]], dtype=np.int64),
            reward=np.array([float(x) for x in cols[2]]),
            mean_reward=np.array([float(x) for x in cols[3]]),
            eps_charged=np.array([float(x) for x in cols[4]]),
            cum_regret=np.array([float(x) for x in cols[5]]),
            ledger=ledger,
            seed=seed,
            meta=meta,
        )


def regret(record: RunRecord, thetas, actions: ActionSet) -> float:
    """Regret against the best fixed action, recomputed from ground truth.

    Parameters
    ----------
    record : RunRecord
    thetas : (d,) or (T, d) array
        the true reward vector(s); a single vector is broadcast over rounds
    actions : ActionSet

    The played means are taken from the action indices when available and from
    the recorded mean_reward column for continuous plays (index -1).
    """
    th = np.asarray(thetas, dtype=np.float64)
    T = record.horizon
    if th.ndim == 1:
        th = np.broadcast_to(th, (T, th.shape[0]))
    if th.shape[0] != T:
        raise ValueError(f"need {T} theta rows, got {th.shape[0]}")
    S = th.sum(axis=0)
    best = float(np.max(actions.actions @ S)) if T else 0.0
    played = np.where(
        record.action >= 0,
        np.einsum("td,td->t", th, actions.actions[np.maximum(record.action, 0)]),
        record.mean_reward,
    )
    return best - float(played.sum())
