"""Simulation environments: corrupted linear rewards and misspecified instances.

The data model fixes the per-round corruption before the played action is
drawn (a dense per-action plan).  Adversaries that react to the played action
are expressed through `response(ctx, a)` and either run natively (aa_mode) or
through the plan adapter, which evaluates the response at every action; both
paths consume randomness in the same order, so trajectories agree bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from robustbandits.model import (
    ActionSet,
    CorruptionLedger,
    CorruptionPlan,
    RewardVector,
    RunRecord,
    record_round,
    record_round_point,
)

POINT_MATCH_TOL = 1e-12
INSTANCE_TOL = 1e-12


class ProtocolError(RuntimeError):
    """Raised when step() is called past the horizon, or on an unsupported play."""


@dataclass
class AdversaryContext:
    """What an adversary may look at when planning round t.

    theta is the current true parameter for omniscient adversaries and None
    otherwise.  played / rewards are the history up to round t-1 (read-only by
    convention).
    """

    t: int
    actions: ActionSet
    theta: np.ndarray | None
    played: list
    rewards: list


class Adversary:
    """Base adversary.  Subclasses implement plan() or response().

    omniscient adversaries receive the true theta in their context; this is
    the default since the strongest attacks need it.
    """

    omniscient = True

    def plan(self, ctx: AdversaryContext) -> np.ndarray:
        # default: pointwise response evaluated at every action
        A = ctx.actions.actions
        return np.array([self.response(ctx, A[i]) for i in range(A.shape[0])])

    def response(self, ctx: AdversaryContext, a: np.ndarray) -> float:
        raise NotImplementedError("this adversary only provides per-round plans")

    def observe(self, chosen: int, eps_charged: float):
        """Called after the round with what was actually charged."""

    def spec(self) -> dict:
        raise NotImplementedError("this adversary is not serializable")


class ZeroAdversary(Adversary):
    """No corruption."""

    omniscient = False

    def plan(self, ctx):
        return np.zeros(ctx.actions.n)

    def response(self, ctx, a):
        return 0.0

    def spec(self):
        return {"name": "zero"}


class WeakBudgetAdversary(Adversary):
    """Pushes the best action's reward down until a weak-measure budget is spent.

    Corruption is planned per round with no dependence on the played action,
    so the budget drains by the per-round max: the realized weak measure
    equals min(budget, cap * rounds).
    """

    def __init__(self, budget: float, cap: float = 1.0):
        if not (0.0 <= cap <= 1.0):
            raise ValueError("cap must be in [0, 1]")
        self.budget = float(budget)
        self.cap = float(cap)
        self.remaining = float(budget)

    def plan(self, ctx):
        eps = np.zeros(ctx.actions.n)
        amount = min(self.cap, self.remaining)
        if amount > 0.0 and ctx.theta is not None:
            best = int(np.argmax(ctx.actions.actions @ ctx.theta))
            eps[best] = -amount
            self.remaining -= amount
        return eps

    def spec(self):
        return {"name": "weak_budget", "budget": self.budget, "cap": self.cap}


class StrongTargetedAdversary(Adversary):
    """Corrupts only the best action, paying from a strong-measure budget.

    The plan is still fixed before the draw; the budget drains only when the
    targeted action is actually played (observe callback), which is what makes
    the strong measure much smaller than the weak one for this attack.
    """

    def __init__(self, budget: float, cap: float = 1.0):
        if not (0.0 <= cap <= 1.0):
            raise ValueError("cap must be in [0, 1]")
        self.budget = float(budget)
        self.cap = float(cap)
        self.remaining = float(budget)
        self._target = None

    def plan(self, ctx):
        eps = np.zeros(ctx.actions.n)
        amount = min(self.cap, self.remaining)
        if amount > 0.0 and ctx.theta is not None:
            self._target = int(np.argmax(ctx.actions.actions @ ctx.theta))
            eps[self._target] = -amount
        else:
            self._target = None
        return eps

    def observe(self, chosen, eps_charged):
        self.remaining -= abs(eps_charged)

    def spec(self):
        return {"name": "strong_targeted", "budget": self.budget, "cap": self.cap}


class SignFlipAdversary(Adversary):
    """eps(a) = -sign(a^T theta) * cap: pushes every mean toward zero."""

    def __init__(self, cap: float = 0.3):
        if not (0.0 <= cap <= 1.0):
            raise ValueError("cap must be in [0, 1]")
        self.cap = float(cap)

    def response(self, ctx, a):
        if ctx.theta is None:
            return 0.0
        return -float(np.sign(a @ ctx.theta)) * self.cap

    def spec(self):
        return {"name": "sign_flip", "cap": self.cap}


class FunctionalAdversary(Adversary):
    """Wraps a deterministic callable f(ctx, a) -> eps.

    This is the reactive (decide-after-seeing-the-action) form; aa_to_plan
    turns it into the dense-plan form of the data model.
    """

    def __init__(self, fn, omniscient: bool = True):
        self.fn = fn
        self.omniscient = omniscient

    def response(self, ctx, a):
        return float(self.fn(ctx, a))


def aa_to_plan(adversary) -> Adversary:
    """Adapter: reactive adversary -> dense-plan adversary.

    Accepts an Adversary with a response() or a bare callable f(ctx, a).  The
    plan for round t evaluates the response at every action with the history
    through t-1, which reproduces the reactive trajectory exactly as long as
    the response is a deterministic function of (history, a).
    """
    if callable(adversary) and not isinstance(adversary, Adversary):
        adversary = FunctionalAdversary(adversary)

    class _PlanAdapter(Adversary):
        omniscient = adversary.omniscient

        def plan(self, ctx):
            A = ctx.actions.actions
            return np.array([adversary.response(ctx, A[i]) for i in range(A.shape[0])])

        def observe(self, chosen, eps_charged):
            adversary.observe(chosen, eps_charged)

    return _PlanAdapter()


ADVERSARIES = {
    "zero": ZeroAdversary,
    "weak_budget": WeakBudgetAdversary,
    "strong_targeted": StrongTargetedAdversary,
    "sign_flip": SignFlipAdversary,
}


def make_adversary(spec: dict) -> Adversary:
    kind = spec.get("name")
    if kind not in ADVERSARIES:
        raise ValueError(f"unknown adversary {kind!r}")
    kwargs = {k: v for k, v in spec.items() if k != "name"}
    return ADVERSARIES[kind](**kwargs)


@dataclass(frozen=True)
class MisspecifiedInstance:
    """True means f0 close to the linear surrogate in the gap-relative sense.

    Invariant: |f0(a) - a^T theta| <= rho * (max f0 - f0(a)) pointwise, with
    0 <= rho < 1.
    """

    actions: ActionSet
    theta: np.ndarray
    f0: np.ndarray
    rho: float

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        f0 = np.asarray(self.f0, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "f0", f0)
        if not (0.0 <= self.rho < 1.0):
            raise ValueError(f"rho = {self.rho} must lie in [0, 1)")
        if f0.shape[0] != self.actions.n:
            raise ValueError("f0 must have one value per action")
        if np.any(np.abs(f0) > 1.0 + INSTANCE_TOL):
            raise ValueError("true means leave [-1, 1]")
        gaps = self.gaps
        delta = self.delta
        bad = np.abs(delta) - self.rho * gaps
        if np.any(bad > INSTANCE_TOL):
            i = int(np.argmax(bad))
            raise ValueError(
                f"deviation {abs(delta[i]):.6g} at action {i} exceeds rho * gap {self.rho * gaps[i]:.6g}"
            )

    @property
    def delta(self) -> np.ndarray:
        return self.f0 - self.actions.actions @ self.theta

    @property
    def gaps(self) -> np.ndarray:
        return float(np.max(self.f0)) - self.f0

    @property
    def best(self) -> int:
        return int(np.argmax(self.f0))


def make_gap_misspecified(
    actions: ActionSet,
    theta,
    rho: float,
    shape: str = "max_adverse",
    rng: np.random.Generator | None = None,
    sign: float = -1.0,
) -> MisspecifiedInstance:
    """Build a gap-relative misspecified instance around a linear model.

    shape:
        "max_adverse"  deviation saturates the budget, Delta(a) = sign*rho*Gap(a)
                       (default sign -1: the linear surrogate over-values every
                       suboptimal action, the hard direction)
        "zero"         Delta identically 0
        "random"       per-action budget fraction drawn uniformly from [-rho, rho]

    The max_adverse profile solves the per-action fixed point
    f0 = (lin + s*rho*max_lin) / (1 + s*rho), which makes the invariant tight.

    Raises ValueError for rho outside [0, 1) and when the deviations push a
    true mean outside [-1, 1].
    """
    if not (0.0 <= rho < 1.0):
        raise ValueError(f"rho = {rho} must lie in [0, 1)")
    if sign not in (-1.0, 1.0):
        raise ValueError("sign must be -1 or +1")
    th = np.asarray(theta, dtype=np.float64).reshape(-1)
    lin = actions.actions @ th
    mx = float(np.max(lin))
    if shape == "max_adverse":
        u = np.full(actions.n, sign * rho)
    elif shape == "zero":
        u = np.zeros(actions.n)
    elif shape == "random":
        if rng is None:
            raise ValueError("random shape needs an rng")
        u = rng.uniform(-rho, rho, size=actions.n)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    f0 = (lin + u * mx) / (1.0 + u)
    if np.any(np.abs(f0) > 1.0 + INSTANCE_TOL):
        i = int(np.argmax(np.abs(f0)))
        raise ValueError(f"true mean {f0[i]:.6g} at action {i} leaves [-1, 1]")
    return MisspecifiedInstance(actions=actions, theta=th, f0=f0, rho=rho)


def make_packing(
    d: int,
    n: int,
    T: int,
    eps_gap: float,
    rng: np.random.Generator,
    budget: int = 10**6,
):
    """Near-orthogonal hard instance: n unit vectors with small pairwise overlap.

    Vectors are rejection-sampled on the sphere, keeping a candidate when its
    absolute inner product with everything kept so far is at most
    min(1, sqrt(8 log(3T) / (d-1))).  One vector is picked as the optimum;
    theta points along it with length sqrt((d-1)/(8 log 3T)) * eps_gap, and
    the deviations zero out every other true mean.

    Raises ValueError when the draw budget runs out, reporting how many
    vectors were achieved.
    """
    if d < 2:
        raise ValueError("packing needs d >= 2")
    if n < 1:
        raise ValueError("n must be positive")
    bound = float(np.sqrt(8.0 * np.log(3.0 * T) / (d - 1)))
    cap = min(1.0, bound)
    kept = []
    draws = 0
    while len(kept) < n:
        if draws >= budget:
            raise ValueError(
                f"packing draw budget {budget} exhausted: achieved {len(kept)} of {n} vectors"
            )
        v = rng.normal(size=d)
        draws += 1
        nv = np.linalg.norm(v)
        if nv == 0.0:
            continue
        v = v / nv
        if kept and float(np.max(np.abs(np.asarray(kept) @ v))) > cap:
            continue
        kept.append(v)
    A = ActionSet(np.asarray(kept))
    i_star = int(rng.integers(n))
    scale = float(np.sqrt((d - 1) / (8.0 * np.log(3.0 * T))))
    theta = scale * eps_gap * A.actions[i_star]
    reward = RewardVector.checked(theta, A)
    f0 = np.zeros(n)
    f0[i_star] = float(A.actions[i_star] @ theta)
    # the instance's gap-relative budget is the realized overlap with the
    # optimal direction (< 1 a.s.), not the possibly-vacuous packing cap
    if n > 1:
        overlap = np.abs(np.delete(A.actions @ A.actions[i_star], i_star))
        rho = min(cap, float(np.max(overlap)), 1.0 - 1e-9)
    else:
        rho = 0.0
    instance = MisspecifiedInstance(actions=A, theta=reward.theta, f0=f0, rho=rho)
    return A, reward, instance


class Environment:
    """One bandit run: owns the truth, the adversary, the rng, and the ledger.

    Exactly one of `theta` / `theta_schedule` / `instance` defines the truth.
    step(i) plays action i; step_point(x) plays a point of conv(A) (linear
    truth only, and the adversary must be pointwise-evaluable or absent).

    Randomness order per round is fixed: the algorithm draws its action from
    env.rng first, then step() draws the noise.  Runs are pure functions of
    (construction arguments, seed).
    """

    def __init__(
        self,
        actions: ActionSet,
        theta=None,
        theta_schedule=None,
        instance: MisspecifiedInstance | None = None,
        adversary: Adversary | None = None,
        noise: float = 1.0,
        horizon: int = 1000,
        seed: int = 0,
        aa_mode: bool = False,
    ):
        if sum(x is not None for x in (theta, theta_schedule, instance)) != 1:
            raise ValueError("specify exactly one of theta, theta_schedule, instance")
        if instance is not None and adversary is not None:
            raise ValueError("a misspecified instance already defines its corruption")
        if not (0.0 <= noise <= 1.0):
            raise ValueError("noise half-width must be in [0, 1]")
        if aa_mode and (adversary is None or type(adversary).response is Adversary.response):
            raise ValueError("aa_mode needs an adversary with a pointwise response")
        self.actions = actions
        self.instance = instance
        self._theta = None if theta is None else np.asarray(theta, dtype=np.float64).reshape(-1)
        self._schedule = theta_schedule
        self.adversary = adversary if adversary is not None else ZeroAdversary()
        self.noise = float(noise)
        self.horizon = int(horizon)
        self.seed = int(seed)
        self.aa_mode = bool(aa_mode)
        self.rng = np.random.default_rng(int(seed))
        self.ledger = CorruptionLedger()
        self.t = 0
        self._played: list[int] = []
        self._rewards: list[float] = []
        self._means: list[float] = []
        self._eps: list[float] = []
        self._thetas: list[np.ndarray] = []

    # -- truth ---------------------------------------------------------------

    def theta_at(self, t: int) -> np.ndarray:
        if self.instance is not None:
            return self.instance.theta
        if self._schedule is not None:
            return np.asarray(self._schedule(t), dtype=np.float64).reshape(-1)
        return self._theta

    @property
    def dim(self) -> int:
        return self.actions.dim

    @property
    def finished(self) -> bool:
        return self.t >= self.horizon

    # -- stepping ------------------------------------------------------------

    def _begin_round(self):
        if self.finished:
            raise ProtocolError(f"horizon {self.horizon} exhausted")
        t = self.t + 1
        theta = self.theta_at(t)
        ctx = AdversaryContext(
            t=t,
            actions=self.actions,
            theta=theta if self.adversary.omniscient else None,
            played=self._played,
            rewards=self._rewards,
        )
        return t, theta, ctx

    def _plan_for(self, ctx) -> np.ndarray:
        if self.instance is not None:
            return self.instance.delta
        return np.asarray(self.adversary.plan(ctx), dtype=np.float64)

    def _noise_draw(self) -> float:
        if self.noise == 0.0:
            return 0.0
        return float(self.rng.uniform(-self.noise, self.noise))

    def step(self, chosen: int) -> float:
        """Play action index `chosen`, returning the observed reward."""
        t, theta, ctx = self._begin_round()
        chosen = int(chosen)
        if not (0 <= chosen < self.actions.n):
            raise ProtocolError(f"action index {chosen} out of range")
        a = self.actions.actions[chosen]
        plan = self._plan_for(ctx)
        if self.aa_mode:
            eps_chosen = float(self.adversary.response(ctx, a))
        else:
            eps_chosen = float(plan[chosen])
        zeta = self._noise_draw()
        lin = float(a @ theta)
        reward = lin + eps_chosen + zeta
        mean = float(self.instance.f0[chosen]) if self.instance is not None else lin
        self.ledger = record_round(self.ledger, plan, chosen)
        self.adversary.observe(chosen, eps_chosen)
        self._commit(t, chosen, reward, mean, eps_chosen, theta)
        return reward

    def step_point(self, x) -> float:
        """Play a point of conv(A); linear truth only.

        The plan used for the per-round max measures is the adversary's plan
        over the finite action set; the strong measure charges the response at
        the played point.
        """
        t, theta, ctx = self._begin_round()
        if self.instance is not None:
            raise ProtocolError("continuous play is undefined on a misspecified instance")
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if np.linalg.norm(x) > 1.0 + 1e-9:
            raise ProtocolError("played point leaves the unit ball")
        has_response = type(self.adversary).response is not Adversary.response
        if isinstance(self.adversary, ZeroAdversary):
            plan = np.zeros(self.actions.n)
            eps_x = 0.0
        elif has_response:
            plan = self._plan_for(ctx)
            eps_x = float(self.adversary.response(ctx, x))
        else:
            raise ProtocolError("this adversary cannot price a continuous play")
        zeta = self._noise_draw()
        mean = float(x @ theta)
        reward = mean + eps_x + zeta
        self.ledger = record_round_point(self.ledger, plan, eps_x)
        # exact-vertex plays keep their index; interior points record -1
        diffs = np.max(np.abs(self.actions.actions - x[None, :]), axis=1)
        j = int(np.argmin(diffs))
        idx = j if diffs[j] <= POINT_MATCH_TOL else -1
        self.adversary.observe(idx, eps_x)
        self._commit(t, idx, reward, mean, eps_x, theta)
        return reward

    def _commit(self, t, idx, reward, mean, eps, theta):
        self.t = t
        self._played.append(idx)
        self._rewards.append(reward)
        self._means.append(mean)
        self._eps.append(eps)
        self._thetas.append(np.asarray(theta, dtype=np.float64))

    # -- finalization --------------------------------------------------------

    def finalize(self) -> RunRecord:
        """Freeze the trajectory; picks the best fixed comparator now."""
        T = self.t
        played_mean = np.asarray(self._means)
        if self.instance is not None:
            best_rate = float(np.max(self.instance.f0))
            comparator = best_rate * np.arange(1, T + 1)
        else:
            th = np.asarray(self._thetas) if T else np.zeros((0, self.dim))
            cum_theta = np.cumsum(th, axis=0) if T else th
            if T:
                u = int(np.argmax(self.actions.actions @ cum_theta[-1]))
                comparator = cum_theta @ self.actions.actions[u]
            else:
                comparator = np.zeros(0)
        cum = comparator - np.cumsum(played_mean) if T else np.zeros(0)
        self.ledger.check_chain()
        return RunRecord(
            t=np.arange(1, T + 1, dtype=np.int64),
            action=np.asarray(self._played, dtype=np.int64),
            reward=np.asarray(self._rewards),
            mean_reward=played_mean,
            eps_charged=np.asarray(self._eps),
            cum_regret=cum,
            ledger=self.ledger,
            seed=self.seed,
        )

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        """Replay document for a freshly-constructed copy of this environment."""
        if self._schedule is not None:
            raise ValueError("theta schedules are not serializable")
        doc = {
            "actions": self.actions.actions.tolist(),
            "noise": self.noise,
            "horizon": self.horizon,
            "seed": self.seed,
            "aa_mode": self.aa_mode,
        }
        if self.instance is not None:
            doc["theta"] = self.instance.theta.tolist()
            doc["instance"] = {"f0": self.instance.f0.tolist(), "rho": self.instance.rho}
        else:
            doc["theta"] = self._theta.tolist()
            doc["adversary"] = self.adversary.spec()
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Environment":
        doc = json.loads(text)
        actions = ActionSet(np.asarray(doc["actions"]))
        kwargs = dict(
            actions=actions,
            noise=doc.get("noise", 1.0),
            horizon=doc["horizon"],
            seed=doc.get("seed", 0),
            aa_mode=doc.get("aa_mode", False),
        )
        if "instance" in doc:
            inst = MisspecifiedInstance(
                actions=actions,
                theta=np.asarray(doc["theta"]),
                f0=np.asarray(doc["instance"]["f0"]),
                rho=doc["instance"]["rho"],
            )
            return cls(instance=inst, **kwargs)
        adv = make_adversary(doc.get("adversary", {"name": "zero"}))
        return cls(theta=np.asarray(doc["theta"]), adversary=adv, **kwargs)
