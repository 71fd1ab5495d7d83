"""Benchmark harness: declarative experiment matrices over (algorithm,
environment, corruption level, seed).

Determinism contract: every cell's seed is derived by hashing the cell's
content key (algorithm name, environment name, level, replicate ordinal,
master seed), so results never depend on execution order, the number of
workers, or the presence of other cells.  Summary files are written in
canonical cell order with repr() float formatting, hence byte-identical
across BENCH_THREADS settings.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from robustbandits.cew import cew_run
from robustbandits.elimination import misspec_elim_run, stoch_elim_run
from robustbandits.envs import Environment, MisspecifiedInstance, make_adversary, make_gap_misspecified, make_packing
from robustbandits.logdet import logdet_run
from robustbandits.model import ActionSet
from robustbandits.reduction import reduce_and_run, stoch_elim_oracle

SPEC_VERSION = 1
SUMMARY_HEADER = ["alg", "env", "d", "level", "seed", "final_regret", "C", "Cinf"]
FAILURE_HEADER = ["alg", "env", "d", "level", "seed", "error"]

ALGORITHM_NAMES = {"stoch_elim", "misspec_elim", "logdet", "cew", "reduction"}
ENV_KINDS = {"linear", "misspecified", "packing"}


class ConfigError(ValueError):
    """Configuration rejected before any cell ran."""


class FitError(ValueError):
    """Scaling fit impossible (fewer than 3 corruption levels in a group)."""


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int
    horizon: int
    seeds: int
    levels: tuple
    output_dir: str
    parallelism: int
    algorithms: tuple
    environments: tuple


_TOP_KEYS = {
    "spec_version",
    "master_seed",
    "horizon",
    "seeds",
    "levels",
    "output_dir",
    "parallelism",
    "algorithms",
    "environments",
}


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return parse_config(doc)


def parse_config(doc: dict) -> ExperimentConfig:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if doc.get("spec_version") != SPEC_VERSION:
        raise ConfigError(f"spec_version must be {SPEC_VERSION}, got {doc.get('spec_version')!r}")
    for key in ("master_seed", "horizon", "seeds"):
        if not isinstance(doc.get(key), int) or doc[key] < 0:
            raise ConfigError(f"{key} must be a nonnegative integer")
    if doc["horizon"] < 1 or doc["seeds"] < 1:
        raise ConfigError("horizon and seeds must be at least 1")
    levels = doc.get("levels")
    if not isinstance(levels, list) or not levels or not all(isinstance(x, (int, float)) for x in levels):
        raise ConfigError("levels must be a non-empty list of numbers")
    par = doc.get("parallelism", 1)
    if not isinstance(par, int) or par < 1:
        raise ConfigError("parallelism must be a positive integer")
    algs = doc.get("algorithms")
    envs = doc.get("environments")
    if not isinstance(algs, list) or not algs:
        raise ConfigError("need at least one [[algorithms]] entry")
    if not isinstance(envs, list) or not envs:
        raise ConfigError("need at least one [[environments]] entry")
    for spec in algs:
        validate_algorithm(spec)
    for spec in envs:
        validate_environment(spec)
    names = [a["name"] for a in algs]
    if len(set(names)) != len(names):
        raise ConfigError("algorithm names must be unique")
    names = [e["name"] for e in envs]
    if len(set(names)) != len(names):
        raise ConfigError("environment names must be unique")
    return ExperimentConfig(
        master_seed=doc["master_seed"],
        horizon=doc["horizon"],
        seeds=doc["seeds"],
        levels=tuple(float(x) for x in levels),
        output_dir=doc.get("output_dir", "bench_out"),
        parallelism=par,
        algorithms=tuple(dict(a) for a in algs),
        environments=tuple(dict(e) for e in envs),
    )


def validate_algorithm(spec: dict):
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("algorithm entries need a name")
    kind = _alg_kind(spec)
    if kind not in ALGORITHM_NAMES:
        raise ConfigError(f"unknown algorithm kind {kind!r} in {spec['name']!r}")
    if kind in ("stoch_elim", "misspec_elim", "cew", "reduction"):
        delta = spec.get("delta", 0.1)
        if not (0.0 < float(delta) < 1.0):
            raise ConfigError(f"delta out of range in {spec['name']!r}")
    if kind == "stoch_elim" and spec.get("measure", "weak") not in ("weak", "strong", "direct"):
        raise ConfigError(f"bad measure in {spec['name']!r}")
    if kind == "reduction":
        if spec.get("oracle", "stoch_elim") != "stoch_elim":
            raise ConfigError(f"unknown oracle in {spec['name']!r}")
        if spec.get("measure", "strong") not in ("weak", "strong"):
            raise ConfigError(f"bad measure in {spec['name']!r}")


def _alg_kind(spec: dict) -> str:
    return spec.get("kind", spec["name"])


def validate_environment(spec: dict):
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("environment entries need a name")
    kind = spec.get("kind", "linear")
    if kind not in ENV_KINDS:
        raise ConfigError(f"unknown environment kind {kind!r} in {spec['name']!r}")
    if kind == "packing":
        for key in ("d", "n", "eps_gap"):
            if key not in spec:
                raise ConfigError(f"packing environment {spec['name']!r} needs {key}")
        return
    if "actions" not in spec:
        raise ConfigError(f"environment {spec['name']!r} needs actions")
    _build_actions(spec["actions"])  # raises ConfigError on bad specs
    if kind == "misspecified":
        if "rho" not in spec:
            raise ConfigError(f"misspecified environment {spec['name']!r} needs rho")
        if "adversary" in spec:
            raise ConfigError("misspecified environments define their own corruption")
    noise = spec.get("noise", 1.0)
    if not (0.0 <= float(noise) <= 1.0):
        raise ConfigError(f"noise out of range in {spec['name']!r}")
    if "adversary" in spec and spec["adversary"].get("name") not in ("zero", "weak_budget", "strong_targeted", "sign_flip"):
        raise ConfigError(f"unknown adversary in {spec['name']!r}")


def _build_actions(aspec) -> np.ndarray:
    if isinstance(aspec, list):
        return np.asarray(aspec, dtype=np.float64)
    if not isinstance(aspec, dict) or "type" not in aspec:
        raise ConfigError("actions must be a matrix or a generator table")
    kind = aspec["type"]
    if kind == "matrix":
        return np.asarray(aspec["values"], dtype=np.float64)
    if kind == "basis_pm":
        d = int(aspec["d"])
        eye = np.eye(d)
        return np.vstack([eye, -eye])
    if kind == "circle":
        n = int(aspec["n"])
        radius = float(aspec.get("radius", 1.0))
        ang = 2.0 * np.pi * np.arange(n) / n
        return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if kind == "sphere":
        d, n = int(aspec["d"]), int(aspec["n"])
        rng = np.random.default_rng(int(aspec.get("gen_seed", 1234)))
        A = rng.normal(size=(n, d))
        return A / np.linalg.norm(A, axis=1, keepdims=True)
    if kind == "cone":
        # prescribed means against theta = scale * e1, spanning via cycling
        # orthogonal components
        d = int(aspec["d"])
        scale = float(aspec.get("scale", 0.9))
        means = [float(x) for x in aspec["means"]]
        if any(abs(m) > scale for m in means):
            raise ConfigError("cone means must have |mean| <= scale")
        rows = []
        for i, mval in enumerate(means):
            cosd = mval / scale
            row = np.zeros(d)
            row[0] = cosd
            if d > 1:
                row[1 + (i % (d - 1))] = np.sqrt(max(0.0, 1.0 - cosd * cosd))
            rows.append(row)
        return np.asarray(rows)
    raise ConfigError(f"unknown action generator {kind!r}")


def _build_theta(tspec, d: int) -> np.ndarray:
    if isinstance(tspec, list):
        th = np.asarray(tspec, dtype=np.float64)
        if th.shape != (d,):
            raise ConfigError(f"theta has shape {th.shape}, expected ({d},)")
        return th
    if isinstance(tspec, dict) and tspec.get("type") == "e1":
        th = np.zeros(d)
        th[0] = float(tspec.get("value", 0.9))
        return th
    raise ConfigError("theta must be a vector or {type='e1', value=...}")


def _subst_level(value, level: float):
    if isinstance(value, str) and value == "level":
        return level
    return value


def cell_seed(master_seed: int, alg_name: str, env_name: str, level: float, ordinal: int) -> int:
    """Content-keyed 63-bit seed; independent of cell position in the matrix."""
    key = f"{master_seed}|{alg_name}|{env_name}|{float(level)!r}|{ordinal}"
    digest = hashlib.blake2s(key.encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def build_environment(spec: dict, level: float, seed: int, horizon: int) -> Environment:
    kind = spec.get("kind", "linear")
    noise = float(spec.get("noise", 1.0))
    if kind == "packing":
        rng = np.random.default_rng(seed)
        _, reward, inst = make_packing(
            int(spec["d"]), int(spec["n"]), horizon, float(_subst_level(spec["eps_gap"], level)), rng
        )
        return Environment(inst.actions, instance=inst, noise=noise, horizon=horizon, seed=seed)
    actions = ActionSet(_build_actions(spec["actions"]))
    theta = _build_theta(spec.get("theta", {"type": "e1"}), actions.dim)
    if kind == "misspecified":
        rho = float(_subst_level(spec["rho"], level))
        inst = make_gap_misspecified(actions, theta, rho, shape=spec.get("shape", "max_adverse"))
        return Environment(actions, instance=inst, noise=noise, horizon=horizon, seed=seed)
    adv_spec = dict(spec.get("adversary", {"name": "zero"}))
    adv_spec = {k: _subst_level(v, level) for k, v in adv_spec.items()}
    adversary = make_adversary(adv_spec)
    return Environment(actions, theta=theta, adversary=adversary, noise=noise, horizon=horizon, seed=seed)


def build_algorithm(spec: dict, level: float):
    """Returns a callable env -> RunRecord for one cell."""
    kind = _alg_kind(spec)
    delta = float(spec.get("delta", 0.1))

    if kind == "stoch_elim":
        measure = spec.get("measure", "weak")
        use_net = bool(spec.get("use_net", True))

        def run(env):
            d = env.actions.dim
            z = {"weak": np.sqrt(d) * level, "strong": d * level, "direct": level}[measure]
            return stoch_elim_run(env, Z=float(z), delta=delta, use_net=use_net)

        return run
    if kind == "misspec_elim":
        mult = float(spec.get("m1_multiplier", 64.0))
        return lambda env: misspec_elim_run(env, delta=delta, m1_multiplier=mult)
    if kind == "logdet":
        alpha_scale = float(spec.get("alpha_scale", 1.0))
        return lambda env: logdet_run(env, c_inf=level, alpha_scale=alpha_scale)
    if kind == "cew":
        mc = int(spec.get("mc_budget", 4000))
        a_s = float(spec.get("alpha_scale", 1.0))
        e_s = float(spec.get("eta_scale", 1.0))
        return lambda env: cew_run(env, C=level, delta=delta, mc_budget=mc, alpha_scale=a_s, eta_scale=e_s)
    if kind == "reduction":
        measure = spec.get("measure", "strong")
        rho_spec = spec.get("rho", "level")

        def run(env):
            rho = float(_subst_level(rho_spec, level))
            oracle = stoch_elim_oracle(env.actions.dim, env.actions.n, measure=measure)
            return reduce_and_run(oracle, env, rho=rho, delta=delta)

        return run
    raise ConfigError(f"unknown algorithm kind {kind!r}")


def _cell_id(alg: dict, env: dict, level: float, ordinal: int) -> str:
    return f"{alg['name']}-{env['name']}-l{level:g}-s{ordinal}"


def _run_cell(payload):
    """Worker entry point; must stay importable at module top level."""
    cfg, ai, ei, level, ordinal, records_dir = payload
    alg = cfg.algorithms[ai]
    env_spec = cfg.environments[ei]
    seed = cell_seed(cfg.master_seed, alg["name"], env_spec["name"], level, ordinal)
    cid = _cell_id(alg, env_spec, level, ordinal)
    try:
        env = build_environment(env_spec, level, seed, cfg.horizon)
        record = build_algorithm(alg, level)(env)
        row = {
            "alg": alg["name"],
            "env": env_spec["name"],
            "d": env.actions.dim,
            "level": float(level),
            "seed": ordinal,
            "final_regret": record.final_regret,
            "C": record.ledger.C,
            "Cinf": record.ledger.Cinf,
        }
        if records_dir is not None:
            with open(os.path.join(records_dir, cid + ".csv"), "w") as fh:
                fh.write(record.to_csv())
            doc = {
                "cell": cid,
                "algorithm": {**alg, "level": float(level)},
                "environment": json.loads(env.to_json()),
            }
            with open(os.path.join(records_dir, cid + ".json"), "w") as fh:
                json.dump(doc, fh, indent=1)
        return ("ok", cid, row)
    except Exception as e:  # noqa: BLE001 - cells must not kill the matrix
        return (
            "fail",
            cid,
            {
                "alg": alg["name"],
                "env": env_spec["name"],
                "d": "",
                "level": float(level),
                "seed": ordinal,
                "error": f"{type(e).__name__}: {e}",
            },
        )


@dataclass
class MatrixResult:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    summary_path: str = ""
    failures_path: str = ""

    @property
    def ok(self) -> bool:
        return not self.failures


def effective_workers(requested: int, n_cells: int) -> int:
    cap = os.environ.get("BENCH_THREADS")
    w = requested
    if cap is not None:
        try:
            w = min(w, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"BENCH_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(w, n_cells))


def run_matrix(config: ExperimentConfig, output_dir: str | None = None, write_records: bool = True, progress=None) -> MatrixResult:
    """Execute every cell; never aborts on cell failures.

    Results and files are emitted in canonical cell order (algorithms x
    environments x levels x seeds as configured) regardless of the worker
    pool's scheduling.
    """
    out = output_dir if output_dir is not None else config.output_dir
    os.makedirs(out, exist_ok=True)
    records_dir = os.path.join(out, "records") if write_records else None
    if records_dir:
        os.makedirs(records_dir, exist_ok=True)
    payloads = [
        (config, ai, ei, level, ordinal, records_dir)
        for ai in range(len(config.algorithms))
        for ei in range(len(config.environments))
        for level in config.levels
        for ordinal in range(config.seeds)
    ]
    workers = effective_workers(config.parallelism, len(payloads))
    if workers <= 1:
        outcomes = [_run_cell(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, payloads, chunksize=1))
    result = MatrixResult()
    for status, cid, row in outcomes:
        if progress is not None:
            progress(status, cid)
        (result.rows if status == "ok" else result.failures).append(row)
    result.summary_path = os.path.join(out, "summary.csv")
    result.failures_path = os.path.join(out, "failures.csv")
    _write_rows(result.summary_path, SUMMARY_HEADER, result.rows)
    _write_rows(result.failures_path, FAILURE_HEADER, result.failures)
    return result


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in header])


def read_summary(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            rows.append(
                {
                    "alg": raw["alg"],
                    "env": raw["env"],
                    "d": int(raw["d"]),
                    "level": float(raw["level"]),
                    "seed": int(raw["seed"]),
                    "final_regret": float(raw["final_regret"]),
                    "C": float(raw["C"]),
                    "Cinf": float(raw["Cinf"]),
                }
            )
        return rows


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    max_residual: float
    levels: tuple
    medians: tuple


def fit_scaling(rows, group_keys=("alg", "env", "d")) -> dict:
    """Least-squares regret-vs-level slope per group, on per-level medians.

    Raises FitError for any group with fewer than 3 distinct levels.
    """
    groups: dict = {}
    for row in rows:
        key = tuple(row[k] for k in group_keys)
        groups.setdefault(key, {}).setdefault(float(row["level"]), []).append(float(row["final_regret"]))
    fits = {}
    for key, by_level in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0]))):
        if len(by_level) < 3:
            raise FitError(f"group {key}: need at least 3 corruption levels, have {len(by_level)}")
        levels = sorted(by_level)
        medians = [float(np.median(by_level[lv])) for lv in levels]
        slope, intercept = np.polyfit(levels, medians, 1)
        fitted = np.polyval([slope, intercept], levels)
        fits[key] = FitResult(
            slope=float(slope),
            intercept=float(intercept),
            max_residual=float(np.max(np.abs(fitted - np.asarray(medians)))),
            levels=tuple(levels),
            medians=tuple(medians),
        )
    return fits


def replay_record(json_path: str):
    """Re-run the cell stored in a replay document.

    Returns (record, original_csv_text or None).  The caller compares.
    """
    with open(json_path) as fh:
        doc = json.load(fh)
    env = Environment.from_json(json.dumps(doc["environment"]))
    alg_spec = dict(doc["algorithm"])
    level = float(alg_spec.pop("level"))
    record = build_algorithm(alg_spec, level)(env)
    csv_path = json_path[: -len(".json")] + ".csv"
    original = None
    if os.path.exists(csv_path):
        with open(csv_path) as fh:
            original = fh.read()
    return record, original
