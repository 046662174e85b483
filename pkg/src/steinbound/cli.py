"""``steinbound`` command line: config parsing, orchestration, serialization.

Usage::

    steinbound <command> --config <path> [--seed N] [--out <path>]

Exit codes are 0 on success, 1 on a computational error and 2 on a
configuration error. Results go to one JSON document (floats written with 17
significant digits; non-finite values as the strings ``"inf"``, ``"-inf"``,
``"nan"``), coverage runs add a CSV of trial records, and every run writes a
``<out>.manifest.json`` with the seed, parameters, version and wall time.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from ._base import CategoricalDistribution, SteinboundError
from .concentration import canonical_mgf_check, default_y, select_y
from .opl import FinitePolicyClass, LearnConfig, learning_report, opl_lower_bound, optimize_posterior
from .pac_bayes import LossTable, empirical_bernstein_bound, gen_bound, pb_mgf_check
from .sim import (
    BOUND_NAMES,
    BanditEnv,
    BoundSpec,
    _loss_setup,
    _softmax_posterior,
    canonical_pairs,
    coverage,
    default_policy_class,
    generate_logs,
    loss_table,
    pac_bayes_mgf_triples,
    standard_environments,
    true_value,
)
from .wis import PROXY_MODES, LoggedData, opev_lower_bound

logger = logging.getLogger(__name__)

COMMANDS = ("eval", "learn", "coverage", "verify-canonical", "gen-bound")
CSV_COLUMNS = ("trial_index", "bound_value", "target_quantity", "violated", "error_flag")

_TOP_KEYS = {"command", "seed", "out", "environment", "behavior", "target", "policy_class",
             "prior", "posterior", "data", "bound", "learn", "coverage", "canonical", "gen"}
_SECTION_KEYS = {
    "bound": {"x", "y", "y_grid", "proxy_mode", "inner_reps"},
    "learn": {"step_size", "max_iters", "gradient_epsilon"},
    "coverage": {"bound", "trials", "n", "params"},
    "canonical": {"n", "samples", "lambdas", "trials", "y", "posterior", "temperature"},
    "gen": {"loss_scale", "posterior", "temperature"},
    "data": {"n", "actions", "rewards"},
}
# bounds whose guarantee needs x >= 2 (all but the pure lower-tail and proxy bounds)
_Y_BOUNDS = {"es_radius_logy", "wis_concentration", "opev_lower_bound", "opl_lower_bound",
             "gen_bound", "empirical_bernstein"}


class ConfigError(SteinboundError):
    def __init__(self, problems: List[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass
class ExperimentConfig:
    command: str
    seed: int = 0
    out: str = "result.json"
    env: Optional[BanditEnv] = None
    env_name: Optional[str] = None
    behavior: Optional[np.ndarray] = None
    target: Optional[np.ndarray] = None
    policy_class: Optional[FinitePolicyClass] = None
    prior: Optional[np.ndarray] = None
    posterior: Optional[np.ndarray] = None
    data: Dict[str, Any] = field(default_factory=dict)
    bound: Dict[str, Any] = field(default_factory=dict)
    learn: Dict[str, Any] = field(default_factory=dict)
    coverage: Dict[str, Any] = field(default_factory=dict)
    canonical: Dict[str, Any] = field(default_factory=dict)
    gen: Dict[str, Any] = field(default_factory=dict)
    raw: Dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        if "actions" in self.data:
            return len(self.data["actions"])
        return int(self.data.get("n", self.coverage.get("n", 100)))

    @property
    def y(self) -> float:
        y = self.bound.get("y")
        return default_y(self.n) if y is None else float(y)

    def parameters(self) -> Dict[str, Any]:
        """Resolved parameters echoed into results (defaults filled in)."""
        params = dict(self.raw)
        params["command"] = self.command
        params["seed"] = self.seed
        bound = dict(params.get("bound", {}))
        if "y_grid" not in bound:
            bound["y"] = self.y
        bound.setdefault("x", self.bound["x"])
        bound.setdefault("proxy_mode", self.bound["proxy_mode"])
        bound.setdefault("inner_reps", self.bound["inner_reps"])
        params["bound"] = bound
        params.pop("out", None)
        return params


# -- config loading --------------------------------------------------------

def _read_document(path: Path) -> Any:
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        return yaml.safe_load(text)
    return json.loads(text)


def _vector(problems, name, value, *, dist=False):
    try:
        arr = np.asarray(value, dtype=float)
        if arr.ndim != 1:
            raise ValueError("must be a list of numbers")
        if dist:
            CategoricalDistribution(arr)
        return arr
    except (TypeError, ValueError) as exc:
        problems.append(f"{name}: {exc}")
        return None


def load_config(path, *, seed: Optional[int] = None, out: Optional[str] = None,
                command: Optional[str] = None) -> ExperimentConfig:
    """Parse and validate a JSON or YAML experiment config.

    Every problem is reported with its field path; nothing is computed until
    the whole document validates.
    """
    path = Path(path)
    try:
        doc = _read_document(path)
    except (OSError, ValueError) as exc:
        raise ConfigError([f"{path}: cannot parse config ({exc})"]) from None
    if not isinstance(doc, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])

    problems: List[str] = []
    for key in sorted(set(doc) - _TOP_KEYS):
        problems.append(f"{key}: unknown field")
    for section, allowed in _SECTION_KEYS.items():
        sub = doc.get(section, {})
        if not isinstance(sub, dict):
            problems.append(f"{section}: must be a mapping")
            continue
        for key in sorted(set(sub) - allowed):
            problems.append(f"{section}.{key}: unknown field")

    cmd = command or doc.get("command")
    if command and doc.get("command") not in (None, command):
        problems.append(f"command: config says {doc.get('command')!r} but {command!r} was requested")
    if cmd not in COMMANDS:
        problems.append(f"command: unknown command {cmd!r}; valid commands are {', '.join(COMMANDS)}")
        raise ConfigError(problems)
    if any(not isinstance(doc.get(s, {}), dict) for s in _SECTION_KEYS):
        raise ConfigError(problems)

    cfg = ExperimentConfig(command=cmd, raw={k: v for k, v in doc.items()})
    cfg.seed = int(doc.get("seed", 0) if seed is None else seed)
    cfg.out = out or doc.get("out", "result.json")
    for section in ("data", "bound", "learn", "coverage", "canonical", "gen"):
        setattr(cfg, section, dict(doc.get(section, {})))

    suite = standard_environments()
    env_spec = doc.get("environment", "coin" if cmd == "verify-canonical" else "mismatched")
    setting = None
    if isinstance(env_spec, str):
        if env_spec not in suite:
            problems.append(f"environment: unknown name {env_spec!r}; choose from {sorted(suite)}")
        else:
            setting = suite[env_spec]
            cfg.env, cfg.env_name = setting.env, env_spec
    elif isinstance(env_spec, dict):
        extra = set(env_spec) - {"K", "reward_means", "reward_law"}
        if extra:
            problems.append(f"environment: unknown fields {sorted(extra)}")
        try:
            cfg.env = BanditEnv(env_spec.get("K", len(env_spec.get("reward_means", []))),
                                env_spec.get("reward_means", []),
                                env_spec.get("reward_law", "bernoulli"))
        except (SteinboundError, TypeError) as exc:
            problems.append(f"environment: {exc}")
    else:
        problems.append("environment: must be a suite name or a mapping")

    for name in ("behavior", "target"):
        if name in doc:
            setattr(cfg, name, _vector(problems, name, doc[name], dist=True))
        elif setting is not None:
            setattr(cfg, name, getattr(setting, name))
    if cfg.behavior is None and not any(p.startswith("behavior") for p in problems):
        problems.append("behavior: required for a custom environment")

    if "policy_class" in doc:
        try:
            cfg.policy_class = FinitePolicyClass(np.asarray(doc["policy_class"], dtype=float))
        except (SteinboundError, TypeError, ValueError) as exc:
            problems.append(f"policy_class: {exc}")
    elif cmd == "learn" or (cmd == "coverage" and cfg.coverage.get("bound") == "opl_lower_bound"):
        if cfg.env is not None:
            cfg.policy_class = default_policy_class(cfg.env.K)
    for name in ("prior", "posterior"):
        if name in doc:
            setattr(cfg, name, _vector(problems, name, doc[name], dist=True))

    b = cfg.bound
    b.setdefault("x", 3.0)
    b.setdefault("proxy_mode", "global")
    b.setdefault("inner_reps", 256)
    if b["proxy_mode"] not in PROXY_MODES:
        problems.append(f"bound.proxy_mode: must be one of {PROXY_MODES}")
    try:
        x = float(b["x"])
        if not x > 0:
            problems.append("bound.x: must be > 0")
    except (TypeError, ValueError):
        problems.append("bound.x: must be a number")
        x = math.nan
    needs_y = cmd in ("eval", "learn", "gen-bound") or (
        cmd == "coverage" and cfg.coverage.get("bound") in _Y_BOUNDS)
    if needs_y and not x >= 2:
        problems.append(f"bound.x: x ≥ 2 is required for {cmd} (got {b['x']!r})")
    if b.get("y") is not None and not float(b["y"]) > 0:
        problems.append("bound.y: must be > 0")
    if "y_grid" in b:
        grid = b["y_grid"]
        if not isinstance(grid, list) or not grid or any(not float(v) > 0 for v in grid):
            problems.append("bound.y_grid: must be a nonempty list of positive numbers")
    if int(b["inner_reps"]) < 1:
        problems.append("bound.inner_reps: must be >= 1")

    d = cfg.data
    if "actions" in d or "rewards" in d:
        try:
            data = LoggedData(d.get("actions", []), d.get("rewards", []))
            if cfg.env is not None:
                data.check_actions(cfg.env.K)
            if data.n == 0:
                problems.append("data: logged data must be nonempty")
        except SteinboundError as exc:
            problems.append(f"data: {exc}")
    elif int(d.get("n", 100)) < 1:
        problems.append("data.n: must be a positive integer")

    if cmd == "eval" and cfg.policy_class is not None and cfg.posterior is None:
        problems.append("posterior: required to evaluate a policy class")
    if cmd == "coverage":
        c = cfg.coverage
        if c.get("bound") not in BOUND_NAMES:
            problems.append(f"coverage.bound: must be one of {BOUND_NAMES}")
        if int(c.get("trials", 100)) < 1:
            problems.append("coverage.trials: must be >= 1")
    if cmd == "learn":
        try:
            LearnConfig(x=b["x"], y=b.get("y"), proxy_mode=b["proxy_mode"], **cfg.learn)
        except (SteinboundError, TypeError) as exc:
            problems.append(f"learn: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg


# -- commands --------------------------------------------------------------

def _logged_data(cfg: ExperimentConfig) -> LoggedData:
    if "actions" in cfg.data:
        return LoggedData(cfg.data["actions"], cfg.data["rewards"])
    return generate_logs(cfg.env, cfg.behavior, cfg.n, np.random.SeedSequence([cfg.seed, 0]))


def _prior(cfg: ExperimentConfig) -> CategoricalDistribution:
    if cfg.prior is not None:
        return CategoricalDistribution(cfg.prior)
    return CategoricalDistribution.uniform(cfg.policy_class.m)


def _cmd_eval(cfg: ExperimentConfig) -> Dict[str, Any]:
    data = _logged_data(cfg)
    b = cfg.bound
    if cfg.policy_class is not None:
        rep = opl_lower_bound(data, cfg.policy_class, cfg.posterior, _prior(cfg), cfg.behavior,
                              b["x"], b.get("y"), b["proxy_mode"], cfg.seed, b["inner_reps"])
        truth = float(CategoricalDistribution(cfg.posterior).weights
                      @ [true_value(cfg.env, p) for p in cfg.policy_class.policies])
    elif "y_grid" in b:
        base = opev_lower_bound(data, cfg.target, cfg.behavior, b["x"], 1.0, b["proxy_mode"],
                                b["inner_reps"], cfg.seed)
        # the WIS radius is the fixed-function radius at twice the proxy
        y_star, _, share = select_y(2.0 * base.proxy, b["x"], b["y_grid"])
        rep = opev_lower_bound(data, cfg.target, cfg.behavior, b["x"], y_star, b["proxy_mode"],
                               b["inner_reps"], cfg.seed)
        rep.budget["wis_concentration"] = share
        rep.params["y_grid"] = list(b["y_grid"])
        truth = true_value(cfg.env, cfg.target)
    else:
        rep = opev_lower_bound(data, cfg.target, cfg.behavior, b["x"], b.get("y"), b["proxy_mode"],
                               b["inner_reps"], cfg.seed)
        truth = true_value(cfg.env, cfg.target)
    return {"report": rep.to_dict(), "true_value": truth, "n": data.n}


def _cmd_learn(cfg: ExperimentConfig) -> Dict[str, Any]:
    data = _logged_data(cfg)
    b = cfg.bound
    lc = LearnConfig(x=b["x"], y=b.get("y"), proxy_mode=b["proxy_mode"], seed=cfg.seed,
                     inner_reps=b["inner_reps"], **cfg.learn)
    prior = _prior(cfg)
    state = optimize_posterior(data, cfg.policy_class, prior, cfg.behavior, lc)
    rep = learning_report(data, cfg.policy_class, prior, cfg.behavior, lc, state)
    values = [true_value(cfg.env, p) for p in cfg.policy_class.policies]
    return {
        "posterior": state.posterior.tolist(),
        "final_objective": state.objective,
        "objective_trace": list(state.objective_trace),
        "report": rep.to_dict(),
        "posterior_true_value": float(state.posterior.weights @ values),
        "policy_class": cfg.policy_class.policies.tolist(),
        "prior": prior.tolist(),
        "n": data.n,
    }


def _cmd_coverage(cfg: ExperimentConfig):
    c = cfg.coverage
    b = cfg.bound
    params = {"x": b["x"], "proxy_mode": b["proxy_mode"], "inner_reps": b["inner_reps"]}
    if "y_grid" in b:
        params["y_grid"] = list(b["y_grid"])
    elif b.get("y") is not None:
        params["y"] = b["y"]
    params.update(c.get("params", {}))
    if c["bound"] == "opl_lower_bound" and cfg.learn:
        params["learn"] = dict(cfg.learn)
    res = coverage(BoundSpec(c["bound"], params), cfg.env, cfg.behavior, cfg.target,
                   n=int(c.get("n", cfg.data.get("n", 100))), trials=int(c.get("trials", 100)),
                   seed=cfg.seed, policy_class=cfg.policy_class)
    return res.summary(), res.records


def _cmd_verify_canonical(cfg: ExperimentConfig) -> Dict[str, Any]:
    c = cfg.canonical
    n = int(c.get("n", 50))
    lambdas = c.get("lambdas", [-4, -2, -1, 1, 2, 4])
    pairs = canonical_pairs(cfg.env, cfg.behavior, n, int(c.get("samples", 100_000)),
                            np.random.SeedSequence([cfg.seed, 1]))
    per_lambda = []
    for lam in lambdas:
        est, se, _ = canonical_mgf_check(pairs, [lam])
        per_lambda.append({"lambda": float(lam), "estimate": est, "std_error": se,
                           "passes": est <= 1.0 + 3.0 * se})
    est, se, lam = canonical_mgf_check(pairs, lambdas)
    y = float(c.get("y", 1.0 / n))
    triples = pac_bayes_mgf_triples(cfg.env, cfg.behavior, n, int(c.get("trials", 10_000)),
                                    np.random.SeedSequence([cfg.seed, 2]),
                                    c.get("posterior", "prior"), float(c.get("temperature", 0.05)))
    pb_est, pb_se = pb_mgf_check(triples, y)
    return {
        "canonical_pair": {"n": n, "samples": len(pairs), "per_lambda": per_lambda,
                           "max_estimate": est, "max_std_error": se, "argmax_lambda": lam,
                           "passes": est <= 1.0 + 3.0 * se},
        "pac_bayes_mixture": {"y": y, "trials": len(triples), "estimate": pb_est,
                              "std_error": pb_se, "passes": pb_est <= 1.0 + 3.0 * pb_se,
                              "posterior": c.get("posterior", "prior")},
    }


def _cmd_gen_bound(cfg: ExperimentConfig) -> Dict[str, Any]:
    g = cfg.gen
    b = cfg.bound
    data = _logged_data(cfg)
    scale = float(g.get("loss_scale", 1.0))
    K = cfg.env.K
    flag = "unit_interval" if scale <= 1 else "unbounded"
    table = LossTable(loss_table(data, K, scale), flag)
    first, second = _loss_setup(cfg.env, cfg.behavior, scale)
    prior = CategoricalDistribution(cfg.prior) if cfg.prior is not None else CategoricalDistribution.uniform(K)
    if g.get("posterior", "prior") == "softmax":
        posterior = _softmax_posterior(-table.empirical_loss(), float(g.get("temperature", 0.05)))
    elif cfg.posterior is not None:
        posterior = CategoricalDistribution(cfg.posterior)
    else:
        posterior = prior
    gap = float(posterior.weights @ (table.empirical_loss() - first))
    out = {
        "generalization_gap": gap,
        "posterior": posterior.tolist(),
        "gen_bound": gen_bound(table, second, posterior, prior, b["x"], cfg.y).to_dict(),
        "n": data.n,
    }
    if flag == "unit_interval":
        out["empirical_bernstein"] = empirical_bernstein_bound(table, posterior, prior, b["x"]).to_dict()
    return out


# -- serialization ---------------------------------------------------------

def _fmt_float(v: float) -> str:
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    return format(v, ".17g")


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits and sorted keys."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(obj[k], indent, _level + 1)}"
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def records_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([r.trial_index, _fmt_float(r.bound_value).strip('"'),
                         _fmt_float(r.target_quantity).strip('"'), int(r.violated), r.error_flag])
    return buf.getvalue()


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def run(cfg: ExperimentConfig) -> int:
    """Execute ``cfg``; returns the process exit code."""
    start = time.perf_counter()
    out = Path(cfg.out)
    records = None
    try:
        if cfg.command == "coverage":
            body, records = _cmd_coverage(cfg)
        else:
            body = {"eval": _cmd_eval, "learn": _cmd_learn, "verify-canonical": _cmd_verify_canonical,
                    "gen-bound": _cmd_gen_bound}[cfg.command](cfg)
    except SteinboundError as exc:
        logger.error("computation failed: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    result = {"command": cfg.command, "version": __version__, "seed": cfg.seed,
              "parameters": cfg.parameters(), "result": body}
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_atomic(out, dumps(result) + "\n")
    files = [str(out)]
    if records is not None:
        csv_path = out.with_suffix(".csv")
        _write_atomic(csv_path, records_csv(records))
        files.append(str(csv_path))
    manifest = {"command": cfg.command, "seed": cfg.seed, "version": __version__,
                "parameters": cfg.parameters(), "outputs": files,
                "wall_time_seconds": time.perf_counter() - start,
                "numpy_version": np.__version__}
    _write_atomic(out.with_name(out.name + ".manifest.json"), dumps(manifest) + "\n")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="steinbound", description=__doc__.splitlines()[0])
    parser.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON or YAML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="result JSON path")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command not in COMMANDS:
        print(f"error: unknown command {args.command!r}; valid commands are {', '.join(COMMANDS)}",
              file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, command=args.command)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
