"""Experiment configs, runners and on-disk artifacts.

A config is a YAML mapping of parameters for one experiment kind. Every run
writes ``manifest.json`` (resolved config, seed, version, wall time) and
one or more CSV tables. Floats are written with 17 significant digits so
re-running from a manifest reproduces the CSV files byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import yaml

from . import __version__
from .composition import approx_adaptive_compose, non_adaptive_compose, pure_adaptive_compose
from .concentration import AS_STATED, STANDARD_BERNSTEIN, ConcentrationFunction, alpha_for, gamma_of
from .core import DataDistribution, StabilityParams, derive_seed, entropy_seed
from .errors import ConfigurationError, TypstabError
from .harness import NOISELESS, RandomNonadaptive, SignOverfitter, adaptive_settings, evaluate_against_bounds, run_sessions
from .mechanisms import (
    GAUSSIAN,
    LAPLACE,
    CalibratedNoiseMechanism,
    discrete_reference_mechanism,
    gaussian_error_bound,
    gaussian_tail,
    laplace_error_bound,
    laplace_tail,
)
from .verifier import check_indistinguishable, hockey_stick, near_independence_check, post_process

KINDS = ("calibrate", "mechanism_tail", "compose", "verify_discrete", "adaptive_session")
COMMON_KEYS = ("seed", "threads")


def fmt(value) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


# ---------------------------------------------------------------------------
# Schema


@dataclass(frozen=True)
class Field:
    default: Any
    kind: type
    check: Optional[Callable[[Any], bool]] = None
    rule: str = ""
    choices: tuple = ()


def _positive(v):
    return v > 0


def _unit_open(v):
    return 0 < v < 1


SCHEMAS: dict[str, dict[str, Field]] = {
    "calibrate": {
        "form": Field("subgaussian", str, choices=("subgaussian", "subexponential", "mcdiarmid")),
        "sigma": Field(0.5, float, _positive, "sigma > 0"),
        "b": Field(1.0, float, _positive, "b > 0"),
        "delta": Field(1.0, float, _positive, "delta > 0"),
        "n": Field(100, int, _positive, "n >= 1"),
        "variant": Field(AS_STATED, str, choices=(AS_STATED, STANDARD_BERNSTEIN)),
        "nu": Field(math.exp(-8), float, _unit_open, "0 < nu < 1"),
        "eta": Field(0.5, float, _positive, "eta > 0"),
        "tau": Field(1e-6, float, _unit_open, "0 < tau < 1"),
    },
    "mechanism_tail": {
        "noise": Field(LAPLACE, str, choices=(LAPLACE, GAUSSIAN)),
        "alpha": Field(1.0, float, _positive, "alpha > 0"),
        "eta": Field(0.5, float, _positive, "eta > 0"),
        "tau": Field(1e-3, float, _unit_open, "0 < tau < 1"),
        "betas": Field([0.05], list, lambda v: len(v) > 0 and all(0 < b < 1 for b in v), "every beta in (0, 1)"),
        "trials": Field(100_000, int, lambda v: v >= 10_000, "trials >= 10^4"),
    },
    "compose": {
        "mode": Field("pure", str, choices=("pure", "approx", "non_adaptive")),
        "eta": Field(0.1, float, _positive, "eta > 0"),
        "tau": Field(0.0, float, lambda v: 0 <= v < 1, "0 <= tau < 1"),
        "nu": Field(1e-6, float, lambda v: 0 <= v < 1, "0 <= nu < 1"),
        "k": Field(4, int, _positive, "k >= 1"),
        "tau_prime": Field(0.01, float, _unit_open, "0 < tau' < 1"),
    },
    "verify_discrete": {
        "bias": Field(0.25, float, lambda v: 0 < v < 0.5, "0 < bias < 0.5"),
        "eta": Field(None, float, lambda v: 0 < v < 1, "0 < eta < 1 (near independence)"),
        "tau": Field(0.0, float, lambda v: 0 <= v < 1, "0 <= tau < 1"),
        "nu": Field(0.0, float, lambda v: 0 <= v < 0.1, "0 <= nu < 1/10 (near independence)"),
        "remappings": Field(100, int, lambda v: v >= 1, "remappings >= 1"),
        "outputs": Field(4, int, lambda v: 1 <= v <= 16, "1 <= outputs <= 16"),
    },
    "adaptive_session": {
        "p": Field(0.5, float, _unit_open, "0 < p < 1"),
        "n": Field(100, int, lambda v: v >= 2, "n >= 2"),
        "k": Field(40, int, _positive, "k >= 1"),
        "analyst": Field("sign_overfitter", str, choices=("sign_overfitter", "random_nonadaptive")),
        "mechanism": Field(LAPLACE, str, choices=(LAPLACE, GAUSSIAN, NOISELESS)),
        "sigma": Field(0.1, float, _positive, "sigma > 0"),
        "beta": Field(0.05, float, _unit_open, "0 < beta < 1"),
        "accuracy": Field(0.1, float, _positive, "accuracy > 0"),
        "eta": Field(None, float, _positive, "eta > 0"),
        "nu": Field(None, float, _unit_open, "0 < nu < 1"),
        "tau": Field(1e-3, float, _unit_open, "0 < tau < 1"),
        "sessions": Field(1000, int, _positive, "sessions >= 1"),
    },
}

# column order is part of the output contract
COLUMNS = {
    "calibrate": ("form", "nu", "alpha", "gamma_at_alpha", "laplace_scale", "gaussian_sigma"),
    "mechanism_tail": ("noise", "alpha", "eta", "tau", "beta", "threshold", "analytic_tail", "exceed_frequency", "binomial_sd"),
    "compose": ("mode", "step", "eta", "tau", "nu"),
    "verify_discrete": ("check", "value", "bound", "passed"),
    "adaptive_session": (
        "session",
        "worst_generalization_error",
        "final_generalization_error",
        "worst_true_error",
        "violations",
    ),
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: dict
    seed: Optional[int] = None
    threads: int = 1

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "threads": self.threads, "params": dict(self.params)}


def _coerce(name: str, field: Field, value):
    if value is None:
        return None
    try:
        if field.kind is float:
            if isinstance(value, bool):
                raise TypeError
            value = float(value)
        elif field.kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            value = int(value)
        elif field.kind is list:
            value = [float(v) for v in (value if isinstance(value, list) else [value])]
        else:
            value = str(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name}: expected {field.kind.__name__}, got {value!r}") from None
    if field.choices and value not in field.choices:
        raise ConfigurationError(f"{name}: must be one of {', '.join(field.choices)}, got {value!r}")
    if field.check is not None and not field.check(value):
        raise ConfigurationError(f"{name}={value!r} out of range: requires {field.rule}")
    return value


def _cross_checks(kind: str, p: dict) -> None:
    if kind == "compose" and p["mode"] == "approx":
        if not 0 < p["eta"] <= 1.5:
            raise ConfigurationError(f"approximate composition requires 0 < eta <= 3/2, got eta={p['eta']}")
        if not 0 < p["tau"] <= p["eta"] / 50:
            raise ConfigurationError(f"approximate composition requires 0 < tau <= eta/50, got tau={p['tau']}")
        if not p["nu"] > 0:
            raise ConfigurationError("approximate composition requires 0 < nu < 1")
    if kind == "compose" and p["mode"] == "non_adaptive" and p["k"] * p["nu"] >= 1:
        raise ConfigurationError(f"non-adaptive composition requires k*nu < 1, got {p['k'] * p['nu']}")


def build_config(kind: str, raw: Optional[dict] = None, seed: Optional[int] = None, threads: Optional[int] = None) -> ExperimentConfig:
    """Validate a raw parameter mapping; unknown keys are rejected all at once."""
    if kind not in SCHEMAS:
        raise ConfigurationError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    raw = dict(raw or {})
    schema = SCHEMAS[kind]
    unknown = sorted(set(raw) - set(schema) - set(COMMON_KEYS) - {"kind"})
    if unknown:
        raise ConfigurationError(f"unknown config keys for {kind}: {', '.join(unknown)}")
    if raw.get("kind", kind) != kind:
        raise ConfigurationError(f"config is for {raw['kind']!r}, not {kind!r}")
    params = {name: _coerce(name, f, raw.get(name, f.default)) for name, f in schema.items()}
    _cross_checks(kind, params)
    if seed is None:
        seed = raw.get("seed")
    if seed is not None:
        seed = _check_seed(seed)
    if threads is None:
        threads = raw.get("threads", 1)
    if not (isinstance(threads, int) and not isinstance(threads, bool) and threads >= 1):
        raise ConfigurationError(f"threads must be a positive integer, got {threads!r}")
    return ExperimentConfig(kind, params, seed, threads)


def _check_seed(seed) -> int:
    try:
        value = int(seed)
    except (TypeError, ValueError):
        raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {seed!r}") from None
    if isinstance(seed, bool) or not 0 <= value < 2 ** 64 or (isinstance(seed, float) and not seed.is_integer()):
        raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return value


def load_yaml(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must be a mapping")
    return data


def parse_config(path, kind: Optional[str] = None, seed: Optional[int] = None, threads: Optional[int] = None) -> ExperimentConfig:
    raw = load_yaml(path)
    kind = kind or raw.get("kind")
    if kind is None:
        raise ConfigurationError("config does not name an experiment kind")
    return build_config(kind, raw, seed, threads)


def config_from_manifest(path) -> ExperimentConfig:
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
        cfg = manifest["config"]
        raw = dict(cfg["params"], seed=manifest["seed"], threads=cfg.get("threads", 1))
        kind = cfg["kind"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigurationError(f"cannot read manifest {path}: {exc}") from None
    return build_config(kind, raw)


# ---------------------------------------------------------------------------
# Runners; each returns {filename: rows} and a list of summary lines


def _run_calibrate(p: dict, seed: int, threads: int):
    if p["form"] == "subgaussian":
        f = ConcentrationFunction.subgaussian(p["sigma"])
    elif p["form"] == "subexponential":
        f = ConcentrationFunction.subexponential(p["sigma"], p["b"], p["variant"])
    else:
        f = ConcentrationFunction.mcdiarmid(p["delta"], p["n"])
    alpha = alpha_for(f, p["nu"])
    lap = CalibratedNoiseMechanism(LAPLACE, alpha, p["eta"]).scale
    gau = CalibratedNoiseMechanism(GAUSSIAN, alpha, p["eta"], p["tau"]).scale
    row = (p["form"], p["nu"], alpha, gamma_of(f, alpha), lap, gau)
    return {"calibrate.csv": [row]}, [f"alpha={fmt(alpha)}"]


def _run_mechanism_tail(p: dict, seed: int, threads: int):
    mech = CalibratedNoiseMechanism(p["noise"], p["alpha"], p["eta"], p["tau"] if p["noise"] == GAUSSIAN else 0.0)
    noise = np.abs(mech.noise(p["trials"], derive_seed(seed, 0)))
    rows, lines = [], []
    for beta in p["betas"]:
        if p["noise"] == LAPLACE:
            t = laplace_error_bound(p["alpha"], p["eta"], beta)
            exact = laplace_tail(t, mech.scale)
        else:
            t = gaussian_error_bound(p["alpha"], p["eta"], p["tau"], beta)
            exact = gaussian_tail(t, mech.scale)
        freq = float(np.count_nonzero(noise >= t)) / p["trials"]
        sd = math.sqrt(exact * (1 - exact) / p["trials"])
        rows.append((p["noise"], p["alpha"], p["eta"], p["tau"], beta, t, exact, freq, sd))
        lines.append(f"beta={fmt(beta)} exceed={fmt(freq)} analytic={fmt(exact)}")
    return {"mechanism_tail.csv": rows}, lines


def _run_compose(p: dict, seed: int, threads: int):
    mode = p["mode"]
    if mode == "non_adaptive":
        out = non_adaptive_compose(StabilityParams(p["eta"], p["tau"], p["nu"]), p["k"])
        rows = [(mode, "final", out.eta, out.tau, out.nu)]
        return {"compose.csv": rows}, [f"eta*={fmt(out.eta)} tau*={fmt(out.tau)} nu*={fmt(out.nu)}"]
    tables = {}
    if mode == "pure":
        sched = pure_adaptive_compose(p["eta"], p["nu"], p["k"], p["tau_prime"])
    else:
        sched, consts = approx_adaptive_compose(p["eta"], p["tau"], p["nu"], p["k"], p["tau_prime"])
        tables["constants.csv"] = [("tau_hat", consts.tau_hat), ("psi_tau", consts.psi_tau)]
    rows = [(mode, j, s.eta, s.tau, s.nu) for j, s in enumerate(sched.per_step, start=1)]
    rows.append((mode, "final", sched.final.eta, sched.final.tau, sched.final.nu))
    tables["compose.csv"] = rows
    lines = [f"eta*={fmt(sched.final.eta)} tau*={fmt(sched.final.tau)} nu*={fmt(sched.final.nu)}"]
    if sched.vacuous:
        lines.append("warning: tau* or nu* >= 1, the guarantee is vacuous")
    return tables, lines


def _run_verify(p: dict, seed: int, threads: int):
    eta = p["eta"] if p["eta"] is not None else math.log1p(2 * p["bias"])
    inst = discrete_reference_mechanism(p["bias"], eta)
    rows = []
    oracle = inst.oracle_row
    worst = max(max(hockey_stick(r, oracle, eta), hockey_stick(oracle, r, eta)) for r in inst.conditional_table)
    passed = all(check_indistinguishable(r, oracle, eta, p["tau"]) for r in inst.conditional_table)
    rows.append(("indistinguishable", worst, p["tau"], passed))
    rep = near_independence_check(inst, eta, p["tau"], p["nu"])
    rows.append(("near_independence", rep.slack, rep.bound, rep.passed))
    rng = np.random.default_rng(derive_seed(seed, 0))
    worst_increase = -math.inf
    for _ in range(p["remappings"]):
        channel = rng.dirichlet(np.ones(p["outputs"]), size=inst.n_outputs)
        for row in inst.conditional_table:
            for level in (0.0, eta):
                before = hockey_stick(row, oracle, level)
                after = hockey_stick(post_process(row, channel), post_process(oracle, channel), level)
                worst_increase = max(worst_increase, after - before)
    rows.append(("post_processing", worst_increase, 1e-12, worst_increase <= 1e-12))
    lines = [f"{'PASS' if r[3] else 'FAIL'} {r[0]}: value={fmt(r[1])} bound={fmt(r[2])}" for r in rows]
    return {"verify.csv": rows}, lines


def _run_adaptive(p: dict, seed: int, threads: int):
    dist = DataDistribution.iid_bernoulli(p["p"], p["n"])
    f = ConcentrationFunction.subgaussian(p["sigma"])
    eta, nu = adaptive_settings(p["k"], p["beta"], p["accuracy"], f)
    eta = p["eta"] if p["eta"] is not None else eta
    nu = p["nu"] if p["nu"] is not None else nu
    tau = p["tau"] if p["mechanism"] == GAUSSIAN else 0.0
    sd = dist.element_subgaussian_scale()
    budget = p["sigma"]
    cls = SignOverfitter if p["analyst"] == "sign_overfitter" else RandomNonadaptive
    analyst = cls(p["p"], sd, budget)
    results = run_sessions(dist, analyst, p["k"], eta if p["mechanism"] != NOISELESS else math.inf, nu, f,
                           p["mechanism"], p["sessions"], derive_seed(seed, 0), tau, threads)
    rows = [
        (s, r.worst_generalization_error, r.records[-1].generalization_error, r.worst_true_error, r.violations())
        for s, r in enumerate(results)
    ]
    rep = evaluate_against_bounds(results, results[0].alpha, p["beta"], StabilityParams(eta, tau, nu), f)
    summary = [
        ("eta", eta), ("nu", nu), ("tau", tau), ("alpha", rep.alpha),
        ("violation_rate", rep.violation_rate), ("generalization_bound", rep.generalization_bound),
        ("generalization_passed", rep.generalization_passed),
        ("worst_true_exceed_rate", rep.worst_true_exceed_rate), ("adaptive_shape", rep.adaptive_shape),
        ("mean_worst_generalization_error", float(np.mean([r[1] for r in rows]))),
    ]
    lines = [f"{name}={fmt(v)}" for name, v in summary]
    return {"sessions.csv": rows, "summary.csv": summary}, lines


RUNNERS = {
    "calibrate": _run_calibrate,
    "mechanism_tail": _run_mechanism_tail,
    "compose": _run_compose,
    "verify_discrete": _run_verify,
    "adaptive_session": _run_adaptive,
}
SECONDARY_COLUMNS = {"constants.csv": ("name", "value"), "summary.csv": ("name", "value")}


def render_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


@dataclass(frozen=True)
class RunResult:
    config: ExperimentConfig
    seed: int
    seed_source: str
    files: dict
    lines: list
    manifest_path: Path


def run_experiment(
    config: ExperimentConfig, out_dir, env_seed: Optional[str] = None, seed_source: str = "config"
) -> RunResult:
    """Run one experiment and write its CSV tables and manifest into ``out_dir``.

    Seed precedence: the config's seed (already overridden by any CLI
    flag), then ``env_seed``, then fresh entropy.
    """
    seed, source = config.seed, seed_source
    if seed is None and env_seed is not None:
        seed, source = _check_seed(env_seed), "env"
    if seed is None:
        seed, source = entropy_seed(), "entropy"
    start = time.perf_counter()
    try:
        tables, lines = RUNNERS[config.kind](config.params, seed, config.threads)
    except TypstabError as exc:
        raise type(exc)(f"{config.kind}: {exc}") from exc
    wall = time.perf_counter() - start
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, rows in tables.items():
        columns = SECONDARY_COLUMNS.get(name, COLUMNS[config.kind])
        text = render_csv(columns, rows)
        (out / name).write_text(text, encoding="utf-8")
        files[name] = text
    resolved = ExperimentConfig(config.kind, config.params, seed, config.threads)
    manifest = {
        "config": resolved.to_dict(),
        "seed": seed,
        "seed_source": source,
        "version": __version__,
        "wall_time_s": wall,
        "artifacts": sorted(files),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return RunResult(resolved, seed, source, files, lines, path)


def env_seed() -> Optional[str]:
    return os.environ.get("TYPSTAB_SEED")
