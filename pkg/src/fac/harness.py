"""Config-driven experiment runner: single runs, ablation suites, reports and
the tabular verification suites.

Config files are TOML with four tables::

    [env]
    name = "point-reach"

    [priors]
    policy = "oracle"            # or "none"
    value = "oracle"
    success = "oracle"
    policy_corruptions = [{kind = "discretize"}, {kind = "uniform", prob = 0.2}]
    value_corruptions = [{kind = "noise", noise_std = 0.1, quant_levels = 0}]
    success_corruptions = [{kind = "flip", fp_rate = 0.017, fn_rate = 0.099}]

    [fac]                        # any FacConfig field
    alpha = 1.0

    [run]
    name = "demo"
    seeds = [0, 1, 2]
    total_frames = 30000
    eval_interval = 1000
    eval_episodes = 10
    output_dir = "runs/demo"     # default: $FAC_OUTPUT_DIR/<name>, else runs/<name>

Unknown tables and keys are rejected.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import nn
from .core import derive_seed, make_rng
from .envs import REGISTRY, make_env
from .learner import RECORD_FIELDS, FacConfig, RunResult, train
from .mdp_oracle import random_mdp, verify_shaping_theorem
from .priors import POLICY_CORRUPTIONS, SUCCESS_CORRUPTIONS, VALUE_CORRUPTIONS, build_bundle
from .theory import random_triple, verify_bounds, verify_mixing_identity

log = logging.getLogger(__name__)

DEFAULT_BUDGETS = {"point-reach": 30_000, "detour-reach": 60_000, "point-pick-place": 120_000,
                   "grid-8x8": 30_000}
CSV_COLUMNS = ("config_hash", "seed") + RECORD_FIELDS
SUITES = ("priors", "policy-noise", "success-noise")

_PRIOR_BASES = {"policy", "value", "success"}
_CORRUPTION_PARAMS = {
    "discretize": {"dead_zone"},
    "uniform": {"prob"},
    "invert": {"prob"},
    "noise": {"noise_std", "quant_levels"},
    "flip": {"fp_rate", "fn_rate"},
}
_CORRUPTION_LISTS = {"policy_corruptions": POLICY_CORRUPTIONS, "value_corruptions": VALUE_CORRUPTIONS,
                     "success_corruptions": SUCCESS_CORRUPTIONS}
_RUN_KEYS = {"name", "seeds", "total_frames", "eval_interval", "eval_episodes", "output_dir"}
_FAC_FIELDS = {f.name for f in dataclasses.fields(FacConfig)}


class ConfigError(ValueError):
    pass


class RunFailed(RuntimeError):
    """Raised after all seeds finished when some of them failed."""

    def __init__(self, failures: dict, results: list):
        self.failures = failures
        self.results = results
        msg = "; ".join(f"seed {s}: {e}" for s, e in failures.items())
        super().__init__(f"{len(failures)} seed(s) failed: {msg}")


@dataclass
class RunConfig:
    env: str
    seeds: list[int]
    priors: dict = field(default_factory=dict)
    fac: dict = field(default_factory=dict)
    total_frames: int | None = None
    eval_interval: int = 1000
    eval_episodes: int = 10
    name: str = ""
    output_dir: str | None = None

    def __post_init__(self):
        if not self.name:
            self.name = self.env
        if self.total_frames is None:
            self.total_frames = DEFAULT_BUDGETS.get(self.env, 30_000)
        self.validate()

    def validate(self) -> None:
        if self.env not in REGISTRY:
            raise ConfigError(f"unknown env {self.env!r}; registered: {', '.join(sorted(REGISTRY))}")
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list")
        if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ConfigError("eval_interval and eval_episodes must be positive")
        if self.total_frames < self.eval_interval:
            raise ConfigError("total_frames must be at least eval_interval")
        _check_priors(self.priors)
        unknown = set(self.fac) - _FAC_FIELDS
        if unknown:
            raise ConfigError(f"unknown key(s) in [fac]: {', '.join(sorted(unknown))}")
        try:
            self.fac_config()
        except TypeError as e:
            raise ConfigError(f"[fac]: {e}") from None
        except ValueError as e:
            raise ConfigError(f"[fac]: {e}") from None

    def fac_config(self) -> FacConfig:
        return FacConfig(**self.fac)

    @property
    def out_path(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get("FAC_OUTPUT_DIR", "runs")) / self.name

    def to_dict(self) -> dict:
        run = {"name": self.name, "seeds": list(self.seeds), "total_frames": self.total_frames,
               "eval_interval": self.eval_interval, "eval_episodes": self.eval_episodes}
        if self.output_dir:
            run["output_dir"] = str(self.output_dir)
        return {"env": {"name": self.env}, "priors": _plain(self.priors), "fac": dict(self.fac), "run": run}

    def config_hash(self) -> str:
        """Identity of everything that shapes a learning curve: seeds, names and paths excluded."""
        d = self.to_dict()
        payload = {"env": d["env"], "priors": d["priors"], "fac": dataclasses.asdict(self.fac_config()),
                   "total_frames": self.total_frames, "eval_interval": self.eval_interval,
                   "eval_episodes": self.eval_episodes}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _check_priors(priors: dict) -> None:
    allowed = _PRIOR_BASES | set(_CORRUPTION_LISTS)
    unknown = set(priors) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [priors]: {', '.join(sorted(unknown))}")
    for base in _PRIOR_BASES & set(priors):
        if priors[base] not in ("oracle", "none"):
            raise ConfigError(f"[priors] {base} must be 'oracle' or 'none', got {priors[base]!r}")
    for key, kinds in _CORRUPTION_LISTS.items():
        for c in priors.get(key, []):
            if not isinstance(c, dict) or "kind" not in c:
                raise ConfigError(f"[priors] {key} entries need a 'kind'")
            if c["kind"] not in kinds:
                raise ConfigError(f"[priors] {key}: unknown kind {c['kind']!r}")
            extra = set(c) - {"kind"} - _CORRUPTION_PARAMS[c["kind"]]
            if extra:
                raise ConfigError(f"[priors] {key}: unknown key(s) {', '.join(sorted(extra))} "
                                  f"for kind {c['kind']!r}")


def _line_of(text: str, key: str) -> str:
    for i, line in enumerate(text.splitlines(), 1):
        if re.match(rf"\s*{re.escape(key)}\s*=", line) or line.strip() == f"[{key}]":
            return f" (line {i})"
    return ""


def config_from_dict(d: dict, text: str = "") -> RunConfig:
    unknown = set(d) - {"env", "priors", "fac", "run"}
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown table(s): {', '.join(sorted(unknown))}{_line_of(text, key)}")
    env = d.get("env", {})
    extra = set(env) - {"name"}
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"unknown key(s) in [env]: {', '.join(sorted(extra))}{_line_of(text, key)}")
    if "name" not in env:
        raise ConfigError("[env] name is required")
    run = d.get("run", {})
    extra = set(run) - _RUN_KEYS
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"unknown key(s) in [run]: {', '.join(sorted(extra))}{_line_of(text, key)}")
    if "seeds" not in run:
        raise ConfigError("[run] seeds is required")
    fac = d.get("fac", {})
    extra = set(fac) - _FAC_FIELDS
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"unknown key(s) in [fac]: {', '.join(sorted(extra))}{_line_of(text, key)}")
    try:
        return RunConfig(env=env["name"], seeds=list(run["seeds"]), priors=dict(d.get("priors", {})),
                         fac=dict(fac), total_frames=run.get("total_frames"),
                         eval_interval=run.get("eval_interval", 1000),
                         eval_episodes=run.get("eval_episodes", 10), name=run.get("name", ""),
                         output_dir=run.get("output_dir"))
    except ConfigError as e:
        m = re.search(r"in \[\w+\]: (\w+)", str(e))
        raise ConfigError(f"{e}{_line_of(text, m.group(1)) if m else ''}") from None


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        d = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    try:
        return config_from_dict(d, text)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


def dumps_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg))


# running

def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


class MetricsWriter:
    """Append-only CSV; every row is flushed to disk before the next evaluation."""

    def __init__(self, path: Path, config_hash: str, seed: int):
        self.path = path
        self.prefix = [config_hash, str(seed)]
        with open(path, "w", newline="") as f:
            csv.writer(f).writerow(CSV_COLUMNS)

    def __call__(self, rec: dict) -> None:
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow(self.prefix + [_fmt(rec[k]) for k in RECORD_FIELDS])
            f.flush()
            os.fsync(f.fileno())


def run_seed(cfg: RunConfig, seed: int) -> RunResult:
    out = cfg.out_path / str(seed)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    env = make_env(cfg.env, seed)
    bundle = build_bundle(env, cfg.priors, derive_seed(seed, "priors"))
    writer = MetricsWriter(out / "metrics.csv", h, seed)
    result = train(env, bundle, cfg.fac_config(), seed, cfg.total_frames, cfg.eval_interval,
                   cfg.eval_episodes, on_record=writer)
    result.config_hash = h
    nn.save_checkpoint(result.actor, out / "actor.bin")
    result.checkpoint = str(out / "actor.bin")
    return result


def _run_seed_detached(cfg_dict: dict, seed: int):
    result = run_seed(config_from_dict(cfg_dict), seed)
    result.learner = None
    return result


def run(cfg: RunConfig, parallel: bool = False, max_workers: int | None = None) -> list[RunResult]:
    """Train once per seed, writing ``<out>/<seed>/metrics.csv`` as evaluations happen,
    then ``summary.json`` and ``aggregate.csv`` in ``<out>``."""
    cfg.validate()
    out = cfg.out_path
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.toml")
    results, failures = {}, {}
    if parallel and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            futures = {s: pool.submit(_run_seed_detached, cfg.to_dict(), s) for s in cfg.seeds}
            for s, fut in futures.items():
                try:
                    results[s] = fut.result()
                except Exception as e:  # keep sibling seeds alive
                    failures[s] = f"{type(e).__name__}: {e}"
    else:
        for s in cfg.seeds:
            try:
                results[s] = run_seed(cfg, s)
            except Exception as e:
                log.exception("seed %d failed", s)
                failures[s] = f"{type(e).__name__}: {e}"
    ordered = [results[s] for s in cfg.seeds if s in results]
    _write_summary(cfg, ordered, failures)
    if failures:
        raise RunFailed(failures, ordered)
    return ordered


def _write_summary(cfg: RunConfig, results: list[RunResult], failures: dict) -> None:
    out = cfg.out_path
    h = cfg.config_hash()
    summary = {
        "name": cfg.name,
        "config_hash": h,
        "env": cfg.env,
        "seeds": {str(r.seed): {"final_success": r.final_success(), "frames": r.records[-1]["frame"]
                                if r.records else 0, "checkpoint": f"{r.seed}/actor.bin"}
                  for r in results},
        "failures": {str(s): e for s, e in failures.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    by_frame: dict[int, list[float]] = {}
    for r in results:
        for rec in r.records:
            by_frame.setdefault(rec["frame"], []).append(rec["success_rate"])
    with open(out / "aggregate.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["config_hash", "frame", "mean_success_rate", "n_seeds"])
        for frame in sorted(by_frame):
            vals = by_frame[frame]
            w.writerow([h, frame, _fmt(float(np.mean(vals))), len(vals)])


# ablations

def ablation_suite(name: str, base: RunConfig) -> list[RunConfig]:
    """Configs for one ablation family. Output dirs nest under ``base``'s output path."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    root = base.out_path / name

    def variant(label, priors=None, **fac):
        p = _plain(base.priors) if priors is None else priors
        return base.replace(name=f"{base.name}/{name}/{label}", priors=p, fac={**base.fac, **fac},
                            output_dir=str(root / label))

    if name == "priors":
        return [
            variant("full"),
            variant("no-policy", use_policy_prior=False),
            variant("no-value", use_value_prior=False),
            variant("no-reward", use_success_reward=False),
            variant("no-success-buffer", use_success_buffer=False),
        ]
    if name == "policy-noise":
        disc = {"kind": "discretize"}

        def pol(*cs):
            return {**_plain(base.priors), "policy_corruptions": [dict(c) for c in cs]}

        return [
            variant("clean"),
            variant("discretized", pol(disc)),
            variant("discretized-uniform-20", pol(disc, {"kind": "uniform", "prob": 0.2})),
            variant("discretized-uniform-50", pol(disc, {"kind": "uniform", "prob": 0.5})),
            variant("invert-20", pol(disc, {"kind": "invert", "prob": 0.2})),
            variant("invert-50", pol(disc, {"kind": "invert", "prob": 0.5})),
        ]
    flip = {**_plain(base.priors),
            "success_corruptions": [{"kind": "flip", "fp_rate": 0.017, "fn_rate": 0.099}]}
    return [variant("clean"), variant("fp-fn", flip), variant("no-reward", use_success_reward=False)]


# reports

@dataclass
class ReportRow:
    name: str
    config_hash: str
    n_seeds: int
    final_success: float
    frames_to_90: int | None
    auc: float
    frames: list[int] = field(default_factory=list, repr=False)
    curve: list[float] = field(default_factory=list, repr=False)


def auc_trapezoid(frames, rates) -> float:
    frames, rates = np.asarray(frames, float), np.asarray(rates, float)
    if len(frames) < 2:
        return 0.0
    return float(np.sum(np.diff(frames) * (rates[1:] + rates[:-1]) / 2.0))


def frames_to(frames, rates, level: float = 0.9) -> int | None:
    for f, r in zip(frames, rates):
        if r >= level:
            return int(f)
    return None


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["frame"] = int(r["frame"])
        r["seed"] = int(r["seed"])
        r["success_rate"] = float(r["success_rate"])
    return rows


def report(results_dir) -> list[ReportRow]:
    """One row per config directory found under ``results_dir``."""
    root = Path(results_dir)
    files = sorted(root.rglob("metrics.csv"))
    if not files:
        raise ValueError(f"no metrics.csv files under {root}")
    groups: dict[Path, list[Path]] = {}
    for f in files:
        groups.setdefault(f.parent.parent, []).append(f)
    rows = []
    for cfg_dir, paths in sorted(groups.items()):
        curves, hashes = [], set()
        for p in paths:
            recs = read_metrics(p)
            hashes |= {r["config_hash"] for r in recs}
            if recs:
                curves.append({r["frame"]: r["success_rate"] for r in recs})
        if len(hashes) > 1:
            raise ValueError(f"mixed config hashes in {cfg_dir}: {', '.join(sorted(hashes))}")
        if not curves:
            continue
        # seed-mean over the eval points every seed reached
        common = sorted(set.intersection(*(set(c) for c in curves)))
        mean = [float(np.mean([c[f] for c in curves])) for f in common]
        name = str(cfg_dir.relative_to(root)) if cfg_dir != root and root in cfg_dir.parents else cfg_dir.name
        rows.append(ReportRow(name, hashes.pop() if hashes else "", len(curves),
                              float(np.mean([c[max(c)] for c in curves])), frames_to(common, mean),
                              auc_trapezoid(common, mean), common, mean))
    if not rows:
        raise ValueError(f"no evaluation rows under {root}")
    return rows


REPORT_COLUMNS = ("name", "config_hash", "n_seeds", "final_success", "frames_to_90", "auc")


def _cells(row: ReportRow) -> list[str]:
    return [row.name, row.config_hash, str(row.n_seeds), f"{row.final_success:.3f}",
            "—" if row.frames_to_90 is None else str(row.frames_to_90), f"{row.auc:.1f}"]


def format_report(rows: list[ReportRow]) -> str:
    table = [list(REPORT_COLUMNS)] + [_cells(r) for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in table)


def write_report_csv(rows: list[ReportRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow(_cells(r))


# verification suites

SHAPING_COLUMNS = ("seed", "n_states", "n_actions", "max_q_deviation", "policy_agreement")
MIXING_COLUMNS = ("seed", "n", "beta", "identity_error", "lower_bound_slack", "bound_satisfied")


def shaping_suite(instances: int = 200, max_states: int = 25, seed: int = 0, max_actions: int = 5,
                  gamma: float = 0.99, tol: float = 1e-6) -> list[dict]:
    """Random MDPs with random potentials in [-10, 10], one row per instance."""
    if max_states < 2:
        raise ValueError("max_states must be at least 2")
    rows = []
    for i in range(instances):
        s = derive_seed(seed, "shaping", i)
        rng = make_rng(s)
        n = 2 + int(rng.integers(max_states - 1))
        a = 1 + int(rng.integers(max_actions))
        branching = 1 + int(rng.integers(min(3, n)))
        mdp = random_mdp(rng, n, a, branching, gamma)
        rep = verify_shaping_theorem(mdp, rng.uniform(-10.0, 10.0, size=n), tol)
        rows.append({"seed": s, "n_states": n, "n_actions": a, "max_q_deviation": rep.max_q_deviation,
                     "policy_agreement": rep.policy_agreement})
    return rows


def mixing_suite(instances: int = 1000, seed: int = 0, max_support: int = 12, tol: float = 1e-12) -> list[dict]:
    """Random (pi_opt, M_pi, pi_hat, beta) triples; every tenth has pi_hat = pi_opt."""
    rows = []
    for i in range(instances):
        s = derive_seed(seed, "mixing", i)
        rng = make_rng(s)
        n = 2 + int(rng.integers(max_support - 1))
        pi_opt, m_pi, pi_hat, beta = random_triple(rng, n)
        if i % 10 == 0:
            pi_hat = pi_opt
        ident = verify_mixing_identity(pi_hat, m_pi, beta, tol)
        bound = verify_bounds(pi_opt, m_pi, pi_hat, beta, tol)
        rows.append({"seed": s, "n": n, "beta": beta, "identity_error": ident.abs_error,
                     "lower_bound_slack": bound.lhs - bound.rhs, "bound_satisfied": bound.bound_satisfied})
    return rows


def write_rows(rows: list[dict], columns, fh) -> None:
    w = csv.writer(fh)
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
