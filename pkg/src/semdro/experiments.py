"""Trial harness: run every method per trial, aggregate, write CSV and plots."""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import baselines
from .baselines import CellCache, KLConfig
from .data import (SYNTHETIC_ENVS, BanditDataset, Normalization, concat, generate_synthetic,
                   load_voting, normalize, normalize_all, synthetic_policy_value)
from .graph import CausalGraph, fixture_path, read_graph
from .policy import Policy
from .semcp import (SemcpConfig, extract_worst_case_model, learn_policy, policy_features,
                    worst_case_evaluate)
from .semfit import fit_spec
from .shiftdetect import ShiftConfig, detect_shifts

log = logging.getLogger(__name__)

METHODS = ("semcp", "dro", "fdro", "nonrobust")
Z95 = 1.96


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"              # "synthetic" or a voting-schema CSV path
    graph: str = "synthetic_well"           # fixture name or graph file path
    methods: Tuple[str, ...] = METHODS
    trials: int = 10
    seed: int = 0
    rows_per_env: int = 3000
    policy: str = "uniform"                 # "uniform" or a policy JSON path
    out: str = "results"
    plot: bool = False
    semcp_rows: int = 1000
    permutations: int = 200
    shift_rows: int = 1000
    kl_bins: int = 10
    kl_smoothing: float = 0.5
    value_samples: int = 20000

    def __post_init__(self):
        if isinstance(self.methods, str):
            self.methods = tuple(m.strip() for m in self.methods.split(",") if m.strip())
        self.methods = tuple(self.methods)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods: {', '.join(bad)}")
        if not self.methods:
            raise ConfigError("no methods selected")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.rows_per_env < 10:
            raise ConfigError("rows_per_env must be at least 10")

    def check_paths(self) -> None:
        if self.dataset != "synthetic" and not Path(self.dataset).exists():
            raise ConfigError(f"dataset not found: {self.dataset}")
        if self.policy != "uniform" and not Path(self.policy).exists():
            raise ConfigError(f"policy file not found: {self.policy}")
        self.load_graph()

    def load_graph(self) -> CausalGraph:
        p = Path(self.graph)
        if p.exists():
            return read_graph(p)
        try:
            return read_graph(fixture_path(self.graph))
        except KeyError:
            raise ConfigError(f"graph not found: {self.graph}") from None

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        """Flat ``key = value`` text; ``#`` starts a comment."""
        text = Path(path).read_text()
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        try:
            cp.read_string("[experiment]\n" + text)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse {path}: {e}") from None
        raw = dict(cp["experiment"])
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in raw.items():
            if k not in types:
                raise ConfigError(f"unknown config key {k!r}")
            kw[k] = _coerce(k, v, types[k])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


def _coerce(key: str, value: str, typ: str):
    try:
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        if typ == "bool":
            return value.strip().lower() in ("1", "true", "yes", "on")
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


# ---------------------------------------------------------------------------
# data per trial
# ---------------------------------------------------------------------------

@dataclass
class TrialData:
    train: List[BanditDataset]
    test: List[BanditDataset]
    norm: Normalization
    synthetic: bool

    @property
    def pooled(self) -> BanditDataset:
        return concat(self.train)


def trial_data(cfg: ExperimentConfig, trial: int) -> TrialData:
    seed = cfg.seed + trial
    if cfg.dataset == "synthetic":
        train, norm = normalize_all(generate_synthetic(cfg.rows_per_env, "train", seed))
        return TrialData(train, [], norm, True)
    envs = load_voting(cfg.dataset)
    train_raw = [d for d in envs if d.meta.get("split") == "train"]
    test_raw = [d for d in envs if d.meta.get("split") == "test"]
    rng = np.random.default_rng([seed, 3])
    train_raw = [d.sample(min(d.n, cfg.rows_per_env), rng) for d in train_raw]
    train, norm = normalize_all(train_raw)
    test = [normalize(d, norm) for d in test_raw]
    return TrialData(train, test, norm, False)


def load_policy(cfg: ExperimentConfig, n_actions: int, features: Sequence[str]) -> Policy:
    if cfg.policy == "uniform":
        return Policy.uniform(n_actions, features)
    return Policy.from_dict(json.loads(Path(cfg.policy).read_text()))


def policy_return(policy: Policy, data: TrialData, cfg: ExperimentConfig) -> Dict[str, float]:
    """Return (original units) per test environment, plus ``worst``."""
    out: Dict[str, float] = {}
    if data.synthetic:
        for k, env in enumerate(SYNTHETIC_ENVS["test"]):
            out[f"test{k + 1}"] = synthetic_policy_value(env, policy, cfg.value_samples, seed=12345,
                                                         norm=data.norm)
    else:
        for d in data.test:
            if d.n:
                out[d.env] = float(data.norm.invert(d.outcome, baselines.ipw_value(d, policy)))
    out["worst"] = min(out.values())
    return out


# ---------------------------------------------------------------------------
# methods
# ---------------------------------------------------------------------------

def _shifted(data: TrialData, g: CausalGraph, cfg: ExperimentConfig, trial: int):
    sc = ShiftConfig(permutations=cfg.permutations, max_rows=cfg.shift_rows, seed=cfg.seed + trial)
    return detect_shifts(data.train, g, sc).shifted_set


def _kl(data: TrialData, cfg: ExperimentConfig, features):
    kw = dict(bins=cfg.kl_bins, smoothing=cfg.kl_smoothing)
    delta = baselines.kl_radius(data.train, **kw)
    dc, dr = baselines.factored_radii(data.train, features, **kw)
    return delta, dc, dr


def evaluate_method(method: str, data: TrialData, g: CausalGraph, policy: Policy,
                    cfg: ExperimentConfig, trial: int) -> float:
    """Worst-case estimate in normalized units."""
    pooled = data.pooled
    if method == "semcp":
        shifted = _shifted(data, g, cfg, trial)
        res = worst_case_evaluate(data.train, g, shifted, policy,
                                  SemcpConfig(rows=cfg.semcp_rows, seed=cfg.seed + trial))
        return res.objective
    if method == "nonrobust":
        return baselines.ipw_value(pooled, policy)
    feats = policy_features(g, pooled)
    delta, dc, dr = _kl(data, cfg, feats)
    kc = KLConfig(seed=cfg.seed + trial)
    if method == "dro":
        return baselines.dro_evaluate(pooled, policy, None, delta, kc).value
    return baselines.fdro_evaluate(pooled, policy, None, dc, dr, kc, features=feats,
                                   cache=CellCache()).value


def learn_method(method: str, data: TrialData, g: CausalGraph, cfg: ExperimentConfig,
                 trial: int) -> Policy:
    pooled = data.pooled
    feats = policy_features(g, pooled)
    kc = KLConfig(seed=cfg.seed + trial)
    if method == "semcp":
        shifted = _shifted(data, g, cfg, trial)
        spec = fit_spec(data.train, g, shifted)
        res = worst_case_evaluate(data.train, g, shifted, None,
                                  SemcpConfig(rows=cfg.semcp_rows, seed=cfg.seed + trial), spec)
        wc = extract_worst_case_model(res, spec.nominal)
        return learn_policy(wc, pooled)
    if method == "nonrobust":
        return baselines.dro_learn(pooled, feats, None, 0.0, kc)[0]
    delta, dc, dr = _kl(data, cfg, feats)
    if method == "dro":
        return baselines.dro_learn(pooled, feats, None, delta, kc)[0]
    return baselines.fdro_learn(pooled, feats, None, dc, dr, kc, CellCache())[0]


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

@dataclass
class ResultTable:
    columns: Tuple[str, ...]
    rows: List[dict] = field(default_factory=list)
    reference: Optional[float] = None          # worst-case reference (original units)

    def failures(self) -> int:
        return sum(r["status"] != "ok" for r in self.rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def run_evaluation(cfg: ExperimentConfig) -> ResultTable:
    """Worst-case estimates per method and trial, with the empirical worst case."""
    cfg.check_paths()
    g = cfg.load_graph()
    table = ResultTable(("method", "trial", "status", "estimate", "estimate_clipped",
                         "estimate_raw", "oracle_raw", "error_raw"))
    refs = []
    for t in range(cfg.trials):
        data = trial_data(cfg, t)
        pooled = data.pooled
        policy = load_policy(cfg, pooled.n_actions, policy_features(g, pooled))
        oracle = policy_return(policy, data, cfg)["worst"]
        refs.append(oracle)
        for m in cfg.methods:
            row = {"method": m, "trial": t, "status": "ok", "estimate": None,
                   "estimate_clipped": None, "estimate_raw": None, "oracle_raw": oracle,
                   "error_raw": None}
            try:
                est = float(evaluate_method(m, data, g, policy, cfg, t))
                raw = float(data.norm.invert(g.outcome if g.outcome in data.norm.offset else "Y", est))
                row.update(estimate=est, estimate_clipped=min(max(est, 0.0), 1.0),
                           estimate_raw=raw, error_raw=raw - oracle)
            except Exception as e:  # noqa: BLE001 -- a failed method must not end the run
                log.error("trial %d, %s failed: %s", t, m, e)
                row["status"] = f"failed: {type(e).__name__}"
            table.rows.append(row)
    table.reference = float(np.mean(refs))
    return table


def run_learning(cfg: ExperimentConfig) -> ResultTable:
    """Learn per method and trial, then score each policy on every test environment."""
    cfg.check_paths()
    g = cfg.load_graph()
    table = ResultTable(("method", "trial", "status", "env", "return"))
    refs = []
    for t in range(cfg.trials):
        data = trial_data(cfg, t)
        uniform = Policy.uniform(data.pooled.n_actions, policy_features(g, data.pooled))
        refs.append(policy_return(uniform, data, cfg)["worst"])
        for m in cfg.methods:
            try:
                pol = learn_method(m, data, g, cfg, t)
                for env, v in policy_return(pol, data, cfg).items():
                    table.rows.append({"method": m, "trial": t, "status": "ok", "env": env, "return": v})
            except Exception as e:  # noqa: BLE001
                log.error("trial %d, %s failed: %s", t, m, e)
                table.rows.append({"method": m, "trial": t, "status": f"failed: {type(e).__name__}",
                                   "env": "worst", "return": None})
    table.reference = float(np.mean(refs))
    return table


def summarize(values: Sequence[float]) -> Dict[str, Optional[float]]:
    """Mean, standard error and 95% half-width; SE and CI are absent for one value."""
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if len(v) == 0:
        return {"n": 0, "mean": None, "se": None, "ci": None}
    if len(v) == 1:
        return {"n": 1, "mean": float(v[0]), "se": None, "ci": None}
    se = float(v.std(ddof=1) / math.sqrt(len(v)))
    return {"n": len(v), "mean": float(v.mean()), "se": se, "ci": Z95 * se}


def aggregate(table: ResultTable) -> List[dict]:
    value_col = "estimate_raw" if "estimate_raw" in table.columns else "return"
    groups: Dict[tuple, list] = {}
    for r in table.rows:
        key = (r["method"], r.get("env", "all"))
        groups.setdefault(key, [])
        if r["status"] == "ok":
            groups[key].append(r[value_col])
    return [{"method": m, "env": e, **summarize(vals)} for (m, e), vals in groups.items()]


def write_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def read_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_outputs(table: ResultTable, out_dir, name: str, plot: bool = False) -> List[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot write to {out}: {e}") from None
    paths = [out / f"{name}.csv", out / f"{name}_summary.csv"]
    write_csv(paths[0], table.columns, table.rows)
    write_csv(paths[1], ("method", "env", "n", "mean", "se", "ci"), aggregate(table))
    if plot:
        from .report import plot_summary
        paths.append(plot_summary(aggregate(table), out / f"{name}.svg", table.reference,
                                  title=name))
    return paths
