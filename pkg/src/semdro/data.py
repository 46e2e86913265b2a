"""Bandit datasets: synthetic benchmark, voting-schema loader, normalization."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Normalization:
    """Per-column affine map ``(v - offset) / scale``."""

    offset: Dict[str, float]
    scale: Dict[str, float]
    constant: Tuple[str, ...] = ()

    def apply(self, name: str, values):
        if name not in self.offset:
            return np.asarray(values, dtype=float)
        return (np.asarray(values, dtype=float) - self.offset[name]) / self.scale[name]

    def invert(self, name: str, values):
        if name not in self.offset:
            return np.asarray(values, dtype=float)
        return np.asarray(values, dtype=float) * self.scale[name] + self.offset[name]

    def to_dict(self) -> dict:
        return {"offset": self.offset, "scale": self.scale, "constant": list(self.constant)}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(dict(d["offset"]), dict(d["scale"]), tuple(d.get("constant", ())))


def fit_normalization(datasets: Sequence["BanditDataset"]) -> Normalization:
    """Min-max record over the pooled rows of ``datasets``.

    Continuous columns and the outcome are scaled; binary and categorical
    columns are left as they are.  A constant column gets scale 1 and is
    flagged.
    """
    ds0 = datasets[0]
    offset, scale, const = {}, {}, []
    names = [c for c in ds0.columns if ds0.kinds[c] == "cont"] + [ds0.outcome]
    for name in names:
        v = np.concatenate([d.column(name) for d in datasets])
        lo, hi = float(v.min()), float(v.max())
        if hi - lo <= 1e-12 * max(1.0, abs(lo)):
            offset[name], scale[name] = lo, 1.0
            const.append(name)
            log.warning("column %s is constant; normalized with scale 1", name)
        else:
            offset[name], scale[name] = lo, hi - lo
    return Normalization(offset, scale, tuple(const))


def normalize(ds: "BanditDataset", record: Optional[Normalization] = None) -> "BanditDataset":
    """Apply ``record`` (fitted on ``ds`` itself when omitted)."""
    if ds.norm is not None:
        raise ValueError(f"dataset {ds.env!r} is already normalized")
    record = record or fit_normalization([ds])
    X = ds.X.copy()
    for j, c in enumerate(ds.columns):
        X[:, j] = record.apply(c, X[:, j])
    return replace(ds, X=X, rewards=record.apply(ds.outcome, ds.rewards), norm=record)


def normalize_all(datasets: Sequence["BanditDataset"], record: Optional[Normalization] = None):
    record = record or fit_normalization(datasets)
    return [normalize(d, record) for d in datasets], record


def denormalize(values, record: Optional[Normalization], column: str = "Y"):
    if record is None:
        return np.asarray(values, dtype=float)
    return record.invert(column, values)


# ---------------------------------------------------------------------------
# dataset container
# ---------------------------------------------------------------------------

@dataclass
class BanditDataset:
    """Logged rows ``(x, a, y)`` from one environment.

    ``kinds`` maps each context column to ``cont``, ``bin`` or ``cat:<k>``.
    ``propensity`` holds the logging policy's probability of the logged
    action, when known.
    """

    columns: Tuple[str, ...]
    kinds: Dict[str, str]
    X: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    n_actions: int
    env: str = ""
    propensity: Optional[np.ndarray] = None
    norm: Optional[Normalization] = None
    action: str = "A"
    outcome: str = "Y"
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.actions), len(self.columns))
        self.actions = np.asarray(self.actions, dtype=int)
        self.rewards = np.asarray(self.rewards, dtype=float)
        if not (len(self.X) == len(self.actions) == len(self.rewards)):
            raise ValueError("context, action and reward row counts differ")
        if set(self.kinds) != set(self.columns):
            raise ValueError("kinds must name exactly the context columns")
        if len(self.actions) and (self.actions.min() < 0 or self.actions.max() >= self.n_actions):
            raise ValueError(f"action indices must lie in 0..{self.n_actions - 1}")
        if self.propensity is not None:
            self.propensity = np.asarray(self.propensity, dtype=float)

    @property
    def n(self) -> int:
        return len(self.actions)

    def __len__(self) -> int:
        return self.n

    def schema(self) -> tuple:
        return (self.columns, tuple(self.kinds[c] for c in self.columns), self.n_actions,
                self.action, self.outcome)

    def index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise KeyError(f"dataset has no column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        if name == self.outcome:
            return self.rewards
        if name == self.action:
            return self.actions.astype(float)
        return self.X[:, self.index(name)]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.zeros((self.n, 0))
        return np.column_stack([self.column(c) for c in names])

    def subset(self, idx) -> "BanditDataset":
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], actions=self.actions[idx], rewards=self.rewards[idx],
                       propensity=None if self.propensity is None else self.propensity[idx],
                       meta=dict(self.meta))

    def sample(self, n: int, rng: np.random.Generator) -> "BanditDataset":
        if n >= self.n:
            return self
        return self.subset(np.sort(rng.choice(self.n, size=n, replace=False)))

    def raw_column(self, name: str) -> np.ndarray:
        return denormalize(self.column(name), self.norm, name)

    # -- persistence ----------------------------------------------------
    def to_csv(self, path) -> None:
        """CSV rows plus a ``.json`` sidecar carrying schema and normalization."""
        path = Path(path)
        header = list(self.columns) + [self.action, self.outcome]
        if self.propensity is not None:
            header.append("propensity")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(self.n):
                row = [repr(float(v)) for v in self.X[i]] + [int(self.actions[i]), repr(float(self.rewards[i]))]
                if self.propensity is not None:
                    row.append(repr(float(self.propensity[i])))
                w.writerow(row)
        side = {"columns": list(self.columns), "kinds": self.kinds, "n_actions": self.n_actions,
                "env": self.env, "action": self.action, "outcome": self.outcome,
                "normalization": None if self.norm is None else self.norm.to_dict()}
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path) -> "BanditDataset":
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        p = len(side["columns"])
        prop = arr[:, p + 2] if arr.shape[1] > p + 2 else None
        norm = side.get("normalization")
        return cls(tuple(side["columns"]), side["kinds"], arr[:, :p], arr[:, p].astype(int),
                   arr[:, p + 1], side["n_actions"], side["env"], prop,
                   None if norm is None else Normalization.from_dict(norm),
                   side["action"], side["outcome"])


def concat(datasets: Sequence[BanditDataset], env: str = "pooled") -> BanditDataset:
    if not datasets:
        raise ValueError("nothing to concatenate")
    s0 = datasets[0].schema()
    for d in datasets[1:]:
        if d.schema() != s0:
            raise ValueError(f"schema mismatch between {datasets[0].env!r} and {d.env!r}")
    props = [d.propensity for d in datasets]
    d0 = datasets[0]
    return replace(d0, X=np.vstack([d.X for d in datasets]),
                   actions=np.concatenate([d.actions for d in datasets]),
                   rewards=np.concatenate([d.rewards for d in datasets]),
                   propensity=None if any(p is None for p in props) else np.concatenate(props),
                   env=env, meta={})


def env_labels(datasets: Sequence[BanditDataset]) -> np.ndarray:
    return np.concatenate([np.full(d.n, k) for k, d in enumerate(datasets)])


# ---------------------------------------------------------------------------
# synthetic benchmark
# ---------------------------------------------------------------------------

SYNTHETIC_COLUMNS = ("X0", "X1", "X2")
SYNTHETIC_CONTEXT = ("X0", "X1")


@dataclass(frozen=True)
class SyntheticEnv:
    """One synthetic environment.

    X0 ~ N(x0_mean, x0_std), X1 ~ N(x1_mean, x1_std),
    X2 | a = c_a0 X0 + c_a1 X1 + N(x2_intercept, x2_noise),
    Y = y_x2 X2 + y_x1 X1 + y_x0 X0 + U(0, y_noise_high).
    """

    x0_mean: float
    x0_std: float
    x1_mean: float
    x1_std: float
    x2_coefs: Tuple[Tuple[float, float], ...]
    y_x2: float
    x2_intercept: float = 1.0
    x2_noise: float = 0.01
    y_x1: float = 0.1
    y_x0: float = 0.2
    y_noise_high: float = 0.1

    @property
    def n_actions(self) -> int:
        return len(self.x2_coefs)

    def x2_mean(self, x0, x1, a):
        c = np.asarray(self.x2_coefs)[np.asarray(a, dtype=int)]
        return c[..., 0] * x0 + c[..., 1] * x1 + self.x2_intercept

    def expected_reward(self, x0, x1, a):
        """E[Y | X0, X1, a]."""
        return (self.y_x2 * self.x2_mean(x0, x1, a) + self.y_x1 * x1 + self.y_x0 * x0
                + 0.5 * self.y_noise_high)

    def uniform_policy_value(self) -> float:
        """Exact expected return of the uniformly random policy."""
        acts = np.arange(self.n_actions)
        return float(np.mean(self.expected_reward(self.x0_mean, self.x1_mean, acts)))

    def sample(self, n: int, rng: np.random.Generator, actions=None, x2_noise: float | None = None):
        x0 = rng.normal(self.x0_mean, self.x0_std, n)
        x1 = rng.normal(self.x1_mean, self.x1_std, n)
        if actions is None:
            actions = rng.integers(0, self.n_actions, n)
        sd = self.x2_noise if x2_noise is None else x2_noise
        x2 = self.x2_mean(x0, x1, actions) + (rng.normal(0.0, sd, n) if sd > 0 else 0.0)
        y = self.y_x2 * x2 + self.y_x1 * x1 + self.y_x0 * x0 + rng.uniform(0.0, self.y_noise_high, n)
        return np.column_stack([x0, x1, x2]), np.asarray(actions, dtype=int), y


# Benchmark parameter tables.  The reward's third term reads "0.2 X2" in the
# source tables; it is taken to be 0.2 X0, matching the X0 -> Y edge.
SYNTHETIC_ENVS: Dict[str, Tuple[SyntheticEnv, ...]] = {
    "train": (
        SyntheticEnv(5, 1.0, 5, 0.5, ((3, 5), (5, 4), (5, 5)), 5),
        SyntheticEnv(6, 0.5, 5, 0.5, ((3, 2), (2, 4), (2, 2)), 6),
        SyntheticEnv(5, 0.5, 5, 0.5, ((3, 10), (5, 4), (4, 4)), 5),
    ),
    "test": (
        SyntheticEnv(5, 1.0, 5, 0.5, ((3, 2), (2, 4), (2, 2)), 5),
        SyntheticEnv(6, 0.5, 5, 0.5, ((3, 8), (5, 4), (2, 5)), 6),
        SyntheticEnv(5, 0.5, 5, 0.5, ((3, 6), (5, 4), (5, 5)), 6),
    ),
}

SYNTHETIC_KINDS = {"X0": "cont", "X1": "cont", "X2": "cont"}


def generate_synthetic(n_per_env: int, split: str = "train", seed: int = 0,
                       x2_noise: float | None = None) -> List[BanditDataset]:
    """Three environments of the synthetic benchmark, logged by a uniform policy.

    Every environment draws from its own stream keyed on (seed, split, env),
    so the output is a pure function of the arguments.
    """
    if n_per_env < 1:
        raise ValueError("n_per_env must be positive")
    if split not in SYNTHETIC_ENVS:
        raise ValueError(f"split must be one of {sorted(SYNTHETIC_ENVS)}")
    out = []
    s_idx = sorted(SYNTHETIC_ENVS).index(split)
    for k, env in enumerate(SYNTHETIC_ENVS[split]):
        rng = np.random.default_rng([seed, s_idx, k])
        X, a, y = env.sample(n_per_env, rng, x2_noise=x2_noise)
        out.append(BanditDataset(SYNTHETIC_COLUMNS, dict(SYNTHETIC_KINDS), X, a, y, env.n_actions,
                                 env=f"{split}{k + 1}",
                                 propensity=np.full(n_per_env, 1.0 / env.n_actions)))
    return out


def synthetic_policy_value(env: SyntheticEnv, policy, n: int = 20000, seed: int = 0,
                           norm: Optional[Normalization] = None) -> float:
    """Expected return (original units) of ``policy`` in ``env``.

    Contexts are sampled; the expectation over the policy's action
    distribution and the noise terms is taken exactly per context.  The
    policy sees the pre-action covariates, normalized with ``norm``.
    """
    rng = np.random.default_rng(seed)
    x0 = rng.normal(env.x0_mean, env.x0_std, n)
    x1 = rng.normal(env.x1_mean, env.x1_std, n)
    raw = {"X0": x0, "X1": x1}
    feats = policy.features or SYNTHETIC_CONTEXT
    Xp = np.column_stack([norm.apply(f, raw[f]) if norm else raw[f] for f in feats])
    p = policy.probabilities(Xp)
    er = np.column_stack([env.expected_reward(x0, x1, np.full(n, a)) for a in range(env.n_actions)])
    return float(np.mean((p * er).sum(axis=1)))


# ---------------------------------------------------------------------------
# voting schema
# ---------------------------------------------------------------------------

VOTING_COLUMNS = ("yob", "sex", "hh_size", "g2000", "p2000", "g2002", "p2002", "p2004")
VOTING_KINDS = {"yob": "cat:5", "sex": "bin", "hh_size": "cont", "g2000": "bin", "p2000": "bin",
                "g2002": "bin", "p2002": "bin", "p2004": "bin"}
VOTING_REQUIRED = ("yob", "sex", "hh_size", "p2000", "p2002", "p2004", "g2000", "g2002", "city",
                   "treatment", "p2006")
YOB_EDGES = (1943, 1952, 1959, 1966)
TREATMENTS = {"control": 0, "civic duty": 1, "hawthorne": 2, "self": 3, "neighbors": 4}
ACTION_COSTS = (0.0, 0.0, 0.01, 0.02, 0.03)   # index 0 is "do nothing" and is never charged


@dataclass
class VotingConfig:
    train_cities: Tuple[int, ...] = (1, 2, 3, 4, 14)
    test_cities: Tuple[int, ...] = (5, 6, 13, 15, 8)
    city_costs: Dict[int, float] = field(default_factory=lambda: {
        1: 0.01, 2: 0.02, 3: 0.03, 4: 0.04, 14: 0.05,
        5: 0.06, 6: 0.07, 13: 0.08, 15: 0.09, 8: 0.10})
    action_costs: Tuple[float, ...] = ACTION_COSTS
    hh_cap: int = 4


def bin_yob(yob) -> np.ndarray:
    """Five birth-year bins: <1943, [1943,1952), [1952,1959), [1959,1966), >=1966."""
    return np.digitize(np.asarray(yob, dtype=float), YOB_EDGES)


def voting_reward(p2006, action, city, cfg: VotingConfig | None = None) -> np.ndarray:
    cfg = cfg or VotingConfig()
    p2006 = np.asarray(p2006, dtype=float)
    action = np.asarray(action, dtype=int)
    cc = np.array([cfg.city_costs[int(c)] for c in np.atleast_1d(city)]).reshape(np.shape(city))
    ca = np.asarray(cfg.action_costs)[action]
    return np.where(action == 0, p2006, p2006 - ca - cc)


def voting_propensity(actions) -> np.ndarray:
    a = np.asarray(actions, dtype=int)
    return np.where(a == 0, 5.0 / 9.0, 1.0 / 9.0)


def _flag(v: str) -> float:
    s = v.strip().lower()
    if s in ("1", "yes", "y", "true", "male", "1.0"):
        return 1.0
    if s in ("0", "no", "n", "false", "female", "0.0"):
        return 0.0
    raise ValueError(f"not a binary value: {v!r}")


def _treatment(v: str) -> int:
    s = v.strip().lower()
    if s in TREATMENTS:
        return TREATMENTS[s]
    k = int(float(s))
    if not 0 <= k < len(TREATMENTS):
        raise ValueError(f"treatment index out of range: {k}")
    return k


def _city(v: str) -> int:
    s = v.strip().lower().replace("city", "").strip()
    return int(float(s))


def load_voting(path, cfg: VotingConfig | None = None) -> List[BanditDataset]:
    """One dataset per city listed in ``cfg``, in train-then-test order.

    Malformed rows are skipped; the count lands in each dataset's
    ``meta["skipped"]``.  Rows from cities outside the configured lists are an
    error.
    """
    cfg = cfg or VotingConfig()
    known = set(cfg.train_cities) | set(cfg.test_cities)
    rows: Dict[int, list] = {c: [] for c in known}
    skipped = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in VOTING_REQUIRED if c not in header]
        if missing:
            raise ValueError(f"voting CSV lacks columns: {', '.join(missing)}")
        for rec in reader:
            rec = {k.strip(): v for k, v in rec.items() if k is not None}
            try:
                city = _city(rec["city"])
            except (ValueError, TypeError):
                skipped += 1
                continue
            if city not in known:
                raise ValueError(f"unknown city label {rec['city']!r}")
            try:
                x = [float(bin_yob(float(rec["yob"]))), _flag(rec["sex"]),
                     float(min(float(rec["hh_size"]), cfg.hh_cap)),
                     _flag(rec["g2000"]), _flag(rec["p2000"]), _flag(rec["g2002"]),
                     _flag(rec["p2002"]), _flag(rec["p2004"])]
                a = _treatment(rec["treatment"])
                p06 = _flag(rec["p2006"])
            except (ValueError, TypeError, AttributeError):
                skipped += 1
                continue
            rows[city].append((x, a, p06))
    if skipped:
        log.warning("skipped %d malformed voting rows", skipped)
    out = []
    for split, cities in (("train", cfg.train_cities), ("test", cfg.test_cities)):
        for c in cities:
            rs = rows[c]
            X = np.array([r[0] for r in rs], dtype=float).reshape(len(rs), len(VOTING_COLUMNS))
            a = np.array([r[1] for r in rs], dtype=int)
            p06 = np.array([r[2] for r in rs], dtype=float)
            y = voting_reward(p06, a, np.full(len(rs), c), cfg)
            out.append(BanditDataset(VOTING_COLUMNS, dict(VOTING_KINDS), X, a, y, len(TREATMENTS),
                                     env=f"city{c}", propensity=voting_propensity(a),
                                     meta={"city": c, "split": split, "skipped": skipped}))
    return out


def voting_fixture_path():
    from importlib.resources import files
    return files("semdro").joinpath("fixtures", "voting_sample.csv")
