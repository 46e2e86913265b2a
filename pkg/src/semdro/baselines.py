"""KL-ball robust evaluation and learning baselines (DRO and factored DRO).

Both estimators work with the dual of the worst-case expectation over a KL
ball of radius delta around the importance-weighted empirical distribution:

    V = sup_{alpha > 0}  -alpha log( sum_i w_i exp(-y_i / alpha) / sum_i w_i ) - alpha delta

with ``w_i = pi(a_i|x_i) / pi0(a_i|x_i)``.  The factored variant first
replaces every reward by the worst case of its (action, rounded context)
cell under a reward-shift radius, then applies the dual with a separate
covariate-shift radius.
"""

from __future__ import annotations

import logging
import math
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import BanditDataset
from .policy import Policy, context_key, softmax

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class DROError(ValueError):
    pass


@dataclass
class KLConfig:
    delta: float = 0.0
    delta_cov: float = 0.0
    delta_rew: float = 0.0
    alpha_lower: float = 1e-4
    alpha_upper: float = 1e4
    restart_limit: int = 20
    epochs: int = 50
    max_iters: int = 500
    lr: float = 0.05
    alpha_rtol: float = 1e-4
    search_tol: float = 1e-6
    warm_steps: int = 500
    decimals: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("delta", "delta_cov", "delta_rew"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.alpha_lower < self.alpha_upper:
            raise ValueError("alpha bounds must satisfy 0 < lower < upper")
        if self.restart_limit < 1:
            raise ValueError("restart_limit must be at least 1")


@dataclass(frozen=True)
class DROResult:
    value: float
    alpha: float
    status: str = "optimal"        # optimal | boundary | nominal
    restarts: int = 0
    skipped: int = 0

    def clipped(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return float(min(max(self.value, lo), hi))


# ---------------------------------------------------------------------------
# KL radius
# ---------------------------------------------------------------------------

def _histogram(codes: np.ndarray) -> Dict[int, int]:
    u, c = np.unique(codes, return_counts=True)
    return dict(zip(u.tolist(), c.tolist()))


def kl_radius(envs: Sequence[BanditDataset], columns: Optional[Sequence[str]] = None,
              bins: int = 10, smoothing: float = 0.5) -> float:
    """Largest histogram KL divergence from the pooled data to a single environment.

    Columns default to the outcome plus every covariate.  Each column gets
    ``bins`` equal-width bins over its pooled range.  Every cell occupied by
    either sample gets ``smoothing`` pseudo-counts per average environment
    size, so identical environments give exactly zero.
    """
    if len(envs) < 2:
        raise DROError("need at least two environments")
    if any(d.n == 0 for d in envs):
        raise DROError("empty environment")
    columns = list(columns) if columns is not None else [envs[0].outcome] + list(envs[0].columns)
    mats = [np.column_stack([d.column(c) for c in columns]) for d in envs]
    pooled = np.vstack(mats)
    lo, hi = pooled.min(axis=0), pooled.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)

    def codes(M):
        idx = np.clip(((M - lo) / span * bins).astype(int), 0, bins - 1)
        return np.ravel_multi_index(idx.T, (bins,) * M.shape[1])

    hp = _histogram(codes(pooled))
    unit = len(pooled) / len(mats)
    best = 0.0
    for M in mats:
        he = _histogram(codes(M))
        keys = sorted(set(hp) | set(he))
        p = np.array([hp.get(k, 0) for k in keys], dtype=float) + smoothing * len(pooled) / unit
        q = np.array([he.get(k, 0) for k in keys], dtype=float) + smoothing * len(M) / unit
        p /= p.sum()
        q /= q.sum()
        best = max(best, float(np.sum(p * np.log(p / q))))
    return best


def factored_radii(envs: Sequence[BanditDataset], covariates: Sequence[str], **kw) -> Tuple[float, float]:
    """(delta_cov, delta_rew): covariate-only radius and the joint excess over it."""
    joint = kl_radius(envs, [envs[0].outcome] + list(covariates), **kw)
    cov = kl_radius(envs, covariates, **kw)
    return cov, max(joint - cov, 0.0)


# ---------------------------------------------------------------------------
# the dual and its line search
# ---------------------------------------------------------------------------

def dual_value(y: np.ndarray, w: np.ndarray, delta: float, alpha: float) -> float:
    """Dual objective at ``alpha``, computed stably around the smallest supported reward."""
    keep = w > 0
    y, w = y[keep], w[keep]
    m = float(y.min())
    e = np.exp(-(y - m) / alpha)
    return m - alpha * math.log(float(w @ e) / float(w.sum())) - alpha * delta


def _golden(f, a: float, b: float, tol: float) -> Tuple[float, float]:
    """Maximize a unimodal ``f`` on [a, b]; returns (argmax, max)."""
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    t = 0.5 * (a + b)
    return t, f(t)


def solve_alpha(y, w, delta: float, cfg: KLConfig | None = None) -> DROResult:
    """Golden-section search for the dual maximizer over log alpha.

    An optimum pinned at a bracket end widens that end by a factor 100 and
    searches again, up to ``restart_limit`` times.  At the lower end the
    dual tends to the smallest supported reward, which is returned as the
    limit with status ``boundary``.
    """
    cfg = cfg or KLConfig()
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if len(y) == 0 or not np.any(w > 0):
        raise DROError("no positively weighted samples")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DROError("weights must be finite and non-negative")
    if delta == 0:
        return DROResult(float(w @ y / w.sum()), math.inf, "nominal")
    ys = y[w > 0]
    if np.ptp(ys) == 0:
        return DROResult(float(ys[0]), 0.0, "nominal")
    lo, hi = math.log(cfg.alpha_lower), math.log(cfg.alpha_upper)

    def f(t):
        v = dual_value(y, w, delta, math.exp(t))
        return v if math.isfinite(v) else -math.inf

    for restart in range(cfg.restart_limit + 1):
        t, v = _golden(f, lo, hi, cfg.search_tol)
        at_lo, at_hi = t - lo < 10 * cfg.search_tol, hi - t < 10 * cfg.search_tol
        if not (at_lo or at_hi) and math.isfinite(v):
            return DROResult(v, math.exp(t), "optimal", restart)
        if at_lo:
            lo -= math.log(100.0)
        if at_hi:
            hi += math.log(100.0)
    floor = float(ys.min())
    if at_lo:
        return DROResult(max(v, floor), math.exp(t), "boundary", cfg.restart_limit)
    return DROResult(v, math.exp(t), "boundary", cfg.restart_limit)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _logging_probs(ds: BanditDataset, pi0) -> np.ndarray:
    if pi0 is None:
        if ds.propensity is None:
            raise DROError("no logging propensities available")
        p = np.asarray(ds.propensity, dtype=float)
    elif isinstance(pi0, Policy):
        p = pi0.prob_of(ds.matrix(pi0.features) if pi0.features else np.zeros((ds.n, 0)), ds.actions)
    else:
        p = np.asarray(pi0, dtype=float)
    if p.shape != (ds.n,):
        raise DROError("logging propensities must have one entry per row")
    if np.any(p <= 0):
        raise DROError("the logging policy gives zero probability to an observed action")
    return p


def importance_weights(ds: BanditDataset, policy: Policy, pi0=None) -> np.ndarray:
    X = ds.matrix(policy.features) if policy.features else np.zeros((ds.n, 0))
    return policy.prob_of(X, ds.actions) / _logging_probs(ds, pi0)


def ipw_value(ds: BanditDataset, policy: Policy, pi0=None) -> float:
    """Self-normalized importance-weighted mean reward."""
    w = importance_weights(ds, policy, pi0)
    return float(w @ ds.rewards / w.sum())


def dro_evaluate(ds: BanditDataset, policy: Policy, pi0=None, delta: float = 0.0,
                 cfg: KLConfig | None = None) -> DROResult:
    """Worst-case value of ``policy`` over the KL ball of radius ``delta``."""
    return solve_alpha(ds.rewards, importance_weights(ds, policy, pi0), delta, cfg)


class CellCache:
    """Worst-case reward per (action, rounded context) cell."""

    def __init__(self):
        self.values: Dict[tuple, float] = {}
        self.hits = 0
        self.misses = 0

    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def save(self, path) -> None:
        Path(path).write_bytes(pickle.dumps(self.values))

    @classmethod
    def load(cls, path) -> "CellCache":
        c = cls()
        c.values = pickle.loads(Path(path).read_bytes())
        return c


def cell_keys(ds: BanditDataset, features: Sequence[str], decimals: int = 3) -> List[tuple]:
    X = ds.matrix(features) if features else np.zeros((ds.n, 0))
    return [(int(a),) + context_key(x, decimals) for a, x in zip(ds.actions, X)]


def cell_worst_rewards(ds: BanditDataset, features: Sequence[str], delta_rew: float,
                       cfg: KLConfig | None = None, cache: Optional[CellCache] = None) -> Tuple[np.ndarray, int]:
    """Per-row worst-case reward of the row's cell; returns (values, skipped rows)."""
    cfg = cfg or KLConfig()
    cache = cache if cache is not None else CellCache()
    keys = cell_keys(ds, features, cfg.decimals)
    groups: Dict[tuple, List[int]] = {}
    for i, k in enumerate(keys):
        groups.setdefault((delta_rew,) + k, []).append(i)
    out = np.full(ds.n, np.nan)
    skipped = 0
    for k, rows in groups.items():
        if k in cache.values:
            cache.hits += len(rows)
        else:
            cache.misses += len(rows)
            y = ds.rewards[rows]
            y = y[np.isfinite(y)]
            cache.values[k] = (solve_alpha(y, np.ones(len(y)), delta_rew, cfg).value
                               if len(y) else math.nan)
        out[rows] = cache.values[k]
    bad = ~np.isfinite(out)
    skipped = int(bad.sum())
    if skipped:
        log.warning("%d rows fall in empty cells and are skipped", skipped)
    return out, skipped


def fdro_evaluate(ds: BanditDataset, policy: Policy, pi0=None, delta_cov: float = 0.0,
                  delta_rew: float = 0.0, cfg: KLConfig | None = None,
                  features: Optional[Sequence[str]] = None,
                  cache: Optional[CellCache] = None) -> DROResult:
    """Factored worst case: per-cell reward shift, then a covariate-shift dual."""
    cfg = cfg or KLConfig()
    feats = list(features) if features is not None else list(policy.features)
    r, skipped = cell_worst_rewards(ds, feats, delta_rew, cfg, cache)
    w = importance_weights(ds, policy, pi0)
    keep = np.isfinite(r)
    res = solve_alpha(r[keep], w[keep], delta_cov, cfg)
    return DROResult(res.value, res.alpha, res.status, res.restarts, skipped)


# ---------------------------------------------------------------------------
# learning
# ---------------------------------------------------------------------------

@dataclass
class _Adam:
    shape_w: tuple
    shape_b: tuple
    lr: float
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        self.m = [np.zeros(self.shape_w), np.zeros(self.shape_b)]
        self.v = [np.zeros(self.shape_w), np.zeros(self.shape_b)]

    def step(self, params, grads):
        """Ascent step in place."""
        self.t += 1
        for k, (p, g) in enumerate(zip(params, grads)):
            self.m[k] = 0.9 * self.m[k] + 0.1 * g
            self.v[k] = 0.999 * self.v[k] + 0.001 * g * g
            mh = self.m[k] / (1 - 0.9 ** self.t)
            vh = self.v[k] / (1 - 0.999 ** self.t)
            p += self.lr * mh / (np.sqrt(vh) + 1e-8)


class _Problem:
    """Logged data in the form the gradient steps need."""

    def __init__(self, X, actions, y, p0, n_actions):
        self.X, self.y, self.p0 = X, y, p0
        self.onehot = np.eye(n_actions)[actions]
        self.actions = actions

    def weights(self, W, b):
        P = softmax(self.X @ W.T + b)
        return P, P[np.arange(len(P)), self.actions] / self.p0

    def grad(self, W, b, coef, P):
        C = coef[:, None] * (self.onehot - P)
        return C.T @ self.X, C.sum(axis=0)

    def nominal_step(self, W, b):
        P, w = self.weights(W, b)
        s = w.sum()
        J = float(w @ self.y / s)
        return J, self.grad(W, b, w * (self.y - J) / s, P)

    def dual_step(self, W, b, alpha, delta):
        P, w = self.weights(W, b)
        m = float(self.y.min())
        e = np.exp(-(self.y - m) / alpha)
        s = w.sum()
        E = float(w @ e / s)
        J = m - alpha * math.log(E) - alpha * delta
        coef = -alpha * w * (e - E) / (s * E)
        return J, self.grad(W, b, coef, P)


def _fit_nominal(prob: _Problem, W, b, cfg: KLConfig):
    opt = _Adam(W.shape, b.shape, cfg.lr)
    for _ in range(cfg.warm_steps):
        _, g = prob.nominal_step(W, b)
        opt.step((W, b), g)
    return W, b


def _robust_learn(prob: _Problem, features, n_actions: int, delta: float,
                  cfg: KLConfig) -> Tuple[Policy, DROResult]:
    rng = np.random.default_rng(cfg.seed)
    p = prob.X.shape[1]
    W0, b0 = _fit_nominal(prob, np.zeros((n_actions, p)), np.zeros(n_actions), cfg)
    if delta == 0:
        pol = Policy.softmax_linear(W0, b0, features)
        _, w = prob.weights(W0, b0)
        return pol, DROResult(float(w @ prob.y / w.sum()), math.inf, "nominal")
    best: Optional[Tuple[float, np.ndarray, np.ndarray, DROResult]] = None
    restarts = 0
    while True:
        W, b = W0.copy(), b0.copy()
        if restarts:
            W += rng.normal(0, 0.1, W.shape)
            b += rng.normal(0, 0.1, b.shape)
        opt = _Adam(W.shape, b.shape, cfg.lr)
        alpha, valid = None, True
        for _ in range(cfg.max_iters):
            _, w = prob.weights(W, b)
            res = solve_alpha(prob.y, w, delta, cfg)
            if res.status != "optimal":
                valid = False
                break
            if best is None or res.value > best[0]:
                best = (res.value, W.copy(), b.copy(), res)
            if alpha is not None and abs(res.alpha - alpha) <= cfg.alpha_rtol * alpha:
                break
            alpha = res.alpha
            for _ in range(cfg.epochs):
                _, g = prob.dual_step(W, b, alpha, delta)
                opt.step((W, b), g)
        if valid:
            _, w = prob.weights(W, b)
            res = solve_alpha(prob.y, w, delta, cfg)
            if res.status == "optimal" and res.value >= best[0] - 1e-12:
                best = (res.value, W.copy(), b.copy(), res)
            v, Wb, bb, r = best
            return Policy.softmax_linear(Wb, bb, features), DROResult(v, r.alpha, "optimal", restarts)
        restarts += 1
        if restarts > cfg.restart_limit:
            break
    log.warning("alpha stayed invalid after %d restarts; returning the best incumbent", cfg.restart_limit)
    if best is None:
        return Policy.softmax_linear(W0, b0, features), DROResult(math.nan, math.nan, "degraded", restarts - 1)
    v, Wb, bb, r = best
    return Policy.softmax_linear(Wb, bb, features), DROResult(v, r.alpha, "degraded", restarts - 1)


def _problem(ds: BanditDataset, features, y, pi0) -> _Problem:
    X = ds.matrix(features) if features else np.zeros((ds.n, 0))
    return _Problem(X, ds.actions, np.asarray(y, dtype=float), _logging_probs(ds, pi0), ds.n_actions)


def dro_learn(ds: BanditDataset, features: Sequence[str], pi0=None, delta: float = 0.0,
              cfg: KLConfig | None = None) -> Tuple[Policy, DROResult]:
    """Softmax-linear policy maximizing the KL-ball worst case.

    Starts from the non-robust importance-weighted optimum, then alternates
    an alpha line search with ``epochs`` gradient steps on the dual.
    """
    cfg = cfg or KLConfig()
    return _robust_learn(_problem(ds, features, ds.rewards, pi0), tuple(features), ds.n_actions, delta, cfg)


def fdro_learn(ds: BanditDataset, features: Sequence[str], pi0=None, delta_cov: float = 0.0,
               delta_rew: float = 0.0, cfg: KLConfig | None = None,
               cache: Optional[CellCache] = None) -> Tuple[Policy, DROResult]:
    """As :func:`dro_learn` on cell worst-case rewards with the covariate radius."""
    cfg = cfg or KLConfig()
    r, skipped = cell_worst_rewards(ds, features, delta_rew, cfg, cache)
    keep = np.isfinite(r)
    sub = ds.subset(np.flatnonzero(keep)) if not keep.all() else ds
    pol, res = _robust_learn(_problem(sub, features, r[keep], None if pi0 is None else
                                      (pi0 if isinstance(pi0, Policy) else np.asarray(pi0)[keep])),
                             tuple(features), ds.n_actions, delta_cov, cfg)
    return pol, DROResult(res.value, res.alpha, res.status, res.restarts, skipped)
