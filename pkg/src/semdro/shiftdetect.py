"""Shifted-variable detection by kernel conditional-independence tests.

For every variable S and every pair of environments, the pooled sample is
tagged with a +1/-1 environment indicator B and ``S _||_ B | Pa(S)`` is
tested.  Variables rejected in any pair form the shifted set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .data import BanditDataset, concat
from .graph import CausalGraph


class ShiftTestError(ValueError):
    pass


@dataclass
class ShiftConfig:
    alpha_level: float = 0.05
    permutations: int = 500
    max_rows: int = 2000
    seed: int = 0
    min_samples: int = 10
    ridge: float = 1e-3          # lambda = ridge * n
    correction: str = "none"     # or "bonferroni" across environment pairs


@dataclass
class ShiftReport:
    pair: Tuple[str, str]
    alpha_level: float
    p_values: Dict[str, float]

    @property
    def shifted(self) -> Dict[str, bool]:
        return {v: p < self.alpha_level for v, p in self.p_values.items()}


@dataclass
class ShiftSummary:
    reports: List[ShiftReport]
    alpha_level: float
    correction: str = "none"
    dropped: Tuple[str, ...] = ()

    def threshold(self) -> float:
        if self.correction == "bonferroni" and self.reports:
            return self.alpha_level / len(self.reports)
        return self.alpha_level

    def min_p(self) -> Dict[str, float]:
        out: Dict[str, float] = {}
        for r in self.reports:
            for v, p in r.p_values.items():
                out[v] = min(p, out.get(v, 1.0))
        return out

    @property
    def shifted_set(self) -> FrozenSet[str]:
        t = self.threshold()
        return frozenset(v for v, p in self.min_p().items() if p < t and v not in self.dropped)


def build_indicator(d0: BanditDataset, d1: BanditDataset):
    """Pool two datasets and return the +1/-1 membership vector."""
    if d0.n == 0 or d1.n == 0:
        raise ShiftTestError("both datasets must be non-empty")
    if d0.schema() != d1.schema():
        raise ShiftTestError("datasets do not share a schema")
    pooled = concat([d0, d1], env=f"{d0.env}+{d1.env}")
    b = np.concatenate([np.ones(d0.n), -np.ones(d1.n)])
    return pooled, b


def _standardize(Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    sd = Z.std(axis=0)
    keep = sd > 1e-12
    return (Z[:, keep] - Z[:, keep].mean(axis=0)) / sd[keep]


def gaussian_kernel(Z: np.ndarray) -> np.ndarray:
    """Gaussian kernel with the median pairwise distance as bandwidth."""
    d = pdist(Z, "sqeuclidean")
    pos = d[d > 0]
    h2 = float(np.median(pos)) if pos.size else 1.0
    return np.exp(-squareform(d) / h2)


def ci_test(target, indicator, conditioners=None, cfg: ShiftConfig | None = None,
            rng: np.random.Generator | None = None) -> float:
    """Permutation p-value for ``target _||_ indicator | conditioners``.

    The target kernel and the indicator are residualized on the conditioner
    kernel with ridge-regularized kernel regression; the statistic is the
    squared residual cross-covariance ``r_B' (M K_S M) r_B``.  With no
    conditioners M is plain centering and this is a kernel two-sample test.
    """
    cfg = cfg or ShiftConfig()
    rng = rng or np.random.default_rng(cfg.seed)
    y = np.asarray(target, dtype=float).reshape(len(target), -1)
    b = np.asarray(indicator, dtype=float)
    n = len(b)
    if n < cfg.min_samples:
        raise ShiftTestError(f"need at least {cfg.min_samples} rows, got {n}")
    Y = _standardize(y)
    if Y.shape[1] == 0:
        return 1.0
    H = np.eye(n) - 1.0 / n
    Z = None if conditioners is None else _standardize(conditioners)
    if Z is None or Z.shape[1] == 0:
        M = H
    else:
        lam = cfg.ridge * n
        Kz = H @ gaussian_kernel(Z) @ H
        M = lam * np.linalg.solve(Kz + lam * np.eye(n), H)
        M = 0.5 * (M + M.T)
    G = M @ gaussian_kernel(Y) @ M
    r = M @ b
    t_obs = float(r @ G @ r)
    P = cfg.permutations
    idx = np.argsort(rng.random((P, n)), axis=1)
    R = r[idx].T                                   # n x P
    t_perm = np.einsum("ip,ip->p", R, G @ R)
    tol = 1e-12 * max(1.0, abs(t_obs))
    return float((1 + np.sum(t_perm >= t_obs - tol)) / (1 + P))


def conditioning_set(g: CausalGraph, node: str, ds: BanditDataset) -> np.ndarray:
    """Parent columns, plus the action one-hot for nodes the action targets."""
    cols = [ds.column(p) for p in g.parent_list(node) if p != g.action]
    if node in g.intervened and ds.n_actions > 1:
        onehot = np.eye(ds.n_actions)[ds.actions]
        cols.extend(onehot[:, 1:].T)
    if not cols:
        return np.zeros((ds.n, 0))
    return np.column_stack(cols)


def tested_variables(g: CausalGraph) -> List[str]:
    return [v for v in g.nodes if v != g.action]


def detect_shifts(envs: Sequence[BanditDataset], g: CausalGraph,
                  cfg: ShiftConfig | None = None) -> ShiftSummary:
    """Pairwise tests over every environment pair; union of rejections."""
    cfg = cfg or ShiftConfig()
    if len(envs) < 2:
        raise ShiftTestError("need at least two environments")
    variables = tested_variables(g)
    for v in variables:
        if v != envs[0].outcome and v not in envs[0].columns:
            raise ShiftTestError(f"graph node {v!r} is not a dataset column")
    reports = []
    for i, j in itertools.combinations(range(len(envs)), 2):
        sub = []
        for k in (i, j):
            d = envs[k]
            if d.n > cfg.max_rows:
                d = d.sample(cfg.max_rows, np.random.default_rng([cfg.seed, k, 7919]))
            sub.append(d)
        pooled, b = build_indicator(*sub)
        pv = {}
        for vi, v in enumerate(variables):
            rng = np.random.default_rng([cfg.seed, i, j, vi])
            pv[v] = ci_test(pooled.column(v), b, conditioning_set(g, v, pooled), cfg, rng)
        reports.append(ShiftReport((envs[i].env, envs[j].env), cfg.alpha_level, pv))
    return ShiftSummary(reports, cfg.alpha_level, cfg.correction)
