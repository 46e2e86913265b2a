"""Per-environment structural-equation fits and the interval uncertainty set.

Continuous nodes get linear equations fitted by least squares, binary nodes
logit equations fitted by IRLS, categorical nodes class frequencies.  Nodes
the action intervenes on get one equation per action.  Fits from several
training environments are reduced to per-parameter [min, max] intervals.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .data import BanditDataset, concat
from .graph import CausalGraph, n_categories, topological_order

log = logging.getLogger(__name__)

Key = Tuple[str, Optional[int]]


class FitError(ValueError):
    pass


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def node_form(kind: str) -> str:
    if kind == "bin":
        return "logit"
    if kind.startswith("cat:"):
        return "categorical"
    return "linear"


@dataclass
class NodeEquation:
    """``f = intercept + sum coefs[z] * z + (eps + mu) * sigma``.

    Logit equations give the probability ``sigmoid(intercept + ...)`` and carry
    no noise.  Categorical equations carry class probabilities instead.
    """

    node: str
    intercept: float
    coefs: Dict[str, float]
    noise_std: float = 0.0
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    branch: Optional[int] = None
    form: str = "linear"
    probs: Optional[np.ndarray] = None
    mu: float = 0.0
    sigma: float = 1.0
    n_rows: int = 0

    def linear_part(self, values: Dict[str, np.ndarray], n: int) -> np.ndarray:
        out = np.full(n, float(self.intercept))
        for z, b in self.coefs.items():
            out = out + b * values[z]
        return out

    def to_dict(self) -> dict:
        d = {"node": self.node, "branch": self.branch, "form": self.form,
             "intercept": self.intercept, "coefficients": dict(self.coefs),
             "noise_std": self.noise_std, "mu": self.mu, "sigma": self.sigma, "n_rows": self.n_rows}
        if self.probs is not None:
            d["probs"] = [float(p) for p in self.probs]
        return d


@dataclass
class StructuralModel:
    graph: CausalGraph
    equations: Dict[Key, NodeEquation]
    env: str = ""
    n_actions: int = 1
    worst_case: bool = False

    @property
    def nodes(self) -> List[str]:
        have = {k[0] for k in self.equations}
        return [v for v in topological_order(self.graph) if v in have]

    def branched(self, node: str) -> bool:
        return (node, None) not in self.equations

    def equation(self, node: str, action: Optional[int] = None) -> NodeEquation:
        if (node, None) in self.equations:
            return self.equations[(node, None)]
        return self.equations[(node, action)]

    def to_json(self) -> str:
        eqs = [self.equations[k].to_dict() for k in sorted(self.equations, key=_key_order)]
        return json.dumps({"env": self.env, "worst_case": self.worst_case,
                           "n_actions": self.n_actions, "equations": eqs}, indent=2)


def _key_order(k: Key):
    return (k[0], -1 if k[1] is None else k[1])


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _design(ds: BanditDataset, parents: Sequence[str]) -> np.ndarray:
    return np.column_stack([np.ones(ds.n), ds.matrix(parents)]) if parents else np.ones((ds.n, 1))


def _irls(X: np.ndarray, y: np.ndarray, max_iter: int = 100, tol: float = 1e-8,
          ridge: float = 1e-6) -> np.ndarray:
    """Logistic regression by iteratively reweighted least squares.

    A tiny ridge term keeps the Newton system solvable when the classes are
    separable.
    """
    beta = np.zeros(X.shape[1])
    pen = ridge * len(y) * np.eye(X.shape[1])
    pen[0, 0] = ridge  # barely penalize the intercept
    for _ in range(max_iter):
        p = sigmoid(X @ beta)
        w = np.clip(p * (1.0 - p), 1e-10, None)
        grad = X.T @ (y - p) - pen @ beta
        hess = (X * w[:, None]).T @ X + pen
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            return beta
    raise FitError(f"logistic fit did not converge in {max_iter} iterations")


def fit_node_equation(ds: BanditDataset, node: str, parents: Sequence[str],
                      branch_action: Optional[int] = None, form: str | None = None,
                      strict: bool = True) -> NodeEquation:
    """Fit one equation for ``node`` on ``ds`` (rows of ``branch_action`` only if given)."""
    parents = [p for p in parents]
    if branch_action is not None:
        ds = ds.subset(np.flatnonzero(ds.actions == branch_action))
    kind = "cont" if node == ds.outcome else ds.kinds[node]
    form = form or node_form(kind)
    y = ds.column(node)
    if form == "categorical":
        k = n_categories(kind)
        counts = np.bincount(y.astype(int), minlength=k)[:k]
        probs = counts / max(counts.sum(), 1)
        return NodeEquation(node, 0.0, {}, branch=branch_action, form=form, probs=probs, n_rows=ds.n)
    if ds.n < len(parents) + 2:
        raise FitError(f"{node}: {ds.n} rows are too few for {len(parents)} parents")
    X = _design(ds, parents)
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        _, _, vt = np.linalg.svd(X, full_matrices=False)
        null = vt[rank:]
        bad = [parents[j - 1] if j else "intercept"
               for j in np.flatnonzero(np.abs(null).max(axis=0) > 1e-8)]
        msg = f"{node}: rank-deficient design, collinear terms {bad}"
        if strict:
            raise FitError(msg)
        log.warning(msg)
    if form == "logit":
        beta = _irls(X, y)
        return NodeEquation(node, float(beta[0]), dict(zip(parents, map(float, beta[1:]))),
                            branch=branch_action, form="logit", n_rows=ds.n)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    resid = resid - resid.mean() if rank < X.shape[1] else resid
    return NodeEquation(node, float(beta[0]), dict(zip(parents, map(float, beta[1:]))),
                        noise_std=float(resid.std()), residuals=resid, branch=branch_action,
                        form="linear", n_rows=ds.n)


def model_parents(g: CausalGraph, node: str) -> List[str]:
    return [p for p in g.parent_list(node) if p != g.action]


def fit_environment_model(ds: BanditDataset, g: CausalGraph, shifted_set: Iterable[str],
                          strict: bool = True) -> StructuralModel:
    """One equation per listed node; per-action branches for intervened nodes.

    A branch with too few rows falls back to the action-agnostic fit.
    """
    eqs: Dict[Key, NodeEquation] = {}
    shifted = set(shifted_set)
    for node in topological_order(g):
        if node not in shifted or node == g.action:
            continue
        parents = model_parents(g, node)
        kind = "cont" if node == g.outcome else g.kind(node)
        form = node_form(kind)
        if form == "categorical" and parents:
            log.warning("%s: categorical node with parents modeled by its marginal", node)
            parents = []
        if node in g.intervened and ds.n_actions > 1 and form != "categorical":
            for a in range(ds.n_actions):
                n_a = int(np.sum(ds.actions == a))
                if n_a < len(parents) + 2:
                    log.warning("%s: action %d has %d rows; using the pooled fit", node, a, n_a)
                    eq = fit_node_equation(ds, node, parents, None, form, strict)
                    eqs[(node, a)] = replace(eq, branch=a)
                else:
                    eqs[(node, a)] = fit_node_equation(ds, node, parents, a, form, strict)
        else:
            eqs[(node, None)] = fit_node_equation(ds, node, parents, None, form, strict)
    return StructuralModel(g, eqs, ds.env, ds.n_actions)


def branch_rows(ds: BanditDataset, key: Key) -> np.ndarray:
    if key[1] is None:
        return np.arange(ds.n)
    return np.flatnonzero(ds.actions == key[1])


# ---------------------------------------------------------------------------
# uncertainty set
# ---------------------------------------------------------------------------

Interval = Tuple[float, float]


@dataclass
class BranchBounds:
    node: str
    branch: Optional[int]
    form: str
    intercept: Interval
    coefs: Dict[str, Interval]
    mu: Interval = (0.0, 0.0)
    sigma: Interval = (1.0, 1.0)
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    probs: Optional[List[Interval]] = None

    def intervals(self) -> Dict[str, Interval]:
        out = {"intercept": self.intercept, "mu": self.mu, "sigma": self.sigma}
        out.update({f"beta[{z}]": iv for z, iv in self.coefs.items()})
        if self.probs is not None:
            out.update({f"p[{k}]": iv for k, iv in enumerate(self.probs)})
        return out

    def widen(self, name: str, factor: float) -> "BranchBounds":
        """Copy with one interval scaled about its midpoint by ``factor``."""
        def grow(iv):
            c, h = 0.5 * (iv[0] + iv[1]), 0.5 * (iv[1] - iv[0])
            h = max(h, 1e-12)
            return (c - factor * h, c + factor * h)
        if name == "intercept":
            return replace(self, intercept=grow(self.intercept))
        if name == "mu":
            return replace(self, mu=grow(self.mu))
        if name == "sigma":
            lo, hi = grow(self.sigma)
            return replace(self, sigma=(max(lo, 0.0), hi))
        if name.startswith("beta["):
            z = name[5:-1]
            coefs = dict(self.coefs)
            coefs[z] = grow(coefs[z])
            return replace(self, coefs=coefs)
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"node": self.node, "branch": self.branch, "form": self.form,
                "intervals": {k: list(v) for k, v in self.intervals().items()}}


@dataclass
class UncertaintySpec:
    """Interval bounds for every shifted node (and branch), plus node-value ranges."""

    graph: CausalGraph
    bounds: Dict[Key, BranchBounds]
    value_bounds: Dict[str, Interval]
    nominal: StructuralModel
    n_actions: int
    shifted: FrozenSet[str] = frozenset()

    def keys_for(self, node: str) -> List[Key]:
        return sorted((k for k in self.bounds if k[0] == node), key=_key_order)

    def replace_bounds(self, key: Key, bb: BranchBounds) -> "UncertaintySpec":
        b = dict(self.bounds)
        b[key] = bb
        return replace(self, bounds=b)

    def is_degenerate(self, tol: float = 1e-12) -> bool:
        return all(iv[1] - iv[0] <= tol for bb in self.bounds.values()
                   for iv in bb.intervals().values())

    def to_json(self) -> str:
        return json.dumps({"shifted": sorted(self.shifted),
                           "value_bounds": {k: list(v) for k, v in sorted(self.value_bounds.items())},
                           "bounds": [self.bounds[k].to_dict() for k in sorted(self.bounds, key=_key_order)]},
                          indent=2)


def _span(values: Sequence[float]) -> Interval:
    return (float(min(values)), float(max(values)))


def aggregate_bounds(models: Sequence[StructuralModel], data: Sequence[BanditDataset],
                     nominal: Optional[StructuralModel] = None) -> UncertaintySpec:
    """[min, max] across environments for every fitted parameter.

    The nominal noise sample of a node (branch) pools the environments'
    residuals.  mu is each environment's residual mean relative to that pool
    and sigma the ratio of residual standard deviations.  Node values are
    bounded by [0, largest observed value].
    """
    if not models:
        raise FitError("no environment models given")
    if len(models) < 2:
        log.warning("a single environment gives point intervals")
    g = models[0].graph
    keys = set(models[0].equations)
    for m in models[1:]:
        if set(m.equations) != keys:
            raise FitError("environment models cover different nodes or branches")
    pooled = concat(list(data))
    if nominal is None:
        nominal = fit_environment_model(pooled, g, {k[0] for k in keys}, strict=False)
    bounds: Dict[Key, BranchBounds] = {}
    for key in keys:
        eqs = [m.equations[key] for m in models]
        e0 = eqs[0]
        if e0.form == "categorical":
            k = len(e0.probs)
            probs = [_span([e.probs[c] for e in eqs]) for c in range(k)]
            bounds[key] = BranchBounds(key[0], key[1], e0.form, (0.0, 0.0), {}, probs=probs)
            continue
        coefs = {z: _span([e.coefs[z] for e in eqs]) for z in e0.coefs}
        icpt = _span([e.intercept for e in eqs])
        if e0.form == "logit":
            bounds[key] = BranchBounds(key[0], key[1], e0.form, icpt, coefs)
            continue
        pool = np.concatenate([e.residuals for e in eqs])
        m0, s0 = float(pool.mean()), float(pool.std())
        mus = [float(e.residuals.mean()) - m0 if len(e.residuals) else 0.0 for e in eqs]
        if s0 > 0:
            sig = [float(e.residuals.std()) / s0 for e in eqs]
        else:
            sig = [1.0 for _ in eqs]
        lo_s, hi_s = _span(sig)
        bounds[key] = BranchBounds(key[0], key[1], e0.form, icpt, coefs, _span(mus),
                                   (max(lo_s, 0.0), hi_s), pool - m0)
    value_bounds = {}
    for node in g.nodes:
        if node == g.action:
            continue
        v = pooled.column(node)
        value_bounds[node] = (0.0, float(max(v.max(), 0.0)))
    return UncertaintySpec(g, bounds, value_bounds, nominal, models[0].n_actions,
                           frozenset(k[0] for k in keys))


def bernoulli_kl(p: float, q: float, eps: float = 1e-12) -> float:
    p = min(max(p, eps), 1 - eps)
    q = min(max(q, eps), 1 - eps)
    return p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q))


def filter_binary_roots(shifted: Iterable[str], envs: Sequence[BanditDataset], g: CausalGraph,
                        threshold: float = 1e-3):
    """Drop binary root nodes whose rates barely differ between environments.

    Returns ``(kept, dropped)``; a binary root is dropped when the largest
    pairwise Bernoulli KL divergence across environments is below
    ``threshold``.
    """
    kept, dropped = set(), set()
    for v in shifted:
        if v in g.nodes and g.kind(v) == "bin" and not model_parents(g, v) and v not in g.intervened:
            rates = [float(d.column(v).mean()) for d in envs]
            kl = max(bernoulli_kl(p, q) for p in rates for q in rates)
            (dropped if kl < threshold else kept).add(v)
        else:
            kept.add(v)
    return frozenset(kept), frozenset(dropped)


def fit_spec(envs: Sequence[BanditDataset], g: CausalGraph, shifted: Iterable[str],
             strict: bool = False) -> UncertaintySpec:
    """Fit every environment and aggregate.  Nodes needed downstream of the
    shifted set are fitted nominally (pooled) as well."""
    shifted = frozenset(shifted)
    models = [fit_environment_model(d, g, shifted, strict) for d in envs]
    pooled = concat(list(envs))
    everything = {v for v in g.nodes if v != g.action}
    nominal = fit_environment_model(pooled, g, everything, strict=False)
    return aggregate_bounds(models, envs, nominal)


# ---------------------------------------------------------------------------
# forward simulation
# ---------------------------------------------------------------------------

def simulate(model: StructuralModel, contexts, actions, noise_mode: str = "zero",
             rng: np.random.Generator | None = None) -> Dict[str, np.ndarray]:
    """Evaluate the modeled nodes root-to-leaf.

    ``contexts`` maps column names to arrays (or is a dataset) and must supply
    every unmodeled parent.  With ``noise_mode="zero"`` linear noise sits at
    its mean, logit nodes return probabilities and categorical nodes their
    expected index; ``"resample"`` draws residuals, Bernoulli outcomes and
    categories.
    """
    if noise_mode not in ("zero", "resample"):
        raise ValueError("noise_mode must be 'zero' or 'resample'")
    rng = rng or np.random.default_rng(0)
    actions = np.asarray(actions, dtype=int)
    n = len(actions)
    if isinstance(contexts, BanditDataset):
        values = {c: contexts.column(c) for c in contexts.columns}
    else:
        values = {k: np.asarray(v, dtype=float) for k, v in contexts.items()}
    for node in model.nodes:
        if model.branched(node):
            out = np.empty(n)
            for a in np.unique(actions):
                idx = np.flatnonzero(actions == a)
                sub = {k: v[idx] for k, v in values.items()}
                out[idx] = _eval_equation(model.equation(node, int(a)), sub, len(idx), noise_mode, rng)
        else:
            out = _eval_equation(model.equation(node), values, n, noise_mode, rng)
        values[node] = out
    return values


def _eval_equation(eq: NodeEquation, values, n: int, noise_mode: str, rng) -> np.ndarray:
    if eq.form == "categorical":
        p = np.asarray(eq.probs, dtype=float)
        if noise_mode == "zero":
            return np.full(n, float(np.arange(len(p)) @ p))
        return rng.choice(len(p), size=n, p=p / p.sum()).astype(float)
    missing = [z for z in eq.coefs if z not in values]
    if missing:
        raise KeyError(f"context lacks columns {missing}")
    lin = eq.linear_part(values, n)
    if eq.form == "logit":
        p = sigmoid(lin)
        return p if noise_mode == "zero" else (rng.random(n) < p).astype(float)
    if noise_mode == "zero" or len(eq.residuals) == 0:
        return lin + eq.mu * eq.sigma
    eps = rng.choice(eq.residuals, size=n, replace=True)
    return lin + (eps + eq.mu) * eq.sigma
