"""Worst-case evaluation and learning over an interval SEM uncertainty set.

The worst case is the solution of a linear (or mixed-integer) program whose
variables are the uncertain parameters and, for every row of a context
batch, the values of the modeled nodes.  Each bilinear term ``beta * v`` is
replaced by an auxiliary variable ``p`` with ``l_beta v <= p <= u_beta v``
(valid because node values are non-negative), and the noise shift
``(eps + mu) sigma`` becomes ``eps sigma + m`` with ``l_mu sigma <= m <=
u_mu sigma``.  Binary nodes pass their logit through an SOS2 piecewise
sigmoid; categorical nodes carry per-row class weights summing to one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import BanditDataset, concat
from .graph import CausalGraph, topological_order
from .mathprog import (MIPOptions, Model, NodeBudgetExceeded, Solution, encode_categorical, encode_sigmoid,
                       solve_lp, solve_mip)
from .policy import Policy
from .semfit import (BranchBounds, Key, NodeEquation, StructuralModel, UncertaintySpec, fit_spec,
                     model_parents, node_form, simulate)

log = logging.getLogger(__name__)


class ProgramError(ValueError):
    pass


@dataclass
class SemcpConfig:
    rows: int = 1000
    mip_rows: int = 25
    seed: int = 0
    f_lower: float = -30.0
    f_upper: float = 30.0
    breakpoints: int = 4
    tie_break: bool = True
    tie_tol: float = 0.0         # any slack lets weakly identified noise scales drift
    node_budget: int = 100_000
    indicators: bool = False    # SOS2 binary indicators; branching on the groups suffices
    antithetic: bool = True     # mirrored contexts with negated residuals


# ---------------------------------------------------------------------------
# program construction
# ---------------------------------------------------------------------------

def program_nodes(g: CausalGraph, shifted) -> List[str]:
    """Nodes whose values must be decision variables.

    A node enters when it is an ancestor of (or is) the outcome and it is
    shifted, is affected by the action, or has a parent that entered.
    """
    y = g.outcome
    relevant = set(g.ancestors(y)) | {y}
    affected = g.action_affected()
    out: List[str] = []
    for v in topological_order(g):
        if v == g.action or v not in relevant:
            continue
        if v in shifted or v in affected or any(p in out for p in model_parents(g, v)):
            out.append(v)
    return out


def _point_bounds(eq: NodeEquation) -> BranchBounds:
    if eq.form == "categorical":
        return BranchBounds(eq.node, eq.branch, eq.form, (0.0, 0.0), {},
                            probs=[(float(p), float(p)) for p in eq.probs])
    res = eq.residuals - eq.residuals.mean() if len(eq.residuals) else eq.residuals
    return BranchBounds(eq.node, eq.branch, eq.form, (eq.intercept, eq.intercept),
                        {z: (b, b) for z, b in eq.coefs.items()}, (eq.mu, eq.mu),
                        (eq.sigma, eq.sigma), res)


def resolve_bounds(spec: UncertaintySpec, node: str, n_actions: int) -> Dict[Key, BranchBounds]:
    """Interval bounds for ``node``: fitted ones if shifted, nominal points otherwise."""
    keys = spec.keys_for(node)
    if keys:
        return {k: spec.bounds[k] for k in keys}
    nom = spec.nominal
    if (node, None) in nom.equations:
        return {(node, None): _point_bounds(nom.equations[(node, None)])}
    keys = [k for k in nom.equations if k[0] == node]
    if not keys:
        raise ProgramError(f"no nominal equation for {node!r}")
    return {k: _point_bounds(nom.equations[k]) for k in keys}


@dataclass
class EvaluationProgram:
    """A built program plus the bookkeeping needed to read its solution.

    Nodes the action can affect are evaluated once per (context, action)
    pair, slot ``i * d + a``; other nodes once per context, slot ``i``.
    The objective weights pair slots by the policy's action probabilities,
    so the constraint set does not depend on the policy.
    """

    model: Model
    batch: BanditDataset
    weights: np.ndarray                                # n x d action probabilities
    nodes: List[str]
    bounds: Dict[Key, BranchBounds]
    rows_of: Dict[Key, np.ndarray]                     # slots governed by each branch
    value_vars: Dict[str, np.ndarray]                  # node -> var index per slot
    paired: Dict[str, bool] = field(default_factory=dict)
    intercept: Dict[Key, int] = field(default_factory=dict)
    sigma: Dict[Key, int] = field(default_factory=dict)
    musig: Dict[Key, int] = field(default_factory=dict)
    shared_coef: Dict[Tuple[Key, str], int] = field(default_factory=dict)
    products: Dict[Tuple[Key, str], np.ndarray] = field(default_factory=dict)  # per branch row
    eps: Dict[Key, np.ndarray] = field(default_factory=dict)                     # per branch row
    class_weights: Dict[str, np.ndarray] = field(default_factory=dict)           # n x k
    graph: Optional[CausalGraph] = None

    @property
    def n(self) -> int:
        return self.batch.n

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    def context_of(self, node: str, slots) -> np.ndarray:
        slots = np.asarray(slots)
        return slots // self.d if self.paired[node] else slots

    def slot_weights(self, node: str) -> np.ndarray:
        """Objective weight carried by each slot of ``node``'s layout."""
        if self.paired[node]:
            return self.weights.reshape(-1) / self.n
        return np.full(self.n, 1.0 / self.n)


def draw_residuals(pool: np.ndarray, n: int, rng: np.random.Generator,
                   antithetic: bool = False) -> np.ndarray:
    """Residual draws for ``n`` rows, re-centered to mean zero.

    With ``antithetic`` the second half negates the first, matching the
    mirrored batches of :func:`draw_batch`: any weighting that is equal on
    the two copies of a context then cancels the noise exactly.
    """
    if n == 0:
        return np.zeros(0)
    if len(pool) == 0:
        return np.zeros(n)
    if antithetic and n % 2 == 0:
        e = rng.choice(pool, size=n // 2, replace=len(pool) < n // 2)
        e = e - e.mean()
        return np.concatenate([e, -e])
    e = rng.choice(pool, size=n, replace=len(pool) < n)
    return e - e.mean()


def action_weights(batch: BanditDataset, g: CausalGraph, policy: Optional[Policy] = None,
                   actions=None) -> np.ndarray:
    """Per-context action probabilities: one-hot for fixed ``actions``, else the policy's."""
    d = batch.n_actions
    if actions is not None:
        w = np.zeros((batch.n, d))
        w[np.arange(batch.n), np.asarray(actions, dtype=int)] = 1.0
        return w
    policy = policy or Policy.uniform(d)
    feats = policy.features or tuple(policy_features(g, batch))
    return policy.probabilities(batch.matrix(feats))


def build_evaluation_program(batch: BanditDataset, g: CausalGraph, spec: UncertaintySpec,
                             policy: Optional[Policy] = None, cfg: SemcpConfig | None = None,
                             actions: Optional[np.ndarray] = None,
                             eps: Optional[Dict[Key, np.ndarray]] = None,
                             weights: Optional[np.ndarray] = None) -> EvaluationProgram:
    """Linearized worst-case program over the contexts of ``batch``.

    The objective is the mean over contexts of the outcome, averaged over
    the policy's action distribution (or the given fixed ``actions``, or
    precomputed n x d ``weights``).
    ``eps`` may fix the residual draws per branch, aligned with
    ``rows_of[key]``.
    """
    cfg = cfg or SemcpConfig()
    if batch.norm is None:
        raise ProgramError("the evaluation program needs normalized data")
    rng = np.random.default_rng([cfg.seed, 17])
    if weights is None:
        weights = action_weights(batch, g, policy, actions)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (batch.n, batch.n_actions):
        raise ProgramError(f"action weights must be {batch.n} x {batch.n_actions}")
    n, d = weights.shape
    nodes = program_nodes(g, spec.shifted)
    affected = g.action_affected()
    m = Model("semcp")
    prog = EvaluationProgram(m, batch, weights, nodes, {}, {}, {}, graph=g)
    for node in nodes:
        lo, hi = spec.value_bounds.get(node, (0.0, np.inf))
        if not any(node in model_parents(g, c) for c in nodes):
            # no product term reads this node, so it needs no sign constraint;
            # bounding it would couple the parameters through binding rows
            lo, hi = -np.inf, np.inf
        elif lo < 0:
            raise ProgramError(f"node {node!r} has a negative lower value bound {lo}")
        paired = node in affected and d > 1
        prog.paired[node] = paired
        S = n * d if paired else n
        bb = resolve_bounds(spec, node, d)
        parents = model_parents(g, node)
        form = next(iter(bb.values())).form
        if form == "categorical":
            if paired:
                raise ProgramError(f"categorical node {node!r} cannot depend on the action")
            _add_categorical(prog, node, next(iter(bb.values())), lo, hi)
            continue
        if form == "logit" and not parents:
            if paired:
                raise ProgramError(f"binary root {node!r} cannot depend on the action")
            _add_binary_root(prog, node, bb, cfg, lo, hi)
            continue
        prog.value_vars[node] = np.array([m.add_var(f"v[{node},{s}]", lo, hi).index for s in range(S)])
        for key, b in sorted(bb.items(), key=lambda kv: -1 if kv[0][1] is None else kv[0][1]):
            if key[1] is None:
                rows = np.arange(S)
            elif paired:
                rows = np.arange(n) * d + key[1]
            else:
                raise ProgramError(f"branched node {node!r} is not affected by the action")
            prog.bounds[key] = b
            prog.rows_of[key] = rows
            _add_branch(prog, key, b, parents, rows, cfg, rng, None if eps is None else eps.get(key))
    y = g.outcome
    if y not in prog.value_vars:
        raise ProgramError("the outcome does not depend on anything uncertain or action-driven")
    w = prog.slot_weights(y)
    m.set_objective({int(j): float(c) for j, c in zip(prog.value_vars[y], w) if c != 0.0}, "min")
    return prog


def _parent_slot(prog: EvaluationProgram, node: str, z: str, slots: np.ndarray) -> np.ndarray:
    if prog.paired.get(z, False) or not prog.paired[node]:
        return slots
    return slots // prog.d


def _parent_term(prog: EvaluationProgram, key: Key, z: str, iv, rows, coefs):
    """Add the ``beta_z * z`` term of every row in ``rows`` to ``coefs`` (row -> dict)."""
    m = prog.model
    lo, hi = iv
    name = f"{key[0]}|{key[1]}|{z}"
    if z in prog.value_vars:
        zslots = _parent_slot(prog, key[0], z, rows)
        pv = np.empty(len(rows), dtype=int)
        made: Dict[int, int] = {}
        for r, zs in enumerate(zslots):
            vz = int(prog.value_vars[z][zs])
            if vz not in made:
                p = m.add_var(f"p[{name},{zs}]", -np.inf, np.inf)
                m.add_constraint({p: 1.0, vz: -lo}, ">=", 0.0)
                m.add_constraint({p: 1.0, vz: -hi}, "<=", 0.0)
                made[vz] = p.index
            pv[r] = made[vz]
            coefs[r][pv[r]] = coefs[r].get(pv[r], 0.0) - 1.0
        prog.products[(key, z)] = pv
    else:
        b = m.add_var(f"beta[{name}]", lo, hi)
        prog.shared_coef[(key, z)] = b.index
        x = prog.batch.column(z)[prog.context_of(key[0], rows)]
        for r in range(len(rows)):
            if x[r] != 0.0:
                coefs[r][b.index] = coefs[r].get(b.index, 0.0) - float(x[r])


def _add_branch(prog, key, b: BranchBounds, parents, rows, cfg, rng, eps_fixed):
    m = prog.model
    node = key[0]
    tag = f"{node}|{key[1]}"
    c = m.add_var(f"icpt[{tag}]", *b.intercept)
    prog.intercept[key] = c.index
    coefs = [{c.index: -1.0} for _ in rows]
    for z in parents:
        _parent_term(prog, key, z, b.coefs[z], rows, coefs)
    vv = prog.value_vars[node]
    if b.form == "linear":
        s = m.add_var(f"sigma[{tag}]", *b.sigma)
        ms = m.add_var(f"musig[{tag}]", -np.inf, np.inf)
        prog.sigma[key], prog.musig[key] = s.index, ms.index
        m.add_constraint({ms: 1.0, s: -b.mu[0]}, ">=", 0.0)
        m.add_constraint({ms: 1.0, s: -b.mu[1]}, "<=", 0.0)
        if eps_fixed is not None:
            e = np.asarray(eps_fixed, dtype=float)
        else:
            # one draw per context; slots of the same context share it
            ctx = prog.context_of(node, rows)
            e = draw_residuals(b.residuals, prog.n, rng, cfg.antithetic)[ctx]
        prog.eps[key] = e
        for r, slot in enumerate(rows):
            row = coefs[r]
            row[int(vv[slot])] = 1.0
            row[ms.index] = -1.0
            if e[r] != 0.0:
                row[s.index] = -float(e[r])
            m.add_constraint(row, "=", 0.0)
    else:  # logit: logit value f, then v = piecewise sigmoid(f)
        for r, slot in enumerate(rows):
            f = m.add_var(f"f[{tag},{slot}]", cfg.f_lower, cfg.f_upper)
            row = coefs[r]
            row[f.index] = 1.0
            m.add_constraint(row, "=", 0.0)
            encode_sigmoid(m, f, int(vv[slot]), cfg.f_lower, cfg.f_upper,
                           cfg.breakpoints, prefix=f"sig[{tag},{slot}]", indicators=cfg.indicators)


def _add_binary_root(prog, node, bb, cfg, lo, hi):
    """A parentless binary node: one shared logit and probability."""
    m = prog.model
    if len(bb) != 1:
        raise ProgramError(f"binary root {node!r} cannot be action-branched")
    key, b = next(iter(bb.items()))
    c = m.add_var(f"icpt[{node}|None]", *b.intercept)
    f = m.add_var(f"f[{node}]", cfg.f_lower, cfg.f_upper)
    v = m.add_var(f"v[{node}]", max(lo, 0.0), min(hi, 1.0))
    m.add_constraint({f: 1.0, c: -1.0}, "=", 0.0)
    encode_sigmoid(m, f, v, cfg.f_lower, cfg.f_upper, cfg.breakpoints, prefix=f"sig[{node}]",
                   indicators=cfg.indicators)
    prog.intercept[key] = c.index
    prog.bounds[key] = b
    prog.rows_of[key] = np.arange(prog.n)
    prog.value_vars[node] = np.full(prog.n, v.index)


def _add_categorical(prog, node, b: BranchBounds, lo, hi):
    m = prog.model
    n = prog.n
    k = len(b.probs)
    W = np.empty((n, k), dtype=int)
    vv = np.empty(n, dtype=int)
    for i in range(n):
        w = [m.add_var(f"w[{node},{i},{c}]", 0.0, 1.0) for c in range(k)]
        encode_categorical(m, w)
        v = m.add_var(f"v[{node},{i}]", lo, max(hi, k - 1.0))
        row = {v.index: 1.0}
        row.update({wc.index: -float(c) for c, wc in enumerate(w) if c})
        m.add_constraint(row, "=", 0.0)
        W[i] = [x.index for x in w]
        vv[i] = v.index
    for c, (pl, pu) in enumerate(b.probs):
        col = {int(j): 1.0 for j in W[:, c]}
        m.add_constraint(col, ">=", n * pl - 1e-9)
        m.add_constraint(col, "<=", n * pu + 1e-9)
    key = (node, None)
    prog.bounds[key] = b
    prog.rows_of[key] = np.arange(n)
    prog.class_weights[node] = W
    prog.value_vars[node] = vv


# ---------------------------------------------------------------------------
# solving and extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorstCaseResult:
    status: str
    objective: float                       # normalized units
    objective_raw: float                   # original units
    params: Dict[Key, Dict[str, float]]
    values: Dict[str, np.ndarray]
    program: EvaluationProgram
    solution: Solution

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def clipped(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return float(min(max(self.objective, lo), hi))


def _fixed_pattern(m: Model, x: np.ndarray, tol: float = 1e-7):
    """Bounds that pin binaries and keep every SOS2 group on its active segment."""
    lo, hi = m.bounds()
    for v in m.variables:
        if v.kind == "binary":
            lo[v.index] = hi[v.index] = round(x[v.index])
    for group in m.sos2:
        keep = {i for i in group if abs(x[i]) > tol}
        for i in group:
            if i not in keep:
                lo[i] = hi[i] = 0.0
    return lo, hi


def solve_program(prog: EvaluationProgram, cfg: SemcpConfig | None = None) -> Solution:
    """Solve, then among optimal points prefer the largest noise scales.

    For mixed-integer programs the second stage is an LP on the incumbent's
    integer pattern.  An exhausted node budget keeps the best incumbent.
    """
    cfg = cfg or SemcpConfig()
    m = prog.model
    mip = m.is_mip
    if mip:
        try:
            sol = solve_mip(m, MIPOptions(node_budget=cfg.node_budget))
        except NodeBudgetExceeded as e:
            if e.incumbent is None:
                raise ProgramError(f"no feasible point within {e.nodes} branch-and-bound nodes") from None
            log.warning("%s; using the incumbent", e)
            sol = replace(e.incumbent, nodes=e.nodes)
    else:
        sol = solve_lp(m)
    if not sol.optimal or not cfg.tie_break or not prog.sigma:
        return sol
    m2 = m.copy()
    cost = dict(m.objective)
    m2.add_constraint(cost, "<=", sol.objective + cfg.tie_tol * max(1.0, abs(sol.objective)))
    m2.set_objective({j: 1.0 for j in prog.sigma.values()}, "max")
    if mip:
        lo, hi = _fixed_pattern(m, sol.x)
        sol2 = solve_lp(m2, lo, hi)
    else:
        sol2 = solve_lp(m2, warm=sol.basis)
    if not sol2.optimal:
        log.warning("tie-break stage failed (%s); keeping the first-stage optimum", sol2.status)
        return sol
    return replace(sol2, objective=m.evaluate(sol2.x), pivots=sol.pivots + sol2.pivots)


def _context_at_bound(prog: EvaluationProgram, x: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Contexts where some node value, in some slot, sits at one of its bounds."""
    lo, hi = prog.model.bounds()
    hit = np.zeros(prog.n, dtype=bool)
    for node, vv in prog.value_vars.items():
        v = x[vv]
        at = (np.abs(v - lo[vv]) <= tol) | (np.abs(v - hi[vv]) <= tol)
        ctx = prog.context_of(node, np.arange(len(vv)))
        hit[ctx[at]] = True
    return hit


def extract_params(prog: EvaluationProgram, x: np.ndarray) -> Dict[Key, Dict[str, float]]:
    """Worst-case parameter values per node branch.

    A product coefficient is read off as sum(p) / sum(v_parent) over slots
    that carry objective weight and whose context has no node value at a
    bound; elsewhere the coefficient is not pinned down by optimality.
    """
    at_bound = _context_at_bound(prog, x)
    out: Dict[Key, Dict[str, float]] = {}
    for key, b in prog.bounds.items():
        d: Dict[str, float] = {}
        if b.form == "categorical":
            W = prog.class_weights[key[0]]
            for c in range(W.shape[1]):
                d[f"p[{c}]"] = float(x[W[:, c]].mean())
            out[key] = d
            continue
        d["intercept"] = float(x[prog.intercept[key]])
        if key in prog.sigma:
            s = float(x[prog.sigma[key]])
            d["sigma"] = s
            d["mu"] = float(x[prog.musig[key]] / s) if s > 1e-12 else float(b.mu[0])
        rows = prog.rows_of[key]
        node = key[0]
        wts = prog.slot_weights(node)[rows] if prog.paired.get(node) else np.ones(len(rows))
        for z, (lo, hi) in b.coefs.items():
            if (key, z) in prog.shared_coef:
                d[f"beta[{z}]"] = float(x[prog.shared_coef[(key, z)]])
                continue
            pv = prog.products[(key, z)]
            vz = x[prog.value_vars[z][_parent_slot(prog, node, z, rows)]]
            ok = vz > 1e-9
            keep = ok & ~at_bound[prog.context_of(node, rows)] & (wts > 0)
            if not keep.any():
                keep = ok & (wts > 0) if (ok & (wts > 0)).any() else ok
            beta = float(x[pv[keep]].sum() / vz[keep].sum()) if keep.any() else float(lo)
            d[f"beta[{z}]"] = float(min(max(beta, lo), hi))
        out[key] = d
    return out


def result_from_solution(prog: EvaluationProgram, sol: Solution, spec: UncertaintySpec) -> WorstCaseResult:
    norm = prog.batch.norm
    y = prog.graph.outcome
    if not sol.optimal:
        return WorstCaseResult(sol.status, np.nan, np.nan, {}, {}, prog, sol)
    obj = float(sol.objective)
    raw = float(norm.invert(y, obj)) if norm is not None else obj
    values = {node: sol.x[vv] for node, vv in prog.value_vars.items()}
    return WorstCaseResult("optimal", obj, raw, extract_params(prog, sol.x), values, prog, sol)


def policy_features(g: CausalGraph, ds: BanditDataset) -> List[str]:
    """Context columns a policy may read: covariates the action cannot affect."""
    affected = g.action_affected()
    return [c for c in ds.columns if c not in affected and c in g.nodes]


def draw_batch(train_envs: Sequence[BanditDataset], rows: int, seed: int,
               antithetic: bool = False) -> BanditDataset:
    """Pooled training contexts; ``antithetic`` stacks ``rows // 2`` of them twice."""
    pooled = concat(list(train_envs))
    rng = np.random.default_rng([seed, 29])
    if not antithetic:
        return pooled.sample(rows, rng)
    half = pooled.sample(max(rows // 2, 1), rng)
    return concat([half, half], env=half.env)


def worst_case_evaluate(train_envs: Sequence[BanditDataset], g: CausalGraph, shifted,
                        policy: Optional[Policy] = None, cfg: SemcpConfig | None = None,
                        spec: Optional[UncertaintySpec] = None,
                        batch: Optional[BanditDataset] = None) -> WorstCaseResult:
    """Fit the uncertainty set (unless given), build the program on a batch of
    pooled training contexts and solve it."""
    cfg = cfg or SemcpConfig()
    if spec is None:
        spec = fit_spec(train_envs, g, shifted)
    if batch is None:
        nodes = program_nodes(g, spec.shifted)
        mip = any(node_form(g.kind(v) if v != g.outcome else "cont") == "logit"
                  and model_parents(g, v) for v in nodes)
        batch = draw_batch(train_envs, cfg.mip_rows if mip else cfg.rows, cfg.seed, cfg.antithetic)
    prog = build_evaluation_program(batch, g, spec, policy, cfg)
    sol = solve_program(prog, cfg)
    if sol.status == "infeasible":
        raise ProgramError("the worst-case program is infeasible; check the value bounds "
                           f"{ {k: spec.value_bounds[k] for k in prog.nodes} }")
    return result_from_solution(prog, sol, spec)


def extract_worst_case_model(res: WorstCaseResult, nominal: StructuralModel) -> StructuralModel:
    """Nominal model with the program's nodes replaced by their worst-case equations."""
    if not res.optimal:
        raise ProgramError("no worst case to extract")
    prog = res.program
    eqs = dict(nominal.equations)
    for key, d in res.params.items():
        b = prog.bounds[key]
        if b.form == "categorical":
            probs = np.array([d[f"p[{c}]"] for c in range(len(b.probs))])
            eqs[key] = NodeEquation(key[0], 0.0, {}, branch=key[1], form="categorical", probs=probs)
            continue
        coefs = {z: d[f"beta[{z}]"] for z in b.coefs}
        old = nominal.equations.get(key)
        if old is None and key[1] is not None:
            old = nominal.equations.get((key[0], None))
        res_pool = b.residuals if len(b.residuals) else (old.residuals if old is not None else np.zeros(0))
        eqs[key] = NodeEquation(key[0], d["intercept"], coefs,
                                noise_std=float(np.std(res_pool)) * d.get("sigma", 1.0) if len(res_pool) else 0.0,
                                residuals=res_pool, branch=key[1], form=b.form,
                                mu=d.get("mu", 0.0), sigma=d.get("sigma", 1.0))
    # a node branched in the worst case must not keep an unbranched nominal twin
    for key in list(eqs):
        if key[1] is None and any(k[0] == key[0] and k[1] is not None for k in res.params):
            del eqs[key]
        elif key[1] is not None and (key[0], None) in res.params:
            del eqs[key]
    return StructuralModel(nominal.graph, eqs, "worst-case", nominal.n_actions, worst_case=True)


# ---------------------------------------------------------------------------
# learning
# ---------------------------------------------------------------------------

def expected_rewards(wc: StructuralModel, contexts: Dict[str, np.ndarray], n_actions: int) -> np.ndarray:
    """E[Y | x, a] for every action under ``wc``, noise at its mean.

    Covariates the action cannot affect are read from ``contexts``; the
    action's descendants are recomputed from the model.
    """
    g = wc.graph
    affected = g.action_affected()
    sub = StructuralModel(g, {k: e for k, e in wc.equations.items() if k[0] in affected},
                          wc.env, wc.n_actions, wc.worst_case)
    n = len(next(iter(contexts.values())))
    out = np.empty((n, n_actions))
    for a in range(n_actions):
        vals = simulate(sub, contexts, np.full(n, a), "zero")
        out[:, a] = vals[g.outcome] if g.outcome in vals else contexts[g.outcome]
    return out


def learn_policy(wc: StructuralModel, contexts: BanditDataset) -> Policy:
    """Per-context argmax of the worst-case expected reward (lowest index on ties)."""
    feats = tuple(policy_features(wc.graph, contexts))
    n_actions = contexts.n_actions

    def scorer(X):
        X = np.atleast_2d(X)
        return expected_rewards(wc, {f: X[:, j] for j, f in enumerate(feats)}, n_actions)

    return Policy.model_argmax(scorer, n_actions, feats)
