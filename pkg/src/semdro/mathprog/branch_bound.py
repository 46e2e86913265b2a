"""Branch-and-bound over binary variables and SOS2 groups."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .model import Model, Solution
from .simplex import Tolerances, solve_lp


@dataclass
class MIPOptions:
    integrality_tol: float = 1e-6
    sos_tol: float = 1e-7
    rel_gap: float = 1e-6
    node_budget: int = 100_000


class NodeBudgetExceeded(RuntimeError):
    def __init__(self, incumbent: Optional[Solution], gap: float, nodes: int):
        self.incumbent = incumbent
        self.gap = gap
        self.nodes = nodes
        super().__init__(f"node budget exhausted after {nodes} nodes (gap {gap:.3g})")


def _fractional_binary(model: Model, x: np.ndarray, tol: float) -> int:
    best, best_frac = -1, tol
    for v in model.variables:
        if v.kind != "binary":
            continue
        f = abs(x[v.index] - round(x[v.index]))
        if f > best_frac:
            best, best_frac = v.index, f
    return best


def _sos2_violation(model: Model, x: np.ndarray, tol: float):
    """First violated SOS2 group and its split index, or None."""
    for g, group in enumerate(model.sos2):
        vals = np.abs(x[group])
        nz = np.flatnonzero(vals > tol)
        if len(nz) <= 1 or (len(nz) == 2 and nz[1] - nz[0] == 1):
            continue
        lo_k, hi_k = int(nz[0]), int(nz[-1])
        w = vals[nz]
        mean_pos = float((nz * w).sum() / w.sum())
        r = int(round(mean_pos))
        r = min(max(r, lo_k + 1), hi_k - 1)
        return g, r
    return None


def solve_mip(model: Model, options: MIPOptions | None = None,
              tol: Tolerances | None = None) -> Solution:
    """Branch-and-bound using LP relaxations from :func:`solve_lp`.

    The search dives depth-first until it has an incumbent, then proceeds
    best-bound first.

    Fractional binaries are branched on first (most fractional), then SOS2
    groups are split at the weight-averaged position of their nonzeros: the
    left child zeroes every member after the split, the right child every
    member before it.
    """
    opt = options or MIPOptions()
    lo0, hi0 = model.bounds()
    sign = -1.0 if model.sense == "max" else 1.0
    if not model.is_mip:
        return solve_lp(model, tol=tol)

    incumbent: Optional[Solution] = None
    best = math.inf
    nodes = 0
    pivots = 0
    counter = 0
    root = solve_lp(model, lo0, hi0, tol=tol)
    pivots += root.pivots
    if root.status == "unbounded":
        return root
    heap: List = []
    if root.optimal:
        heapq.heappush(heap, (sign * root.objective, 0, counter, lo0, hi0, root))
    diving = True          # depth-first until the first incumbent, then best-bound
    while heap:
        if diving and incumbent is not None:
            diving = False
            heapq.heapify(heap)
        if diving:
            bound, depth, _, lo, hi, sol = heap.pop()
        else:
            bound, depth, _, lo, hi, sol = heapq.heappop(heap)
        if bound >= best - opt.rel_gap * max(1.0, abs(best)):
            continue
        nodes += 1
        if nodes > opt.node_budget:
            gap = (best - bound) / max(1.0, abs(best)) if incumbent else math.inf
            raise NodeBudgetExceeded(incumbent, gap, nodes)
        x = sol.x
        children = []
        j = _fractional_binary(model, x, opt.integrality_tol)
        if j >= 0:
            l1, h1 = lo.copy(), hi.copy()
            h1[j] = 0.0
            l2, h2 = lo.copy(), hi.copy()
            l2[j] = 1.0
            children = [(l1, h1), (l2, h2)]
        else:
            viol = _sos2_violation(model, x, opt.sos_tol)
            if viol is not None:
                g, r = viol
                group = model.sos2[g]
                l1, h1 = lo.copy(), hi.copy()
                for i in group[r + 1:]:
                    l1[i], h1[i] = 0.0, 0.0
                l2, h2 = lo.copy(), hi.copy()
                for i in group[:r]:
                    l2[i], h2[i] = 0.0, 0.0
                children = [(l1, h1), (l2, h2)]
        if not children:
            val = sign * sol.objective
            if val < best:
                best = val
                x = x.copy()
                for v in model.variables:
                    if v.kind == "binary":
                        x[v.index] = round(x[v.index])
                incumbent = Solution("optimal", objective=model.evaluate(x), x=x,
                                     names=sol.names, duals=sol.duals,
                                     reduced_costs=sol.reduced_costs)
            continue
        if diving:
            children.reverse()    # the first child is explored first
        for l_c, h_c in children:
            if np.any(l_c > h_c):
                continue
            child = solve_lp(model, l_c, h_c, tol=tol)
            pivots += child.pivots
            if not child.optimal:
                continue
            cb = sign * child.objective
            if cb >= best - opt.rel_gap * max(1.0, abs(best)):
                continue
            counter += 1
            item = (cb, -(depth + 1), counter, l_c, h_c, child)
            if diving:
                heap.append(item)
            else:
                heapq.heappush(heap, item)
    if incumbent is None:
        return Solution("infeasible", names=tuple(v.name for v in model.variables),
                        nodes=nodes, pivots=pivots)
    incumbent.nodes = nodes
    incumbent.pivots = pivots
    return incumbent


def solve(model: Model, options: MIPOptions | None = None) -> Solution:
    """Dispatch to the LP or MIP path depending on the model."""
    if model.is_mip:
        return solve_mip(model, options)
    return solve_lp(model)
