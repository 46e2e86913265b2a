"""Bounded-variable revised simplex.

Rows are brought to equality form with one slack per row (``a x + s = b``,
slack bounds encode the relation).  The basis inverse is kept as a sparse LU
factorisation of the basis matrix plus a product-form eta file, refactored
every ``refactor_every`` pivots.  Pricing is Dantzig's rule with a Harris
two-pass ratio test; after a run of degenerate pivots the method switches to
Bland's rule until progress resumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import INF, Model, Solution

BASIC, LOWER, UPPER, FREE = 0, 1, 2, 3


class LPError(RuntimeError):
    """Numerical breakdown or exhausted pivot budget."""


@dataclass
class Tolerances:
    primal: float = 1e-7
    dual: float = 1e-9
    pivot: float = 1e-9
    harris: float = 1e-9


class _BasisFactor:
    def __init__(self, A: sp.csc_matrix, basis: np.ndarray):
        B = A[:, basis].tocsc()
        try:
            self.lu = splu(B, permc_spec="COLAMD", diag_pivot_thresh=0.1)
        except RuntimeError as exc:  # singular basis
            raise LPError(f"basis factorisation failed: {exc}") from None
        self.etas: list = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        x = self.lu.solve(v)
        for r, idx, vals, er in self.etas:
            xr = x[r]
            if xr != 0.0:
                x[idx] += vals * xr
                x[r] = er * xr
        return x

    def btran(self, c: np.ndarray) -> np.ndarray:
        z = np.array(c, dtype=float)
        for r, idx, vals, er in reversed(self.etas):
            z[r] = er * z[r] + vals @ z[idx]
        return self.lu.solve(z, trans="T")

    def push(self, r: int, alpha: np.ndarray) -> None:
        ar = alpha[r]
        idx = np.flatnonzero(alpha)
        idx = idx[idx != r]
        self.etas.append((r, idx, -alpha[idx] / ar, 1.0 / ar))


class _StandardForm:
    """min c x  s.t.  A x = b,  lo <= x <= hi  (structural columns then slacks)."""

    def __init__(self, model: Model, lower=None, upper=None):
        n = model.n_vars
        m = len(model.constraints)
        rows, cols, vals = [], [], []
        b = np.zeros(m)
        slo = np.zeros(m)
        shi = np.zeros(m)
        for r, c in enumerate(model.constraints):
            for j, a in c.coefs.items():
                rows.append(r)
                cols.append(j)
                vals.append(a)
            b[r] = c.rhs
            if c.relation == "<=":
                slo[r], shi[r] = 0.0, INF
            elif c.relation == ">=":
                slo[r], shi[r] = -INF, 0.0
        rows.extend(range(m))
        cols.extend(range(n, n + m))
        vals.extend([1.0] * m)
        self.A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n + m))
        lo, hi = model.bounds()
        if lower is not None:
            lo = np.asarray(lower, dtype=float)
        if upper is not None:
            hi = np.asarray(upper, dtype=float)
        self.lo = np.concatenate([lo, slo])
        self.hi = np.concatenate([hi, shi])
        c = model.cost_vector()
        if model.sense == "max":
            c = -c
        self.c = np.concatenate([c, np.zeros(m)])
        self.b = b
        self.n, self.m = n, m


def _initial_value(lo: float, hi: float) -> Tuple[float, int]:
    if math.isfinite(lo):
        return lo, LOWER
    if math.isfinite(hi):
        return hi, UPPER
    return 0.0, FREE


class RevisedSimplex:
    def __init__(self, A: sp.csc_matrix, b: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                 tol: Tolerances | None = None, refactor_every: int = 64,
                 max_pivots: int | None = None, degenerate_limit: int = 100):
        self.A = A.tocsc()
        self.AT = self.A.T.tocsr()
        self.b = b
        self.lo = lo.astype(float).copy()
        self.hi = hi.astype(float).copy()
        self.tol = tol or Tolerances()
        self.refactor_every = refactor_every
        self.m, self.N = A.shape
        self.max_pivots = max_pivots or 50 * (self.m + self.N) + 10000
        self.degenerate_limit = degenerate_limit
        self.pivots = 0

    # -- basis bookkeeping ----------------------------------------------
    def _refactor(self) -> None:
        self.factor = _BasisFactor(self.A, self.basis)
        xn = self.x.copy()
        xn[self.basis] = 0.0
        self.x[self.basis] = self.factor.ftran(self.b - self.A @ xn)

    def _column(self, j: int) -> np.ndarray:
        col = np.zeros(self.m)
        start, end = self.A.indptr[j], self.A.indptr[j + 1]
        col[self.A.indices[start:end]] = self.A.data[start:end]
        return col

    # -- main loop -------------------------------------------------------
    def run(self, cost: np.ndarray) -> str:
        tol = self.tol
        degenerate = 0
        bland = False
        since_refactor = 0
        while True:
            if self.pivots >= self.max_pivots:
                raise LPError(f"pivot budget of {self.max_pivots} exhausted")
            y = self.factor.btran(cost[self.basis])
            d = cost - self.AT @ y
            st = self.status
            movable = self.hi > self.lo
            inc = movable & ((st == LOWER) | (st == FREE)) & (d < -tol.dual)
            dec = movable & ((st == UPPER) | (st == FREE)) & (d > tol.dual)
            cand = inc | dec
            if not cand.any():
                self.y, self.d = y, d
                return "optimal"
            if bland:
                q = int(np.flatnonzero(cand)[0])
            else:
                score = np.where(cand, np.abs(d), -1.0)
                q = int(np.argmax(score))
            s = 1.0 if inc[q] else -1.0
            alpha = self.factor.ftran(self._column(q))
            delta = -s * alpha
            xb = self.x[self.basis]
            lob = self.lo[self.basis]
            hib = self.hi[self.basis]
            down = delta < -tol.pivot
            up = delta > tol.pivot
            with np.errstate(divide="ignore", invalid="ignore"):
                exact = np.full(self.m, INF)
                exact[down] = (xb[down] - lob[down]) / -delta[down]
                exact[up] = (hib[up] - xb[up]) / delta[up]
            exact = np.maximum(exact, 0.0)
            r = -1
            if bland:
                tmin = exact.min() if self.m else INF
                if math.isfinite(tmin):
                    ties = np.flatnonzero(exact <= tmin + 1e-12)
                    r = int(ties[np.argmin(self.basis[ties])])
                    t = float(exact[r])
                else:
                    t = INF
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    relaxed = np.full(self.m, INF)
                    relaxed[down] = (xb[down] - lob[down] + tol.harris) / -delta[down]
                    relaxed[up] = (hib[up] - xb[up] + tol.harris) / delta[up]
                t1 = relaxed.min() if self.m else INF
                if math.isfinite(t1):
                    elig = np.flatnonzero(exact <= t1)
                    r = int(elig[np.argmax(np.abs(delta[elig]))])
                    t = float(exact[r])
                else:
                    t = INF
            rng = self.hi[q] - self.lo[q]
            if rng <= t:
                # bound flip, basis unchanged
                t = rng
                if not math.isfinite(t):
                    return "unbounded"
                self.x[self.basis] = xb + t * delta
                if s > 0:
                    self.x[q], self.status[q] = self.hi[q], UPPER
                else:
                    self.x[q], self.status[q] = self.lo[q], LOWER
                self.pivots += 1
                degenerate = 0
                bland = False
                continue
            if r < 0:
                return "unbounded"
            self.x[self.basis] = xb + t * delta
            self.x[q] += s * t
            p = self.basis[r]
            if delta[r] < 0:
                self.x[p], self.status[p] = self.lo[p], LOWER
            else:
                self.x[p], self.status[p] = self.hi[p], UPPER
            if not math.isfinite(self.x[p]):
                self.x[p], self.status[p] = 0.0, FREE
            self.basis[r] = q
            self.status[q] = BASIC
            self.factor.push(r, alpha)
            self.pivots += 1
            since_refactor += 1
            if since_refactor >= self.refactor_every:
                self._refactor()
                since_refactor = 0
            if t <= 1e-12:
                degenerate += 1
                if degenerate >= self.degenerate_limit:
                    bland = True
            else:
                degenerate = 0
                bland = False

    # -- drivers ---------------------------------------------------------
    def cold_start(self) -> np.ndarray:
        """Slack/artificial starting basis.  Returns the phase-1 cost vector."""
        m, N = self.m, self.N
        n_struct = N - m
        self.x = np.zeros(N)
        self.status = np.zeros(N, dtype=np.int8)
        for j in range(n_struct):
            self.x[j], self.status[j] = _initial_value(self.lo[j], self.hi[j])
        resid = self.b - self.A[:, :n_struct] @ self.x[:n_struct]
        basis = np.empty(m, dtype=np.int64)
        art_rows, art_sign, art_val = [], [], []
        for r in range(m):
            j = n_struct + r
            lo, hi = self.lo[j], self.hi[j]
            v = resid[r]
            if lo - self.tol.primal <= v <= hi + self.tol.primal:
                basis[r] = j
                self.x[j] = v
                self.status[j] = BASIC
            else:
                sb = lo if v < lo else hi
                self.x[j] = sb
                self.status[j] = LOWER if sb == lo else UPPER
                art_rows.append(r)
                art_sign.append(1.0 if v > sb else -1.0)
                art_val.append(abs(v - sb))
        k = len(art_rows)
        cost1 = np.zeros(N + k)
        if k:
            art = sp.csc_matrix((art_sign, (art_rows, range(k))), shape=(m, k))
            self.A = sp.hstack([self.A, art], format="csc")
            self.AT = self.A.T.tocsr()
            self.lo = np.concatenate([self.lo, np.zeros(k)])
            self.hi = np.concatenate([self.hi, np.full(k, INF)])
            self.x = np.concatenate([self.x, np.array(art_val)])
            self.status = np.concatenate([self.status, np.zeros(k, dtype=np.int8)])
            for i, r in enumerate(art_rows):
                basis[r] = N + i
            cost1[N:] = 1.0
        self.n_art = k
        self.N_orig = N
        self.N = N + k
        self.basis = basis
        self.factor = _BasisFactor(self.A, self.basis)
        return cost1

    def warm_start(self, basis: np.ndarray, status: np.ndarray) -> bool:
        """Install a caller-provided basis; False if it is unusable."""
        m, N = self.m, self.N
        self.n_art = 0
        self.N_orig = N
        if len(basis) != m or len(set(basis.tolist())) != m or basis.max(initial=-1) >= N:
            return False
        self.basis = np.asarray(basis, dtype=np.int64).copy()
        self.status = np.asarray(status, dtype=np.int8).copy()
        self.x = np.zeros(N)
        for j in range(N):
            if self.status[j] == BASIC:
                continue
            lo, hi = self.lo[j], self.hi[j]
            if self.status[j] == UPPER and math.isfinite(hi):
                self.x[j] = hi
            elif self.status[j] == LOWER and math.isfinite(lo):
                self.x[j] = lo
            else:
                self.x[j], self.status[j] = _initial_value(lo, hi)
        self.status[self.basis] = BASIC
        try:
            self._refactor()
        except LPError:
            return False
        xb = self.x[self.basis]
        ok = np.all(xb >= self.lo[self.basis] - self.tol.primal) and np.all(
            xb <= self.hi[self.basis] + self.tol.primal)
        return bool(ok)


def _finish(model: Model, sf: _StandardForm, rs: RevisedSimplex, status: str) -> Solution:
    names = tuple(v.name for v in model.variables)
    if status != "optimal":
        return Solution(status=status, names=names, pivots=rs.pivots)
    rs._refactor()
    x = rs.x[: sf.n].copy()
    lo, hi = sf.lo[: sf.n], sf.hi[: sf.n]
    x = np.where(np.abs(x - lo) <= 1e-9, lo, x)
    x = np.where(np.abs(x - hi) <= 1e-9, hi, x)
    sign = -1.0 if model.sense == "max" else 1.0
    y = sign * rs.y
    d = sign * rs.d[: sf.n]
    obj = model.evaluate(x)
    basis = rs.basis.copy()
    stat = rs.status[: sf.n + sf.m].copy()
    art = basis >= sf.n + sf.m
    if art.any():
        # artificial columns are +-e_r; the slack of the same row stands in
        for k in np.flatnonzero(art):
            col = rs._column(int(basis[k]))
            r = int(np.flatnonzero(col)[0])
            basis[k] = sf.n + r
            stat[sf.n + r] = BASIC
    return Solution(status="optimal", objective=obj, x=x, names=names, pivots=rs.pivots,
                    duals=y, reduced_costs=d, basis=(basis, stat))


def solve_lp(model: Model, lower: Optional[Sequence[float]] = None,
             upper: Optional[Sequence[float]] = None, tol: Tolerances | None = None,
             warm: Optional[tuple] = None, max_pivots: int | None = None) -> Solution:
    """Solve the continuous relaxation of ``model`` (binaries and SOS2 ignored).

    ``lower``/``upper`` override variable bounds.  ``warm`` is a basis tuple
    from a previous :class:`Solution` on a model with the same variables and
    the same leading rows.
    """
    if model.n_vars == 0:
        return Solution("optimal", objective=model.objective_constant, x=np.zeros(0))
    sf = _StandardForm(model, lower, upper)
    names = tuple(v.name for v in model.variables)
    if np.any(sf.lo > sf.hi + 1e-12):
        return Solution("infeasible", names=names)
    tol = tol or Tolerances()
    rs = RevisedSimplex(sf.A, sf.b, sf.lo, sf.hi, tol=tol, max_pivots=max_pivots)
    started = False
    if warm is not None:
        basis, stat = warm
        basis = np.asarray(basis)
        stat = np.asarray(stat)
        extra = sf.n + sf.m - len(stat)
        if extra >= 0 and len(basis) + extra == sf.m:
            # appended rows: their slacks join the basis
            new_slacks = np.arange(sf.n + sf.m - extra, sf.n + sf.m)
            basis = np.concatenate([basis, new_slacks])
            stat = np.concatenate([stat, np.full(extra, BASIC, dtype=np.int8)])
            started = rs.warm_start(basis, stat)
    if not started:
        rs = RevisedSimplex(sf.A, sf.b, sf.lo, sf.hi, tol=tol, max_pivots=max_pivots)
        cost1 = rs.cold_start()
        if rs.n_art:
            st = rs.run(cost1)
            infeas = float(rs.x[rs.N_orig:].sum())
            if st != "optimal" or infeas > tol.primal * max(1.0, rs.m ** 0.5):
                return Solution("infeasible", names=names, pivots=rs.pivots)
            rs.hi[rs.N_orig:] = 0.0
            rs.x[rs.N_orig:] = 0.0
            rs._refactor()
    cost = np.concatenate([sf.c, np.zeros(rs.N - len(sf.c))])
    status = rs.run(cost)
    return _finish(model, sf, rs, status)
