"""Linear / mixed-integer model container."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

INF = math.inf
RELATIONS = ("<=", "=", ">=")


class ModelError(ValueError):
    pass


@dataclass(eq=False)
class Variable:
    name: str
    lower: float = 0.0
    upper: float = INF
    kind: str = "continuous"
    index: int = -1


@dataclass
class Constraint:
    coefs: Dict[int, float]
    relation: str
    rhs: float
    name: str = ""


@dataclass
class Solution:
    status: str
    objective: float = math.nan
    x: Optional[np.ndarray] = None
    names: Tuple[str, ...] = ()
    pivots: int = 0
    nodes: int = 0
    gap: float = 0.0
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    basis: Optional[object] = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def __getitem__(self, var) -> float:
        if self.x is None:
            raise KeyError("no assignment available")
        if isinstance(var, Variable):
            return float(self.x[var.index])
        if isinstance(var, str):
            return float(self.x[self.names.index(var)])
        return float(self.x[int(var)])

    def values(self, vars_: Sequence[Variable]) -> np.ndarray:
        return np.array([self.x[v.index] for v in vars_])

    def assignment(self) -> Dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.x)}


class Model:
    """Variables, linear rows, SOS2 groups and a linear objective.

    Coefficients are keyed by variable (or its index); anything referencing an
    undeclared variable is rejected.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: List[Variable] = []
        self.constraints: List[Constraint] = []
        self.sos2: List[List[int]] = []
        self.objective: Dict[int, float] = {}
        self.objective_constant = 0.0
        self.sense = "min"
        self._by_name: Dict[str, int] = {}

    # -- construction -------------------------------------------------
    def add_var(self, name: str | None = None, lower: float = 0.0, upper: float = INF,
                kind: str = "continuous") -> Variable:
        if kind not in ("continuous", "binary"):
            raise ModelError(f"unknown variable kind {kind!r}")
        if kind == "binary":
            lower = max(lower, 0.0)
            upper = min(upper, 1.0)
        if lower > upper:
            raise ModelError(f"variable {name!r}: lower {lower} > upper {upper}")
        idx = len(self.variables)
        if name is None:
            name = f"x{idx}"
        if name in self._by_name:
            raise ModelError(f"duplicate variable name {name!r}")
        v = Variable(name, float(lower), float(upper), kind, idx)
        self.variables.append(v)
        self._by_name[name] = idx
        return v

    def var(self, name: str) -> Variable:
        return self.variables[self._by_name[name]]

    def _index(self, key) -> int:
        if isinstance(key, Variable):
            idx = key.index
        elif isinstance(key, str):
            if key not in self._by_name:
                raise ModelError(f"undeclared variable {key!r}")
            idx = self._by_name[key]
        else:
            idx = int(key)
        if not 0 <= idx < len(self.variables):
            raise ModelError(f"undeclared variable index {idx}")
        return idx

    def _coef_map(self, coefs) -> Dict[int, float]:
        out: Dict[int, float] = {}
        items = coefs.items() if isinstance(coefs, Mapping) else coefs
        for k, a in items:
            if a == 0:
                continue
            i = self._index(k)
            out[i] = out.get(i, 0.0) + float(a)
        return out

    def add_constraint(self, coefs, relation: str, rhs: float, name: str = "") -> Constraint:
        if relation not in RELATIONS:
            raise ModelError(f"unknown relation {relation!r}")
        if not math.isfinite(rhs):
            raise ModelError("constraint right-hand side must be finite")
        c = Constraint(self._coef_map(coefs), relation, float(rhs), name)
        self.constraints.append(c)
        return c

    def add_sos2(self, vars_: Sequence) -> None:
        idx = [self._index(v) for v in vars_]
        if len(idx) < 2:
            raise ModelError("an SOS2 group needs at least two members")
        for i in idx:
            if self.variables[i].lower < 0:
                raise ModelError("SOS2 members must be non-negative")
        self.sos2.append(idx)

    def set_objective(self, coefs, sense: str = "min", constant: float = 0.0) -> None:
        if sense not in ("min", "max"):
            raise ModelError(f"unknown sense {sense!r}")
        self.objective = self._coef_map(coefs)
        self.sense = sense
        self.objective_constant = float(constant)

    # -- queries -------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def is_mip(self) -> bool:
        return bool(self.sos2) or any(v.kind == "binary" for v in self.variables)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.array([v.lower for v in self.variables], dtype=float)
        hi = np.array([v.upper for v in self.variables], dtype=float)
        return lo, hi

    def cost_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for i, a in self.objective.items():
            c[i] = a
        return c

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.cost_vector() @ x) + self.objective_constant

    def violation(self, x: np.ndarray) -> float:
        """Largest bound or row violation of an assignment."""
        lo, hi = self.bounds()
        worst = float(max(np.max(lo - x, initial=0.0), np.max(x - hi, initial=0.0)))
        for c in self.constraints:
            act = sum(a * x[i] for i, a in c.coefs.items())
            if c.relation == "<=":
                worst = max(worst, act - c.rhs)
            elif c.relation == ">=":
                worst = max(worst, c.rhs - act)
            else:
                worst = max(worst, abs(act - c.rhs))
        return worst

    def sos2_ok(self, x: np.ndarray, tol: float = 1e-7) -> bool:
        for group in self.sos2:
            nz = [k for k, i in enumerate(group) if abs(x[i]) > tol]
            if len(nz) > 2 or (len(nz) == 2 and nz[1] - nz[0] != 1):
                return False
        return True

    def copy(self) -> "Model":
        m = Model(self.name)
        m.variables = [Variable(v.name, v.lower, v.upper, v.kind, v.index) for v in self.variables]
        m.constraints = [Constraint(dict(c.coefs), c.relation, c.rhs, c.name) for c in self.constraints]
        m.sos2 = [list(g) for g in self.sos2]
        m.objective = dict(self.objective)
        m.objective_constant = self.objective_constant
        m.sense = self.sense
        m._by_name = dict(self._by_name)
        return m

    def to_lp_format(self) -> str:
        """CPLEX-style LP text, for cross-checking with external solvers."""
        names = [v.name for v in self.variables]

        def expr(coefs: Dict[int, float]) -> str:
            if not coefs:
                return "0 " + names[0] if names else "0"
            parts = []
            for i, a in sorted(coefs.items()):
                sign = "-" if a < 0 else "+"
                parts.append(f"{sign} {abs(a):.17g} {names[i]}")
            s = " ".join(parts)
            return s[2:] if s.startswith("+ ") else s

        out = ["Minimize" if self.sense == "min" else "Maximize", " obj: " + expr(self.objective),
               "Subject To"]
        for k, c in enumerate(self.constraints):
            rel = {"<=": "<=", ">=": ">=", "=": "="}[c.relation]
            out.append(f" {c.name or f'c{k}'}: {expr(c.coefs)} {rel} {c.rhs:.17g}")
        out.append("Bounds")
        for v in self.variables:
            lo = "-inf" if v.lower == -INF else f"{v.lower:.17g}"
            hi = "+inf" if v.upper == INF else f"{v.upper:.17g}"
            out.append(f" {lo} <= {v.name} <= {hi}")
        bins = [v.name for v in self.variables if v.kind == "binary"]
        if bins:
            out.append("Binaries")
            out.append(" " + " ".join(bins))
        if self.sos2:
            out.append("SOS")
            for k, g in enumerate(self.sos2):
                members = " ".join(f"{names[i]}:{j + 1}" for j, i in enumerate(g))
                out.append(f" s{k}: S2:: {members}")
        out.append("End")
        return "\n".join(out) + "\n"
