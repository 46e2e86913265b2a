"""Piecewise-linear sigmoid (SOS2) and one-hot categorical encodings."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .model import Model, ModelError, Variable

SIGMOID_KNOTS = ((-3.0, 0.05), (3.0, 0.95))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def sigmoid_breakpoints(f_lower: float, f_upper: float, n_points: int = 4) -> Tuple[np.ndarray, np.ndarray]:
    """Breakpoints of the piecewise sigmoid.

    With four points these are ``(f_lower, 0), (-3, 0.05), (3, 0.95),
    (f_upper, 1)``.  More points keep the two outer ones and place the rest
    evenly on [-3, 3] at the exact sigmoid value.
    """
    if not (f_lower < -3.0 and f_upper > 3.0):
        raise ModelError(f"need f_lower < -3 < 3 < f_upper, got {f_lower}, {f_upper}")
    if n_points < 4:
        raise ModelError("at least four breakpoints are required")
    if n_points == 4:
        xs = [f_lower, SIGMOID_KNOTS[0][0], SIGMOID_KNOTS[1][0], f_upper]
        ys = [0.0, SIGMOID_KNOTS[0][1], SIGMOID_KNOTS[1][1], 1.0]
    else:
        inner = np.linspace(-3.0, 3.0, n_points - 2)
        xs = [f_lower, *inner, f_upper]
        ys = [0.0, *sigmoid(inner), 1.0]
    return np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)


def piecewise_sigmoid(x, f_lower: float = -30.0, f_upper: float = 30.0, n_points: int = 4):
    xs, ys = sigmoid_breakpoints(f_lower, f_upper, n_points)
    return np.interp(x, xs, ys)


@dataclass
class SigmoidEncoding:
    weights: List[Variable]
    indicators: List[Variable]
    xs: np.ndarray
    ys: np.ndarray


def add_sos2_indicators(m: Model, weights: Sequence[Variable], prefix: str) -> List[Variable]:
    """Binary-indicator form of an SOS2 condition on ``weights``.

    b_i binary, sum b <= 2, b_i + b_j <= 1 for non-adjacent i, j, and
    0 <= lambda_i <= b_i.
    """
    n = len(weights)
    bs = [m.add_var(f"{prefix}_b{i}", 0.0, 1.0, kind="binary") for i in range(n)]
    m.add_constraint({b: 1.0 for b in bs}, "<=", 2.0, name=f"{prefix}_card")
    for i, j in itertools.combinations(range(n), 2):
        if j - i > 1:
            m.add_constraint({bs[i]: 1.0, bs[j]: 1.0}, "<=", 1.0, name=f"{prefix}_adj{i}_{j}")
    for lam, b in zip(weights, bs):
        m.add_constraint({lam: 1.0, b: -1.0}, "<=", 0.0)
    return bs


def encode_sigmoid(m: Model, input_var, output_var, f_lower: float = -30.0,
                   f_upper: float = 30.0, n_points: int = 4, prefix: str | None = None,
                   indicators: bool = True) -> SigmoidEncoding:
    """Tie ``output_var`` to the piecewise sigmoid of ``input_var``.

    Adds convex-combination weights over the breakpoints (sum to one, match
    the input on the x-axis and the output on the y-axis) and makes them SOS2,
    via binary indicators by default and as a native SOS2 group either way.
    """
    xs, ys = sigmoid_breakpoints(f_lower, f_upper, n_points)
    prefix = prefix or f"sig{len(m.variables)}"
    lam = [m.add_var(f"{prefix}_l{i}", 0.0, 1.0) for i in range(len(xs))]
    m.add_constraint({v: 1.0 for v in lam}, "=", 1.0, name=f"{prefix}_sum")
    cx = {v: float(x) for v, x in zip(lam, xs)}
    cx[m._index(input_var)] = cx.get(m._index(input_var), 0.0) - 1.0
    m.add_constraint(cx, "=", 0.0, name=f"{prefix}_x")
    cy = {v: float(y) for v, y in zip(lam, ys) if y != 0.0}
    cy[m._index(output_var)] = cy.get(m._index(output_var), 0.0) - 1.0
    m.add_constraint(cy, "=", 0.0, name=f"{prefix}_y")
    bs = add_sos2_indicators(m, lam, prefix) if indicators else []
    m.add_sos2(lam)
    return SigmoidEncoding(lam, bs, xs, ys)


def encode_categorical(m: Model, vars_: Sequence) -> None:
    """One-hot sum-to-one constraint over the category variables."""
    if len(vars_) < 2:
        raise ModelError("a categorical encoding needs at least two variables")
    m.add_constraint({v: 1.0 for v in vars_}, "=", 1.0)
