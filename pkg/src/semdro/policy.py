"""Context-to-action policies shared by the estimators."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

KINDS = ("uniform", "tabular", "softmax-linear", "model-argmax")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def context_key(row, decimals: int = 3) -> Tuple[float, ...]:
    return tuple(np.round(np.asarray(row, dtype=float), decimals).tolist())


@dataclass
class Policy:
    """A map from context rows to action distributions over ``n_actions``.

    ``features`` names the context columns the policy reads, in order.
    ``epsilon`` mixes the base distribution with the uniform one, which keeps
    deterministic policies strictly positive when that is needed.
    """

    kind: str
    n_actions: int
    features: Tuple[str, ...] = ()
    weights: Optional[np.ndarray] = None      # softmax-linear: (d, p)
    bias: Optional[np.ndarray] = None         # softmax-linear: (d,)
    table: Dict[Tuple[float, ...], int] = field(default_factory=dict)
    default_action: int = 0
    scorer: Optional[Callable[[np.ndarray], np.ndarray]] = None
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.n_actions < 1:
            raise ValueError("a policy needs at least one action")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    # -- constructors ----------------------------------------------------
    @classmethod
    def uniform(cls, n_actions: int, features: Sequence[str] = ()) -> "Policy":
        return cls("uniform", n_actions, tuple(features))

    @classmethod
    def softmax_linear(cls, weights, bias=None, features: Sequence[str] = ()) -> "Policy":
        w = np.asarray(weights, dtype=float)
        b = np.zeros(w.shape[0]) if bias is None else np.asarray(bias, dtype=float)
        return cls("softmax-linear", w.shape[0], tuple(features), weights=w, bias=b)

    @classmethod
    def tabular(cls, table, n_actions: int, features: Sequence[str] = (), default_action: int = 0):
        return cls("tabular", n_actions, tuple(features), table=dict(table),
                   default_action=default_action)

    @classmethod
    def model_argmax(cls, scorer, n_actions: int, features: Sequence[str] = ()) -> "Policy":
        return cls("model-argmax", n_actions, tuple(features), scorer=scorer)

    def soften(self, epsilon: float) -> "Policy":
        return replace(self, epsilon=float(epsilon))

    # -- evaluation ------------------------------------------------------
    def _base(self, X: np.ndarray) -> np.ndarray:
        n, d = X.shape[0], self.n_actions
        if self.kind == "uniform":
            return np.full((n, d), 1.0 / d)
        if self.kind == "softmax-linear":
            return softmax(X @ self.weights.T + self.bias)
        if self.kind == "tabular":
            a = np.array([self.table.get(context_key(r), self.default_action) for r in X], dtype=int)
        else:
            scores = np.asarray(self.scorer(X), dtype=float)
            a = np.argmax(scores, axis=1)  # first maximum: lowest index wins ties
        out = np.zeros((n, d))
        out[np.arange(n), a] = 1.0
        return out

    def probabilities(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = self._base(X)
        if self.epsilon:
            p = (1.0 - self.epsilon) * p + self.epsilon / self.n_actions
        return p

    def prob_of(self, X, actions) -> np.ndarray:
        p = self.probabilities(X)
        return p[np.arange(len(p)), np.asarray(actions, dtype=int)]

    def greedy(self, X) -> np.ndarray:
        return np.argmax(self.probabilities(X), axis=1)

    def act(self, X, rng: np.random.Generator) -> np.ndarray:
        p = self.probabilities(X)
        u = rng.random(len(p))[:, None]
        return np.minimum((np.cumsum(p, axis=1) < u).sum(axis=1), self.n_actions - 1)

    # -- persistence -----------------------------------------------------
    def to_dict(self) -> dict:
        if self.kind == "model-argmax":
            raise ValueError("model-argmax policies are not serializable; tabulate them first")
        d = {"kind": self.kind, "n_actions": self.n_actions, "features": list(self.features),
             "epsilon": self.epsilon}
        if self.kind == "softmax-linear":
            d["weights"] = self.weights.tolist()
            d["bias"] = self.bias.tolist()
        elif self.kind == "tabular":
            d["table"] = [[list(k), int(a)] for k, a in self.table.items()]
            d["default_action"] = self.default_action
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        feats = tuple(d.get("features", ()))
        kind = d["kind"]
        if kind == "uniform":
            p = cls.uniform(int(d["n_actions"]), feats)
        elif kind == "softmax-linear":
            p = cls.softmax_linear(d["weights"], d.get("bias"), feats)
        elif kind == "tabular":
            table = {tuple(float(v) for v in k): int(a) for k, a in d["table"]}
            p = cls.tabular(table, int(d["n_actions"]), feats, int(d.get("default_action", 0)))
        else:
            raise ValueError(f"cannot load a policy of kind {kind!r}")
        return p.soften(float(d.get("epsilon", 0.0)))
