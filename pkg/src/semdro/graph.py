"""Causal DAGs over covariates, an action node and an outcome node.

Graphs are read from a small line-oriented text format::

    # comment
    node X0 cont
    node A action
    edge X0 -> Y
    intervene A => X2

Node kinds are ``cont``, ``bin``, ``cat:<k>``, ``action`` and ``outcome``.
The action never appears as an ordinary parent; the nodes it intervenes on
are listed with ``intervene`` lines instead.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence, Tuple

KINDS = ("cont", "bin", "action", "outcome")


class GraphError(ValueError):
    """Raised for malformed or invalid graph descriptions."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _check_kind(kind: str) -> str:
    if kind in KINDS:
        return kind
    if kind.startswith("cat:"):
        try:
            k = int(kind[4:])
        except ValueError:
            raise GraphError(f"bad categorical kind {kind!r}") from None
        if k < 2:
            raise GraphError(f"categorical node needs >= 2 levels, got {k}")
        return kind
    raise GraphError(f"unknown node kind {kind!r}")


def n_categories(kind: str) -> int:
    """Number of levels of a ``cat:<k>`` kind (2 for binary, 0 otherwise)."""
    if kind.startswith("cat:"):
        return int(kind[4:])
    if kind == "bin":
        return 2
    return 0


@dataclass(frozen=True)
class CausalGraph:
    nodes: Tuple[str, ...]
    edges: Tuple[Tuple[str, str], ...]
    node_kind: Mapping[str, str]
    intervened: FrozenSet[str] = frozenset()
    _parents: Dict[str, Tuple[str, ...]] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        validate(self)
        pa: Dict[str, List[str]] = {n: [] for n in self.nodes}
        for p, c in self.edges:
            pa[c].append(p)
        for n in self.nodes:
            self._parents[n] = tuple(sorted(pa[n]))

    @property
    def action(self) -> str | None:
        acts = [n for n in self.nodes if self.node_kind[n] == "action"]
        return acts[0] if acts else None

    @property
    def outcome(self) -> str | None:
        outs = [n for n in self.nodes if self.node_kind[n] == "outcome"]
        return outs[0] if outs else None

    @property
    def variables(self) -> Tuple[str, ...]:
        """All nodes except the action, in declaration order."""
        return tuple(n for n in self.nodes if self.node_kind[n] != "action")

    def parents(self, node: str) -> FrozenSet[str]:
        return frozenset(self.parent_list(node))

    def parent_list(self, node: str) -> Tuple[str, ...]:
        """Parents as a sorted tuple (stable column order for regressions)."""
        if node not in self._parents:
            raise KeyError(f"unknown node {node!r}")
        return self._parents[node]

    def children(self, node: str) -> FrozenSet[str]:
        if node not in self._parents:
            raise KeyError(f"unknown node {node!r}")
        return frozenset(c for p, c in self.edges if p == node)

    def ancestors(self, node: str) -> FrozenSet[str]:
        seen: set = set()
        stack = list(self.parent_list(node))
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(self.parent_list(n))
        return frozenset(seen)

    def descendants(self, node: str) -> FrozenSet[str]:
        seen: set = set()
        stack = list(self.children(node))
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(self.children(n))
        return frozenset(seen)

    def action_affected(self) -> FrozenSet[str]:
        """Intervened nodes and all of their descendants."""
        out = set(self.intervened)
        for n in self.intervened:
            out |= self.descendants(n)
        return frozenset(out)

    def partition(self) -> Dict[str, FrozenSet[str]]:
        """Split variables into intervened, descendant and other covariates."""
        si = frozenset(self.intervened)
        sd = self.action_affected() - si
        sp = frozenset(self.variables) - si - sd
        return {"intervened": si, "descendants": sd, "other": sp}

    def kind(self, node: str) -> str:
        return self.node_kind[node]


def validate(g: CausalGraph) -> None:
    if len(set(g.nodes)) != len(g.nodes):
        raise GraphError("duplicate node declaration")
    declared = set(g.nodes)
    for n in g.nodes:
        if n not in g.node_kind:
            raise GraphError(f"node {n!r} has no kind")
        _check_kind(g.node_kind[n])
    seen = set()
    for p, c in g.edges:
        for end in (p, c):
            if end not in declared:
                raise GraphError(f"edge endpoint {end!r} is not a declared node")
        if (p, c) in seen:
            raise GraphError(f"duplicate edge {p} -> {c}")
        if p == c:
            raise GraphError(f"self loop on {p!r}")
        if g.node_kind[p] == "action" or g.node_kind[c] == "action":
            raise GraphError("the action may only appear in intervene lines")
        seen.add((p, c))
    for t in g.intervened:
        if t not in declared:
            raise GraphError(f"intervention target {t!r} is not a declared node")
        if g.node_kind[t] == "action":
            raise GraphError("the action cannot intervene on itself")
    if g.intervened and g.action is None:
        raise GraphError("intervention declared but no action node")
    if sum(1 for n in g.nodes if g.node_kind[n] == "action") > 1:
        raise GraphError("at most one action node is supported")
    _kahn(g.nodes, g.edges)


def _kahn(nodes: Sequence[str], edges: Iterable[Tuple[str, str]]) -> List[str]:
    indeg = {n: 0 for n in nodes}
    out: Dict[str, List[str]] = {n: [] for n in nodes}
    for p, c in edges:
        indeg[c] += 1
        out[p].append(c)
    ready = [n for n in nodes if indeg[n] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for c in out[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != len(nodes):
        stuck = sorted(n for n in nodes if indeg[n] > 0)
        raise GraphError(f"cycle detected among {stuck}")
    return order


def topological_order(g: CausalGraph) -> List[str]:
    """Kahn's algorithm with lexicographic tie-break among ready nodes."""
    return _kahn(g.nodes, g.edges)


def parents(g: CausalGraph, node: str) -> FrozenSet[str]:
    return g.parents(node)


def parse_graph(text: str) -> CausalGraph:
    nodes: List[str] = []
    kinds: Dict[str, str] = {}
    edges: List[Tuple[str, str]] = []
    targets: List[Tuple[str, str, int]] = []
    edge_lines: Dict[Tuple[str, str], int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        head = tok[0]
        if head == "node":
            if len(tok) != 3:
                raise GraphError("expected 'node <name> <kind>'", lineno)
            name = tok[1]
            if name in kinds:
                raise GraphError(f"node {name!r} declared twice", lineno)
            try:
                kinds[name] = _check_kind(tok[2])
            except GraphError as exc:
                raise GraphError(str(exc), lineno) from None
            nodes.append(name)
        elif head == "edge":
            if len(tok) != 4 or tok[2] != "->":
                raise GraphError("expected 'edge <parent> -> <child>'", lineno)
            e = (tok[1], tok[3])
            if e in edge_lines:
                raise GraphError(f"duplicate edge {e[0]} -> {e[1]}", lineno)
            edge_lines[e] = lineno
            edges.append(e)
        elif head == "intervene":
            if len(tok) != 4 or tok[2] != "=>":
                raise GraphError("expected 'intervene <action> => <target>'", lineno)
            targets.append((tok[1], tok[3], lineno))
        else:
            raise GraphError(f"unknown directive {head!r}", lineno)
    for e, lineno in edge_lines.items():
        for end in e:
            if end not in kinds:
                raise GraphError(f"edge endpoint {end!r} is not a declared node", lineno)
    for act, tgt, lineno in targets:
        if act not in kinds or kinds[act] != "action":
            raise GraphError(f"{act!r} is not a declared action node", lineno)
        if tgt not in kinds:
            raise GraphError(f"intervention target {tgt!r} is not declared", lineno)
    return CausalGraph(
        nodes=tuple(nodes),
        edges=tuple(edges),
        node_kind=dict(kinds),
        intervened=frozenset(t for _, t, _ in targets),
    )


def serialize(g: CausalGraph) -> str:
    lines = [f"node {n} {g.node_kind[n]}" for n in g.nodes]
    lines += [f"edge {p} -> {c}" for p, c in g.edges]
    if g.action is not None:
        lines += [f"intervene {g.action} => {t}" for t in sorted(g.intervened)]
    return "\n".join(lines) + "\n"


def read_graph(path) -> CausalGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())


FIXTURES = ("synthetic_well", "synthetic_mis", "voting_well", "voting_mis")


def fixture_path(name: str):
    if name not in FIXTURES:
        raise KeyError(f"unknown graph fixture {name!r}; choose from {FIXTURES}")
    return resources.files("semdro") / "fixtures" / f"{name}.graph"


def load_fixture(name: str) -> CausalGraph:
    return parse_graph(fixture_path(name).read_text(encoding="utf-8"))
