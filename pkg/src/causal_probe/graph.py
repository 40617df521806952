"""Graph substrate: partial ancestral graphs, DAGs and d-separation.

Nodes are referred to by name at the API boundary and stored as dense
integer indices internally. All iteration is in ascending index order so
that downstream algorithms are reproducible.

Edge marks of a :class:`Pag` live in an ``n x n`` integer matrix ``marks``
where ``marks[i, j]`` is the mark *at node j* on the edge ``i *-* j`` and 0
means the nodes are not adjacent.
"""
from __future__ import annotations

import json
from collections import deque
from enum import IntEnum
from itertools import combinations
from typing import Iterable

import numpy as np

from .errors import GraphError, UnknownNode, ValidationError


class Mark(IntEnum):
    TAIL = 1
    ARROW = 2
    CIRCLE = 3

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def parse(cls, value):
        if isinstance(value, Mark):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValidationError(f"unknown mark {value!r}") from None
        return cls(int(value))


NO_EDGE = 0
TAIL, ARROW, CIRCLE = Mark.TAIL, Mark.ARROW, Mark.CIRCLE

_DOT_STYLE = {TAIL: "none", ARROW: "normal", CIRCLE: "odot"}
_EDGE_TYPES = {
    (TAIL, ARROW): "directed",
    (ARROW, TAIL): "directed",
    (ARROW, ARROW): "bidirected",
    (CIRCLE, ARROW): "partially_directed",
    (ARROW, CIRCLE): "partially_directed",
    (CIRCLE, CIRCLE): "nondirected",
    (TAIL, TAIL): "undirected",
    (TAIL, CIRCLE): "partially_undirected",
    (CIRCLE, TAIL): "partially_undirected",
}


def _pair(i, j):
    return (i, j) if i < j else (j, i)


class _Named:
    """Shared name table for graphs."""

    def _init_names(self, nodes):
        nodes = [str(n) for n in nodes]
        if len(set(nodes)) != len(nodes):
            raise GraphError("node names must be unique")
        self.nodes = tuple(nodes)
        self._index = {n: i for i, n in enumerate(self.nodes)}

    def index(self, node):
        if isinstance(node, (int, np.integer)) and not isinstance(node, bool):
            if 0 <= node < len(self.nodes):
                return int(node)
            raise UnknownNode(f"node index {node} out of range")
        try:
            return self._index[node]
        except KeyError:
            raise UnknownNode(f"unknown node {node!r}") from None

    @property
    def n_nodes(self):
        return len(self.nodes)


class Pag(_Named):
    """Mixed graph with tail / arrow / circle endpoint marks."""

    def __init__(self, nodes: Iterable[str], edges=()):
        self._init_names(nodes)
        n = len(self.nodes)
        self.marks = np.zeros((n, n), dtype=np.int8)
        for a, b, mark_a, mark_b in edges:
            self.add_edge(a, b, mark_a, mark_b)

    @classmethod
    def complete(cls, nodes, mark=CIRCLE):
        g = cls(nodes)
        n = g.n_nodes
        g.marks[:] = int(mark)
        np.fill_diagonal(g.marks, NO_EDGE)
        return g

    def copy(self):
        g = Pag(self.nodes)
        g.marks = self.marks.copy()
        return g

    def add_edge(self, a, b, mark_a=CIRCLE, mark_b=CIRCLE):
        i, j = self.index(a), self.index(b)
        if i == j:
            raise GraphError(f"self-loop on {self.nodes[i]!r}")
        if self.marks[i, j] or self.marks[j, i]:
            raise GraphError(f"edge {self.nodes[i]}-{self.nodes[j]} already present")
        self.marks[j, i] = Mark.parse(mark_a)
        self.marks[i, j] = Mark.parse(mark_b)

    def remove_edge(self, a, b):
        i, j = self.index(a), self.index(b)
        if not self.marks[i, j]:
            raise GraphError(f"no edge {self.nodes[i]}-{self.nodes[j]}")
        self.marks[i, j] = self.marks[j, i] = NO_EDGE

    def is_adjacent(self, a, b):
        return bool(self.marks[self.index(a), self.index(b)])

    def mark_at(self, at, other):
        """Mark at node ``at`` on the edge ``other *-* at`` (None if absent)."""
        m = self.marks[self.index(other), self.index(at)]
        return Mark(m) if m else None

    def set_mark(self, at, other, mark):
        i, j = self.index(other), self.index(at)
        if not self.marks[i, j]:
            raise GraphError(f"no edge {self.nodes[i]}-{self.nodes[j]}")
        self.marks[i, j] = Mark.parse(mark)

    def neighbors(self, a):
        return [int(k) for k in np.flatnonzero(self.marks[self.index(a)])]

    def edges(self):
        """Yield ``(i, j, mark_at_i, mark_at_j)`` for ``i < j`` in lexicographic order."""
        ii, jj = np.nonzero(np.triu(self.marks))
        for i, j in zip(ii.tolist(), jj.tolist()):
            yield i, j, Mark(self.marks[j, i]), Mark(self.marks[i, j])

    def named_edges(self):
        return [(self.nodes[i], self.nodes[j], mi, mj) for i, j, mi, mj in self.edges()]

    def n_edges(self):
        return int(np.count_nonzero(np.triu(self.marks)))

    def skeleton(self):
        return {(i, j) for i, j, _, _ in self.edges()}

    def edge_type(self, a, b):
        i, j = self.index(a), self.index(b)
        if not self.marks[i, j]:
            return None
        return _EDGE_TYPES[(Mark(self.marks[j, i]), Mark(self.marks[i, j]))]

    def reset_marks(self, mark=CIRCLE):
        self.marks[self.marks != NO_EDGE] = int(mark)

    def check(self):
        adj = self.marks != NO_EDGE
        if np.any(np.diag(adj)):
            raise GraphError("self-loop present")
        if np.any(adj != adj.T):
            raise GraphError("asymmetric adjacency")

    def __eq__(self, other):
        if not isinstance(other, Pag):
            return NotImplemented
        return self.nodes == other.nodes and np.array_equal(self.marks, other.marks)

    __hash__ = None

    def __repr__(self):
        sym = {TAIL: "-", ARROW: ">", CIRCLE: "o"}
        left = {TAIL: "-", ARROW: "<", CIRCLE: "o"}
        parts = [f"{self.nodes[i]} {left[mi]}-{sym[mj]} {self.nodes[j]}"
                 for i, j, mi, mj in self.edges()]
        return f"Pag({', '.join(parts) or 'no edges'})"

    # serialisation -----------------------------------------------------

    def to_dict(self):
        return {
            "nodes": list(self.nodes),
            "edges": [{"a": a, "b": b, "mark_a": ma.label, "mark_b": mb.label}
                      for a, b, ma, mb in self.named_edges()],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            g = cls(data["nodes"])
            for e in data["edges"]:
                g.add_edge(e["a"], e["b"], Mark.parse(e["mark_a"]), Mark.parse(e["mark_b"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed graph document: {exc}") from None
        return g


def export_graph(p: Pag, format="json"):
    """Render ``p`` as a JSON document or a Graphviz DOT digraph (bytes)."""
    if format == "json":
        return (json.dumps(p.to_dict(), indent=2) + "\n").encode("utf-8")
    if format == "dot":
        lines = ["digraph PAG {"]
        for name in p.nodes:
            lines.append(f'  "{name}";')
        for a, b, ma, mb in p.named_edges():
            lines.append(
                f'  "{a}" -> "{b}" [dir=both, arrowtail={_DOT_STYLE[ma]}, '
                f'arrowhead={_DOT_STYLE[mb]}];')
        lines.append("}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValidationError(f"unknown graph format {format!r}")


def import_graph(data) -> Pag:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    if isinstance(data, str):
        data = json.loads(data)
    return Pag.from_dict(data)


class Dag(_Named):
    """Directed acyclic graph whose nodes are tagged observed or latent."""

    def __init__(self, nodes, edges=(), latent=()):
        self._init_names(nodes)
        latent = set(latent)
        unknown = latent - set(self.nodes)
        if unknown:
            raise UnknownNode(f"unknown latent nodes {sorted(unknown)}")
        self.latent = tuple(n in latent for n in self.nodes)
        n = len(self.nodes)
        self.parents = [set() for _ in range(n)]
        self.children = [set() for _ in range(n)]
        for a, b in edges:
            i, j = self.index(a), self.index(b)
            if i == j:
                raise GraphError(f"self-loop on {self.nodes[i]!r}")
            if j in self.children[i]:
                raise GraphError(f"duplicate edge {self.nodes[i]}->{self.nodes[j]}")
            self.children[i].add(j)
            self.parents[j].add(i)
        self._order = self._topological_order()

    def _topological_order(self):
        indeg = [len(p) for p in self.parents]
        ready = [i for i, d in enumerate(indeg) if d == 0]
        order = []
        while ready:
            ready.sort()
            i = ready.pop(0)
            order.append(i)
            for c in sorted(self.children[i]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != self.n_nodes:
            raise GraphError("graph contains a directed cycle")
        return tuple(order)

    def topological_order(self):
        return list(self._order)

    @property
    def edges(self):
        return sorted((i, j) for i in range(self.n_nodes) for j in self.children[i])

    def named_edges(self):
        return [(self.nodes[i], self.nodes[j]) for i, j in self.edges]

    @property
    def observed(self):
        return [n for n, lat in zip(self.nodes, self.latent) if not lat]

    @property
    def latents(self):
        return [n for n, lat in zip(self.nodes, self.latent) if lat]

    def is_latent(self, node):
        return self.latent[self.index(node)]

    def ancestors(self, node):
        """Strict ancestors of ``node`` as an index set."""
        seen = set()
        stack = [self.index(node)]
        while stack:
            for p in self.parents[stack.pop()]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def descendants(self, node):
        seen = set()
        stack = [self.index(node)]
        while stack:
            for c in self.children[stack.pop()]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def is_ancestor(self, a, b):
        """True if ``a`` is a strict ancestor of ``b``."""
        return self.index(a) in self.ancestors(b)

    def to_dict(self):
        return {
            "nodes": [{"name": n, "latent": bool(lat)} for n, lat in zip(self.nodes, self.latent)],
            "edges": [[a, b] for a, b in self.named_edges()],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            nodes = [n["name"] for n in data["nodes"]]
            latent = [n["name"] for n in data["nodes"] if n.get("latent", False)]
            return cls(nodes, [tuple(e) for e in data["edges"]], latent)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed DAG document: {exc}") from None

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return (self.nodes == other.nodes and self.latent == other.latent
                and self.edges == other.edges)

    __hash__ = None


def d_separated(g: Dag, x, y, z=()):
    """Whether ``x`` and ``y`` are d-separated by the set ``z`` in ``g``.

    Reachability ("Bayes ball") over (node, direction) states: a trail may pass
    a non-collider not in ``z`` and a collider that is in ``z`` or has a
    descendant in ``z``.
    """
    xi, yi = g.index(x), g.index(y)
    zs = {g.index(v) for v in z}
    if xi == yi:
        raise ValidationError("x and y must differ")
    if xi in zs or yi in zs:
        raise ValidationError("x and y must not be in the conditioning set")

    # nodes that are in z or have a descendant in z
    anc_z = set(zs)
    stack = list(zs)
    while stack:
        for p in g.parents[stack.pop()]:
            if p not in anc_z:
                anc_z.add(p)
                stack.append(p)

    # direction "up": arrived from a child; "down": arrived from a parent
    visited = set()
    queue = deque([(xi, "up")])
    while queue:
        node, direction = queue.popleft()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node == yi:
            return False
        if direction == "up" and node not in zs:
            for p in g.parents[node]:
                queue.append((p, "up"))
            for c in g.children[node]:
                queue.append((c, "down"))
        elif direction == "down":
            if node not in zs:
                for c in g.children[node]:
                    queue.append((c, "down"))
            if node in anc_z:
                for p in g.parents[node]:
                    queue.append((p, "up"))
    return True


class SepsetMap:
    """Separating sets keyed by unordered node-index pairs."""

    def __init__(self, nodes=()):
        self.nodes = tuple(nodes)
        self._sets = {}

    def __setitem__(self, pair, sepset):
        i, j = pair
        if i == j:
            raise GraphError("sepset pair must be two distinct nodes")
        s = frozenset(int(k) for k in sepset)
        if i in s or j in s:
            raise GraphError("sepset must not contain an endpoint")
        self._sets[_pair(int(i), int(j))] = s

    def __getitem__(self, pair):
        return self._sets[_pair(*pair)]

    def get(self, pair, default=None):
        return self._sets.get(_pair(*pair), default)

    def __contains__(self, pair):
        return _pair(*pair) in self._sets

    def __delitem__(self, pair):
        del self._sets[_pair(*pair)]

    def __len__(self):
        return len(self._sets)

    def items(self):
        return sorted(self._sets.items())

    def copy(self):
        s = SepsetMap(self.nodes)
        s._sets = dict(self._sets)
        return s

    def named(self):
        return {(self.nodes[i], self.nodes[j]): sorted(self.nodes[k] for k in s)
                for (i, j), s in self.items()}

    def to_dict(self):
        return [{"a": self.nodes[i], "b": self.nodes[j],
                 "sepset": [self.nodes[k] for k in sorted(s)]}
                for (i, j), s in self.items()]


def unshielded_triples(p: Pag):
    """All ``(x, z, y)`` with ``x - z - y`` adjacent and ``x, y`` non-adjacent.

    Each triple is reported once with ``x < y`` (by node index), ordered
    lexicographically by ``(x, z, y)``. Node indices are returned.
    """
    adj = p.marks != NO_EDGE
    out = []
    n = p.n_nodes
    for x in range(n):
        for z in np.flatnonzero(adj[x]).tolist():
            for y in np.flatnonzero(adj[z]).tolist():
                if y > x and not adj[x, y]:
                    out.append((x, z, y))
    return out


def possible_d_sep(p: Pag, x):
    """Possible-D-SEP(x): nodes reachable from ``x`` along a path on which
    every inner node is a collider or lies in a triangle with its path
    neighbours. Returns an index set excluding ``x``.
    """
    xi = p.index(x)
    m = p.marks
    adj = m != NO_EDGE
    result = set()
    seen = set()
    queue = deque()
    for b in np.flatnonzero(adj[xi]).tolist():
        result.add(b)
        queue.append((xi, b))
        seen.add((xi, b))
    while queue:
        a, b = queue.popleft()
        for c in np.flatnonzero(adj[b]).tolist():
            if c == a or c == xi:
                continue
            if (m[a, b] == ARROW and m[c, b] == ARROW) or adj[a, c]:
                if (b, c) not in seen:
                    seen.add((b, c))
                    result.add(c)
                    queue.append((b, c))
    result.discard(xi)
    # The edge-state search above may chain through a node twice, so it can
    # over-approximate; confirm each candidate with a simple path.
    confirmed = {b for b in np.flatnonzero(adj[xi]).tolist()}
    if confirmed >= result:
        return result
    nbrs = [np.flatnonzero(adj[k]).tolist() for k in range(p.n_nodes)]
    # iterative DFS over simple paths; frames are (node, predecessor, neighbour iterator)
    for b in nbrs[xi]:
        on_path = {xi, b}
        frames = [(b, xi, iter(nbrs[b]))]
        while frames and not confirmed >= result:
            cur, prev, children = frames[-1]
            c = next(children, None)
            if c is None:
                frames.pop()
                on_path.discard(cur)
                continue
            if c in on_path:
                continue
            if (m[prev, cur] == ARROW and m[c, cur] == ARROW) or adj[prev, c]:
                confirmed.add(c)
                on_path.add(c)
                frames.append((c, cur, iter(nbrs[c])))
        if confirmed >= result:
            break
    return result & confirmed
