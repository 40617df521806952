"""Fast Causal Inference.

Phases, in order:

1. :func:`initial_skeleton` - PC-style adjacency search with separating sets.
2. :func:`orient_v_structures` - colliders at unshielded triples.
3. :func:`final_skeleton` - extra removals conditioning on Possible-D-SEP,
   then marks reset and colliders re-oriented.
4. :func:`apply_orientation_rules` - Zhang's rules R1-R10 to a fixpoint.

Every change to the graph is logged in an :class:`FciTrace`, which can be
replayed onto the complete circle graph to rebuild the output.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ContradictoryOrientation, InconsistentSepset, ValidationError
from .graph import (
    ARROW,
    CIRCLE,
    NO_EDGE,
    TAIL,
    Mark,
    Pag,
    SepsetMap,
    possible_d_sep,
    unshielded_triples,
)

UNBOUNDED = math.inf


@dataclass(frozen=True)
class FciParams:
    alpha: float = 0.05
    max_cond_size: float = 4
    stable_skeleton: bool = True
    rules_r5_r7: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must be in (0, 1), got {self.alpha}")
        m = self.max_cond_size
        if m is None:
            object.__setattr__(self, "max_cond_size", UNBOUNDED)
        elif m != UNBOUNDED and (m < 0 or int(m) != m):
            raise ValidationError(f"max_cond_size must be a nonnegative integer, got {m}")


# ---------------------------------------------------------------------------
# trace

@dataclass(frozen=True)
class EdgeRemoved:
    a: str
    b: str
    sepset: tuple
    p_value: float
    phase: str

    def to_dict(self):
        return {"event": "edge_removed", "a": self.a, "b": self.b,
                "sepset": list(self.sepset), "p_value": self.p_value, "phase": self.phase}


@dataclass(frozen=True)
class VStructure:
    x: str
    z: str
    y: str

    def to_dict(self):
        return {"event": "v_structure", "x": self.x, "z": self.z, "y": self.y}


@dataclass(frozen=True)
class MarksReset:
    def to_dict(self):
        return {"event": "marks_reset"}


@dataclass(frozen=True)
class RuleFired:
    rule: str
    a: str
    b: str
    mark_a: Mark
    mark_b: Mark

    def to_dict(self):
        return {"event": "rule_fired", "rule": self.rule, "a": self.a, "b": self.b,
                "mark_a": self.mark_a.label, "mark_b": self.mark_b.label}


@dataclass(frozen=True)
class Contradiction:
    rule: str
    at: str
    other: str
    existing: Mark
    wanted: Mark

    def to_dict(self):
        return {"event": "contradiction", "rule": self.rule, "at": self.at,
                "other": self.other, "existing": self.existing.label,
                "wanted": self.wanted.label}


@dataclass
class FciTrace:
    nodes: tuple
    events: list = field(default_factory=list)

    def append(self, event):
        self.events.append(event)

    def extend(self, other):
        self.events.extend(other.events)

    def of_type(self, kind):
        return [e for e in self.events if isinstance(e, kind)]

    @property
    def sepsets(self):
        """Final separating set of every removed pair, keyed by sorted name pair."""
        out = {}
        for e in self.of_type(EdgeRemoved):
            out[tuple(sorted((e.a, e.b)))] = e.sepset
        return out

    @property
    def contradictions(self):
        return self.of_type(Contradiction)

    def replay(self):
        """Rebuild the graph by applying every event to the complete circle graph."""
        g = Pag.complete(self.nodes)
        for e in self.events:
            if isinstance(e, EdgeRemoved):
                g.remove_edge(e.a, e.b)
            elif isinstance(e, VStructure):
                g.set_mark(e.z, e.x, ARROW)
                g.set_mark(e.z, e.y, ARROW)
            elif isinstance(e, MarksReset):
                g.reset_marks()
            elif isinstance(e, RuleFired):
                g.set_mark(e.a, e.b, e.mark_a)
                g.set_mark(e.b, e.a, e.mark_b)
        return g

    def to_dict(self):
        return {"nodes": list(self.nodes), "events": [e.to_dict() for e in self.events]}


# ---------------------------------------------------------------------------
# skeleton phases

def _cond_limit(params, available):
    m = params.max_cond_size
    return available if m == UNBOUNDED else min(int(m), available)


def initial_skeleton(test, variables, params: FciParams = FciParams()):
    """Adjacency search from the complete graph.

    For depth ``d = 0, 1, ...`` every adjacent pair is tested against all
    size-``d`` subsets of the current neighbours of either endpoint; the edge
    goes on the first independence. With ``stable_skeleton`` the neighbour
    sets are frozen at the start of each depth.

    Returns ``(pag, sepsets, trace)``.
    """
    variables = tuple(variables)
    if len(variables) < 2:
        raise ValidationError("FCI needs at least two variables")
    g = Pag.complete(variables)
    sepsets = SepsetMap(variables)
    trace = FciTrace(variables)
    adj = g.marks != NO_EDGE
    n = len(variables)
    depth = 0
    while depth <= _cond_limit(params, n - 2):
        frozen = adj.copy() if params.stable_skeleton else adj
        tested_any = False
        for i in range(n):
            for j in range(i + 1, n):
                if not adj[i, j]:
                    continue
                done = False
                for a, b in ((i, j), (j, i)):
                    cand = [k for k in np.flatnonzero(frozen[a]).tolist() if k != b]
                    if len(cand) < depth:
                        continue
                    tested_any = True
                    for s in combinations(cand, depth):
                        r = test(variables[a], variables[b], [variables[k] for k in s])
                        if r.independent:
                            adj[i, j] = adj[j, i] = False
                            g.marks[i, j] = g.marks[j, i] = NO_EDGE
                            sepsets[(i, j)] = s
                            trace.append(EdgeRemoved(
                                variables[i], variables[j],
                                tuple(variables[k] for k in sorted(s)), r.p_value, "initial"))
                            done = True
                            break
                    if done:
                        break
        if not tested_any:
            break
        depth += 1
    return g, sepsets, trace


def orient_v_structures(p: Pag, sepsets: SepsetMap, trace: FciTrace | None = None):
    """Orient ``x *-> z <-* y`` at every unshielded triple with ``z`` outside sepset(x, y)."""
    g = p.copy()
    for x, z, y in unshielded_triples(p):
        s = sepsets.get((x, y))
        if s is None:
            raise InconsistentSepset(
                f"non-adjacent pair {p.nodes[x]}, {p.nodes[y]} has no separating set")
        if z not in s:
            g.marks[x, z] = ARROW
            g.marks[y, z] = ARROW
            if trace is not None:
                trace.append(VStructure(p.nodes[x], p.nodes[z], p.nodes[y]))
    return g


def final_skeleton(p: Pag, test, sepsets: SepsetMap, params: FciParams = FciParams(),
                   trace: FciTrace | None = None):
    """Remove further edges by conditioning on subsets of Possible-D-SEP.

    Possible-D-SEP is computed once per node from the input graph, which makes
    the phase independent of the order edges are visited. Afterwards all
    marks are reset to circles and v-structures are re-oriented.

    Returns ``(pag, sepsets)``.
    """
    g = p.copy()
    sepsets = sepsets.copy()
    names = g.nodes
    pds = [possible_d_sep(p, i) for i in range(g.n_nodes)]
    for i, j, _, _ in list(p.edges()):
        removed = False
        for a, b in ((i, j), (j, i)):
            cand = sorted(pds[a] - {a, b})
            for size in range(1, _cond_limit(params, len(cand)) + 1):
                for s in combinations(cand, size):
                    r = test(names[a], names[b], [names[k] for k in s])
                    if r.independent:
                        g.marks[i, j] = g.marks[j, i] = NO_EDGE
                        sepsets[(i, j)] = s
                        if trace is not None:
                            trace.append(EdgeRemoved(
                                names[i], names[j], tuple(names[k] for k in sorted(s)),
                                r.p_value, "possible_d_sep"))
                        removed = True
                        break
                if removed:
                    break
            if removed:
                break
    g.reset_marks()
    if trace is not None:
        trace.append(MarksReset())
    g = orient_v_structures(g, sepsets, trace)
    return g, sepsets


# ---------------------------------------------------------------------------
# orientation rules

class _Orienter:
    """Applies rule firings to a mark matrix and records them."""

    def __init__(self, g: Pag, sepsets: SepsetMap, trace: FciTrace):
        self.g = g
        self.m = g.marks
        self.adj = g.marks != NO_EDGE
        self.sepsets = sepsets
        self.trace = trace
        self.n = g.n_nodes
        self._reported = set()

    def nbrs(self, i):
        return np.flatnonzero(self.adj[i]).tolist()

    def orient(self, rule, a, b, mark_a=None, mark_b=None):
        """Set the mark at ``a`` and/or ``b`` on edge a-b. Only circles change."""
        wanted = [(at, other, want) for at, other, want in ((a, b, mark_a), (b, a, mark_b))
                  if want is not None and self.m[other, at] != want]
        clash = [(at, other, want) for at, other, want in wanted
                 if self.m[other, at] != CIRCLE]
        if clash:
            # the whole edge is left as it is; each conflict is reported once
            for at, other, want in clash:
                key = (rule, at, other, int(want))
                if key in self._reported:
                    continue
                self._reported.add(key)
                cur = Mark(self.m[other, at])
                self.trace.append(Contradiction(rule, self.g.nodes[at], self.g.nodes[other],
                                                cur, Mark(want)))
                warnings.warn(
                    f"{rule}: wanted {Mark(want).label} at {self.g.nodes[at]} on edge with "
                    f"{self.g.nodes[other]} but found {cur.label}",
                    ContradictoryOrientation, stacklevel=3)
            return False
        if not wanted:
            return False
        for at, other, want in wanted:
            self.m[other, at] = want
        i, j = (a, b) if a < b else (b, a)
        self.trace.append(RuleFired(rule, self.g.nodes[i], self.g.nodes[j],
                                    Mark(self.m[j, i]), Mark(self.m[i, j])))
        return True

    # m[a, b] is the mark at b on the edge a *-* b

    def r1(self):
        # a *-> b o-* c, a and c non-adjacent  =>  b -> c
        m, changed = self.m, False
        for b in range(self.n):
            for a in self.nbrs(b):
                if m[a, b] != ARROW:
                    continue
                for c in self.nbrs(b):
                    if c != a and m[c, b] == CIRCLE and not self.adj[a, c]:
                        changed |= self.orient("R1", b, c, TAIL, ARROW)
        return changed

    def r2(self):
        # (a -> b *-> c or a *-> b -> c) and a *-o c  =>  a *-> c
        m, changed = self.m, False
        for a in range(self.n):
            for c in self.nbrs(a):
                if m[a, c] != CIRCLE:
                    continue
                for b in self.nbrs(a):
                    if b == c or not self.adj[b, c]:
                        continue
                    if m[a, b] == ARROW and m[b, c] == ARROW and (
                            m[b, a] == TAIL or m[c, b] == TAIL):
                        changed |= self.orient("R2", a, c, None, ARROW)
                        break
        return changed

    def r3(self):
        # a *-> b <-* c, a *-o d o-* c, a and c non-adjacent, d *-o b  =>  d *-> b
        m, changed = self.m, False
        for d in range(self.n):
            for b in self.nbrs(d):
                if m[d, b] != CIRCLE:
                    continue
                parents = [a for a in self.nbrs(b)
                           if a != d and m[a, b] == ARROW and self.adj[a, d] and m[a, d] == CIRCLE]
                hit = any(not self.adj[a, c] for a, c in combinations(parents, 2))
                if hit:
                    changed |= self.orient("R3", d, b, None, ARROW)
        return changed

    def _discriminating_start(self, a, b, c):
        """Find the far end of a discriminating path <theta, ..., a, b, c> for b.

        ``a`` must be a collider on the path (arrowhead at ``a`` from ``b``)
        and a parent of ``c``. Breadth-first, so the shortest path is used.
        """
        m = self.m
        prev = {b: None, a: b}
        queue = [a]
        while queue:
            nxt = []
            for v in queue:
                for d in self.nbrs(v):
                    if d in prev or d == c or m[d, v] != ARROW:
                        continue
                    if not self.adj[d, c]:
                        return d
                    if m[d, c] == ARROW and m[c, d] == TAIL and m[v, d] == ARROW:
                        prev[d] = v
                        nxt.append(d)
            queue = nxt
        return None

    def r4(self):
        # discriminating path <theta, ..., a, b, c> for b with b o-* c
        m, changed = self.m, False
        for b in range(self.n):
            for c in self.nbrs(b):
                if m[c, b] != CIRCLE:
                    continue
                for a in self.nbrs(b):
                    if a == c or not self.adj[a, c]:
                        continue
                    if not (m[b, a] == ARROW and m[a, c] == ARROW and m[c, a] == TAIL):
                        continue
                    theta = self._discriminating_start(a, b, c)
                    if theta is None:
                        continue
                    s = self.sepsets.get((theta, c))
                    if s is None:
                        raise InconsistentSepset(
                            f"no separating set for {self.g.nodes[theta]}, {self.g.nodes[c]}")
                    if b in s:
                        changed |= self.orient("R4", b, c, TAIL, ARROW)
                    else:
                        changed |= self.orient("R4", a, b, ARROW, ARROW)
                        changed |= self.orient("R4", b, c, ARROW, ARROW)
                    if m[c, b] != CIRCLE:
                        break
        return changed

    # -- uncovered paths ------------------------------------------------

    def _uncovered_paths(self, start, first, goal, step_ok, forbid=()):
        """Yield uncovered paths start, first, ..., goal whose edges satisfy ``step_ok``."""
        if not step_ok(start, first):
            return
        if first == goal:
            yield [start, first]
            return
        stack = [([start, first], {start, first})]
        blocked = set(forbid)
        while stack:
            path, onpath = stack.pop()
            u, v = path[-2], path[-1]
            for w in reversed(self.nbrs(v)):
                if w in onpath or w in blocked or self.adj[u, w] or not step_ok(v, w):
                    continue
                if w == goal:
                    yield path + [w]
                else:
                    stack.append((path + [w], onpath | {w}))

    def _pd_step(self, u, v):
        # potentially directed u -> v: not into u, not out of v
        return self.adj[u, v] and self.m[v, u] != ARROW and self.m[u, v] != TAIL

    def _circle_step(self, u, v):
        return self.adj[u, v] and self.m[u, v] == CIRCLE and self.m[v, u] == CIRCLE

    def r5(self):
        # a o-o b with an uncovered circle path a, c, ..., d, b where a, d and
        # b, c are non-adjacent  =>  a - b and every edge on the path undirected
        changed = False
        for a in range(self.n):
            for b in self.nbrs(a):
                if b < a or not self._circle_step(a, b):
                    continue
                for c in self.nbrs(a):
                    if c == b or self.adj[b, c] or not self._circle_step(a, c):
                        continue
                    found = None
                    for path in self._uncovered_paths(a, c, b, self._circle_step):
                        if len(path) >= 4 and not self.adj[a, path[-2]]:
                            found = path
                            break
                    if found:
                        changed |= self.orient("R5", a, b, TAIL, TAIL)
                        for u, v in zip(found, found[1:]):
                            changed |= self.orient("R5", u, v, TAIL, TAIL)
                        break
        return changed

    def r6(self):
        # a - b o-* c  =>  b -* c
        m, changed = self.m, False
        for b in range(self.n):
            for a in self.nbrs(b):
                if m[a, b] != TAIL or m[b, a] != TAIL:
                    continue
                for c in self.nbrs(b):
                    if c != a and m[c, b] == CIRCLE:
                        changed |= self.orient("R6", b, c, TAIL, None)
        return changed

    def r7(self):
        # a -o b o-* c, a and c non-adjacent  =>  b -* c
        m, changed = self.m, False
        for b in range(self.n):
            for a in self.nbrs(b):
                if m[b, a] != TAIL or m[a, b] != CIRCLE:
                    continue
                for c in self.nbrs(b):
                    if c != a and not self.adj[a, c] and m[c, b] == CIRCLE:
                        changed |= self.orient("R7", b, c, TAIL, None)
        return changed

    def _circle_arrow_edges(self):
        m = self.m
        for a in range(self.n):
            for c in self.nbrs(a):
                if m[c, a] == CIRCLE and m[a, c] == ARROW:
                    yield a, c

    def r8(self):
        # (a -> b -> c or a -o b -> c) and a o-> c  =>  a -> c
        m, changed = self.m, False
        for a, c in list(self._circle_arrow_edges()):
            if m[c, a] != CIRCLE:
                continue
            for b in self.nbrs(a):
                if b == c or not self.adj[b, c]:
                    continue
                if m[b, a] == TAIL and m[a, b] in (ARROW, CIRCLE) and \
                        m[c, b] == TAIL and m[b, c] == ARROW:
                    changed |= self.orient("R8", a, c, TAIL, None)
                    break
        return changed

    def r9(self):
        # a o-> c with an uncovered p.d. path a, b, d, ..., c where b, c non-adjacent  =>  a -> c
        changed = False
        for a, c in list(self._circle_arrow_edges()):
            if self.m[c, a] != CIRCLE:
                continue
            for b in self.nbrs(a):
                if b == c or self.adj[b, c]:
                    continue
                if next(self._uncovered_paths(a, b, c, self._pd_step), None) is not None:
                    changed |= self.orient("R9", a, c, TAIL, None)
                    break
        return changed

    def r10(self):
        # a o-> c, b -> c <- d, uncovered p.d. paths a..b and a..d whose
        # second nodes mu, omega are distinct and non-adjacent  =>  a -> c
        m, changed = self.m, False
        for a, c in list(self._circle_arrow_edges()):
            if m[c, a] != CIRCLE:
                continue
            parents = [v for v in self.nbrs(c)
                       if v != a and m[v, c] == ARROW and m[c, v] == TAIL]
            if len(parents) < 2:
                continue
            firsts = {}
            for v in parents:
                firsts[v] = set()
                for mu in self.nbrs(a):
                    if next(self._uncovered_paths(a, mu, v, self._pd_step), None) is not None:
                        firsts[v].add(mu)
            done = False
            for b, d in combinations(parents, 2):
                for mu in sorted(firsts[b]):
                    for om in sorted(firsts[d]):
                        if mu != om and not self.adj[mu, om]:
                            changed |= self.orient("R10", a, c, TAIL, None)
                            done = True
                            break
                    if done:
                        break
                if done:
                    break
        return changed


def apply_orientation_rules(p: Pag, sepsets: SepsetMap, params: FciParams = FciParams(),
                            trace: FciTrace | None = None):
    """Apply the orientation rules until no rule fires.

    Each sweep runs the rules in ascending id; R5-R7 only when
    ``params.rules_r5_r7``. Returns ``(pag, trace)``.
    """
    g = p.copy()
    trace = trace if trace is not None else FciTrace(g.nodes)
    o = _Orienter(g, sepsets, trace)
    rules = [o.r1, o.r2, o.r3, o.r4]
    if params.rules_r5_r7:
        rules += [o.r5, o.r6, o.r7]
    rules += [o.r8, o.r9, o.r10]
    changed = True
    while changed:
        changed = False
        for rule in rules:
            changed |= rule()
    return g, trace


def run_fci(test, variables=None, params: FciParams = FciParams()):
    """Full FCI pipeline.

    Parameters
    ----------
    test : CiTest
        Any callable ``test(x, y, z) -> CiResult`` over variable names.
    variables : sequence of str, optional
        Defaults to ``test.variables``.

    Returns
    -------
    pag : Pag
    trace : FciTrace
        Includes every removal with its separating set (``trace.sepsets``).
    """
    variables = tuple(variables if variables is not None else test.variables)
    if len(variables) == 1:
        return Pag(variables), FciTrace(variables)
    g, sepsets, trace = initial_skeleton(test, variables, params)
    g = orient_v_structures(g, sepsets, trace)
    g, sepsets = final_skeleton(g, test, sepsets, params, trace)
    g, trace = apply_orientation_rules(g, sepsets, params, trace)
    return g, trace
