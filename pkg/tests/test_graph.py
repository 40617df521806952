"""Mixed graphs, DAGs, d-separation and serialisation."""
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_probe.errors import GraphError, UnknownNode, ValidationError
from causal_probe.graph import (
    ARROW,
    CIRCLE,
    TAIL,
    Dag,
    Mark,
    Pag,
    SepsetMap,
    d_separated,
    export_graph,
    import_graph,
    possible_d_sep,
    unshielded_triples,
)


# -- independent oracles -----------------------------------------------------

def simple_paths(adj, x, y):
    """All simple paths x..y in an undirected adjacency dict."""
    stack = [(x, [x])]
    while stack:
        node, path = stack.pop()
        for nb in adj[node]:
            if nb == y:
                yield path + [y]
            elif nb not in path:
                stack.append((nb, path + [nb]))


def brute_force_dsep(dag, x, y, z):
    """d-separation by enumerating every path and checking each for blocking."""
    n = dag.n_nodes
    parents = {v: {dag.nodes[p] for p in dag.parents[dag.index(v)]} for v in dag.nodes}
    adj = {v: set() for v in dag.nodes}
    for a, b in dag.named_edges():
        adj[a].add(b)
        adj[b].add(a)
    desc = {v: {dag.nodes[d] for d in dag.descendants(v)} | {v} for v in dag.nodes}
    z = set(z)
    for path in simple_paths(adj, x, y):
        blocked = False
        for a, b, c in zip(path, path[1:], path[2:]):
            collider = a in parents[b] and c in parents[b]
            if collider and not (desc[b] & z):
                blocked = True
            if not collider and b in z:
                blocked = True
        if not blocked:
            return False
    return True


def random_dag(rng, n, p=0.4):
    names = [f"V{i}" for i in range(n)]
    order = rng.permutation(n)
    edges = [(names[order[i]], names[order[j]])
             for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return Dag(names, edges)


# -- Mark / Pag ------------------------------------------------------------------

def test_mark_enum_has_three_values():
    assert [m.label for m in Mark] == ["tail", "arrow", "circle"]
    assert Mark.parse("arrow") is ARROW
    assert Mark.parse(3) is CIRCLE


def test_edge_types_follow_marks():
    g = Pag("ABCDE")
    g.add_edge("A", "B", TAIL, ARROW)
    g.add_edge("B", "C", ARROW, ARROW)
    g.add_edge("C", "D", CIRCLE, ARROW)
    g.add_edge("D", "E", CIRCLE, CIRCLE)
    assert g.edge_type("A", "B") == "directed"
    assert g.edge_type("B", "C") == "bidirected"
    assert g.edge_type("C", "D") == "partially_directed"
    assert g.edge_type("D", "E") == "nondirected"
    assert g.edge_type("A", "E") is None
    assert g.mark_at("B", "A") is ARROW and g.mark_at("A", "B") is TAIL


def test_one_edge_per_pair_and_no_self_loops():
    g = Pag("AB")
    g.add_edge("A", "B")
    with pytest.raises(GraphError):
        g.add_edge("B", "A")
    with pytest.raises(GraphError):
        g.add_edge("A", "A")
    with pytest.raises(UnknownNode):
        g.add_edge("A", "Q")


def test_repr_and_equality():
    g = Pag("ABC", [("A", "C", CIRCLE, ARROW), ("B", "C", CIRCLE, ARROW)])
    assert repr(g) == "Pag(A o-> C, B o-> C)"
    h = g.copy()
    assert h == g
    h.set_mark("A", "C", TAIL)
    assert h != g


# -- DAG / d-separation ----------------------------------------------------------

def test_dag_rejects_cycles():
    with pytest.raises(GraphError):
        Dag("ABC", [("A", "B"), ("B", "C"), ("C", "A")])


def test_chain_and_collider():
    chain = Dag("XZY", [("X", "Z"), ("Z", "Y")])
    assert d_separated(chain, "X", "Y", {"Z"})
    assert not d_separated(chain, "X", "Y", set())
    coll = Dag("XZY", [("X", "Z"), ("Y", "Z")])
    assert d_separated(coll, "X", "Y", set())
    assert not d_separated(coll, "X", "Y", {"Z"})


def test_conditioning_on_collider_descendant_opens_path():
    g = Dag("XYZW", [("X", "Z"), ("Y", "Z"), ("Z", "W")])
    assert not d_separated(g, "X", "Y", {"W"})


def test_dsep_argument_errors():
    g = Dag("XY", [("X", "Y")])
    with pytest.raises(UnknownNode):
        d_separated(g, "X", "Q")
    with pytest.raises(ValidationError):
        d_separated(g, "X", "X")
    with pytest.raises(ValidationError):
        d_separated(g, "X", "Y", {"X"})


@pytest.mark.parametrize("seed", range(6))
def test_dsep_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, 5)
    for x, y in itertools.combinations(g.nodes, 2):
        rest = [v for v in g.nodes if v not in (x, y)]
        for k in range(4):
            for z in itertools.combinations(rest, k):
                expected = brute_force_dsep(g, x, y, z)
                assert d_separated(g, x, y, z) == expected, (x, y, z)
                assert d_separated(g, y, x, z) == expected


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_adjacent_pairs_never_separated(seed):
    g = random_dag(np.random.default_rng(seed), 6, 0.5)
    for a, b in g.named_edges():
        assert not d_separated(g, a, b, set())


# -- unshielded triples / possible-d-sep -----------------------------------------

def test_unshielded_triples_examples():
    assert unshielded_triples(Pag.complete("ABC")) == []
    path = Pag("ABC", [("A", "B", CIRCLE, CIRCLE), ("B", "C", CIRCLE, CIRCLE)])
    assert unshielded_triples(path) == [(0, 1, 2)]
    star = Pag("ABCZ", [(leaf, "Z", CIRCLE, CIRCLE) for leaf in "ABC"])
    named = [tuple(star.nodes[i] for i in t) for t in unshielded_triples(star)]
    assert named == [("A", "Z", "B"), ("A", "Z", "C"), ("B", "Z", "C")]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_unshielded_triples_by_direct_check(seed):
    rng = np.random.default_rng(seed)
    n = 6
    g = Pag([f"N{i}" for i in range(n)])
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < 0.5:
            g.add_edge(g.nodes[i], g.nodes[j])
    adj = g.marks != 0
    expected = [(x, z, y) for x in range(n) for z in range(n) for y in range(x + 1, n)
                if adj[x, z] and adj[z, y] and not adj[x, y]]
    assert unshielded_triples(g) == expected
    assert len(expected) <= n * (n - 1) // 2 * (n - 2)


def pds_brute_force(g, x):
    """Possible-D-SEP by enumerating simple paths from x."""
    n = g.n_nodes
    m = g.marks
    adj = {i: set(np.flatnonzero(m[i]).tolist()) for i in range(n)}
    xi = g.index(x)
    out = set()
    for v in range(n):
        if v == xi:
            continue
        for path in simple_paths(adj, xi, v):
            ok = all((m[a, b] == ARROW and m[c, b] == ARROW) or m[a, c]
                     for a, b, c in zip(path, path[1:], path[2:]))
            if ok:
                out.add(v)
                break
    return out


def test_possible_d_sep_examples():
    assert possible_d_sep(Pag("ABC"), "A") == set()
    coll = Pag("xzy", [("x", "z", CIRCLE, ARROW), ("y", "z", CIRCLE, ARROW)])
    assert possible_d_sep(coll, "x") >= {1, 2}
    tri = Pag.complete("xzy")
    assert possible_d_sep(tri, "x") == {1, 2}
    # a non-collider middle node outside any triangle blocks the search
    path = Pag("abc", [("a", "b", CIRCLE, CIRCLE), ("b", "c", CIRCLE, CIRCLE)])
    assert possible_d_sep(path, "a") == {1}


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 100_000))
def test_possible_d_sep_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = 6
    g = Pag([f"N{i}" for i in range(n)])
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < 0.45:
            g.add_edge(g.nodes[i], g.nodes[j], Mark(rng.integers(1, 4)), Mark(rng.integers(1, 4)))
    for x in g.nodes:
        assert possible_d_sep(g, x) == pds_brute_force(g, x)


# -- sepsets / serialisation -----------------------------------------------------

def test_sepset_map_is_symmetric_and_excludes_endpoints():
    s = SepsetMap("ABCD")
    s[(2, 0)] = {1}
    assert s[(0, 2)] == s[(2, 0)] == frozenset({1})
    assert s.named() == {("A", "C"): ["B"]}
    with pytest.raises(GraphError):
        s[(0, 3)] = {0}


def test_export_dot_single_edge():
    g = Pag("AB", [("A", "B", CIRCLE, ARROW)])
    dot = export_graph(g, "dot").decode()
    assert '"A" -> "B" [dir=both, arrowtail=odot, arrowhead=normal];' in dot


def test_export_empty_graph():
    g = Pag("AB")
    doc = json.loads(export_graph(g, "json"))
    assert doc == {"nodes": ["A", "B"], "edges": []}
    assert export_graph(g, "dot").decode().startswith("digraph PAG {")


def test_round_trip_ten_edges():
    rng = np.random.default_rng(7)
    names = [f"N{i}" for i in range(7)]
    g = Pag(names)
    pairs = list(itertools.combinations(names, 2))
    for k in rng.choice(len(pairs), size=10, replace=False):
        a, b = pairs[k]
        g.add_edge(a, b, Mark(rng.integers(1, 4)), Mark(rng.integers(1, 4)))
    assert g.n_edges() == 10
    back = import_graph(export_graph(g, "json"))
    assert back == g
    assert json.loads(export_graph(g))["edges"][0].keys() == {"a", "b", "mark_a", "mark_b"}


def test_dag_json_round_trip():
    g = Dag(["X", "Y", "L"], [("L", "X"), ("L", "Y")], latent=["L"])
    assert Dag.from_dict(json.loads(json.dumps(g.to_dict()))) == g
    assert g.observed == ["X", "Y"]
