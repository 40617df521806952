"""FCI phases, orientation rules and oracle soundness."""
import itertools
import warnings

import numpy as np
import pytest

from causal_probe.citests import FisherZTest, OracleTest
from causal_probe.errors import ContradictoryOrientation, InconsistentSepset
from causal_probe.fci import (
    UNBOUNDED,
    FciParams,
    FciTrace,
    RuleFired,
    apply_orientation_rules,
    final_skeleton,
    initial_skeleton,
    orient_v_structures,
    run_fci,
)
from causal_probe.graph import ARROW, CIRCLE, TAIL, Dag, Pag, SepsetMap, d_separated
from causal_probe.synth import random_scm, sample_data

UNCAPPED = FciParams(max_cond_size=UNBOUNDED)


def oracle_run(dag, params=UNCAPPED):
    return run_fci(OracleTest(dag), dag.observed, params)


def pag(nodes, *edges):
    marks = {"o": CIRCLE, ">": ARROW, "<": ARROW, "-": TAIL}
    g = Pag(nodes)
    for text in edges:
        a, e, b = text.split()
        g.add_edge(a, b, marks[e[0]], marks[e[-1]])
    return g


# -- canonical structures ----------------------------------------------------------

def test_chain():
    g, _ = oracle_run(Dag("ABC", [("A", "B"), ("B", "C")]))
    assert g == pag("ABC", "A o-o B", "B o-o C")


def test_collider():
    g, _ = oracle_run(Dag("ABC", [("A", "C"), ("B", "C")]))
    assert g == pag("ABC", "A o-> C", "B o-> C")


def test_single_variable():
    g, trace = run_fci(OracleTest(Dag("A")), ["A"])
    assert g.n_edges() == 0 and trace.events == []


def test_bidirected_edge_from_latent():
    # A -> B <- L -> C <- D with L hidden: B and C share a confounder
    dag = Dag(["A", "B", "C", "D", "L"],
              [("A", "B"), ("L", "B"), ("L", "C"), ("D", "C")], latent=["L"])
    g, _ = oracle_run(dag)
    assert g == pag(dag.observed, "A o-> B", "B <-> C", "C <-o D")


def test_latent_triangle_stays_undetermined():
    dag = Dag(["X", "Y", "S", "L"], [("L", "X"), ("L", "Y"), ("X", "S"), ("Y", "S")],
              latent=["L"])
    g, _ = oracle_run(dag)
    assert g == pag(["X", "Y", "S"], "X o-o Y", "X o-o S", "Y o-o S")


def test_discriminating_path_tail():
    # T -> A <- L1 -> B, A -> G, B -> G: <T, A, B, G> discriminates B, and B is in
    # sepset(T, G), so R4 orients B -> G. B -> A is Markov equivalent, hence the circle
    dag = Dag(["T", "A", "B", "G", "L1"],
              [("T", "A"), ("L1", "A"), ("L1", "B"), ("A", "G"), ("B", "G")], latent=["L1"])
    g, trace = oracle_run(dag)
    assert g == pag(["T", "A", "B", "G"], "T o-> A", "B o-> A", "A -> G", "B -> G")
    assert any(e.rule == "R4" for e in trace.of_type(RuleFired))


def test_discriminating_path_collider():
    # as above with a second latent L2 -> B, L2 -> G: now B is a collider on the path
    dag = Dag(["T", "A", "B", "G", "L1", "L2"],
              [("T", "A"), ("L1", "A"), ("L1", "B"), ("A", "G"), ("L2", "B"), ("L2", "G")],
              latent=["L1", "L2"])
    g, _ = oracle_run(dag)
    assert g.edge_type("A", "B") == "bidirected"
    assert g.edge_type("B", "G") == "bidirected"


# -- phases ----------------------------------------------------------------------------

def test_initial_skeleton_examples():
    g, s, _ = initial_skeleton(OracleTest(Dag("XZY", [("X", "Z"), ("Z", "Y")])), "XZY")
    assert g.skeleton() == {(0, 1), (1, 2)} and s[(0, 2)] == frozenset({1})
    g, s, _ = initial_skeleton(OracleTest(Dag("XZY", [("X", "Z"), ("Y", "Z")])), "XZY")
    assert g.skeleton() == {(0, 1), (1, 2)} and s[(0, 2)] == frozenset()
    g, s, _ = initial_skeleton(OracleTest(Dag("ABCD")), "ABCD")
    assert g.n_edges() == 0 and len(s) == 6 and all(v == frozenset() for _, v in s.items())


def test_v_structures_leave_far_marks():
    dag = Dag("WXZY", [("W", "X"), ("X", "Z"), ("Y", "Z")])
    g, s, _ = initial_skeleton(OracleTest(dag), dag.nodes)
    out = orient_v_structures(g, s)
    assert out == pag("WXZY", "W o-o X", "X o-> Z", "Y o-> Z")
    chain = pag("XZY", "X o-o Z", "Z o-o Y")
    sep = SepsetMap("XZY")
    sep[(0, 2)] = {1}
    assert orient_v_structures(chain, sep) == chain


def test_v_structures_need_sepsets():
    with pytest.raises(InconsistentSepset):
        orient_v_structures(pag("XZY", "X o-o Z", "Z o-o Y"), SepsetMap("XZY"))


def test_final_skeleton_edgeless_passthrough():
    g = Pag("ABC")
    s = SepsetMap("ABC")
    for pair in itertools.combinations(range(3), 2):
        s[pair] = ()
    out, _ = final_skeleton(g, OracleTest(Dag("ABC")), s)
    assert out == g


@pytest.mark.parametrize("seed", range(50))
def test_final_skeleton_removes_nothing_without_latents(seed):
    dag = random_scm(6, 0, 0.4, seed=seed).dag
    test = OracleTest(dag)
    g, s, _ = initial_skeleton(test, dag.observed, UNCAPPED)
    g = orient_v_structures(g, s)
    out, _ = final_skeleton(g, test, s, UNCAPPED)
    assert out.skeleton() == g.skeleton()


def test_possible_d_sep_removes_hidden_edge():
    # found by searching random latent DAGs: X4 and X5 are only separated by
    # {X2, X3, X6}, and X3 is adjacent to neither after the first phase
    dag = Dag(["X1", "X2", "X3", "X4", "X5", "X6", "L1", "L2", "L3"],
              [("X2", "X1"), ("X2", "X5"), ("X3", "X1"), ("X3", "X2"), ("X3", "X6"),
               ("X6", "X4"), ("L1", "X2"), ("L1", "X4"), ("L2", "X5"), ("L2", "X6"),
               ("L3", "X1"), ("L3", "X5"), ("L3", "X6")], latent=["L1", "L2", "L3"])
    test = OracleTest(dag)
    g, s, trace = initial_skeleton(test, dag.observed, UNCAPPED)
    assert g.is_adjacent("X4", "X5")
    assert not g.is_adjacent("X3", "X4") and not g.is_adjacent("X3", "X5")
    g = orient_v_structures(g, s, trace)
    out, _ = final_skeleton(g, test, s, UNCAPPED, trace)
    assert not out.is_adjacent("X4", "X5")
    assert trace.sepsets[("X4", "X5")] == ("X2", "X3", "X6")
    for (a, b), sep in trace.sepsets.items():
        assert d_separated(dag, a, b, sep)


# -- rules -----------------------------------------------------------------------------

def test_r1_away_from_collider():
    g = pag("XYZW", "X o-> Z", "Y o-> Z", "Z o-o W")
    out, trace = apply_orientation_rules(g, SepsetMap(g.nodes))
    assert out.mark_at("Z", "W") is TAIL and out.mark_at("W", "Z") is ARROW
    assert [e.rule for e in trace.of_type(RuleFired)] == ["R1"]


def test_r2_chain_arrowhead():
    g = pag("ABC", "A -> B", "B o-> C", "A o-o C")
    out, _ = apply_orientation_rules(g, SepsetMap(g.nodes))
    assert out.mark_at("C", "A") is ARROW


def test_r3_double_triangle():
    g = pag("ABCD", "A o-> B", "C o-> B", "A o-o D", "C o-o D", "D o-o B")
    s = SepsetMap(g.nodes)
    s[(0, 2)] = {3}
    out, _ = apply_orientation_rules(g, s)
    assert out.mark_at("B", "D") is ARROW


def test_no_circles_is_fixpoint():
    g = pag("ABC", "A -> B", "B <-> C")
    out, trace = apply_orientation_rules(g, SepsetMap(g.nodes))
    assert out == g and trace.events == []


def test_contradiction_is_warned_not_applied():
    # R1 wants B -> C, but the mark at C is already a tail
    g = pag("ABC", "A o-> B", "B o-- C")
    with pytest.warns(ContradictoryOrientation):
        out, trace = apply_orientation_rules(g, SepsetMap(g.nodes))
    assert out == g
    (c,) = trace.contradictions
    assert (c.rule, c.at, c.other, c.existing, c.wanted) == ("R1", "C", "B", TAIL, ARROW)


# -- properties on random SCMs ----------------------------------------------------------

def mag_adjacent(dag, a, b):
    others = [v for v in dag.observed if v not in (a, b)]
    return not any(d_separated(dag, a, b, s) for k in range(len(others) + 1)
                   for s in itertools.combinations(others, k))


@pytest.mark.parametrize("seed", range(40))
def test_oracle_pag_is_sound(seed):
    rng = np.random.default_rng(seed)
    scm = random_scm(int(rng.integers(4, 7)), int(rng.integers(0, 3)), 0.35, seed=seed)
    dag = scm.dag
    g, trace = oracle_run(dag)
    for a, b in itertools.combinations(dag.observed, 2):
        assert g.is_adjacent(a, b) == mag_adjacent(dag, a, b), (a, b)
    for a, b, ma, mb in g.named_edges():
        for at, other, mark in ((a, b, ma), (b, a, mb)):
            if mark is ARROW:
                assert not dag.is_ancestor(at, other)
            elif mark is TAIL:
                assert dag.is_ancestor(at, other)
    assert trace.replay() == g
    again, _ = apply_orientation_rules(g, SepsetMap(g.nodes))
    assert again == g


@pytest.mark.parametrize("seed", range(15))
def test_capped_skeleton_contains_uncapped(seed):
    dag = random_scm(7, 2, 0.4, seed=100 + seed).dag
    full, _ = oracle_run(dag)
    for cap in (0, 1, 2):
        capped, _ = oracle_run(dag, FciParams(max_cond_size=cap))
        assert full.skeleton() <= capped.skeleton()


def test_variable_order_invariance_under_oracle():
    dag = random_scm(6, 1, 0.4, seed=9).dag
    g1, _ = run_fci(OracleTest(dag), dag.observed, UNCAPPED)
    order = list(reversed(dag.observed))
    g2, _ = run_fci(OracleTest(dag, variables=order), order, UNCAPPED)
    def as_set(g):
        return {frozenset([(a, ma), (b, mb)]) for a, b, ma, mb in g.named_edges()}

    assert as_set(g1) == as_set(g2)


def test_row_order_invariance():
    scm = random_scm(5, 1, 0.4, seed=4)
    t = sample_data(scm, 600, seed=1)
    g1, _ = run_fci(FisherZTest(t), t.column_names)
    perm = np.random.default_rng(0).permutation(t.n_rows)
    g2, _ = run_fci(FisherZTest(t.take_rows(perm)), t.column_names)
    assert g1 == g2


def test_trace_serialises():
    g, trace = oracle_run(Dag("ABC", [("A", "C"), ("B", "C")]))
    doc = trace.to_dict()
    assert doc["nodes"] == ["A", "B", "C"]
    kinds = [e["event"] for e in doc["events"]]
    assert kinds[0] == "edge_removed" and "v_structure" in kinds
    assert isinstance(trace, FciTrace)
