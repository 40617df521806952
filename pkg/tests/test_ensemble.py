"""Subsampling and majority-vote synthesis."""
import json

import numpy as np
import pytest

from causal_probe.citests import FisherZTest, OracleTest
from causal_probe.data import FeatureTable
from causal_probe.ensemble import (
    THREADS_ENV,
    EnsembleParams,
    run_ensemble,
    subsample,
    vote,
)
from causal_probe.errors import CausalProbeError, DegenerateKernel, EmptySample, ValidationError
from causal_probe.fci import FciParams, run_fci
from causal_probe.graph import ARROW, CIRCLE, TAIL, Dag, Mark, Pag
from causal_probe.synth import random_scm, sample_data


def test_defaults_follow_protocol():
    p = EnsembleParams()
    assert (p.n_runs, p.sample_fraction, p.alpha, p.edge_threshold) == (30, 0.8, 0.05, 0.5)


@pytest.mark.parametrize("kwargs", [dict(sample_fraction=0.0), dict(sample_fraction=1.2),
                                    dict(n_runs=0), dict(alpha=1.0), dict(edge_threshold=0)])
def test_param_ranges(kwargs):
    with pytest.raises(ValidationError):
        EnsembleParams(**kwargs)


def test_subsample_sizes_and_determinism():
    t = FeatureTable(("a",), np.arange(10.0)[:, None])
    s = subsample(t, 0.8, seed=1)
    assert s.n_rows == 8 and len(set(s.column("a"))) == 8
    full = subsample(t, 1.0, seed=2)
    assert sorted(full.column("a")) == list(range(10))
    assert subsample(t, 0.8, 5) == subsample(t, 0.8, 5)
    with pytest.raises(EmptySample):
        subsample(t, 0.05, 0)


def test_subsample_seeds_differ():
    t = FeatureTable(("a",), np.arange(100.0)[:, None])
    sets = {frozenset(subsample(t, 0.8, k).column("a")) for k in range(20)}
    assert len(sets) == 20


def test_vote_threshold_arithmetic():
    g1 = Pag("AB", [("A", "B", CIRCLE, ARROW)])
    g2 = Pag("AB")
    consensus, support, _ = vote([g1, g2], "AB")
    assert support[frozenset("AB")] == 0.5
    assert not consensus.is_adjacent("A", "B")


def test_vote_marks_plurality_and_ties():
    gs = [Pag("AB", [("A", "B", TAIL, ARROW)]),
          Pag("AB", [("A", "B", TAIL, ARROW)]),
          Pag("AB", [("A", "B", ARROW, ARROW)]),
          Pag("AB", [("A", "B", CIRCLE, CIRCLE)])]
    consensus, support, marks = vote(gs, "AB")
    assert support[frozenset("AB")] == 1.0
    assert consensus.mark_at("B", "A") is ARROW     # 3 of 4
    assert consensus.mark_at("A", "B") is TAIL      # 2 of 4 beats 1 and 1
    tie = [Pag("AB", [("A", "B", TAIL, ARROW)]), Pag("AB", [("A", "B", ARROW, ARROW)])]
    c, _, _ = vote(tie, "AB", edge_threshold=0.4)
    assert c.mark_at("A", "B") is CIRCLE
    for key, fr in marks.items():
        assert abs(sum(fr.values()) - 1.0) < 1e-12


def test_vote_ignores_failed_runs():
    g = Pag("AB", [("A", "B", CIRCLE, CIRCLE)])
    _, support, _ = vote([g, None, None], "AB")
    assert support[frozenset("AB")] == 1.0
    with pytest.raises(CausalProbeError):
        vote([None], "AB")


def test_oracle_ensemble_equals_single_run():
    scm = random_scm(6, 1, 0.4, seed=3)
    dag = scm.dag
    single, _ = run_fci(OracleTest(dag), dag.observed)
    res = run_ensemble(None, dag.observed, test="oracle", dag=dag)
    assert res.consensus == single
    assert len(res.per_run_graphs) == 30
    assert all(g == single for g in res.per_run_graphs)
    assert all(v == 1.0 for v in res.edge_support.values())


def test_threshold_monotone():
    scm = random_scm(5, 1, 0.4, seed=2)
    t = sample_data(scm, 150, seed=0)
    ens = EnsembleParams(n_runs=8, seed=1)
    edges = []
    for thr in (0.1, 0.3, 0.5, 0.7, 0.9, 1.0):
        res = run_ensemble(t, t.column_names, ens_params=EnsembleParams(
            n_runs=8, seed=1, edge_threshold=thr), test="fisherz")
        edges.append(res.consensus.skeleton())
    for a, b in zip(edges, edges[1:]):
        assert b <= a
    assert ens.n_runs == 8


def test_thread_count_does_not_change_result(monkeypatch):
    scm = random_scm(5, 1, 0.4, seed=6)
    t = sample_data(scm, 200, seed=0)
    params = EnsembleParams(n_runs=6, seed=4)
    a = run_ensemble(t, t.column_names, ens_params=params, test="kcit", threads=1)
    b = run_ensemble(t, t.column_names, ens_params=params, test="kcit", threads=4)
    assert a.to_json() == b.to_json()
    monkeypatch.setenv(THREADS_ENV, "3")
    c = run_ensemble(t, t.column_names, ens_params=params, test="kcit")
    assert c.to_json() == a.to_json()
    monkeypatch.setenv(THREADS_ENV, "zero")
    with pytest.raises(ValidationError):
        run_ensemble(t, t.column_names, ens_params=params, test="kcit")


def test_failed_runs_are_recorded():
    scm = random_scm(4, 0, 0.5, seed=1)
    t = sample_data(scm, 100, seed=0)
    calls = []

    def factory(sub):
        calls.append(sub)
        if len(calls) % 3 == 0:
            raise DegenerateKernel("unlucky subsample")
        return FisherZTest(sub)

    res = run_ensemble(t, t.column_names, ens_params=EnsembleParams(n_runs=6), test=factory,
                       threads=1)
    assert [k for k, _ in res.failures] == [2, 5]
    assert res.n_successful == 4
    doc = json.loads(res.to_json())
    assert doc["failures"][0]["error"].startswith("DegenerateKernel")
    assert all(0 <= e["support"] <= 1 for e in doc["edge_support"])


@pytest.mark.slow
def test_consensus_not_worse_than_single_runs():
    """Mean consensus F1 over 10 replications is at least the mean single-run F1."""
    from causal_probe.synth import oracle_pag, score_graph

    f_cons, f_runs = [], []
    for seed in range(10):
        scm = random_scm(6, 0, 0.3, seed=seed)
        t = sample_data(scm, 500, seed=seed)
        ref = oracle_pag(scm)
        res = run_ensemble(t, t.column_names, ens_params=EnsembleParams(seed=seed), test="kcit")
        f_cons.append(score_graph(res.consensus, scm, ref).skeleton_f1)
        f_runs.append(np.mean([score_graph(g, scm, ref).skeleton_f1
                               for g in res.per_run_graphs]))
    assert np.mean(f_cons) >= np.mean(f_runs)
