"""Synthetic structural causal models with known ground truth.

Used to benchmark discovery where the real behavioural data is unavailable:
random DAGs with latent confounders, ancestral sampling, and scoring of a
discovered PAG against the truth.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import FeatureTable
from .errors import GenerationFailed, NodeMismatch, ValidationError
from .graph import ARROW, Dag, Pag

MECHANISMS = ("linear", "quadratic_mix")


@dataclass(frozen=True)
class Scm:
    """Linear-Gaussian (optionally part-quadratic) SCM over a DAG.

    ``weights`` maps ``(parent, child)`` names to coefficients; under
    ``quadratic_mix`` the edges listed in ``quadratic_edges`` contribute
    ``w * (p~^2 - 1) / sqrt(2)`` with ``p~`` the standardised parent instead of
    ``w * p``.
    """

    dag: Dag
    weights: dict
    noise_std: dict
    mechanism: str = "linear"
    quadratic_edges: frozenset = frozenset()

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValidationError(f"unknown mechanism {self.mechanism!r}")
        edges = set(self.dag.named_edges())
        if set(self.weights) != edges:
            raise ValidationError("weights must be given for exactly the DAG edges")
        for node in self.dag.nodes:
            if not self.noise_std.get(node, 0) > 0:
                raise ValidationError(f"noise_std for {node!r} must be positive")
        if not set(self.quadratic_edges) <= edges:
            raise ValidationError("quadratic edges must be DAG edges")

    @property
    def observed(self):
        return self.dag.observed

    def weight_matrix(self):
        """``B[i, j]`` = weight of edge ``i -> j`` (node index order)."""
        n = self.dag.n_nodes
        b = np.zeros((n, n))
        for (a, c), w in self.weights.items():
            b[self.dag.index(a), self.dag.index(c)] = w
        return b

    def covariance(self):
        """Population covariance of all nodes under the linear mechanism."""
        if self.mechanism != "linear":
            raise ValidationError("closed-form covariance only for linear SCMs")
        n = self.dag.n_nodes
        b = self.weight_matrix()
        d = np.diag([self.noise_std[v] ** 2 for v in self.dag.nodes])
        inv = np.linalg.inv(np.eye(n) - b)
        # x = B^T x + e  =>  x = (I - B)^-T e
        return inv.T @ d @ inv

    def to_dict(self):
        return {
            "dag": self.dag.to_dict(),
            "latents": self.dag.latents,
            "weights": [{"from": a, "to": b, "weight": w,
                         "kind": "quadratic" if (a, b) in self.quadratic_edges else "linear"}
                        for (a, b), w in sorted(self.weights.items(),
                                                key=lambda kv: (self.dag.index(kv[0][0]),
                                                                self.dag.index(kv[0][1])))],
            "noise_std": {v: self.noise_std[v] for v in self.dag.nodes},
            "mechanism": self.mechanism,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data):
        try:
            dag = Dag.from_dict(data["dag"])
            weights = {(w["from"], w["to"]): float(w["weight"]) for w in data["weights"]}
            quad = frozenset((w["from"], w["to"]) for w in data["weights"]
                             if w.get("kind") == "quadratic")
            noise = {k: float(v) for k, v in data["noise_std"].items()}
            return cls(dag, weights, noise, data.get("mechanism", "linear"), quad)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed SCM document: {exc}") from None

    @classmethod
    def from_json(cls, text):
        if isinstance(text, bytes):
            text = text.decode("utf-8")
        return cls.from_dict(json.loads(text))


def _draw_weight(rng):
    return float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0))


def random_scm(n_observed, n_latent=0, edge_prob=0.3, seed=0, mechanism="linear",
               max_attempts=1000):
    """Random SCM: shuffled topological order plus independent edge coin flips.

    Observed nodes are named ``X1..Xn`` and latent ones ``L1..Lk``. Latents
    have no parents and at least two observed children, so each one is a
    genuine confounder. Weights are uniform on ``[-2, -0.5] U [0.5, 2]``,
    noise standard deviations are 1.
    """
    if n_observed < 2:
        raise ValidationError("need at least two observed variables")
    if n_latent < 0:
        raise ValidationError("n_latent must be nonnegative")
    if not 0.0 < edge_prob < 1.0:
        raise ValidationError("edge_prob must be in (0, 1)")
    if mechanism not in MECHANISMS:
        raise ValidationError(f"unknown mechanism {mechanism!r}")
    rng = np.random.default_rng(seed)
    obs = [f"X{i + 1}" for i in range(n_observed)]
    lat = [f"L{i + 1}" for i in range(n_latent)]

    order = rng.permutation(n_observed)
    edges = []
    for a in range(n_observed):
        for b in range(a + 1, n_observed):
            if rng.random() < edge_prob:
                edges.append((obs[order[a]], obs[order[b]]))

    for name in lat:
        for _ in range(max_attempts):
            hits = rng.random(n_observed) < edge_prob
            if hits.sum() >= 2:
                break
        else:
            raise GenerationFailed(
                f"could not give latent {name} two observed children in {max_attempts} attempts")
        edges.extend((name, obs[k]) for k in np.flatnonzero(hits))

    dag = Dag(obs + lat, edges, latent=lat)
    weights = {e: _draw_weight(rng) for e in dag.named_edges()}
    quad = frozenset()
    if mechanism == "quadratic_mix":
        quad = frozenset(e for e in dag.named_edges() if rng.random() < 0.5)
    noise = {v: 1.0 for v in dag.nodes}
    return Scm(dag, weights, noise, mechanism, quad)


def sample_data(scm: Scm, n_rows, seed=0):
    """Ancestral sampling; latent columns are dropped from the returned table."""
    if n_rows < 1:
        raise ValidationError("n_rows must be positive")
    rng = np.random.default_rng(seed)
    dag = scm.dag
    x = np.zeros((n_rows, dag.n_nodes))
    noise = rng.standard_normal((n_rows, dag.n_nodes))
    for j in dag.topological_order():
        child = dag.nodes[j]
        col = noise[:, j] * scm.noise_std[child]
        for i in sorted(dag.parents[j]):
            parent = dag.nodes[i]
            w = scm.weights[(parent, child)]
            if (parent, child) in scm.quadratic_edges:
                p = x[:, i]
                sd = p.std()
                pt = (p - p.mean()) / sd if sd > 0 else p * 0.0
                col = col + w * (pt * pt - 1.0) / math.sqrt(2.0)
            else:
                col = col + w * x[:, i]
        x[:, j] = col
    keep = [dag.index(v) for v in dag.observed]
    return FeatureTable(tuple(dag.observed), x[:, keep], "turn")


@dataclass(frozen=True)
class GraphScore:
    skeleton_precision: float
    skeleton_recall: float
    skeleton_f1: float
    arrowhead_accuracy: float
    n_predicted_edges: int
    n_true_edges: int
    n_arrowheads: int

    @property
    def no_predicted_edges(self):
        return self.n_predicted_edges == 0

    def to_dict(self):
        return {
            "skeleton_precision": self.skeleton_precision,
            "skeleton_recall": self.skeleton_recall,
            "skeleton_f1": self.skeleton_f1,
            "arrowhead_accuracy": self.arrowhead_accuracy,
            "n_predicted_edges": self.n_predicted_edges,
            "n_true_edges": self.n_true_edges,
            "n_arrowheads": self.n_arrowheads,
            "no_predicted_edges": self.no_predicted_edges,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def oracle_pag(scm_or_dag):
    """PAG FCI returns with exact d-separation and unbounded conditioning."""
    from .citests import OracleTest
    from .fci import UNBOUNDED, FciParams, run_fci

    dag = scm_or_dag.dag if isinstance(scm_or_dag, Scm) else scm_or_dag
    pag, _ = run_fci(OracleTest(dag), dag.observed, FciParams(max_cond_size=UNBOUNDED))
    return pag


def arrowhead_accuracy(pag: Pag, dag: Dag):
    """Fraction of arrowheads ``a *-> b`` with ``b`` not an ancestor of ``a`` in ``dag``.

    Returns ``(accuracy, n_arrowheads)``; accuracy is 1 when there are none.
    """
    good = total = 0
    anc = {v: dag.ancestors(v) for v in pag.nodes}
    for a, b, ma, mb in pag.named_edges():
        for at, other, mark in ((a, b, ma), (b, a, mb)):
            if mark == ARROW:
                total += 1
                good += dag.index(at) not in anc[other]
    return (good / total if total else 1.0), total


def score_graph(discovered: Pag, truth, reference: Pag | None = None):
    """Compare a discovered PAG with the ground truth.

    The reference skeleton is that of :func:`oracle_pag` on ``truth`` (pass
    ``reference`` to reuse one). With no predicted edges precision is 1 by
    convention; :attr:`GraphScore.no_predicted_edges` flags that case.
    """
    dag = truth.dag if isinstance(truth, Scm) else truth
    if set(discovered.nodes) != set(dag.observed):
        raise NodeMismatch(
            f"discovered nodes {sorted(discovered.nodes)} != observed {sorted(dag.observed)}")
    ref = reference if reference is not None else oracle_pag(dag)
    pred = {frozenset((a, b)) for a, b, _, _ in discovered.named_edges()}
    true = {frozenset((a, b)) for a, b, _, _ in ref.named_edges()}
    tp = len(pred & true)
    precision = tp / len(pred) if pred else 1.0
    recall = tp / len(true) if true else 1.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    acc, n_arrows = arrowhead_accuracy(discovered, dag)
    return GraphScore(precision, recall, f1, acc, len(pred), len(true), n_arrows)
