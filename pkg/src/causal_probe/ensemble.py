"""Subsample ensembles of FCI runs with majority-vote synthesis."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .citests import make_test
from .errors import CausalProbeError, EmptySample, ValidationError
from .fci import FciParams, run_fci
from .graph import CIRCLE, Mark, Pag

THREADS_ENV = "CAUSAL_PROBE_THREADS"


@dataclass(frozen=True)
class EnsembleParams:
    sample_fraction: float = 0.8
    n_runs: int = 30
    alpha: float = 0.05
    seed: int = 0
    edge_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValidationError(f"sample_fraction must be in (0, 1], got {self.sample_fraction}")
        if int(self.n_runs) != self.n_runs or self.n_runs < 1:
            raise ValidationError(f"n_runs must be a positive integer, got {self.n_runs}")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.edge_threshold <= 1.0:
            raise ValidationError(f"edge_threshold must be in (0, 1], got {self.edge_threshold}")


def subsample(table, fraction, seed):
    """``floor(fraction * n)`` distinct rows drawn uniformly without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    n = table.n_rows
    size = math.floor(fraction * n + 1e-9)
    if size < 1:
        raise EmptySample(f"fraction {fraction} of {n} rows selects nothing")
    rows = np.random.default_rng(seed).choice(n, size=size, replace=False)
    return table.take_rows(rows)


@dataclass
class EnsembleResult:
    consensus: Pag
    edge_support: dict
    mark_support: dict
    per_run_graphs: list
    failures: list = field(default_factory=list)
    params: EnsembleParams | None = None

    @property
    def n_successful(self):
        return sum(g is not None for g in self.per_run_graphs)

    def to_dict(self):
        nodes = self.consensus.nodes
        order = {v: i for i, v in enumerate(nodes)}

        def key(pair):
            return tuple(sorted(order[v] for v in pair))

        edges = []
        for pair in sorted(self.edge_support, key=key):
            a, b = sorted(pair, key=order.__getitem__)
            edges.append({
                "a": a, "b": b,
                "support": self.edge_support[pair],
                "in_consensus": self.consensus.is_adjacent(a, b),
                "mark_a": {m.label: self.mark_support[(pair, a)][m] for m in Mark},
                "mark_b": {m.label: self.mark_support[(pair, b)][m] for m in Mark},
            })
        out = {
            "consensus": self.consensus.to_dict(),
            "edge_support": edges,
            "n_runs": len(self.per_run_graphs),
            "n_successful": self.n_successful,
            "failures": [{"run": i, "error": msg} for i, msg in self.failures],
        }
        if self.params is not None:
            p = self.params
            out["params"] = {"sample_fraction": p.sample_fraction, "n_runs": p.n_runs,
                             "alpha": p.alpha, "seed": p.seed,
                             "edge_threshold": p.edge_threshold}
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def vote(graphs, nodes, edge_threshold=0.5):
    """Synthesize one PAG from several.

    An edge enters the consensus when it appears in more than
    ``edge_threshold`` of the graphs; each of its endpoint marks is the
    plurality mark among graphs containing the edge, with ties going to
    circle. ``None`` entries (failed runs) are ignored.

    Returns ``(consensus, edge_support, mark_support)``.
    """
    graphs = [g for g in graphs if g is not None]
    if not graphs:
        raise CausalProbeError("no successful runs to vote over")
    nodes = tuple(nodes)
    n = len(nodes)
    total = len(graphs)
    stack = np.stack([g.marks for g in graphs])
    present = stack != 0
    counts = present.sum(axis=0)
    consensus = Pag(nodes)
    edge_support, mark_support = {}, {}
    for i in range(n):
        for j in range(i + 1, n):
            c = int(counts[i, j])
            if c == 0:
                continue
            pair = frozenset((nodes[i], nodes[j]))
            support = c / total
            edge_support[pair] = support
            chosen = {}
            for at, col in ((i, stack[:, j, i]), (j, stack[:, i, j])):
                tally = {m: int(np.sum(col == m)) for m in Mark}
                mark_support[(pair, nodes[at])] = {m: tally[m] / c for m in Mark}
                best = max(tally.values())
                winners = [m for m in Mark if tally[m] == best]
                chosen[at] = winners[0] if len(winners) == 1 else CIRCLE
            if support > edge_threshold:
                consensus.add_edge(nodes[i], nodes[j], chosen[i], chosen[j])
    return consensus, edge_support, mark_support


def _thread_count(n_runs):
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if cap < 1:
            raise ValidationError(f"{THREADS_ENV} must be positive")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_runs))


def run_ensemble(table, variables, fci_params: FciParams | None = None,
                 ens_params: EnsembleParams | None = None, test="kcit", dag=None,
                 kcit_params=None, threads=None):
    """FCI on ``n_runs`` random subsamples, then :func:`vote`.

    Run ``k`` uses the subsample drawn with seed ``ens_params.seed + k``.
    ``test`` is a test name (``"fisherz"``, ``"kcit"``, ``"oracle"``) or a
    callable ``factory(subtable) -> CiTest``. Runs that raise a
    :class:`CausalProbeError` are recorded in ``failures`` and left out of the
    vote denominators.
    """
    ens_params = ens_params or EnsembleParams()
    fci_params = fci_params or FciParams(alpha=ens_params.alpha)
    variables = tuple(variables)

    if callable(test):
        factory = test
    else:
        def factory(sub):
            return make_test(test, sub, fci_params.alpha, dag=dag, variables=variables,
                             kcit_params=kcit_params)

    def one(k):
        try:
            sub = None if table is None else subsample(
                table, ens_params.sample_fraction, ens_params.seed + k)
            pag, _ = run_fci(factory(sub), variables, fci_params)
            return pag, None
        except CausalProbeError as exc:
            return None, f"{exc.error_id}: {exc}"

    workers = threads if threads is not None else _thread_count(ens_params.n_runs)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(ens_params.n_runs)))
    else:
        results = [one(k) for k in range(ens_params.n_runs)]

    graphs = [g for g, _ in results]
    failures = [(k, msg) for k, (_, msg) in enumerate(results) if msg is not None]
    consensus, edge_support, mark_support = vote(graphs, variables, ens_params.edge_threshold)
    return EnsembleResult(consensus, edge_support, mark_support, graphs, failures, ens_params)
