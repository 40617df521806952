"""``causal-probe`` command line.

Subcommands::

    normtest   Shapiro-Wilk on every (or the selected) column
    discover   FCI, optionally as a subsample ensemble
    semfit     fit a model-specification file to a data table
    synth      draw a random SCM and sample data from it
    evaluate   score a discovered graph against a ground-truth SCM
    pipeline   normtest -> discover -> semfit from a key=value config file

JSON is the canonical output; with ``--out`` the JSON goes to the file and a
human-readable rendering goes to stdout. Exit status is 0 on success, 2 for
input or validation errors and 3 for numerical or model errors, with
``error: <ErrorId>: <message>`` on stderr.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

from . import sem
from .citests import TEST_NAMES, KcitParams, make_test
from .data import load_table, normality_report, save_table
from .ensemble import EnsembleParams, run_ensemble
from .errors import CausalProbeError, ValidationError
from .fci import UNBOUNDED, FciParams, run_fci
from .graph import Dag, export_graph, import_graph
from .synth import MECHANISMS, Scm, random_scm, sample_data, score_graph

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


def _dumps(obj):
    return json.dumps(obj, indent=2) + "\n"


def _emit(text, out, human=None):
    """Write ``text`` to ``out`` (or stdout); echo ``human`` to stdout if writing a file."""
    if out:
        data = text.encode("utf-8") if isinstance(text, str) else text
        Path(out).write_bytes(data)
        if human:
            print(human)
    else:
        sys.stdout.write(text if isinstance(text, str) else text.decode("utf-8"))


def _split_vars(spec):
    if spec is None:
        return None
    names = [v.strip() for v in spec.split(",") if v.strip()]
    if not names:
        raise ValidationError("--vars is empty")
    return names


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")


def _load_truth(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "weights" in doc:
        return Scm.from_dict(doc)
    return Dag.from_dict(doc.get("dag", doc))


def _truth_dag(truth):
    return truth.dag if isinstance(truth, Scm) else truth


# ---------------------------------------------------------------------------
# commands

def cmd_normtest(data, alpha=0.05, vars=None, out=None):
    _check_alpha(alpha)
    table = load_table(data)
    report = normality_report(table, alpha, _split_vars(vars))
    lines = [f"{'column':<20} {'W':>8} {'p':>10}  normal"]
    for r in report:
        lines.append(f"{r.column:<20} {r.W:8.4f} {r.p:10.4g}  {'yes' if r.normal else 'no'}")
    _emit(report.to_json(), out, "\n".join(lines))
    return report


def cmd_discover(data=None, vars=None, test="kcit", alpha=0.05, ensemble=False, runs=30,
                 fraction=0.8, seed=0, out=None, format="json", truth=None, max_cond=4,
                 threshold=0.5, kcit_epsilon=1e-3, kcit_null="gamma"):
    _check_alpha(alpha)
    if test not in TEST_NAMES:
        raise ValidationError(f"unknown test {test!r}; choose from {TEST_NAMES}")
    dag = _truth_dag(_load_truth(truth)) if truth else None
    if test == "oracle" and dag is None:
        raise ValidationError("--test oracle needs --truth")
    table = load_table(data) if data else None
    if table is None and test != "oracle":
        raise ValidationError(f"--test {test} needs --data")
    variables = _split_vars(vars)
    if variables is None:
        variables = list(dag.observed) if table is None else list(table.column_names)
    fci_params = FciParams(alpha=alpha,
                           max_cond_size=UNBOUNDED if max_cond is None or max_cond < 0
                           else max_cond)
    kcit_params = KcitParams(epsilon=kcit_epsilon, null=kcit_null, seed=seed)
    doc = {"test": test, "alpha": alpha, "variables": list(variables)}
    if ensemble:
        ens = EnsembleParams(sample_fraction=fraction, n_runs=runs, alpha=alpha, seed=seed,
                             edge_threshold=threshold)
        result = run_ensemble(None if test == "oracle" else table, variables, fci_params,
                              ens, test=test, dag=dag, kcit_params=kcit_params)
        graph = result.consensus
        doc["graph"] = graph.to_dict()
        doc["ensemble"] = result.to_dict()
        doc["trace"] = None
    else:
        ci = make_test(test, table, alpha, dag=dag, variables=variables,
                       kcit_params=kcit_params)
        graph, trace = run_fci(ci, variables, fci_params)
        doc["graph"] = graph.to_dict()
        doc["ensemble"] = None
        doc["trace"] = trace.to_dict()
    if format == "dot":
        _emit(export_graph(graph, "dot"), out, repr(graph))
    elif format == "json":
        _emit(_dumps(doc), out, repr(graph))
    else:
        raise ValidationError(f"unknown format {format!r}")
    return doc


def cmd_semfit(data, model, method="ml", out=None):
    table = load_table(data)
    spec = sem.load_model(model)
    result = sem.fit(spec, table, method)
    doc = result.to_dict()
    ind = result.indices.to_dict()
    human = [sem.format_path_report(result), "",
             f"chi_square = {result.chi_square:.4f}  df = {result.df}"]
    human += [f"{k} = {'n/a' if v is None else format(v, '.4f')}" for k, v in ind.items()]
    _emit(_dumps(doc), out, "\n".join(human))
    return doc


def cmd_synth(observed=6, latent=1, edge_prob=0.3, rows=1000, seed=0, mechanism="linear",
              out=None, truth=None):
    scm = random_scm(observed, latent, edge_prob, seed, mechanism)
    table = sample_data(scm, rows, seed)
    if truth:
        Path(truth).write_text(scm.to_json(), encoding="utf-8")
    data = save_table(table)
    if out:
        Path(out).write_bytes(data)
        print(f"wrote {rows} rows x {table.n_cols} columns to {out}")
    else:
        sys.stdout.write(data.decode("utf-8"))
    return scm


def cmd_evaluate(graph, truth, out=None):
    doc = json.loads(Path(graph).read_text(encoding="utf-8"))
    pag = import_graph(doc.get("graph", doc))
    score = score_graph(pag, _load_truth(truth))
    human = " ".join(f"{k}={v}" for k, v in score.to_dict().items())
    _emit(score.to_json(), out, human)
    return score


_PIPELINE_KEYS = {"data", "vars", "test", "alpha", "ensemble", "runs", "fraction", "seed",
                  "model", "method", "out", "truth", "max_cond", "threshold"}


def read_pipeline_config(path):
    """Parse a section-less ``key = value`` file."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string("[pipeline]\n" + text)
    except configparser.Error as exc:
        raise ValidationError(f"bad pipeline config: {exc}") from None
    cfg = dict(parser["pipeline"])
    unknown = set(cfg) - _PIPELINE_KEYS
    if unknown:
        raise ValidationError(f"unknown pipeline keys: {sorted(unknown)}")
    if "data" not in cfg or "out" not in cfg:
        raise ValidationError("pipeline config needs 'data' and 'out'")
    base = Path(path).parent
    for key in ("data", "model", "truth", "out"):
        if key in cfg:
            cfg[key] = ",".join(str(base / p.strip()) for p in cfg[key].split(","))
    return cfg


def cmd_pipeline(config):
    cfg = read_pipeline_config(config)
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    alpha = float(cfg.get("alpha", 0.05))
    cmd_normtest(cfg["data"], alpha, cfg.get("vars"), out=outdir / "normality.json")
    flag = cfg.get("ensemble", "true").lower()
    if flag not in ("true", "false", "yes", "no", "1", "0"):
        raise ValidationError(f"ensemble must be a boolean, got {flag!r}")
    cmd_discover(cfg["data"], cfg.get("vars"), cfg.get("test", "kcit"), alpha,
                 flag in ("true", "yes", "1"), int(cfg.get("runs", 30)),
                 float(cfg.get("fraction", 0.8)), int(cfg.get("seed", 0)),
                 outdir / "discovery.json", "json", cfg.get("truth"),
                 int(cfg.get("max_cond", 4)), float(cfg.get("threshold", 0.5)))
    for model in filter(None, cfg.get("model", "").split(",")):
        stem = Path(model).stem
        cmd_semfit(cfg["data"], model, cfg.get("method", "ml"), outdir / f"semfit_{stem}.json")


# ---------------------------------------------------------------------------
# argument parsing

def build_parser():
    p = argparse.ArgumentParser(prog="causal-probe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("normtest", help="Shapiro-Wilk normality report")
    s.add_argument("--data", required=True)
    s.add_argument("--vars")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--out")

    s = sub.add_parser("discover", help="FCI causal discovery")
    s.add_argument("--data")
    s.add_argument("--vars")
    s.add_argument("--test", choices=TEST_NAMES, default="kcit")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--ensemble", action="store_true")
    s.add_argument("--runs", type=int, default=30)
    s.add_argument("--fraction", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold", type=float, default=0.5,
                   help="consensus edge needs support above this fraction")
    s.add_argument("--max-cond", type=int, default=4,
                   help="largest conditioning set; negative for unbounded")
    s.add_argument("--kcit-epsilon", type=float, default=1e-3)
    s.add_argument("--kcit-null", choices=("gamma", "permutation"), default="gamma")
    s.add_argument("--truth", help="ground-truth SCM or DAG JSON (needed by --test oracle)")
    s.add_argument("--out")
    s.add_argument("--format", choices=("json", "dot"), default="json")

    s = sub.add_parser("semfit", help="fit a structural equation model")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--method", choices=("ml", "gls"), default="ml")
    s.add_argument("--out")

    s = sub.add_parser("synth", help="sample a random SCM")
    s.add_argument("--observed", type=int, default=6)
    s.add_argument("--latent", type=int, default=1)
    s.add_argument("--edge-prob", type=float, default=0.3)
    s.add_argument("--rows", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mechanism", choices=MECHANISMS, default="linear")
    s.add_argument("--out", help="data CSV (stdout if omitted)")
    s.add_argument("--truth", help="where to write the ground-truth JSON")

    s = sub.add_parser("evaluate", help="score a discovered graph")
    s.add_argument("--graph", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out")

    s = sub.add_parser("pipeline", help="normtest, discover and semfit from a config file")
    s.add_argument("config")
    return p


def _dispatch(args):
    if args.command == "normtest":
        cmd_normtest(args.data, args.alpha, args.vars, args.out)
    elif args.command == "discover":
        cmd_discover(args.data, args.vars, args.test, args.alpha, args.ensemble, args.runs,
                     args.fraction, args.seed, args.out, args.format, args.truth,
                     args.max_cond, args.threshold, args.kcit_epsilon, args.kcit_null)
    elif args.command == "semfit":
        cmd_semfit(args.data, args.model, args.method, args.out)
    elif args.command == "synth":
        cmd_synth(args.observed, args.latent, args.edge_prob, args.rows, args.seed,
                  args.mechanism, args.out, args.truth)
    elif args.command == "evaluate":
        cmd_evaluate(args.graph, args.truth, args.out)
    else:
        cmd_pipeline(args.config)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except CausalProbeError as exc:
        print(f"error: {exc.error_id}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"error: FileError: {exc.strerror or exc}: {os.fspath(name)}", file=sys.stderr)
        return EXIT_INPUT
    except json.JSONDecodeError as exc:
        print(f"error: MalformedJson: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
