"""Causal discovery and structural equation modelling for behavioural feature tables."""
from .citests import CiResult, KcitParams, fisher_z, kcit, make_test, oracle_test
from .data import (FeatureTable, load_table, normality_report, save_table, shapiro_wilk,
                   standardize)
from .ensemble import EnsembleParams, EnsembleResult, run_ensemble, subsample, vote
from .errors import CausalProbeError, NumericalError, ValidationError
from .fci import FciParams, FciTrace, run_fci
from .graph import ARROW, CIRCLE, NO_EDGE, TAIL, Dag, Mark, Pag, d_separated, export_graph, import_graph
from .sem import SemFit, SemModel, fit, fit_indices, implied_covariance, parse_model, path_report
from .synth import GraphScore, Scm, random_scm, sample_data, score_graph

__version__ = "0.1.0"
