"""Latent Markov models with covariates for longitudinal binary panels.

Fits models whose initial and transition probabilities depend on subject
covariates, selects among nested variants by BIC, and turns the fitted
facility effects on transitions into performance scores.
"""

__version__ = "0.1.0"

from .backend import BACKEND
from .em import FitResult, FitSettings, e_step, fit, m_step_lambda, multi_start_init, pava
from .errors import DataError, LMError, NumericalError, ZeroLikelihoodError
from .inference import InferenceResult, infer, observed_information, score_vector, wald_table
from .io import parse_panel_csv, read_report, write_panel_csv, write_report
from .likelihood import evaluate, forward, independence_loglik, log_likelihood, posterior
from .links import initial_probs, transition_matrix
from .model import (SHARED_UPDOWN, UNRESTRICTED_TRIDIAG, ModelConfig, Occasion, PanelData,
                    Parameters, SubjectRecord, count_parameters, validate_panel)
from .scoring import (average_initial_probs, classify, descriptive_scores, facility_contrasts,
                      score_facilities, unidimensional_scores)
from .selection import backward_select, bic, r_squared, s_index
from .simulate import SimDesign, simulate_panel

__all__ = [
    "BACKEND", "DataError", "FitResult", "FitSettings", "InferenceResult", "LMError", "ModelConfig",
    "NumericalError", "Occasion", "PanelData", "Parameters", "SHARED_UPDOWN", "SimDesign",
    "SubjectRecord", "UNRESTRICTED_TRIDIAG", "ZeroLikelihoodError", "average_initial_probs",
    "backward_select", "bic", "classify", "count_parameters", "descriptive_scores", "e_step",
    "evaluate", "facility_contrasts", "fit", "forward", "independence_loglik", "infer",
    "initial_probs", "log_likelihood", "m_step_lambda", "multi_start_init", "observed_information",
    "parse_panel_csv", "pava", "posterior", "r_squared", "read_report", "s_index",
    "score_facilities", "score_vector", "simulate_panel", "transition_matrix",
    "unidimensional_scores", "validate_panel", "wald_table", "write_panel_csv", "write_report",
]
