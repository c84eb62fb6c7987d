"""Martingale-gap diagnostics for sequence predictors.

Measures how far a predictor departs from exchangeable (Bayesian) updating,
fits the scaling of the departure with context length, removes positional
artifacts, scores compression efficiency and plans reasoning-token budgets.
"""
__version__ = "0.1.0"

from .errors import (
    BackendError, ConfigError, DegenerateFitError, DomainError, GapScanError,
    MartingapError, ProtocolError, RetryableError, StructuralError,
)
from .seqcore import BitSequence, PermutationSpec, PeGeometry, balanced_sequences, split_seed
from .gapstats import (
    GapSeries, compare_models, fit_scaling, gap_scan, permutation_gap, prefix_gap,
    theory_bound, variance_curve,
)
from .debias import debias, detect_harmonics, fit_harmonic_model
from .mdl import codelength, efficiency_curve, hypergeom_entropy_expectation
from .cotplan import CotParams, closed_form_kstar, fit_benefit, plan, required_samples, rope_adjust
