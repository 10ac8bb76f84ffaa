"""Calibrated filtering of generated responses under distortion risk measures."""

__version__ = "0.1.0"

from .calibrate import CalibrationConfig, CalibrationResult, CurvePoint, calibrate, select_lambda, ucb_curve
from .candidates import GenerationConfig, generate_candidate_set, rouge_l
from .empirical import SortedSample, empirical_cdf, empirical_quantile, sort_sample, spearman
from .envelopes import (
    Envelope,
    PrecisionError,
    beta_cdf,
    beta_inverse,
    bj_envelope,
    bj_threshold,
    dkw_envelope,
    envelope_risk_ucb,
    uniform_order_noncrossing,
)
from .evaluation import EvalReport, estimate_cost, evaluate, oracle_curve, oracle_risk, run_sweep, suggest_alpha
from .induce import InducedMatrix, LambdaGrid, ScoreTable, TableFormatError, build_grid, induce_scores
from .risk_measures import (
    WeightMeasure,
    estimate_risk,
    lstat_weights,
    ucb,
    variance_cvar,
    variance_general,
    variance_var_bootstrap,
)
from .synth import SynthConfig, copula_param, generate_scores
