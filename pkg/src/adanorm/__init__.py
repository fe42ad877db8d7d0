"""Adaptive norm selection for testing a multivariate point null.

The statistic is the smallest Monte Carlo inefficiency measure of ``sqrt(n)
psi_n`` over a family of lp and sum-of-squares norms; its null law is
calibrated by nested Monte Carlo from a Gaussian approximation.
"""

from .comparators import WaldSummary, bonferroni_p, cauchy_combination, wald_pvalues
from .errors import *  # noqa: F401,F403
from .estimators import (EstimateResult, TwoPhaseRecord, bootstrap_covariance,
                         correlation_estimator, empirical_covariance_from_if,
                         loglinear_missing_estimator, two_phase_if_terms,
                         two_phase_logistic_estimator)
from .measures import (MeasureConfig, NormCalibration, acceptance_rate, critical_value,
                       multiplicative_factor)
from .norms import NormSpec, default_family, evaluate, parse_family, parse_norm
from .rng import (CovMatrix, DrawMatrix, SeededStream, cholesky_factor, sample_mvn,
                  std_normal_cdf, std_normal_quantile)
from .testkit import (CalibrationResult, TestReport, adaptive_statistic, calibrate_null,
                      p_value, permutation_test, run_test)

__version__ = "0.1.0"
