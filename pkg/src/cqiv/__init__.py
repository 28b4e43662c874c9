"""Censored quantile instrumental variable (CQIV) estimation."""

__version__ = "0.1.0"

from .control import ControlFunction, FirstStageSpec, evaluate_control, fit_control
from .data import Dataset, SecondStageSpec
from .errors import (ConfigError, CqivError, DataError, DomainError, EmptySelection,
                     NonConvergence, NonFinite, NotFitted, RankDeficient, Separation,
                     SpecMismatch, TooFewDraws)
from .estimator import (CqivConfig, CqivFit, StepDiagnostics, fit_cqiv, fit_cqiv_path,
                        powell_objective, predict_quantile, quantile_elasticity)
from .inference import (BootstrapDraws, ConfidenceInterval, Elasticity, WeightScheme,
                        bootstrap_cqiv, bootstrap_cqiv_path, draw_weights, percentile_ci)
from .numkit import fit_binary_glm, solve_ols, solve_weighted_qr, solve_weighted_qr_grid
from .sim import McDesign, McResult, generate_design, run_monte_carlo, tobit_cmle
