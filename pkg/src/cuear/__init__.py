"""Identification-robust subset inference in (nonlinear) GMM with continuously updated HAC weights."""

from .cue import ArResult, OptimOptions, cue_full_estimate, cue_objective, minimize_over_gamma
from .errors import CueArError, DegeneracyError, UsageError
from .hac import HacEstimate, KernelKind, KernelSpec, hac_covariance
from .inference import (ConfidenceSet, SearchOptions, TestResult, ar_test, invert_ar_ci,
                        klm_test, project_ci, wald_t_test)
from .moments import (Dataset, InstrumentSet, MomentModel, ParamPoint, make_linear_iv_model,
                      make_local_projection_model, make_nkpc_model, read_csv)

__all__ = [
    "ArResult", "OptimOptions", "cue_full_estimate", "cue_objective", "minimize_over_gamma",
    "CueArError", "DegeneracyError", "UsageError",
    "HacEstimate", "KernelKind", "KernelSpec", "hac_covariance",
    "ConfidenceSet", "SearchOptions", "TestResult", "ar_test", "invert_ar_ci", "klm_test",
    "project_ci", "wald_t_test",
    "Dataset", "InstrumentSet", "MomentModel", "ParamPoint", "make_linear_iv_model",
    "make_local_projection_model", "make_nkpc_model", "read_csv",
]
