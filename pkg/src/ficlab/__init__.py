"""Focused information criteria with confidence distributions for the FIC scores."""
from .averaging import WeightScheme, averaged_estimate, limit_distribution_sample, weights
from .cdfic import RmseCD, narrow_wide_cutoff, pointmass_threshold, quantile_mse, rmse_cd
from .exceptions import ConfigError, FicError, FitError, NumericalFailure
from .ficscores import FicTable, bias_ratio, fic_scores, fic_table, limit_fic_table
from .glmfit import FocusSpec, GlmDataset, fit_all, fit_submodel, fit_wide
from .limitcore import LimitExperiment, SubmodelMask, all_masks, geometry, size_order, true_mse

__all__ = [
    "WeightScheme", "averaged_estimate", "limit_distribution_sample", "weights",
    "RmseCD", "narrow_wide_cutoff", "pointmass_threshold", "quantile_mse", "rmse_cd",
    "ConfigError", "FicError", "FitError", "NumericalFailure",
    "FicTable", "bias_ratio", "fic_scores", "fic_table", "limit_fic_table",
    "FocusSpec", "GlmDataset", "fit_all", "fit_submodel", "fit_wide",
    "LimitExperiment", "SubmodelMask", "all_masks", "geometry", "size_order", "true_mse",
]
__version__ = "0.1.0"
