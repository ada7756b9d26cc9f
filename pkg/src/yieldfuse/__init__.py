"""Multimodal explosive-yield estimation with tempered Bayesian fusion."""

__version__ = "0.1.0"

from .data import (Dataset, DatasetError, SeismicObs, CraterObs, SarBox,
                   VlmRecord, beirut_summary_dataset, load_dataset, save_dataset)
from .blast import (KB_COEFFICIENTS, DEFAULT_MAGNITUDE_LINK, MagnitudeLink,
                    ScaledDistanceError, kb_incident_overpressure, psi_to_kpa,
                    crater_mu_log10, magnitude_from_yield, mw_from_log_moment)
from .priors import ParamVector, PriorConfig, DEFAULT_PRIORS, log_prior
from .posterior import FusionMethod, JointDensity, UnsupportedMethodError, gradient_check

__all__ = [
    "Dataset", "DatasetError", "SeismicObs", "CraterObs", "SarBox", "VlmRecord",
    "beirut_summary_dataset", "load_dataset", "save_dataset",
    "KB_COEFFICIENTS", "DEFAULT_MAGNITUDE_LINK", "MagnitudeLink",
    "ScaledDistanceError", "kb_incident_overpressure", "psi_to_kpa",
    "crater_mu_log10", "magnitude_from_yield", "mw_from_log_moment",
    "ParamVector", "PriorConfig", "DEFAULT_PRIORS", "log_prior",
    "FusionMethod", "JointDensity", "UnsupportedMethodError", "gradient_check",
    "__version__",
]
