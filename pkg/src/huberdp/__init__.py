"""User-level differentially private mean estimation by Huber-loss minimization."""

__version__ = "0.1.0"

from .baseline import WmeConfig, wme_estimate
from .dataset import (
    ImbalanceProfile,
    UserDataset,
    UserSummary,
    export_dataset,
    imbalance_degree,
    load_dataset,
    user_means,
)
from .huber import HuberConfig, MinimizerResult, huber_gradient, huber_loss, objective, weiszfeld_minimize
from .mechanism import (
    EstimationResult,
    EstimatorConfig,
    check_conditions,
    clip,
    estimate,
    select_imbalanced_params,
    select_threshold_bounded,
    select_threshold_heavytail,
)
from .sensitivity import PrivacyParams, SensitivityReport, privacy_params

__all__ = [
    "EstimationResult",
    "EstimatorConfig",
    "HuberConfig",
    "ImbalanceProfile",
    "MinimizerResult",
    "PrivacyParams",
    "SensitivityReport",
    "UserDataset",
    "UserSummary",
    "WmeConfig",
    "check_conditions",
    "clip",
    "estimate",
    "export_dataset",
    "huber_gradient",
    "huber_loss",
    "imbalance_degree",
    "load_dataset",
    "objective",
    "privacy_params",
    "select_imbalanced_params",
    "select_threshold_bounded",
    "select_threshold_heavytail",
    "user_means",
    "weiszfeld_minimize",
    "wme_estimate",
]
