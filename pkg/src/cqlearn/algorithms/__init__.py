"""Threshold search, ERM, risk estimation, hypothesis selection and the pure-state learner."""
from .config import AlgorithmConfig, Schedule, SizingError, ere_schedule, erm_schedule
from .data import DenseData, GroupedData, ThresholdedConceptList, Trace, data_from_source
from .estimation import (ere_shadow, hypothesis_selection, pure_state_realizable_learner, search_bad_estimate,
                         select_from_mu)
from .estimator import (EstimatorCapacityError, EstimatorState, estimator_predictions, fresh_estimator,
                        update_estimator)
from .search import erm_projector, threshold_search

__all__ = [
    "AlgorithmConfig", "Schedule", "SizingError", "ere_schedule", "erm_schedule",
    "DenseData", "GroupedData", "ThresholdedConceptList", "Trace", "data_from_source",
    "ere_shadow", "hypothesis_selection", "pure_state_realizable_learner", "search_bad_estimate",
    "select_from_mu", "EstimatorCapacityError", "EstimatorState", "estimator_predictions",
    "fresh_estimator", "update_estimator", "erm_projector", "threshold_search",
]
