"""Folds, training, prediction aggregation, metrics and ensembles."""

from .evaluation import (ENSEMBLE_PRESETS, MetricsReport, average_segments, evaluate,
                         evaluate_predictions, f1_delta_table, format_summary, predict_track,
                         read_predictions, summarize_folds, write_predictions)
from .metrics import PredictionMatrix, auc_scores, ensemble_average, f1_scores, lrap
from .training import (Schedule, fit, make_folds, refresh_bn_stats, simulate_schedule, train_fold,
                       training_lrap)

__all__ = ["ENSEMBLE_PRESETS", "MetricsReport", "PredictionMatrix", "Schedule",
           "auc_scores", "average_segments", "ensemble_average", "evaluate",
           "evaluate_predictions", "f1_delta_table", "f1_scores", "fit", "format_summary",
           "lrap", "make_folds", "predict_track", "read_predictions", "simulate_schedule",
           "refresh_bn_stats", "summarize_folds", "train_fold", "training_lrap", "write_predictions"]
