"""Continual learning of household object-relocation routines.

A numpy-backed laboratory: a small reverse-mode tape engine, a household
routine simulator, a spatio-temporal relocation model over snapshot graphs,
Fisher-anchored consolidation with a decaying rehearsal buffer, and the
sequential-session experiment harness with its evaluation protocols.
"""

from .autodiff import Tape, TapeError, Tensor, stable_softmax
from .continual import (CLHyperparams, ConsolidationAnchor, MemoryBuffer,
                        buffer_size_forecast, buffer_update,
                        consolidation_grad, consolidation_loss,
                        fisher_diagonal, mean_feature_vector,
                        sample_informativeness)
from .graphs import (EntityCatalog, GraphDelta, GraphError, GraphSnapshot,
                     RelocationEvent, apply_delta, extract_relocations,
                     snapshot_diff, time_encoding, validate_snapshot)
from .model import (EmbeddingBundle, LossBreakdown, ModelConfig,
                    ParameterSet, PredictedGraph, decode_relocations, encode,
                    init_parameters, model_loss, predict)
from .optim import AdamState, adam_step
from .simulate import (ActivitySpec, HouseholdSpec, TaskDataset,
                       builtin_household_suite, generate_dataset,
                       split_train_test)
from .experiment import (MetricsReport, RetentionMatrix, TrainingConfig,
                         efficiency_report, evaluate, new_task_report,
                         run_session, run_strategy)

__version__ = "0.1.0"

__all__ = [
    "ActivitySpec", "AdamState", "CLHyperparams", "ConsolidationAnchor",
    "EmbeddingBundle", "EntityCatalog", "GraphDelta", "GraphError",
    "GraphSnapshot", "HouseholdSpec", "LossBreakdown", "MemoryBuffer",
    "MetricsReport", "ModelConfig", "ParameterSet", "PredictedGraph",
    "RelocationEvent", "RetentionMatrix", "Tape", "TapeError", "TaskDataset",
    "Tensor", "TrainingConfig", "adam_step", "apply_delta",
    "buffer_size_forecast", "buffer_update", "builtin_household_suite",
    "consolidation_grad", "consolidation_loss", "decode_relocations",
    "efficiency_report", "encode", "evaluate", "extract_relocations",
    "fisher_diagonal", "generate_dataset", "init_parameters",
    "mean_feature_vector", "model_loss", "new_task_report", "predict",
    "run_session", "run_strategy", "sample_informativeness", "snapshot_diff",
    "split_train_test", "stable_softmax", "time_encoding",
    "validate_snapshot",
]
