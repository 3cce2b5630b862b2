"""Two-channel diffusion imputation for mixed-type tabular data.

A deterministic continuous-diffusion channel reconstructs missing numerical
cells while a simplex-preserving discrete channel handles categorical and
ordinal cells; both are trained jointly from incomplete data via
self-masking.
"""

from .imputer import Checkpoint, TrainConfig, impute, train
from .missingness import MechanismSpec, achieved_rate, gen_mask, gen_mcar, self_mask_augment
from .synthetic import SynthConfig, generate_dataset
from .tabular import (CATEGORICAL, CONTINUOUS, ORDINAL, ColumnSpec, FeatureSchema,
                      MaskedTable, load_table, save_table)
from .evaluation import MetricReport, evaluate_imputation, mean_mode_baseline

__version__ = "0.1.0"

__all__ = [
    "CATEGORICAL", "CONTINUOUS", "ORDINAL",
    "Checkpoint", "ColumnSpec", "FeatureSchema", "MaskedTable", "MechanismSpec",
    "MetricReport", "SynthConfig", "TrainConfig",
    "achieved_rate", "evaluate_imputation", "gen_mask", "gen_mcar",
    "generate_dataset", "impute", "load_table", "mean_mode_baseline",
    "save_table", "self_mask_augment", "train",
]
