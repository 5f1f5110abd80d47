"""Masked-input multi-species distribution modeling with Shapley attribution.

One transformer handles any predictor subset via a learned mask token; exact,
uniform-MC, and Latin-square stratified-MC Shapley estimators explain both
performance and individual predictions; imputation baselines and per-subset
oracles provide controlled comparisons on synthetic data.
"""

from .data import (
    MISSING,
    Dataset,
    PredictorSchema,
    PredictorSpec,
    Sample,
    SplitAssignment,
    SyntheticTruth,
    assign_spatial_blocks,
    fit_standardizer,
    generate_synthetic,
    is_missing,
    load_csv,
    write_csv,
)
from .masks import SubsetMask, group_masks
from .model import (
    Model,
    ModelConfig,
    desk_config,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, TrainHistory, desk_train_config, species_weights, train
from .evaluation import (
    EvalReport,
    SubsetGrid,
    auc,
    evaluate_group_powerset,
    mean_auc,
    mean_squared_pred_difference,
    occurrence_stratified_auc,
)
from .baselines import (
    ImputerModel,
    OracleModel,
    compare_baselines,
    fit_imputer,
    impute_conditional_predict,
    impute_marginal_predict,
    impute_point,
    train_oracle,
)
from .shapley import (
    ShapleyEstimate,
    ValueFunction,
    exact_shapley,
    is_latin_square,
    performance_value_function,
    prediction_value_function,
    random_latin_square,
    shapley_map,
    stratified_mc_shapley,
    uniform_mc_shapley,
)

__version__ = "0.1.0"
