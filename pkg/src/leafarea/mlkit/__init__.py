"""Preprocessing, feature selection, regressors, metrics and t-SNE."""

from .linear import LinearModel, fit_enr, fit_lasso, fit_mlr, fit_ridge
from .metrics import EvalMetrics, bias, mae, r2
from .mlp import MLP, DivergenceError, MLPParams, fit_mlp
from .models import DEFAULT_SPACES, FittedModel, ModelKind, fit_model, sample_params
from .preprocess import Standardizer, standardize_apply, standardize_fit
from .selection import BorutaConfig, Decision, boruta, mutual_information, select_features
from .trees import BoostParams, ForestParams, fit_gbt, fit_rf
from .tsne import TsneParams, tsne

__all__ = [
    "DEFAULT_SPACES", "MLP", "BoostParams", "BorutaConfig", "Decision", "DivergenceError",
    "EvalMetrics", "FittedModel", "ForestParams", "LinearModel", "MLPParams", "ModelKind",
    "Standardizer", "TsneParams", "bias", "boruta", "fit_enr", "fit_gbt", "fit_lasso", "fit_mlp",
    "fit_mlr", "fit_model", "fit_rf", "fit_ridge", "mae", "mutual_information", "r2",
    "sample_params", "select_features", "standardize_apply", "standardize_fit", "tsne",
]
