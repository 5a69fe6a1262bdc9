"""Residual ensembles of differentiable oblivious trees for tabular data."""
from .data_io import Dataset, DataError, Schema, load_csv
from .importance import feature_importance
from .model import NcartConfig, NcartModel, init, predict
from .train import fit, kfold_cv, random_search

__all__ = ["Dataset", "DataError", "Schema", "load_csv", "feature_importance", "NcartConfig",
           "NcartModel", "init", "predict", "fit", "kfold_cv", "random_search"]
__version__ = "0.1.0"
