"""Interpretable malaria-cell classification from four aggregated image features."""

from .classifiers import (
    DecisionTree,
    HyperparamGrid,
    LogisticModel,
    RandomForest,
    feature_importance,
    forest_predict_proba,
    forest_train,
    grid_search_cv,
    load_model,
    save_model,
    train_logistic,
    train_tree,
)
from .evaluation import ConfusionMatrix, MetricsReport, confusion, curves, metrics, split_dataset
from .explain import explain_prediction, perturb, render_overlay, segment_image
from .features import CannyParams, FeatureVector, extract_features, inner_ring_length
from .image_core import ImageRGB, load_png, save_png

__version__ = "0.1.0"
