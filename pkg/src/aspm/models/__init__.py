from .forest import Forest, ForestSpec, Tree, rf_fit, rf_predict_proba
from .zoo import (
    CNN_DENSE, CNN_FILTERS, FOREST_TREES, MLP_HIDDEN, SIZES, NeuralClassifier, build_spec,
    fit_classifier,
)

__all__ = [
    "Forest", "ForestSpec", "Tree", "rf_fit", "rf_predict_proba", "CNN_DENSE", "CNN_FILTERS",
    "FOREST_TREES", "MLP_HIDDEN", "SIZES", "NeuralClassifier", "build_spec", "fit_classifier",
]
