"""Classifiers used by the traffic-analysis adversary."""

from camo.errors import CamoError
from camo.models.knn import KnnModel
from camo.models.mlp import MlpModel, fine_tune, incremental_train
from camo.models.tree import DecisionTreeModel, RandomForestModel, gini_impurity

MODEL_KINDS = {
    "knn": KnnModel,
    "dt": DecisionTreeModel,
    "rf": RandomForestModel,
    "mlp": MlpModel,
}

# hyperparameters of the gradient-boosting baseline (not implemented here)
GBM_HYPERPARAMETERS = {"learning_rate": 0.1, "n_estimators": 100, "subsample": 1.0,
                       "max_depth": 3, "random_state": 30}


def parse_classifiers(text: str) -> list[str]:
    names = [n.strip().lower() for n in text.split(",") if n.strip()]
    unknown = [n for n in names if n not in MODEL_KINDS]
    if unknown or not names:
        raise CamoError(f"unknown classifier(s) {unknown}; choose from {sorted(MODEL_KINDS)}")
    return names


def train(kind: str, X, y, **hyper):
    return MODEL_KINDS[kind](**hyper).fit(X, y)


def predict(model, X):
    return model.predict(X)


__all__ = ["KnnModel", "DecisionTreeModel", "RandomForestModel", "MlpModel", "MODEL_KINDS",
           "fine_tune", "incremental_train", "gini_impurity", "train", "predict",
           "parse_classifiers"]
