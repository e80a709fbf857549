from .encoding import OheVocabulary, fit_ohe, transform, transform_many
from .evaluate import (
    Dataset,
    SearchSpace,
    balance_classes,
    evaluate_final,
    feature_importance_report,
    random_search,
    save_leaderboard,
    select_unknown_threshold,
    stratified_kfold,
)
from .forest import (
    Hyperparams,
    RandomForestModel,
    load_model,
    predict,
    predict_proba,
    save_model,
    train_forest,
)
from .metrics import (
    UNKNOWN_LABEL,
    MetricsReport,
    balanced_accuracy,
    confusion_matrix,
    micro_f1,
    roc_auc_ovr,
)

__all__ = [
    "Dataset",
    "Hyperparams",
    "MetricsReport",
    "OheVocabulary",
    "RandomForestModel",
    "SearchSpace",
    "UNKNOWN_LABEL",
    "balance_classes",
    "balanced_accuracy",
    "confusion_matrix",
    "evaluate_final",
    "feature_importance_report",
    "fit_ohe",
    "load_model",
    "micro_f1",
    "predict",
    "predict_proba",
    "random_search",
    "roc_auc_ovr",
    "save_leaderboard",
    "save_model",
    "select_unknown_threshold",
    "stratified_kfold",
    "train_forest",
    "transform",
    "transform_many",
]
