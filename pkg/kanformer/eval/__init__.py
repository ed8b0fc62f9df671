from .metrics import (
    predict,
    rmse,
    topk_accuracy,
    classification_metrics,
    evaluate_rmse,
    evaluate_classification,
)
from .gradcheck_suite import gradcheck_targets, run_gradcheck_suite
