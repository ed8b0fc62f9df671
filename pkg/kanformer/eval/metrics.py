import numpy as np

from typing import Dict, Optional, Sequence
from sklearn.metrics import f1_score

from kanformer.data.dataset import ArrayDataset, DataLoader
from kanformer.errors import ContractError


def predict(model, dataset: ArrayDataset, batch_size: int = 256) -> np.ndarray:
    """Eval-mode forward over the whole dataset, no tape."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    model.eval()
    outputs = [model(inputs).data for inputs, _ in DataLoader(dataset, batch_size)]
    return np.concatenate(outputs)


def rmse(predictions: np.ndarray, targets: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.size == 0:
        raise ContractError("rmse of an empty set is undefined")
    if predictions.shape != targets.shape:
        raise ContractError(f"{predictions.size} predictions for {targets.size} targets")
    return float(np.sqrt(np.mean((predictions - targets) ** 2)))


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    num_classes = logits.shape[1]
    if not 1 <= k <= num_classes:
        raise ContractError(f"top-{k} accuracy needs at least {k} classes, got {num_classes}")
    # ties rank the lower class index first, as argmax does
    true = logits[np.arange(len(labels)), labels][:, None]
    ahead = (logits > true) | ((logits == true) & (np.arange(num_classes) < labels[:, None]))
    rank = np.sum(ahead, axis=1)
    return float(np.mean(rank < k))


def classification_metrics(
    logits: np.ndarray, labels: np.ndarray, ks: Sequence[int] = (1, 5)
) -> Dict[str, float]:
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ContractError("cannot score an empty dataset")
    for k in ks:
        if k > logits.shape[1]:
            raise ContractError(f"top-{k} accuracy needs at least {k} classes, got {logits.shape[1]}")
    results = {f"acc{k}": topk_accuracy(logits, labels, k) for k in ks}
    preds = np.argmax(logits, axis=1)
    results["f1_macro"] = float(f1_score(labels, preds, average="macro", zero_division=0))
    return results


def evaluate_rmse(
    model, data: ArrayDataset, lowest_so_far: Optional[float] = None, batch_size: int = 256
) -> Dict[str, float]:
    value = rmse(predict(model, data, batch_size), data.targets)
    lowest = value if lowest_so_far is None else min(lowest_so_far, value)
    return {"rmse": value, "lowest_so_far": lowest}


def evaluate_classification(
    model, data: ArrayDataset, ks: Sequence[int] = (1, 5), batch_size: int = 256
) -> Dict[str, float]:
    return classification_metrics(predict(model, data, batch_size), data.targets, ks)
