import numpy as np

import kanformer.tensor as T
from kanformer.errors import ContractError, ShapeError
from kanformer.tensor import Tensor


class MSELoss:
    """Mean squared error for regression heads."""

    def __call__(self, pred: Tensor, target: np.ndarray) -> Tensor:
        target = Tensor(np.asarray(target).reshape(pred.shape), precision=pred.precision)
        return T.ops.mean(T.square(pred - target))


class CrossEntropyLoss:
    """Mean negative log-likelihood of integer class labels under softmax(logits)."""

    def __call__(self, logits: Tensor, labels: np.ndarray) -> Tensor:
        labels = np.asarray(labels, dtype=np.int64)
        if logits.ndim != 2 or labels.shape != (logits.shape[0],):
            raise ShapeError(f"cross entropy needs (B, C) logits and (B,) labels, got {logits.shape} and {labels.shape}")
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise ContractError(f"labels must lie in [0, {logits.shape[1]})")
        onehot = np.zeros(logits.shape)
        onehot[np.arange(len(labels)), labels] = 1.0
        logp = T.log_softmax(logits, axis=-1)
        picked = T.ops.sum(logp * Tensor(onehot, precision=logits.precision), axis=-1)
        return -T.ops.mean(picked)


def build_loss(task_kind: str):
    if task_kind == "regression":
        return MSELoss()
    if task_kind == "classification":
        return CrossEntropyLoss()
    raise ContractError(f"no loss for task kind '{task_kind}'")
