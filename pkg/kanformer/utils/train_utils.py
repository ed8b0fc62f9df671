import sys
import math
import tqdm
import numpy as np

from typing import Dict, Optional

from kanformer.data.dataset import ArrayDataset, DataLoader, TaskInfo
from kanformer.errors import TrainingError
from kanformer.eval.metrics import evaluate_classification, evaluate_rmse
from kanformer.log import MetricLogger
from kanformer.tensor import Tape, backward


def train_one_epoch(
    model,
    loss_fn,
    data_loader: DataLoader,
    optimizer,
    epoch: int,
    nepochs: int,
    rng: np.random.Generator,
    verbose: bool = True,
) -> Dict[str, float]:
    metric_logger = MetricLogger(delimiter="  ")
    model.train()
    with tqdm.tqdm(
        data_loader,
        desc=(f"Epoch [{epoch+1}/{nepochs}]"),
        unit=" sample",
        ncols=80,
        unit_scale=data_loader.batch_size,
        leave=False,
        file=sys.stdout,
        disable=not verbose,
    ) as t:
        for it, (inputs, targets) in enumerate(t):
            with Tape() as tape:
                output = model(inputs, rng)
                loss = loss_fn(output, targets)

            if not math.isfinite(loss.item()):
                raise TrainingError(
                    f"loss is {loss.item()} at epoch {epoch}, batch {it}, stopping training"
                )

            grads = backward(loss, tape)
            optimizer.step(grads)

            metric_logger.update(n=len(targets), loss=loss)
            t.set_postfix_str(metric_logger.postfix())

    return metric_logger.summary()


def classification_ks(task: TaskInfo):
    return (1, 5) if task.num_classes >= 5 else (1,)


def tune_one_epoch(
    model,
    test_data: ArrayDataset,
    task: TaskInfo,
    lowest_so_far: Optional[float] = None,
) -> Dict[str, float]:
    """Validation metrics of the current parameters."""
    if task.kind == "regression":
        return evaluate_rmse(model, test_data, lowest_so_far)
    return evaluate_classification(model, test_data, classification_ks(task))
