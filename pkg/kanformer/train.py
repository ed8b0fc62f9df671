import os
import sys
import time
import tqdm
import wandb
import numpy as np

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

from omegaconf import DictConfig

from kanformer.components import AdamW, EarlyStopping, build_loss
from kanformer.data import DataLoader, SplitDataset, TaskInfo, load_task
from kanformer.log import MetricsWriter, initialize_wandb, update_log_dict
from kanformer.models import Encoder, build_encoder
from kanformer.utils import (
    compute_time,
    get_params_groups,
    make_streams,
    save_checkpoint,
    train_one_epoch,
    tune_one_epoch,
)


@dataclass
class TrainResult:
    history: List[Dict[str, float]]
    tracking: str
    best_epoch: Optional[int]
    best_value: Optional[float]
    best_metrics: Dict[str, float] = field(default_factory=dict)
    checkpoint: Optional[Path] = None


def tracked_metric(task: TaskInfo):
    if task.kind == "regression":
        return "rmse", "min"
    return "acc1", "max"


def train_loop(
    cfg: DictConfig,
    model: Encoder,
    data: SplitDataset,
    task: TaskInfo,
    output_dir: Optional[Union[str, Path]] = None,
    streams: Optional[Dict[str, np.random.Generator]] = None,
    verbose: bool = True,
) -> TrainResult:
    """
    Train until `train.max_epochs` or until the validation metric has not improved for
    `train.patience` epochs. One metric record per epoch; on return the model holds the
    parameters of the best epoch.
    """
    streams = streams if streams is not None else make_streams(cfg.seed)
    loss_fn = build_loss(task.kind)
    optimizer = AdamW(
        get_params_groups(model),
        lr=cfg.train.lr,
        betas=tuple(cfg.train.betas),
        eps=cfg.train.eps,
        weight_decay=cfg.train.weight_decay,
    )
    train_loader = DataLoader(data.train, cfg.train.batch_size, shuffle=True, rng=streams["shuffle"])
    tracking, min_max = tracked_metric(task)

    output_dir = Path(output_dir) if output_dir is not None else None
    writer = MetricsWriter(output_dir / "metrics.jsonl") if output_dir is not None else None
    checkpoint_dir = output_dir / "checkpoint" if output_dir is not None else None
    best_state = {}

    def on_improvement(epoch: int):
        best_state.update(model.state_dict())
        if checkpoint_dir is not None:
            save_checkpoint(model, checkpoint_dir, cfg, task)

    early_stopping = EarlyStopping(
        tracking, min_max, cfg.train.patience, on_improvement=on_improvement, verbose=verbose
    )

    history, best_metrics, lowest = [], {}, None
    start_time = time.time()
    with tqdm.tqdm(
        range(cfg.train.max_epochs),
        desc=(f"{task.name}"),
        unit=" epoch",
        ncols=100,
        leave=True,
        file=sys.stdout,
        disable=not verbose,
    ) as t:
        for epoch in t:
            epoch_start_time = time.time()
            if cfg.wandb.enable:
                log_dict = {"epoch": epoch}

            train_stats = train_one_epoch(
                model,
                loss_fn,
                train_loader,
                optimizer,
                epoch,
                cfg.train.max_epochs,
                streams["dropout"],
                verbose=verbose,
            )
            results = tune_one_epoch(model, data.test, task, lowest)
            lowest = results.get("lowest_so_far")

            wall_time = time.time() - epoch_start_time if cfg.train.record_wall_time else 0.0
            record = {"epoch": epoch, "train_loss": train_stats["loss"], **results, "wall_time_s": wall_time}
            history.append(record)
            if writer is not None:
                writer.write(record)

            if cfg.wandb.enable:
                update_log_dict("train", {"train_loss": train_stats["loss"]}, log_dict, step="epoch")
                update_log_dict("test", results, log_dict, step="epoch", to_log=list(cfg.wandb.to_log))
                wandb.log(log_dict, step=epoch)

            if early_stopping(epoch, results):
                best_metrics = dict(results)
            t.set_postfix_str(f"{tracking}={results[tracking]:.4g}")

            if early_stopping.early_stop:
                if verbose:
                    tqdm.tqdm.write(
                        f"Stopping early because best {tracking} was reached {cfg.train.patience} epochs ago"
                    )
                break

    if best_state:
        model.load_state_dict(best_state)
    model.eval()

    if verbose:
        mins, secs = compute_time(start_time, time.time())
        tqdm.tqdm.write(f"Total time taken: {mins}m {secs}s")

    return TrainResult(
        history,
        tracking,
        early_stopping.best_epoch,
        early_stopping.best_value,
        best_metrics,
        checkpoint_dir if checkpoint_dir is not None and checkpoint_dir.exists() else None,
    )


def run_training(
    cfg: DictConfig, output_dir: Optional[Union[str, Path]] = None, verbose: bool = True
) -> TrainResult:
    """Load the task data, build the encoder and train it, all from `cfg.seed`."""
    streams = make_streams(cfg.seed)
    task, data = load_task(cfg, streams["data"])
    model = build_encoder(cfg, task, streams["init"])
    if verbose:
        tqdm.tqdm.write(
            f"{task.name}: {len(data.train)} train / {len(data.test)} test samples, "
            f"{model.num_parameters()} parameters"
        )
    if cfg.wandb.enable:
        run = initialize_wandb(cfg, key=os.environ.get("WANDB_API_KEY"))
        run.define_metric("epoch", summary="max")
    try:
        return train_loop(cfg, model, data, task, output_dir, streams, verbose)
    finally:
        if cfg.wandb.enable:
            wandb.finish()
