import json
import wandb
import subprocess

from pathlib import Path
from typing import Dict, List, Optional, Union
from omegaconf import DictConfig, OmegaConf


def initialize_wandb(
    cfg: DictConfig,
    key: Optional[str] = "",
):
    if key:
        command = f"wandb login {key}"
        subprocess.call(command, shell=True)
    if cfg.wandb.tags is None:
        tags = []
    else:
        tags = [str(t) for t in cfg.wandb.tags]
    config = OmegaConf.to_container(cfg, resolve=True, throw_on_missing=True)
    kwargs = dict(
        project=cfg.wandb.project,
        entity=cfg.wandb.username,
        name=cfg.wandb.exp_name,
        group=cfg.wandb.group,
        dir=cfg.wandb.dir,
        config=config,
        tags=tags,
    )
    if cfg.wandb.resume_id:
        run = wandb.init(**kwargs, id=cfg.wandb.resume_id, resume="must")
    else:
        run = wandb.init(**kwargs)
    config_file_path = Path(run.dir, "run_config.yaml")
    OmegaConf.save(cfg, config_file_path, resolve=True)
    wandb.save(str(config_file_path))
    return run


def update_log_dict(
    prefix,
    results,
    log_dict,
    step: Optional[str] = "step",
    to_log: Optional[List[str]] = None,
):
    if not to_log:
        to_log = list(results.keys())
    for r, v in results.items():
        if r in to_log:
            wandb.define_metric(f"{prefix}/{r}", step_metric=step)
            log_dict.update({f"{prefix}/{r}": v})


class MetricsWriter:
    """Appends one JSON object per epoch to `metrics.jsonl`."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")

    def write(self, record: Dict[str, float]):
        with open(self.path, "a") as f:
            f.write(json.dumps(record) + "\n")


def read_metrics(path: Union[str, Path]) -> List[Dict[str, float]]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
