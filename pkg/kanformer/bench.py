"""
Benchmark harnesses: Feynman regression sweeps, expert-family comparisons,
classification runs and the experts / top-k ablation grids.

Every cell is an independent training run on a resolved config. Cells run in
a process pool capped by KANFORMER_THREADS; tables are assembled in the
declared cell order whatever the completion order.
"""
import time
import tqdm
import numpy as np
import pandas as pd
import multiprocessing as mp

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from omegaconf import DictConfig, OmegaConf

from kanformer.data import parse_task, registered_equations
from kanformer.errors import ConfigError, ContractError
from kanformer.train import run_training
from kanformer.utils import fingerprint, resolve_config, worker_count

EXPERT_FAMILIES = [("KAN", "kan"), ("MLP", "mlp"), ("MLP-KAN", "mixed")]
DATASET_NAMES = {"cifar10": "CIFAR-10", "cifar100": "CIFAR-100"}
ABLATION_AXES = {"experts": ("Expert", "moe.num_experts"), "topk": ("Top-k", "moe.top_k")}
MIN_HEAD_DIM = 8
FALLBACK_HEADS = 4


@dataclass
class BenchResult:
    task: str
    fingerprint: str
    metrics: Dict[str, float]
    runtime_s: float
    seed: int


@dataclass
class BenchTable:
    """A results frame plus, for each metric column, whether lower or higher is better."""

    name: str
    frame: pd.DataFrame
    directions: Dict[str, str] = field(default_factory=dict)
    fingerprint: str = ""

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def columns(self) -> List[str]:
        return list(self.frame.columns)

    def best_mask(self, column: str) -> pd.Series:
        values = pd.to_numeric(self.frame[column], errors="coerce")
        if values.isna().all():
            return pd.Series(False, index=self.frame.index)
        best = values.min() if self.directions[column] == "min" else values.max()
        return values == best


def bench_config(cfg: DictConfig) -> DictConfig:
    """Desk-scale model and budget from `cfg.bench` applied over the base config."""
    cfg = OmegaConf.create(OmegaConf.to_container(cfg, resolve=False))
    b = cfg.bench
    cfg.model.dim = b.dim
    cfg.model.layers = b.layers
    cfg.train.lr = b.lr
    cfg.train.batch_size = b.batch_size
    cfg.train.max_epochs = b.max_epochs
    cfg.train.patience = b.patience
    if b.dim // cfg.model.heads < MIN_HEAD_DIM:
        cfg.model.heads = FALLBACK_HEADS
    cfg.wandb.enable = False
    cfg.output_dir = None
    OmegaConf.set_struct(cfg, True)
    return cfg


def cell_config(base: DictConfig, task: str, **updates) -> DictConfig:
    cfg = OmegaConf.create(OmegaConf.to_container(base, resolve=False))
    OmegaConf.set_struct(cfg, True)
    cfg.task = task
    for key, value in updates.items():
        OmegaConf.update(cfg, key, value)
    return resolve_config(cfg)


def run_cell(container: dict) -> BenchResult:
    cfg = OmegaConf.create(container)
    start = time.time()
    result = run_training(cfg, output_dir=None, verbose=False)
    runtime = time.time() - start
    task = parse_task(cfg.task)
    if task.kind == "regression":
        metrics = {"rmse": float(result.best_value)}
    else:
        metrics = {
            "acc1": float(result.best_metrics.get("acc1", np.nan)),
            "acc5": float(result.best_metrics.get("acc5", np.nan)),
        }
    return BenchResult(cfg.task, fingerprint(cfg), metrics, runtime, int(cfg.seed))


def run_cells(cells: Sequence[DictConfig], workers: Optional[int] = None) -> List[List[BenchResult]]:
    """Run every cell `bench.seeds` times; results come back grouped per cell in cell order."""
    jobs, owners = [], []
    for i, cfg in enumerate(cells):
        for s in range(cfg.bench.seeds):
            job = OmegaConf.to_container(cfg, resolve=True)
            job["seed"] = int(cfg.seed) + s
            jobs.append(job)
            owners.append(i)

    workers = worker_count() if workers is None else workers
    num_workers = min(workers, len(jobs)) if jobs else 1
    if num_workers > 1:
        with mp.get_context("spawn").Pool(num_workers) as pool:
            results = list(
                tqdm.tqdm(
                    pool.imap(run_cell, jobs),
                    desc="Benchmark",
                    unit=" run",
                    total=len(jobs),
                    ncols=80,
                    leave=False,
                )
            )
    else:
        results = [run_cell(job) for job in tqdm.tqdm(jobs, desc="Benchmark", unit=" run", ncols=80, leave=False)]

    grouped: List[List[BenchResult]] = [[] for _ in cells]
    for i, r in zip(owners, results):
        grouped[i].append(r)
    return grouped


def summarize(runs: List[BenchResult], metric: str) -> Tuple[float, float]:
    values = np.array([r.metrics[metric] for r in runs], dtype=np.float64)
    if np.all(np.isnan(values)):
        return float("nan"), float("nan")
    sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return float(np.mean(values)), sd


def _add_metric(row: dict, column: str, runs: List[BenchResult], metric: str, seeds: int):
    mean, sd = summarize(runs, metric)
    row[column] = mean
    if seeds > 1:
        row[f"{column} sd"] = sd


def check_equations(equations: Sequence[str]) -> List[str]:
    known = registered_equations()
    unknown = [eq for eq in equations if eq not in known]
    if unknown:
        raise ConfigError(f"unknown Feynman equations {unknown}; registered: {', '.join(known)}")
    # table row order follows the registry
    wanted = set(equations)
    return [eq for eq in known if eq in wanted]


def bench_feynman(
    equations: Sequence[str], cfg: DictConfig, workers: Optional[int] = None
) -> BenchTable:
    """Lowest test RMSE of one MLP-KAN model per equation."""
    equations = check_equations(equations)
    base = bench_config(cfg)
    cells = [cell_config(base, f"feynman:{eq}") for eq in equations]
    grouped = run_cells(cells, workers)

    rows = []
    for eq, cell, runs in zip(equations, cells, grouped):
        row = {"Feynman Eq.": eq}
        _add_metric(row, "RMSE", runs, "rmse", cell.bench.seeds)
        row["Fingerprint"] = fingerprint(cell)
        rows.append(row)
    columns = ["Feynman Eq.", "RMSE"] + (["RMSE sd"] if base.bench.seeds > 1 else []) + ["Fingerprint"]
    frame = pd.DataFrame(rows, columns=columns)
    return BenchTable("feynman", frame, {"RMSE": "min"}, fingerprint(base, exclude=("output_dir", "wandb", "task")))


def bench_compare(
    equations: Sequence[str], cfg: DictConfig, workers: Optional[int] = None
) -> BenchTable:
    """Lowest test RMSE per equation for KAN-only, MLP-only and mixed expert pools."""
    equations = check_equations(equations)
    base = bench_config(cfg)
    cells = [
        cell_config(base, f"feynman:{eq}", **{"moe.expert_mix": mix})
        for eq in equations
        for _, mix in EXPERT_FAMILIES
    ]
    grouped = run_cells(cells, workers)
    seeds = base.bench.seeds

    rows, directions = [], {}
    for i, eq in enumerate(equations):
        row = {"Feynman Eq.": eq}
        for j, (label, _) in enumerate(EXPERT_FAMILIES):
            _add_metric(row, f"{label} loss", grouped[i * len(EXPERT_FAMILIES) + j], "rmse", seeds)
            directions[f"{label} loss"] = "min"
        row["Fingerprint"] = fingerprint(
            cells[i * len(EXPERT_FAMILIES)], exclude=("output_dir", "wandb", "moe.expert_mix")
        )
        rows.append(row)
    frame = pd.DataFrame(rows)
    if not rows:
        frame = pd.DataFrame(columns=["Feynman Eq."] + [f"{label} loss" for label, _ in EXPERT_FAMILIES] + ["Fingerprint"])
        directions = {f"{label} loss": "min" for label, _ in EXPERT_FAMILIES}
    return BenchTable("compare", frame, directions, fingerprint(base, exclude=("output_dir", "wandb", "task")))


def _check_datasets(datasets: Sequence[str]) -> List[str]:
    datasets = [str(d) for d in datasets]
    if not datasets:
        raise ConfigError("bench.datasets: at least one classification dataset is needed")
    for d in datasets:
        if parse_task(d).kind != "classification":
            raise ConfigError(f"bench.datasets: '{d}' is not a classification task")
    return datasets


def _accuracy_columns(row: dict, dataset: str, runs: List[BenchResult], seeds: int, directions: dict):
    name = DATASET_NAMES.get(dataset, dataset)
    for metric, label in (("acc1", "Acc1"), ("acc5", "Acc5")):
        column = f"{name} ({label})"
        _add_metric(row, column, runs, metric, seeds)
        directions[column] = "max"


def bench_classification(cfg: DictConfig, workers: Optional[int] = None) -> BenchTable:
    """Top-1 / top-5 accuracy of KAN-only, MLP-only and mixed expert pools per dataset."""
    datasets = _check_datasets(cfg.bench.datasets)
    base = bench_config(cfg)
    cells = [
        cell_config(base, dataset, **{"moe.expert_mix": mix})
        for _, mix in EXPERT_FAMILIES
        for dataset in datasets
    ]
    grouped = run_cells(cells, workers)

    rows, directions = [], {}
    for i, (label, _) in enumerate(EXPERT_FAMILIES):
        row = {"Method": label}
        for j, dataset in enumerate(datasets):
            _accuracy_columns(row, dataset, grouped[i * len(datasets) + j], base.bench.seeds, directions)
        row["Fingerprint"] = fingerprint(cells[i * len(datasets)], exclude=("output_dir", "wandb", "task"))
        rows.append(row)
    return BenchTable("classify", pd.DataFrame(rows), directions, fingerprint(base))


def ablation_cells(
    axis: str, values: Sequence[int], cfg: DictConfig
) -> List[Tuple[int, str, DictConfig]]:
    """Validated (value, dataset, config) cells; cells differ from each other only along `axis`."""
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis '{axis}'; valid axes: {', '.join(ABLATION_AXES)}")
    if not values:
        raise ConfigError("ablation needs at least one value")
    _, key = ABLATION_AXES[axis]
    base = bench_config(cfg)
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise ConfigError(f"{key}: ablation values must be integers, got {v!r}")
        if axis == "experts":
            if v < 2 or v % 2:
                raise ConfigError(f"{key}: expert counts must be even and >= 2, got {v}")
            if base.moe.router == "topk" and base.moe.top_k > v:
                raise ConfigError(f"{key}: {v} experts cannot serve moe.top_k = {base.moe.top_k}")
        elif not 1 <= v <= base.moe.num_experts:
            raise ConfigError(f"{key}: top-k values must lie in [1, {base.moe.num_experts}], got {v}")
    if len(set(values)) != len(values):
        raise ConfigError(f"{key}: ablation values must be distinct, got {list(values)}")

    datasets = _check_datasets(base.bench.datasets)
    return [(int(v), d, cell_config(base, d, **{key: int(v)})) for v in values for d in datasets]


def bench_ablation(
    axis: str, values: Sequence[int], cfg: DictConfig, workers: Optional[int] = None
) -> BenchTable:
    """One row per swept value with top-1 / top-5 accuracy for every configured dataset."""
    cells = ablation_cells(axis, values, cfg)
    grouped = run_cells([c for _, _, c in cells], workers)
    label, _ = ABLATION_AXES[axis]
    seeds = cfg.bench.seeds

    rows, directions = {}, {}
    for (value, dataset, _), runs in zip(cells, grouped):
        row = rows.setdefault(value, {label: value})
        _accuracy_columns(row, dataset, runs, seeds, directions)
    for value, dataset, cell in cells:
        rows[value].setdefault("Fingerprint", fingerprint(cell, exclude=("output_dir", "wandb", "task")))
    frame = pd.DataFrame(list(rows.values()))
    return BenchTable(axis, frame, directions, fingerprint(bench_config(cfg)))


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "nan" if np.isnan(value) else f"{value:.6g}"
    return str(value)


def render_markdown(table: BenchTable) -> str:
    columns = table.columns
    best = {c: table.best_mask(c) for c in table.directions if c in columns}
    lines = [
        "| " + " | ".join(columns) + " |",
        "|" + "|".join("---" for _ in columns) + "|",
    ]
    for idx, row in table.frame.iterrows():
        cells = []
        for c in columns:
            text = _fmt(row[c])
            if c in best and best[c][idx]:
                text = f"**{text}**"
            cells.append(text)
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_csv(table: BenchTable) -> str:
    frame = table.frame.copy()
    for c in table.columns:
        if c in table.directions:
            frame[f"{c}_best"] = table.best_mask(c).astype(bool)
    return frame.to_csv(index=False, float_format="%.6g", lineterminator="\n")


def table_path(output_dir: Union[str, Path], table: BenchTable, fmt: str) -> Path:
    ext = "md" if fmt == "markdown" else "csv"
    return Path(output_dir, "tables", f"{table.name}_{table.fingerprint[:8]}.{ext}")


def emit_table(table: BenchTable, fmt: str, path: Union[str, Path]) -> Path:
    if not table.columns:
        raise ContractError("cannot emit a table without columns")
    if fmt == "markdown":
        text = render_markdown(table)
    elif fmt == "csv":
        text = render_csv(table)
    else:
        raise ConfigError(f"bench.format must be 'markdown' or 'csv', got '{fmt}'")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
