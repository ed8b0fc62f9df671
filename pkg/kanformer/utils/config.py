"""
Config resolution: defaults < config file < command-line flags.

Defaults are composed by hydra from `config/default.yaml`; the user file and
the flag dotlist are merged on top with omegaconf in struct mode, so that a
key absent from the defaults is an error rather than a silent addition.
"""
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

from hydra import compose, initialize_config_dir
from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from kanformer.data.dataset import parse_task
from kanformer.errors import ConfigError
from kanformer.tensor.tensor import PRECISIONS
from kanformer.utils.utils import flatten_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"

TASK_DEFAULTS = {
    # function learning / representation learning
    "regression": {"model.dim": 64, "train.batch_size": 4},
    "classification": {"model.dim": 128, "train.batch_size": 128},
}


def load_defaults() -> DictConfig:
    with initialize_config_dir(config_dir=str(CONFIG_DIR), version_base="1.2.0"):
        cfg = compose(config_name="default")
    OmegaConf.set_struct(cfg, True)
    return cfg


def _merge(cfg: DictConfig, other: DictConfig, source: str) -> DictConfig:
    try:
        return OmegaConf.merge(cfg, other)
    except OmegaConfBaseException as e:
        key = getattr(e, "full_key", None) or "?"
        raise ConfigError(f"{source}: unknown or invalid config key '{key}'") from None


def load_config(
    config_file: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()
) -> Tuple[DictConfig, Dict[str, str]]:
    """Returns the merged config and the provenance (default | file | flag) of every key."""
    cfg = load_defaults()
    provenance = {k: "default" for k in flatten_config(cfg)}

    if config_file:
        path = Path(config_file)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_cfg = OmegaConf.load(path)
        except Exception as e:
            raise ConfigError(f"cannot parse config file {path}: {e}") from None
        if not isinstance(file_cfg, DictConfig):
            raise ConfigError(f"config file {path} must hold a mapping of sections")
        cfg = _merge(cfg, file_cfg, str(path))
        for k in flatten_config(file_cfg):
            provenance[k] = "file"

    overrides = list(overrides)
    if overrides:
        try:
            flag_cfg = OmegaConf.from_dotlist(overrides)
        except OmegaConfBaseException as e:
            raise ConfigError(f"cannot parse command-line flags: {e}") from None
        cfg = _merge(cfg, flag_cfg, "command line")
        for k in flatten_config(flag_cfg):
            provenance[k] = "flag"

    OmegaConf.set_struct(cfg, True)
    return cfg, provenance


def override_config(cfg: DictConfig, overrides: Iterable[str]) -> DictConfig:
    """Merge command-line flags over an already resolved tree (e.g. the one stored in a checkpoint)."""
    cfg = OmegaConf.create(OmegaConf.to_container(cfg, resolve=False))
    OmegaConf.set_struct(cfg, True)
    overrides = list(overrides)
    if not overrides:
        return cfg
    try:
        flag_cfg = OmegaConf.from_dotlist(overrides)
    except OmegaConfBaseException as e:
        raise ConfigError(f"cannot parse command-line flags: {e}") from None
    cfg = _merge(cfg, flag_cfg, "command line")
    OmegaConf.set_struct(cfg, True)
    return cfg


def resolve_config(cfg: DictConfig) -> DictConfig:
    """Fill task-dependent blanks (model.dim, train.batch_size) and validate."""
    cfg = OmegaConf.create(OmegaConf.to_container(cfg, resolve=False))
    OmegaConf.set_struct(cfg, True)
    if not isinstance(cfg.task, str):
        raise ConfigError(f"task must be a string, got {cfg.task!r}")
    task = parse_task(cfg.task)
    for key, value in TASK_DEFAULTS[task.kind].items():
        if OmegaConf.select(cfg, key) is None:
            OmegaConf.update(cfg, key, value)
    validate_config(cfg)
    return cfg


def _require(ok: bool, key: str, msg: str):
    if not ok:
        raise ConfigError(f"{key}: {msg}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate_config(cfg: DictConfig):
    parse_task(cfg.task)
    _require(cfg.precision in PRECISIONS, "precision", f"must be one of {list(PRECISIONS)}, got {cfg.precision!r}")
    _require(_is_int(cfg.seed), "seed", f"must be an integer, got {cfg.seed!r}")

    m = cfg.model
    for key in ("dim", "layers", "heads", "patch_size"):
        _require(_is_int(m[key]) and m[key] >= 1, f"model.{key}", f"must be a positive integer, got {m[key]!r}")
    _require(m.dim % m.heads == 0, "model.heads", f"model.dim ({m.dim}) must be divisible by model.heads ({m.heads})")
    _require(_is_num(m.p_max) and 0 <= m.p_max < 1, "model.p_max", f"must lie in [0, 1), got {m.p_max!r}")
    _require(_is_num(m.dropout) and 0 <= m.dropout < 1, "model.dropout", f"must lie in [0, 1), got {m.dropout!r}")
    _require(_is_num(m.ln_eps) and m.ln_eps > 0, "model.ln_eps", f"must be > 0, got {m.ln_eps!r}")

    moe = cfg.moe
    _require(
        _is_int(moe.num_experts) and moe.num_experts >= 2 and moe.num_experts % 2 == 0,
        "moe.num_experts",
        f"must be an even integer >= 2 (half MLP, half FasterKAN experts), got {moe.num_experts!r}",
    )
    _require(_is_int(moe.slots) and moe.slots >= 1, "moe.slots", f"must be a positive integer, got {moe.slots!r}")
    _require(moe.router in ("soft", "topk"), "moe.router", f"must be 'soft' or 'topk', got {moe.router!r}")
    _require(
        _is_int(moe.top_k) and 1 <= moe.top_k <= moe.num_experts,
        "moe.top_k",
        f"must lie in [1, {moe.num_experts}], got {moe.top_k!r}",
    )
    _require(moe.norm_mode in ("token", "slot"), "moe.norm_mode", f"must be 'token' or 'slot', got {moe.norm_mode!r}")
    _require(isinstance(moe.renormalize_topk, bool), "moe.renormalize_topk", "must be a boolean")
    _require(moe.expert_mix in ("mixed", "mlp", "kan"), "moe.expert_mix", f"must be mixed, mlp or kan, got {moe.expert_mix!r}")
    _require(_is_int(moe.hidden_ratio) and moe.hidden_ratio >= 1, "moe.hidden_ratio", "must be a positive integer")

    kan = cfg.kan
    _require(_is_int(kan.grid_size) and kan.grid_size >= 2, "kan.grid_size", f"must be an integer >= 2, got {kan.grid_size!r}")
    _require(_is_num(kan.grid_min) and _is_num(kan.grid_max) and kan.grid_max > kan.grid_min, "kan.grid_max", "must exceed kan.grid_min")
    _require(kan.denominator is None or (_is_num(kan.denominator) and kan.denominator > 0), "kan.denominator", f"must be > 0, got {kan.denominator!r}")

    t = cfg.train
    _require(_is_num(t.lr) and t.lr > 0, "train.lr", f"must be > 0, got {t.lr!r}")
    for key in ("batch_size", "max_epochs", "patience"):
        _require(_is_int(t[key]) and t[key] >= 1, f"train.{key}", f"must be a positive integer, got {t[key]!r}")
    _require(_is_num(t.weight_decay) and t.weight_decay >= 0, "train.weight_decay", f"must be >= 0, got {t.weight_decay!r}")
    _require(len(t.betas) == 2 and all(_is_num(b) and 0 <= b < 1 for b in t.betas), "train.betas", "must be two numbers in [0, 1)")
    _require(_is_num(t.eps) and t.eps > 0, "train.eps", f"must be > 0, got {t.eps!r}")

    d = cfg.data
    for key in ("n_train", "n_test"):
        _require(_is_int(d[key]) and d[key] >= 1, f"data.{key}", f"must be a positive integer, got {d[key]!r}")
    _require(d.label_mode in ("fine", "coarse"), "data.label_mode", f"must be 'fine' or 'coarse', got {d.label_mode!r}")
    for key in ("max_train", "max_test"):
        _require(d[key] is None or (_is_int(d[key]) and d[key] >= 1), f"data.{key}", "must be blank or a positive integer")
    _require(len(d.mean) == 3 and len(d.std) == 3 and all(s > 0 for s in d.std), "data.std", "mean and std need 3 channels, std > 0")

    b = cfg.bench
    _require(_is_int(b.seeds) and b.seeds >= 1, "bench.seeds", f"must be a positive integer, got {b.seeds!r}")
    _require(b.format in ("markdown", "csv"), "bench.format", f"must be 'markdown' or 'csv', got {b.format!r}")


def describe_keys() -> str:
    """One line per recognized config key with its default."""
    flat = flatten_config(load_defaults())
    width = max(len(k) for k in flat)
    return "\n".join(f"  --{k.ljust(width)}  (default: {v})" for k, v in flat.items())


def save_resolved(cfg: DictConfig, provenance: Dict[str, str], output_dir: Union[str, Path]):
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    OmegaConf.save(cfg, output_dir / "config.yaml")
    OmegaConf.save(OmegaConf.create(dict(sorted(provenance.items()))), output_dir / "provenance.yaml")
