import os
import hashlib
import numpy as np

from typing import Dict, List, Optional, Sequence, Tuple
from omegaconf import DictConfig, OmegaConf

from kanformer.errors import ConfigError

STREAMS = ("init", "shuffle", "dropout", "data")


def compute_time(start_time, end_time):
    elapsed_time = end_time - start_time
    elapsed_mins = int(elapsed_time / 60)
    elapsed_secs = int(elapsed_time - (elapsed_mins * 60))
    return elapsed_mins, elapsed_secs


def make_streams(seed: int) -> Dict[str, np.random.Generator]:
    """
    Independent PCG64 generators for parameter init, data shuffling, dropout and data generation.
    The same seed gives the same streams on every platform.
    """
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(STREAMS, children)}


def remap_flags(argv: Sequence[str]) -> List[str]:
    """
    Turn `--section.key value` and `--section.key=value` into omegaconf dotlist
    entries `section.key=value`.
    Any other flag is an error: command-specific flags must be consumed before.
    """
    dotlist, i = [], 0
    argv = list(argv)
    while i < len(argv):
        arg = argv[i]
        if not arg.startswith("--"):
            raise ConfigError(f"unexpected argument '{arg}'")
        key = arg[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(argv):
                raise ConfigError(f"flag '{arg}' expects a value")
            value = argv[i + 1]
            i += 1
        if not key:
            raise ConfigError(f"malformed flag '{arg}'")
        dotlist.append(f"{key}={value}")
        i += 1
    return dotlist


def get_params_groups(model) -> List[dict]:
    regularized = []
    not_regularized = []
    for name, param in model.named_parameters():
        # we do not regularize biases nor Norm parameters
        if name.endswith("bias") or len(param.shape) <= 1:
            not_regularized.append((name, param))
        else:
            regularized.append((name, param))
    return [{"params": regularized}, {"params": not_regularized, "weight_decay": 0.0}]


def flatten_config(cfg: DictConfig, prefix: str = "") -> Dict[str, object]:
    container = OmegaConf.to_container(cfg, resolve=True) if isinstance(cfg, DictConfig) else cfg
    flat = {}
    for k, v in container.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(flatten_config(v, f"{key}."))
        else:
            flat[key] = v
    return flat


def fingerprint(cfg: DictConfig, exclude: Sequence[str] = ("output_dir", "wandb")) -> str:
    """Hash of the resolved config, stable across runs and key order."""
    flat = {
        k: v
        for k, v in flatten_config(cfg).items()
        if not any(k == e or k.startswith(f"{e}.") for e in exclude)
    }
    payload = repr(sorted(flat.items())).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def config_diff(a: DictConfig, b: DictConfig) -> Dict[str, Tuple[object, object]]:
    fa, fb = flatten_config(a), flatten_config(b)
    keys = sorted(set(fa) | set(fb))
    return {k: (fa.get(k), fb.get(k)) for k in keys if fa.get(k) != fb.get(k)}


def worker_count(env: Optional[Dict[str, str]] = None) -> int:
    env = os.environ if env is None else env
    raw = env.get("KANFORMER_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"KANFORMER_THREADS must be a positive integer, got '{raw}'") from None
    if n < 1:
        raise ConfigError(f"KANFORMER_THREADS must be a positive integer, got '{raw}'")
    return min(n, os.cpu_count() or 1)
