from .train_utils import train_one_epoch, tune_one_epoch, classification_ks
from .utils import (
    STREAMS,
    make_streams,
    remap_flags,
    get_params_groups,
    compute_time,
    flatten_config,
    fingerprint,
    config_diff,
    worker_count,
)
from .config import (
    load_defaults,
    load_config,
    override_config,
    resolve_config,
    validate_config,
    describe_keys,
    save_resolved,
)
from .checkpoint import save_checkpoint, load_checkpoint, read_manifest, FORMAT_VERSION
