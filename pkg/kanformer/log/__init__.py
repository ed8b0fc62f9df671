from .helpers import MetricLogger, SmoothedValue
from .tracker import initialize_wandb, update_log_dict, MetricsWriter, read_metrics
