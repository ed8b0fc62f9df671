import numpy as np

from collections import defaultdict, deque
from typing import Dict, Union

from kanformer.tensor import Tensor


class SmoothedValue:
    """
    Per-batch statistic averaged over samples for the whole epoch, with the
    median of the last `window_size` batches for progress display.
    """

    def __init__(self, window_size: int = 20):
        self.window = deque(maxlen=window_size)
        self.total = 0.0
        self.count = 0

    def update(self, value: float, n: int = 1):
        self.window.append(value)
        self.count += n
        self.total += value * n

    @property
    def median(self) -> float:
        return float(np.median(self.window))

    @property
    def global_avg(self) -> float:
        return self.total / self.count

    @property
    def value(self) -> float:
        return self.window[-1]

    def __str__(self):
        return f"{self.median:.4g} ({self.global_avg:.4g})"


class MetricLogger:
    def __init__(self, delimiter: str = "  "):
        self.meters: Dict[str, SmoothedValue] = defaultdict(SmoothedValue)
        self.delimiter = delimiter

    def update(self, n: int = 1, **kwargs: Union[float, int, Tensor]):
        for k, v in kwargs.items():
            if isinstance(v, Tensor):
                v = v.item()
            assert isinstance(v, (float, int))
            self.meters[k].update(float(v), n=n)

    def summary(self) -> Dict[str, float]:
        """Sample-weighted averages over everything seen so far."""
        return {k: meter.global_avg for k, meter in self.meters.items()}

    def postfix(self) -> str:
        return self.delimiter.join(f"{k}={meter.median:.4g}" for k, meter in self.meters.items())

    def __str__(self):
        return self.delimiter.join(f"{k}: {meter}" for k, meter in self.meters.items())
