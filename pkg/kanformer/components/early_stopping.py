import tqdm

from typing import Callable, Optional


class EarlyStopping:
    """
    Stop training once the tracked validation metric has not improved for `patience` epochs
    """

    def __init__(
        self,
        tracking: str,
        min_max: str,
        patience: int = 10,
        min_epoch: int = 0,
        on_improvement: Optional[Callable[[int], None]] = None,
        verbose: bool = False,
    ):
        """
        Args:
            tracking (str): metric name to look up in the results dict
            min_max (str): 'min' if lower is better, 'max' otherwise
            patience (int): How long to wait after last time validation metric improved.
            min_epoch (int): Earliest epoch possible for stopping
            on_improvement (callable): called with the epoch whenever a new best is reached (e.g. to save a checkpoint)
            verbose (bool): If True, prints a message for each epoch without improvement
        """
        if min_max not in ("min", "max"):
            raise ValueError(f"min_max must be 'min' or 'max', got '{min_max}'")
        self.tracking = tracking
        self.min_max = min_max
        self.patience = patience
        self.min_epoch = min_epoch
        self.on_improvement = on_improvement
        self.verbose = verbose

        self.best_score = None
        self.best_epoch = None
        self.counter = 0
        self.early_stop = False

    def __call__(self, epoch: int, results: dict) -> bool:
        """Returns True when the epoch set a new best."""
        score = results[self.tracking]
        if self.min_max == "min":
            score = -1 * score

        if self.best_score is None or score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.counter = 0
            if self.on_improvement is not None:
                self.on_improvement(epoch)
            return True

        self.counter += 1
        if self.verbose:
            tqdm.tqdm.write(f"EarlyStopping counter: {self.counter}/{self.patience}")
        if self.counter >= self.patience and epoch >= self.min_epoch:
            self.early_stop = True
        return False

    @property
    def best_value(self) -> Optional[float]:
        if self.best_score is None:
            return None
        return -self.best_score if self.min_max == "min" else self.best_score
