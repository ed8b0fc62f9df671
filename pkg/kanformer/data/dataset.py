import hashlib
import numpy as np

from dataclasses import dataclass, fields, is_dataclass
from omegaconf import DictConfig
from typing import Iterator, List, Optional, Sequence, Tuple, Union

from kanformer.data.cifar import CifarArrays, get_format, load_cifar_dir
from kanformer.data.feynman import feynman_generate, get_equation, registered_equations
from kanformer.errors import ConfigError, ContractError

IMAGE_TASKS = ("cifar10", "cifar100")


@dataclass
class TaskInfo:
    name: str
    kind: str  # regression | classification
    input_kind: str  # scalars | images
    arity: Optional[int] = None
    image_shape: Optional[Tuple[int, int, int]] = None
    num_classes: Optional[int] = None

    @property
    def is_regression(self) -> bool:
        return self.kind == "regression"


def valid_tasks() -> List[str]:
    return [f"feynman:{eq}" for eq in registered_equations()] + list(IMAGE_TASKS)


def parse_task(task: str) -> TaskInfo:
    if task.startswith("feynman:"):
        eq_id = task.split(":", 1)[1]
        try:
            spec = get_equation(eq_id)
        except ConfigError:
            raise ConfigError(
                f"task: unknown task '{task}'; valid tasks: {', '.join(valid_tasks())}"
            ) from None
        return TaskInfo(task, "regression", "scalars", arity=spec.arity)
    if task in IMAGE_TASKS:
        fmt = get_format(task)
        return TaskInfo(task, "classification", "images", image_shape=(32, 32, 3), num_classes=fmt.num_classes)
    raise ConfigError(f"task: unknown task '{task}'; valid tasks: {', '.join(valid_tasks())}")


class ArrayDataset:
    """Paired input and target arrays indexed along the first axis."""

    def __init__(self, inputs: np.ndarray, targets: np.ndarray):
        if len(inputs) != len(targets):
            raise ContractError(f"{len(inputs)} inputs but {len(targets)} targets")
        self.inputs = inputs
        self.targets = targets

    def __len__(self) -> int:
        return len(self.targets)

    def __getitem__(self, idx):
        return self.inputs[idx], self.targets[idx]

    def subset(self, indices: np.ndarray) -> "ArrayDataset":
        return ArrayDataset(self.inputs[indices], self.targets[indices])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.targets).tobytes())
        return h.hexdigest()[:16]


@dataclass
class SplitDataset:
    train: Union[ArrayDataset, list]
    test: Union[ArrayDataset, list]
    seed: int
    fingerprint: str


def _update_hash(h, item):
    """Feed an item's full contents to `h`; arrays contribute dtype, shape and raw bytes."""
    if isinstance(item, np.ndarray):
        h.update(f"{item.dtype.str}{item.shape}".encode())
        h.update(np.ascontiguousarray(item).tobytes())
    elif is_dataclass(item):
        h.update(type(item).__name__.encode())
        for f in fields(item):
            _update_hash(h, getattr(item, f.name))
    elif isinstance(item, (list, tuple)):
        h.update(f"{type(item).__name__}{len(item)}".encode())
        for x in item:
            _update_hash(h, x)
    else:
        h.update(repr(item).encode())


def sample_fingerprint(items: Sequence) -> str:
    h = hashlib.sha256()
    for item in items:
        _update_hash(h, item)
    return h.hexdigest()[:16]


def make_split(
    samples: Union[ArrayDataset, Sequence], test_fraction: float, seed: int
) -> SplitDataset:
    """Seeded shuffle, then the first round(n * test_fraction) shuffled samples form the test set."""
    n = len(samples)
    if n == 0:
        raise ContractError("make_split got no samples")
    if not 0.0 < test_fraction < 1.0:
        raise ContractError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if n < 2:
        raise ContractError("make_split needs at least 2 samples")
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]

    if isinstance(samples, ArrayDataset):
        return SplitDataset(samples.subset(train_idx), samples.subset(test_idx), seed, samples.fingerprint())
    items = list(samples)
    train, test = [items[i] for i in train_idx], [items[i] for i in test_idx]
    return SplitDataset(train, test, seed, sample_fingerprint(items))


class DataLoader:
    """Mini-batch iterator; reshuffles with `rng` on every pass when `shuffle` is set."""

    def __init__(
        self,
        dataset: ArrayDataset,
        batch_size: int,
        shuffle: bool = False,
        rng: Optional[np.random.Generator] = None,
    ):
        if batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {batch_size}")
        if shuffle and rng is None:
            raise ContractError("a shuffling loader needs a random generator")
        self.dataset = dataset
        self.batch_size = batch_size
        self.shuffle = shuffle
        self.rng = rng

    def __len__(self) -> int:
        return -(-len(self.dataset) // self.batch_size)

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        n = len(self.dataset)
        order = self.rng.permutation(n) if self.shuffle else np.arange(n)
        for start in range(0, n, self.batch_size):
            yield self.dataset[order[start : start + self.batch_size]]


def _prepare_cifar(arrays: CifarArrays, cfg: DictConfig, limit: Optional[int], num_classes: int) -> Tuple[ArrayDataset, int]:
    labels = arrays.labels
    if cfg.label_mode == "coarse":
        if arrays.coarse_labels is None:
            raise ConfigError("data.label_mode 'coarse' needs the cifar100 task")
        labels, num_classes = arrays.coarse_labels, get_format("cifar100").num_coarse_classes
    elif cfg.label_mode != "fine":
        raise ConfigError(f"data.label_mode must be 'fine' or 'coarse', got '{cfg.label_mode}'")

    pixels = arrays.pixels
    if cfg.classes:
        classes = [int(c) for c in cfg.classes]
        bad = [c for c in classes if not 0 <= c < num_classes]
        if bad:
            raise ConfigError(f"data.classes {bad} outside [0, {num_classes})")
        keep = np.flatnonzero(np.isin(labels, classes))
        remap = {c: i for i, c in enumerate(classes)}
        pixels = pixels[keep]
        labels = np.array([remap[int(c)] for c in labels[keep]], dtype=np.int64)
        num_classes = len(classes)
    if limit is not None:
        pixels, labels = pixels[:limit], labels[:limit]

    mean = np.asarray(cfg.mean, dtype=np.float32)
    std = np.asarray(cfg.std, dtype=np.float32)
    pixels = (pixels - mean) / std
    return ArrayDataset(pixels.astype(np.float32), labels), num_classes


def load_task(
    cfg: DictConfig, rng: Optional[np.random.Generator] = None
) -> Tuple[TaskInfo, SplitDataset]:
    """Materialize train/test data for `cfg.task`; Feynman samples are drawn from `rng`."""
    task = parse_task(cfg.task)
    seed = cfg.seed
    if task.input_kind == "scalars":
        spec = get_equation(cfg.task.split(":", 1)[1])
        n = cfg.data.n_train + cfg.data.n_test
        inputs, targets = feynman_generate(spec, n, rng if rng is not None else seed)
        split = make_split(ArrayDataset(inputs, targets), cfg.data.n_test / n, seed)
        return task, split

    if not cfg.data.cifar_dir:
        raise ConfigError(f"data.cifar_dir must point at the extracted {cfg.task} binaries")
    train, test = load_cifar_dir(cfg.data.cifar_dir, cfg.task)
    train_ds, num_classes = _prepare_cifar(train, cfg.data, cfg.data.max_train, task.num_classes)
    test_ds, _ = _prepare_cifar(test, cfg.data, cfg.data.max_test, task.num_classes)
    task.num_classes = num_classes
    fingerprint = hashlib.sha256((train_ds.fingerprint() + test_ds.fingerprint()).encode()).hexdigest()[:16]
    return task, SplitDataset(train_ds, test_ds, seed, fingerprint)
