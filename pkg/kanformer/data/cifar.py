"""
CIFAR-10 / CIFAR-100 binary readers.

A CIFAR-10 record is 3073 bytes: one label byte, then the 1024 red, 1024
green and 1024 blue bytes of a 32x32 image, each plane row-major. CIFAR-100
records carry two label bytes (coarse, then fine) and are 3074 bytes long.
"""
import numpy as np

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

from kanformer.errors import ConfigError, FormatError

IMAGE_SIZE = 32
CHANNEL_NUM = 3
PIXEL_BYTES = IMAGE_SIZE * IMAGE_SIZE * CHANNEL_NUM


@dataclass(frozen=True)
class CifarFormat:
    name: str
    label_bytes: int
    num_classes: int
    num_coarse_classes: Optional[int]
    train_files: Tuple[str, ...]
    test_files: Tuple[str, ...]

    @property
    def record_size(self) -> int:
        return self.label_bytes + PIXEL_BYTES


FORMATS = {
    "cifar10": CifarFormat(
        "cifar10", 1, 10, None,
        tuple(f"data_batch_{i}.bin" for i in range(1, 6)), ("test_batch.bin",),
    ),
    "cifar100": CifarFormat("cifar100", 2, 100, 20, ("train.bin",), ("test.bin",)),
}


def get_format(variant: str) -> CifarFormat:
    try:
        return FORMATS[variant]
    except KeyError:
        raise ConfigError(f"unknown CIFAR variant '{variant}', expected one of {list(FORMATS)}") from None


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (32, 32, 3) in [0, 1]
    label: int
    coarse_label: Optional[int] = None


@dataclass
class CifarArrays:
    pixels: np.ndarray  # (n, 32, 32, 3) float32 in [0, 1]
    labels: np.ndarray
    coarse_labels: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.labels)


def parse_records(raw: bytes, variant: str = "cifar10", source: str = "<bytes>") -> CifarArrays:
    fmt = get_format(variant)
    size = fmt.record_size
    if len(raw) % size:
        expected = (len(raw) // size) * size
        raise FormatError(
            f"{source}: length {len(raw)} bytes is not a multiple of the {variant} record size {size} "
            f"(expected {expected} or {expected + size} bytes)"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, size)

    coarse = None
    if fmt.label_bytes == 2:
        coarse = records[:, 0].astype(np.int64)
        _check_labels(coarse, fmt.num_coarse_classes, "coarse label", source)
    labels = records[:, fmt.label_bytes - 1].astype(np.int64)
    _check_labels(labels, fmt.num_classes, "label", source)

    planes = records[:, fmt.label_bytes :].reshape(-1, CHANNEL_NUM, IMAGE_SIZE, IMAGE_SIZE)
    pixels = planes.transpose(0, 2, 3, 1).astype(np.float32) / 255.0
    return CifarArrays(pixels, labels, coarse)


def _check_labels(labels: np.ndarray, num_classes: int, what: str, source: str):
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        i = int(bad[0])
        raise FormatError(
            f"{source}: record {i} has {what} {int(labels[i])}, expected < {num_classes}"
        )


def read_cifar_file(path: Union[str, Path], variant: str = "cifar10") -> CifarArrays:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"CIFAR file not found: {path}")
    return parse_records(path.read_bytes(), variant, str(path))


def cifar_load(path: Union[str, Path], variant: str = "cifar10") -> List[LabeledImage]:
    arrays = read_cifar_file(path, variant)
    coarse = arrays.coarse_labels
    return [
        LabeledImage(
            arrays.pixels[i],
            int(arrays.labels[i]),
            None if coarse is None else int(coarse[i]),
        )
        for i in range(len(arrays))
    ]


def record_bytes(image: LabeledImage, variant: str = "cifar10") -> bytes:
    """Serialize one image back into its binary record."""
    fmt = get_format(variant)
    pixels = np.asarray(image.pixels)
    if pixels.shape != (IMAGE_SIZE, IMAGE_SIZE, CHANNEL_NUM):
        raise FormatError(f"expected a 32x32x3 image, got {pixels.shape}")
    planes = np.rint(pixels * 255.0).astype(np.uint8).transpose(2, 0, 1)
    if fmt.label_bytes == 2:
        if image.coarse_label is None:
            raise FormatError("a cifar100 record needs a coarse label")
        labels = [image.coarse_label, image.label]
    else:
        labels = [image.label]
    return bytes(labels) + planes.tobytes()


def _concat(parts: List[CifarArrays]) -> CifarArrays:
    coarse = None
    if parts[0].coarse_labels is not None:
        coarse = np.concatenate([p.coarse_labels for p in parts])
    return CifarArrays(
        np.concatenate([p.pixels for p in parts]),
        np.concatenate([p.labels for p in parts]),
        coarse,
    )


def load_cifar_dir(directory: Union[str, Path], variant: str = "cifar10") -> Tuple[CifarArrays, CifarArrays]:
    """Read the official train and test files of an extracted binary distribution."""
    fmt = get_format(variant)
    directory = Path(directory)
    missing = [f for f in fmt.train_files + fmt.test_files if not (directory / f).is_file()]
    if missing:
        raise ConfigError(f"data.cifar_dir '{directory}' is missing {', '.join(missing)}")
    train = _concat([read_cifar_file(directory / f, variant) for f in fmt.train_files])
    test = _concat([read_cifar_file(directory / f, variant) for f in fmt.test_files])
    return train, test
