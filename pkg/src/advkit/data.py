"""IDX dataset ingestion and labeled in-memory sets.

IDX files use a big-endian header: u32 magic (0x00000803 for images,
0x00000801 for labels), u32 count, and for images u32 rows / u32 cols,
followed by one unsigned byte per value. Pixel bytes are normalized to
[0, 1] by dividing by 255. Paths ending in ".gz" are decompressed
transparently.
"""

import gzip
import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def _read_file(path) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def load_idx_images(path) -> np.ndarray:
    """Parse an IDX image file into a (count, rows, cols) float64 array in [0, 1]."""
    raw = _read_file(path)
    if len(raw) < 16:
        raise FormatError(f"{path}: image header needs 16 bytes, file has {len(raw)}",
                          offset=len(raw))
    magic, count, rows, cols = struct.unpack_from(">IIII", raw, 0)
    if magic != IMAGE_MAGIC:
        raise FormatError(f"{path}: bad image magic 0x{magic:08x}, "
                          f"expected 0x{IMAGE_MAGIC:08x}", offset=0)
    expected = count * rows * cols
    if len(raw) - 16 != expected:
        raise FormatError(f"{path}: payload holds {len(raw) - 16} bytes, "
                          f"header promises {expected}", offset=16)
    pixels = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=16)
    return pixels.reshape(count, rows, cols).astype(np.float64) / 255.0


def load_idx_labels(path, num_classes: int = 10) -> np.ndarray:
    """Parse an IDX label file into an int64 vector; every label must be < num_classes."""
    raw = _read_file(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: label header needs 8 bytes, file has {len(raw)}",
                          offset=len(raw))
    magic, count = struct.unpack_from(">II", raw, 0)
    if magic != LABEL_MAGIC:
        raise FormatError(f"{path}: bad label magic 0x{magic:08x}, "
                          f"expected 0x{LABEL_MAGIC:08x}", offset=0)
    if len(raw) - 8 != count:
        raise FormatError(f"{path}: payload holds {len(raw) - 8} bytes, "
                          f"header promises {count}", offset=8)
    labels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=8)
    if labels.size and labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        raise FormatError(f"{path}: label {labels[bad]} exceeds class count "
                          f"{num_classes}", offset=8 + bad)
    return labels.astype(np.int64)


@dataclass
class LabeledSet:
    """Images with labels; immutable once constructed, class slices are O(1) lookups."""

    images: np.ndarray
    labels: np.ndarray
    name: str = ""
    _by_class: dict = field(default=None, repr=False, compare=False)
    _fingerprint: str = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise InputError(f"{self.images.shape[0]} images vs "
                             f"{self.labels.shape[0]} labels")
        self.images.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def indices_of_class(self, cls: int) -> np.ndarray:
        if self._by_class is None:
            order = {}
            for i, lab in enumerate(self.labels):
                order.setdefault(int(lab), []).append(i)
            object.__setattr__(self, "_by_class",
                               {c: np.array(ix) for c, ix in order.items()})
        return self._by_class.get(int(cls), np.array([], dtype=np.int64))

    def class_slice(self, cls: int, limit: int | None = None) -> "LabeledSet":
        """All items of one class in original order, optionally truncated."""
        if cls < 0:
            raise InputError(f"negative class {cls}")
        idx = self.indices_of_class(cls)
        if limit is not None:
            idx = idx[:limit]
        return LabeledSet(self.images[idx], self.labels[idx],
                          name=f"{self.name}[class={cls}]")

    def subset(self, indices) -> "LabeledSet":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledSet(self.images[indices], self.labels[indices],
                          name=f"{self.name}[subset]")

    def fingerprint(self) -> str:
        """SHA-256 over image and label bytes; cached."""
        if self._fingerprint is None:
            h = hashlib.sha256()
            h.update(np.ascontiguousarray(self.images).tobytes())
            h.update(np.ascontiguousarray(self.labels).tobytes())
            object.__setattr__(self, "_fingerprint", h.hexdigest())
        return self._fingerprint


def load_dataset(data_dir, split: str = "test", num_classes: int = 10) -> LabeledSet:
    """Load the canonical train/test IDX pair from a directory.

    Accepts either plain files or their ".gz" versions.
    """
    from pathlib import Path
    data_dir = Path(data_dir)
    if split == "train":
        image_name, label_name = TRAIN_FILES
    elif split == "test":
        image_name, label_name = TEST_FILES
    else:
        raise InputError(f"split must be 'train' or 'test', got {split!r}")

    def find(name):
        for candidate in (data_dir / name, data_dir / (name + ".gz")):
            if candidate.exists():
                return candidate
        raise InputError(f"missing dataset file {name}[.gz] under {data_dir}")

    images = load_idx_images(find(image_name))
    labels = load_idx_labels(find(label_name), num_classes=num_classes)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{image_name} holds {images.shape[0]} images but "
                          f"{label_name} holds {labels.shape[0]} labels")
    return LabeledSet(images, labels, name=split)
