"""IDX parsing, normalization, class slicing, and real-dataset sanity."""

import gzip
import struct

import numpy as np
import pytest

import advkit
from advkit.data import LabeledSet, load_idx_images, load_idx_labels
from advkit.errors import FormatError, InputError

from conftest import needs_mnist


def idx_image_bytes(arrays):
    arrays = np.asarray(arrays, dtype=np.uint8)
    n, r, c = arrays.shape
    return struct.pack(">IIII", 0x803, n, r, c) + arrays.tobytes()


def idx_label_bytes(labels):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", 0x801, labels.size) + labels.tobytes()


def test_hand_crafted_idx_pixels_divide_by_255(tmp_path):
    path = tmp_path / "tiny.idx"
    path.write_bytes(idx_image_bytes([[[0, 127], [255, 64]]]))
    images = load_idx_images(path)
    assert images.shape == (1, 2, 2)
    # oracle: byte / 255
    assert images.ravel() == pytest.approx(
        [0.0, 0.4980392156862745, 1.0, 0.25098039215686274], abs=0)
    assert images.dtype == np.float64


def test_idx_gzip_transparent(tmp_path):
    plain = tmp_path / "a.idx"
    zipped = tmp_path / "a.idx.gz"
    payload = idx_image_bytes(np.arange(8, dtype=np.uint8).reshape(2, 2, 2))
    plain.write_bytes(payload)
    with gzip.open(zipped, "wb") as fh:
        fh.write(payload)
    assert np.array_equal(load_idx_images(plain), load_idx_images(zipped))


def test_idx_load_deterministic(tmp_path):
    path = tmp_path / "b.idx"
    path.write_bytes(idx_image_bytes(np.random.default_rng(0)
                                     .integers(0, 256, (5, 3, 3)).astype(np.uint8)))
    assert np.array_equal(load_idx_images(path), load_idx_images(path))


def test_idx_image_magic_mismatch(tmp_path):
    path = tmp_path / "labels-as-images.idx"
    path.write_bytes(idx_label_bytes([1, 2, 3] * 10))
    with pytest.raises(FormatError) as err:
        load_idx_images(path)
    assert err.value.offset == 0
    assert "0x00000801" in str(err.value)


def test_idx_truncated_payload(tmp_path):
    path = tmp_path / "short.idx"
    path.write_bytes(idx_image_bytes([[[1, 2], [3, 4]]])[:-2])
    with pytest.raises(FormatError) as err:
        load_idx_images(path)
    assert err.value.offset == 16


def test_idx_label_contracts(tmp_path):
    path = tmp_path / "l.idx"
    path.write_bytes(idx_label_bytes([0, 9, 3]))
    assert load_idx_labels(path).tolist() == [0, 9, 3]

    empty = tmp_path / "empty.idx"
    empty.write_bytes(idx_label_bytes([]))
    assert load_idx_labels(empty).tolist() == []

    bad = tmp_path / "bad.idx"
    bad.write_bytes(idx_label_bytes([0, 10]))
    with pytest.raises(FormatError):
        load_idx_labels(bad, num_classes=10)


def test_labeled_set_contracts():
    with pytest.raises(InputError):
        LabeledSet(np.zeros((3, 2, 2)), np.zeros(2, dtype=int))
    s = LabeledSet(np.zeros((4, 2, 2)), [0, 1, 1, 2], name="t")
    assert len(s) == 4
    assert not s.images.flags.writeable

    sliced = s.class_slice(1)
    assert len(sliced) == 2
    assert np.array_equal(sliced.labels, [1, 1])
    assert len(s.class_slice(1, limit=1)) == 1
    assert len(s.class_slice(9)) == 0  # empty slice
    with pytest.raises(InputError):
        s.class_slice(-1)

    # re-slicing is idempotent
    again = s.class_slice(1)
    assert np.array_equal(again.images, sliced.images)


def test_class_slices_partition_the_set():
    rng = np.random.default_rng(1)
    s = LabeledSet(rng.random((50, 2, 2)), rng.integers(0, 5, 50))
    total = sum(len(s.class_slice(c)) for c in range(5))
    assert total == len(s)
    # union reproduces every image (as a multiset, via sorted bytes)
    parts = [s.class_slice(c).images for c in range(5)]
    merged = np.concatenate([p for p in parts if len(p)])
    assert sorted(map(bytes, merged.reshape(len(s), -1))) == \
        sorted(map(bytes, s.images.reshape(len(s), -1)))


@needs_mnist
def test_mnist_test_set_shape_and_counts(mnist_test):
    assert mnist_test.images.shape == (10000, 28, 28)
    # canonical per-class test counts
    assert len(mnist_test.class_slice(1)) == 1135
    assert len(mnist_test.class_slice(2)) == 1032
    assert len(mnist_test.class_slice(5)) == 892


@needs_mnist
def test_mnist_normalization_bounds(mnist_test):
    assert mnist_test.images.min() == 0.0
    assert mnist_test.images.max() == 1.0
