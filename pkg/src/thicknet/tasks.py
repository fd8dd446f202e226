"""Task data: the adding problem and (permuted) sequential MNIST.

The adding problem is generated on the fly: per row, T uniform values in
(0, 1), two marker ones (one in each half of the sequence), and the dot
product as the regression target. The constant predictor at the label
mean 1.0 has expected MSE Var(a+b) = 2/12 = 1/6, the trivial baseline.

MNIST arrives as big-endian IDX files (gzipped files are handled
transparently by suffix). The desk-scale pipeline is: load, 2x2 average
downscale to 14x14, fix a pixel permutation, then stream one pixel per
timestep. Permutation seed 0 is reserved for the identity order, i.e.
plain sequential MNIST.
"""

import gzip
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ArgumentError, FormatError

IDENTITY_PERMUTATION_SEED = 0
DEFAULT_PERMUTATION_SEED = 10007

IDX_MAGIC_IMAGES = 2051
IDX_MAGIC_LABELS = 2049


@dataclass
class AddingBatch:
    """One adding-problem batch: values, two-hot markers, dot-product labels."""

    values: np.ndarray   # [batch, T] uniform in (0, 1)
    markers: np.ndarray  # [batch, T] exactly two ones per row
    labels: np.ndarray   # [batch]

    def inputs(self):
        """Model input [T, batch, 2]: per-timestep (value, marker) pairs."""
        return np.ascontiguousarray(
            np.stack([self.values.T, self.markers.T], axis=2)
        )


def gen_adding_batch(seq_len, batch, rng):
    """Sample one batch; first marker in [0, T/2), second in [T/2, T)."""
    if seq_len < 2:
        raise ArgumentError(f"adding problem needs seq_len >= 2, got {seq_len}")
    if batch < 1:
        raise ArgumentError(f"batch must be >= 1, got {batch}")
    values = rng.random((batch, seq_len))
    half = seq_len // 2
    first = rng.integers(0, half, size=batch)
    second = rng.integers(half, seq_len, size=batch)
    markers = np.zeros((batch, seq_len))
    rows = np.arange(batch)
    markers[rows, first] = 1.0
    markers[rows, second] = 1.0
    labels = values[rows, first] + values[rows, second]
    return AddingBatch(values=values, markers=markers, labels=labels)


@dataclass
class MnistDataset:
    """Images with labels and an optional fixed pixel-order permutation."""

    images: np.ndarray  # [count, rows, cols] uint8
    labels: np.ndarray  # [count] uint8
    permutation: Optional[np.ndarray] = None  # [rows*cols] int64 bijection

    @property
    def count(self):
        return self.images.shape[0]

    @property
    def num_pixels(self):
        return self.images.shape[1] * self.images.shape[2]


def _read_file(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx_images(blob, path):
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated IDX header", offset=len(blob))
    magic, count, rows, cols = struct.unpack_from(">IIII", blob, 0)
    if magic != IDX_MAGIC_IMAGES:
        raise FormatError(f"{path}: bad image magic {magic} (want {IDX_MAGIC_IMAGES})", offset=0)
    expected = 16 + count * rows * cols
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload is {len(blob)} bytes, header implies {expected}",
            offset=min(len(blob), expected),
        )
    data = np.frombuffer(blob, dtype=np.uint8, offset=16)
    return data.reshape(count, rows, cols).copy()


def _parse_idx_labels(blob, path):
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated IDX header", offset=len(blob))
    magic, count = struct.unpack_from(">II", blob, 0)
    if magic != IDX_MAGIC_LABELS:
        raise FormatError(f"{path}: bad label magic {magic} (want {IDX_MAGIC_LABELS})", offset=0)
    expected = 8 + count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload is {len(blob)} bytes, header implies {expected}",
            offset=min(len(blob), expected),
        )
    return np.frombuffer(blob, dtype=np.uint8, offset=8).copy()


def load_mnist_idx(images_path, labels_path):
    """Parse an IDX image/label pair into a dataset; counts must agree."""
    images = _parse_idx_images(_read_file(images_path), images_path)
    labels = _parse_idx_labels(_read_file(labels_path), labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels",
            offset=4,
        )
    return MnistDataset(images=images, labels=labels)


def write_idx_images(path, images):
    """Inverse of the image parser, for fixtures and round-trip checks."""
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_MAGIC_IMAGES, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_MAGIC_LABELS, labels.shape[0]))
        fh.write(labels.tobytes())


def subset(ds, count, offset=0):
    """First `count` examples (after `offset`), keeping any permutation."""
    return MnistDataset(
        images=ds.images[offset:offset + count],
        labels=ds.labels[offset:offset + count],
        permutation=ds.permutation,
    )


def permute_pixels(ds, seed):
    """Fix one pixel-order permutation, applied identically to every image.

    seed 0 is reserved: it yields the identity permutation (plain
    sequential order). The permutation is stored on the dataset so the
    same order can be re-applied to held-out data.
    """
    n = ds.num_pixels
    if seed == IDENTITY_PERMUTATION_SEED:
        perm = np.arange(n, dtype=np.int64)
    else:
        perm = np.random.default_rng(seed).permutation(n).astype(np.int64)
    return MnistDataset(images=ds.images, labels=ds.labels, permutation=perm)


def downscale(ds, factor=2):
    """Block-average pooling of pixels, rounding half up to nearest uint8."""
    count, rows, cols = ds.images.shape
    if rows % factor or cols % factor:
        raise ArgumentError(f"{rows}x{cols} images not divisible by factor {factor}")
    blocks = ds.images.reshape(
        count, rows // factor, factor, cols // factor, factor
    ).astype(np.uint32)
    sums = blocks.sum(axis=(2, 4))
    area = factor * factor
    pooled = ((sums + area // 2) // area).astype(np.uint8)  # integer half-up
    if ds.permutation is not None:
        raise ArgumentError("downscale before fixing the pixel permutation")
    return MnistDataset(images=pooled, labels=ds.labels, permutation=None)


def batch_iterator(ds, batch_size, rng, normalize=True, shuffle=True):
    """One epoch of (inputs [T, b, 1], labels [b]) minibatches.

    Shuffled per epoch with the given rng (pass shuffle=False for a
    fixed evaluation sweep). Pixels are scaled to [0, 1], emitted one
    per timestep in the dataset's permuted order; the final partial
    batch is kept.
    """
    if batch_size < 1:
        raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(ds.count) if shuffle else np.arange(ds.count)
    flat = ds.images.reshape(ds.count, -1)
    perm = ds.permutation
    for start in range(0, ds.count, batch_size):
        take = order[start:start + batch_size]
        block = flat[take]
        if perm is not None:
            block = block[:, perm]
        xs = block.T.astype(np.float64)[:, :, None]
        if normalize:
            xs /= 255.0
        yield np.ascontiguousarray(xs), ds.labels[take].astype(np.int64)
