"""Datasets: synthetic Gaussian rings, IDX (MNIST) ingestion, subsetting, pooling."""

import csv
import gzip
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, DomainError, FormatError

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass(frozen=True)
class Dataset:
    """Samples in ``[-1, 1]`` with integer labels below ``num_classes``.

    Ring datasets also carry their mode ``centers`` and per-mode ``std`` in
    the same rescaled coordinates as the samples.
    """

    samples: np.ndarray
    labels: np.ndarray
    num_classes: int
    meta: str = ""
    centers: np.ndarray = None
    std: float = None
    side: int = None
    class_counts: tuple = field(init=False)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if samples.ndim != 2 or labels.shape != (samples.shape[0],):
            raise ContractError(f"samples {samples.shape} and labels {labels.shape} do not line up")
        if samples.size and (samples.min() < -1.0 or samples.max() > 1.0):
            raise ContractError("dataset samples must lie in [-1, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        samples.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)
        counts = np.bincount(labels, minlength=self.num_classes)
        object.__setattr__(self, "class_counts", tuple(int(c) for c in counts))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def data_dim(self):
        return self.samples.shape[1]

    def to_csv(self, fh=None):
        """CSV with header ``label, x0 .. x{d-1}``; returns a string if ``fh`` is None."""
        buf = fh if fh is not None else io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label"] + [f"x{j}" for j in range(self.data_dim)])
        for lab, row in zip(self.labels, self.samples):
            writer.writerow([int(lab)] + [repr(float(v)) for v in row])
        return None if fh is not None else buf.getvalue()


def ring_centers(k, radius):
    angles = 2.0 * np.pi * np.arange(k) / k
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def ring_of_gaussians(k=8, radius=2.0, std=0.05, n=2000, labeled=True, rng=None):
    """``n`` points from ``k`` isotropic Gaussians evenly spaced on a circle.

    Points are scaled by ``1 / (radius + 6 std)`` and clipped into ``[-1, 1]``;
    the returned ``centers`` and ``std`` use the same scale. Modes are chosen
    uniformly at random per point.
    """
    if k < 1:
        raise DomainError(f"need at least one mode, got k={k}")
    if std <= 0:
        raise DomainError(f"std must be positive, got {std}")
    rng = np.random.default_rng(0) if rng is None else rng
    modes = rng.integers(0, k, size=n)
    raw = ring_centers(k, radius)[modes] + std * rng.standard_normal((n, 2))
    scale = 1.0 / (radius + 6.0 * std)
    samples = np.clip(raw * scale, -1.0, 1.0)
    labels = modes if labeled else np.zeros(n, dtype=np.int64)
    return Dataset(
        samples,
        labels,
        num_classes=k if labeled else 1,
        meta=f"ring(k={k}, radius={radius}, std={std}, n={n}, labeled={labeled})",
        centers=ring_centers(k, radius) * scale,
        std=std * scale,
    )


# -- IDX -------------------------------------------------------------------


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(blob, expected_magic):
    """Decode an unsigned-byte IDX blob into a uint8 array.

    Trailing bytes are rejected, as are truncated payloads and wrong magic.
    """
    if len(blob) < 4:
        raise FormatError(f"IDX blob of {len(blob)} bytes has no header")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise FormatError(f"bad IDX magic: expected {expected_magic} (0x{expected_magic:08x}), found {magic} (0x{magic:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise FormatError(f"IDX header needs {header} bytes, blob has {len(blob)}")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    need = math.prod(dims)
    have = len(blob) - header
    if have < need:
        raise FormatError(f"IDX payload length error: dims {dims} need {need} bytes, found {have}")
    if have > need:
        raise FormatError(f"IDX payload has {have - need} trailing bytes")
    return np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(dims)


def encode_idx(array, magic):
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim != (magic & 0xFF):
        raise FormatError(f"magic {magic} implies {magic & 0xFF} dims, array has {array.ndim}")
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def pixels_to_unit(pixels):
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def unit_to_pixels(values):
    """Inverse pixel map ``(v + 1) * 127.5``, rounded half to even and clamped."""
    return np.clip(np.rint((np.asarray(values, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def decode_idx_pair(image_blob, label_blob):
    images = parse_idx(image_blob, IDX_IMAGES_MAGIC)
    labels = parse_idx(label_blob, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ContractError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.shape[1] != images.shape[2]:
        raise ContractError(f"images must be square, got {images.shape[1]}x{images.shape[2]}")
    n, side = images.shape[0], images.shape[1]
    return Dataset(
        pixels_to_unit(images.reshape(n, side * side)),
        labels.astype(np.int64),
        num_classes=int(labels.max()) + 1 if labels.size else 1,
        meta=f"idx(n={n}, side={side})",
        side=side,
    )


def load_idx(images_path, labels_path):
    """Load an IDX image/label file pair (optionally gzipped) as a Dataset."""
    ds = decode_idx_pair(_read_bytes(images_path), _read_bytes(labels_path))
    return Dataset(ds.samples, ds.labels, ds.num_classes, meta=f"{ds.meta} from {images_path}", side=ds.side)


# -- transformations -------------------------------------------------------


def _replace(ds, samples, labels, meta, **kw):
    return Dataset(samples, labels, ds.num_classes, meta, centers=ds.centers, std=ds.std, side=kw.get("side", ds.side))


def balanced_subset(ds, per_class, rng):
    """Exactly ``per_class`` members of every class, sampled without replacement and shuffled."""
    picks = []
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == c)
        if members.size < per_class:
            raise DomainError(f"class {c} has {members.size} members, fewer than the {per_class} requested")
        picks.append(rng.choice(members, size=per_class, replace=False))
    idx = rng.permutation(np.concatenate(picks))
    return _replace(ds, ds.samples[idx], ds.labels[idx], f"{ds.meta} | balanced({per_class}/class)")


def downsample(ds, from_side, to_side):
    """Block-mean pooling of square images, after centre-cropping to a multiple of ``to_side``."""
    if ds.data_dim != from_side * from_side:
        raise ContractError(f"data_dim {ds.data_dim} is not {from_side}x{from_side}")
    if not 1 <= to_side <= from_side:
        raise DomainError(f"cannot pool {from_side} down to {to_side}")
    block = from_side // to_side
    crop = block * to_side
    off = (from_side - crop) // 2
    imgs = ds.samples.reshape(-1, from_side, from_side)[:, off:off + crop, off:off + crop]
    pooled = imgs.reshape(-1, to_side, block, to_side, block).mean(axis=(2, 4))
    pooled = np.clip(pooled, -1.0, 1.0)
    return _replace(ds, pooled.reshape(-1, to_side * to_side), ds.labels, f"{ds.meta} | pooled({to_side})", side=to_side)
