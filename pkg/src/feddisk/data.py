"""Dataset ingestion, synthetic generators, and non-IID partitioning.

Covers IDX image files (MNIST distribution format), equal-share client
partitioning with per-client Gaussian noise skew, stratified train/test
splitting, and two synthetic sources: class blobs for end-to-end runs and a
1-D Gaussian mixture with known densities for ratio-estimation oracles.

All pixel pipelines keep values in [0, 1].
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IdxFormatError
from .nn import as_tensor2d

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    """Flattened images in [0, 1] with integer labels."""

    images: np.ndarray  # (N, D) float64
    labels: np.ndarray  # (N,) int
    label_arity: int
    image_shape: tuple[int, int] | None = None  # (rows, cols) when known

    def __post_init__(self) -> None:
        images = np.asarray(self.images, dtype=np.float64)
        if images.ndim != 2:
            raise ConfigError(f"images must be 2-D, got ndim={images.ndim}")
        self.images = as_tensor2d(images) if images.size else np.ascontiguousarray(images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ConfigError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ConfigError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.label_arity):
            raise ConfigError(f"labels must lie in [0, {self.label_arity})")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def dim(self) -> int:
        return self.images.shape[1]


def take(ds: LabeledDataset, indices: np.ndarray) -> LabeledDataset:
    return LabeledDataset(
        images=ds.images[indices],
        labels=ds.labels[indices],
        label_arity=ds.label_arity,
        image_shape=ds.image_shape,
    )


# --- IDX files -------------------------------------------------------------

def _read_u32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise IdxFormatError(f"{path}: truncated header at byte offset {offset}")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path: str, labels_path: str) -> LabeledDataset:
    """Load a big-endian IDX image/label pair, scaling pixels into [0, 1]."""
    with open(images_path, "rb") as f:
        img_buf = f.read()
    with open(labels_path, "rb") as f:
        lbl_buf = f.read()

    magic = _read_u32(img_buf, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(
            f"{images_path}: bad image magic 0x{magic:08x} at byte offset 0"
        )
    count = _read_u32(img_buf, 4, images_path)
    rows = _read_u32(img_buf, 8, images_path)
    cols = _read_u32(img_buf, 12, images_path)
    expected = 16 + count * rows * cols
    if len(img_buf) != expected:
        raise IdxFormatError(
            f"{images_path}: payload ends at byte offset {len(img_buf)}, expected {expected}"
        )

    magic = _read_u32(lbl_buf, 0, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise IdxFormatError(
            f"{labels_path}: bad label magic 0x{magic:08x} at byte offset 0"
        )
    lbl_count = _read_u32(lbl_buf, 4, labels_path)
    if len(lbl_buf) != 8 + lbl_count:
        raise IdxFormatError(
            f"{labels_path}: payload ends at byte offset {len(lbl_buf)}, expected {8 + lbl_count}"
        )
    if lbl_count != count:
        raise IdxFormatError(
            f"count mismatch: {count} images vs {lbl_count} labels (byte offset 4)"
        )

    pixels = np.frombuffer(img_buf, dtype=np.uint8, offset=16).astype(np.float64) / 255.0
    labels = np.frombuffer(lbl_buf, dtype=np.uint8, offset=8).astype(np.int64)
    arity = int(labels.max()) + 1 if count else 0
    return LabeledDataset(
        images=pixels.reshape(count, rows * cols),
        labels=labels,
        label_arity=arity,
        image_shape=(rows, cols),
    )


def save_idx(ds: LabeledDataset, images_path: str, labels_path: str) -> None:
    """Write the dataset back out in IDX layout (inverse of :func:`load_idx`)."""
    rows, cols = ds.image_shape if ds.image_shape else (1, ds.dim)
    if rows * cols != ds.dim:
        raise ConfigError(f"image shape {(rows, cols)} does not match dim {ds.dim}")
    pixels = np.round(ds.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, ds.n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, ds.n))
        f.write(ds.labels.astype(np.uint8).tobytes())


# --- partitioning and skew ---------------------------------------------------

def _as_rng(seed: int | np.random.Generator) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def partition_indices(n: int, k: int, seed: int | np.random.Generator) -> list[np.ndarray]:
    """Shuffled disjoint index shards whose sizes differ by at most one."""
    if k < 1:
        raise ConfigError(f"client count must be >= 1, got {k}")
    if k > n:
        raise ConfigError(f"cannot split {n} samples across {k} clients")
    order = _as_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(order, k)]


def partition_equal(
    ds: LabeledDataset, k: int, seed: int | np.random.Generator
) -> list[LabeledDataset]:
    return [take(ds, idx) for idx in partition_indices(ds.n, k, seed)]


def noise_variance_for_client(k: int, n_clients: int, x: float) -> float:
    """Noise variance k'*x/100 with k' rescaled onto the 100-client convention.

    For n_clients != 100 the client index is re-mapped as
    k' = round(99*k/(n_clients-1)), preserving the variance range [0, 0.99x].
    """
    if x < 0.0:
        raise ConfigError("base noise variance must be >= 0")
    if not 0 <= k < n_clients:
        raise ConfigError(f"client index {k} out of range [0, {n_clients})")
    if n_clients == 1:
        k_eff = 0
    else:
        k_eff = int(round(99.0 * k / (n_clients - 1)))
    return k_eff * x / 100.0


def apply_noise_skew(
    shard: LabeledDataset,
    k: int,
    n_clients: int,
    x: float,
    seed: int | np.random.Generator,
) -> LabeledDataset:
    """Add zero-mean Gaussian pixel noise with the client's skew variance, then clip."""
    variance = noise_variance_for_client(k, n_clients, x)
    if variance == 0.0:
        return take(shard, np.arange(shard.n))
    noise = _as_rng(seed).normal(0.0, np.sqrt(variance), size=shard.images.shape)
    return LabeledDataset(
        images=np.clip(shard.images + noise, 0.0, 1.0),
        labels=shard.labels.copy(),
        label_arity=shard.label_arity,
        image_shape=shard.image_shape,
    )


def split_train_test(
    shard: LabeledDataset,
    fraction: float = 0.85,
    seed: int | np.random.Generator = 0,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Disjoint train/test split, stratified by label when possible.

    The train side gets ceil(fraction * N) samples.  Stratification (per-class
    largest-remainder allocation) is used when every present class has at
    least two samples; otherwise a plain shuffled split.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError("split fraction must lie in (0, 1)")
    if shard.n == 0:
        raise ConfigError("cannot split an empty shard")
    rng = _as_rng(seed)
    n_train = int(np.ceil(fraction * shard.n))
    if shard.n - n_train == 0:
        warnings.warn(
            f"split leaves an empty test set (N={shard.n})", stacklevel=2
        )

    classes, counts = np.unique(shard.labels, return_counts=True)
    if counts.min() >= 2:
        quotas = n_train * counts / shard.n
        alloc = np.floor(quotas).astype(int)
        remainder = n_train - alloc.sum()
        if remainder > 0:
            frac = quotas - alloc
            # ties broken by class order for determinism
            top = np.lexsort((classes, -frac))[:remainder]
            alloc[top] += 1
        train_idx = []
        for cls, n_c in zip(classes, alloc):
            members = np.flatnonzero(shard.labels == cls)
            members = rng.permutation(members)
            train_idx.append(members[:n_c])
        train_idx = np.sort(np.concatenate(train_idx))
    else:
        order = rng.permutation(shard.n)
        train_idx = np.sort(order[:n_train])

    mask = np.zeros(shard.n, dtype=bool)
    mask[train_idx] = True
    return take(shard, np.flatnonzero(mask)), take(shard, np.flatnonzero(~mask))


# --- synthetic sources -------------------------------------------------------

@dataclass
class MixtureSpec:
    """1-D Gaussian mixture with a fixed binned encoding for model input."""

    weights: list[float]
    means: list[float]
    stds: list[float]
    bins: int = 16
    support: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not (len(self.weights) == len(self.means) == len(self.stds)):
            raise ConfigError("weights, means, stds must have equal length")
        if abs(sum(self.weights) - 1.0) > 1e-9 or any(w < 0 for w in self.weights):
            raise ConfigError("mixture weights must be nonnegative and sum to 1")
        if any(s < 0 for s in self.stds):
            raise ConfigError("mixture stds must be >= 0")
        if self.bins < 2:
            raise ConfigError("need at least 2 bins")

    def support_bounds(self) -> tuple[float, float]:
        if self.support is not None:
            return self.support
        span = 4.0 * max(self.stds)
        lo = min(self.means) - span
        hi = max(self.means) + span
        if hi - lo < 1e-9:
            lo, hi = lo - 0.5, hi + 0.5
        return lo, hi


@dataclass
class EncodedMixture:
    """Mixture draw plus everything an oracle needs: raw values and true pdf."""

    dataset: LabeledDataset  # one-hot binned encoding; labels = component ids
    values: np.ndarray
    density: np.ndarray
    bin_edges: np.ndarray


def mixture_pdf(spec: MixtureSpec, x: np.ndarray) -> np.ndarray:
    """True mixture density; degenerate (std=0) components contribute zero."""
    x = np.asarray(x, dtype=np.float64)
    total = np.zeros_like(x)
    for w, mu, sd in zip(spec.weights, spec.means, spec.stds):
        if sd > 0:
            total += w * np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))
    return total


def encode_binned(spec: MixtureSpec, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-hot encode scalars over the spec's binned support; returns (X, edges)."""
    lo, hi = spec.support_bounds()
    edges = np.linspace(lo, hi, spec.bins + 1)
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, spec.bins - 1)
    x = np.zeros((values.size, spec.bins))
    x[np.arange(values.size), idx] = 1.0
    return x, edges


def synth_gaussian_mixture(
    spec: MixtureSpec, n: int, seed: int | np.random.Generator
) -> EncodedMixture:
    """Draw n scalars, one-hot encode them over the binned support.

    Component indices become the labels and the true mixture density at each
    draw is kept for oracle comparison.
    """
    rng = _as_rng(seed)
    comps = rng.choice(len(spec.weights), size=n, p=np.asarray(spec.weights))
    values = rng.normal(np.asarray(spec.means)[comps], np.asarray(spec.stds)[comps])
    x, edges = encode_binned(spec, values)
    ds = LabeledDataset(images=x, labels=comps, label_arity=len(spec.weights))
    return EncodedMixture(dataset=ds, values=values, density=mixture_pdf(spec, values), bin_edges=edges)


def synth_blobs(
    n: int,
    classes: int,
    dim: int,
    seed: int | np.random.Generator,
    center_lo: float = 0.25,
    center_hi: float = 0.75,
    cluster_std: float = 0.08,
) -> LabeledDataset:
    """Gaussian class blobs in [0, 1]^dim, classes as balanced as n allows."""
    if classes < 1 or dim < 1 or n < classes:
        raise ConfigError(f"invalid blob shape n={n} classes={classes} dim={dim}")
    rng = _as_rng(seed)
    centers = rng.uniform(center_lo, center_hi, size=(classes, dim))
    labels = np.sort(np.arange(n) % classes)
    points = centers[labels] + rng.normal(0.0, cluster_std, size=(n, dim))
    order = rng.permutation(n)
    return LabeledDataset(
        images=np.clip(points[order], 0.0, 1.0),
        labels=labels[order],
        label_arity=classes,
    )
