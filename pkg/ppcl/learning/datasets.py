"""
Datasets of the collaborative-learning experiments and the skewed four-way splits between the public
``global`` partition, the two parties and the test set.

Sources:

* MNIST from the standard IDX files (:func:`load_mnist_idx`, :func:`load_mnist_dir`).
* A synthetic 784-feature, 10-class benchmark (:func:`gen_synthetic`).
* A synthetic 29-feature fraud-like benchmark with exact per-split class counts (:func:`gen_fraud`),
  or real fraud data ingested from delimited text (:func:`load_delimited`).

Skewed splits give every partition a label distribution favouring a few labels (3:1 by default). Exact
proportional allocation usually exceeds the supply of some labels, so :func:`allocate_label_counts`
fits the requested partition sizes under per-label supply caps with bounded iterative proportional
fitting and rounds with the largest-remainder method.

"""
from dataclasses import dataclass, field
import gzip
import math
import os
import struct
import warnings
import numpy as np
import pandas as pd
from sklearn.datasets import make_classification
from sklearn.preprocessing import StandardScaler

from ..utils.constants import (DATA_DIR_ENV, FAVOURED_LABELS, FRAUD_DROP_COLUMNS, FRAUD_FILE, FRAUD_LABEL_COUNTS,
                               FRAUD_LAYER_SIZES, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, MNIST_FILES, MNIST_SPLIT_SIZES,
                               PARTITIONS, SKEW_RATIO, SYNTHETIC_SPLIT_SIZES)

DATASETS = ('mnist', 'synthetic', 'fraud')


class IDXFormatError(ValueError):
    """Malformed IDX file."""


class SplitAllocationError(ValueError):
    """A split request that the available samples cannot satisfy."""


@dataclass(eq=False)
class LabeledDataset:
    """
    Feature matrix with integer labels.

    Attributes:
        X (np.ndarray): ``n x Q`` features.
        y (np.ndarray): ``n`` labels in ``[0, n_classes)``.
        n_classes (int): Number of classes.
        name (str): Partition or source name.
        indices (np.ndarray): Row indices into the source dataset the samples were drawn from.
    """
    X: np.ndarray
    y: np.ndarray
    n_classes: int = 10
    name: str = ''
    indices: np.ndarray = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"Features {self.X.shape} and labels {self.y.shape} disagree.")
        if not np.all(np.isfinite(self.X)):
            raise ValueError(f"Dataset '{self.name}' contains non-finite features.")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"Labels of '{self.name}' fall outside [0, {self.n_classes}).")
        if self.indices is None:
            self.indices = np.arange(self.y.shape[0])

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, rows, name: str = None) -> 'LabeledDataset':
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.X[rows], self.y[rows], self.n_classes, name or self.name, self.indices[rows])

    def onehot(self) -> np.ndarray:
        out = np.zeros((len(self), self.n_classes))
        out[np.arange(len(self)), self.y] = 1.0
        return out

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)


def skew_weights(favoured, n_classes: int = 10, ratio: float = SKEW_RATIO) -> np.ndarray:
    """Label distribution giving every label in ``favoured`` ``ratio`` times the weight of the others."""
    weights = np.ones(n_classes)
    weights[list(favoured)] = ratio
    return weights / weights.sum()


def starved_labels(dataset: str = 'synthetic') -> dict[str, tuple]:
    """
    Labels each party is short of and the other party holds plenty of.

    For the skewed 10-class splits these are the labels the other party's split favours; for fraud it is
    the fraud label at party 1 (50 frauds against 242 at party 2).
    """
    if dataset == 'fraud':
        return {'party1': (1,), 'party2': ()}
    return {'party1': tuple(FAVOURED_LABELS['party2']), 'party2': tuple(FAVOURED_LABELS['party1'])}


@dataclass
class SplitSpec:
    """
    Requested partitions.

    Attributes:
        sizes (dict[str, int]): Samples per partition.
        weights (dict[str, np.ndarray]): Label distribution per partition (uniform when absent).
        label_counts (dict[str, tuple]): Exact samples per label and partition; overrides ``sizes`` and
            ``weights`` when given.
        n_classes (int): Number of labels.
    """
    sizes: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    label_counts: dict = None
    n_classes: int = 10

    @property
    def partitions(self) -> list[str]:
        names = self.label_counts.keys() if self.label_counts else self.sizes.keys()
        return [name for name in PARTITIONS if name in names]

    def scaled(self, factor: float) -> 'SplitSpec':
        """Uniformly shrinks (or grows) every partition; non-zero counts stay at least one."""
        if factor <= 0:
            raise ValueError(f"Scale factor must be positive, got {factor}.")

        def _scale(n):
            return max(1, round(n * factor)) if n else 0
        label_counts = None
        if self.label_counts:
            label_counts = {name: tuple(_scale(n) for n in counts) for name, counts in self.label_counts.items()}
        return SplitSpec({name: _scale(n) for name, n in self.sizes.items()}, dict(self.weights), label_counts,
                         self.n_classes)

    def to_dict(self) -> dict:
        return {'sizes': dict(self.sizes),
                'weights': {name: [float(w) for w in weights] for name, weights in self.weights.items()},
                'label_counts': {name: list(c) for name, c in self.label_counts.items()} if self.label_counts else None,
                'n_classes': self.n_classes}


def mnist_split_spec() -> SplitSpec:
    """Global 12,600, party 1 23,700, party 2 23,700 (test comes from the MNIST test file)."""
    sizes = {name: MNIST_SPLIT_SIZES[name] for name in ('global', 'party1', 'party2')}
    return SplitSpec(sizes, {name: skew_weights(FAVOURED_LABELS[name]) for name in sizes})


def synthetic_split_spec() -> SplitSpec:
    """20,000 samples in every partition; the test partition is uniform over labels."""
    weights = {name: skew_weights(FAVOURED_LABELS[name]) for name in ('global', 'party1', 'party2')}
    return SplitSpec(dict(SYNTHETIC_SPLIT_SIZES), weights)


def fraud_split_spec() -> SplitSpec:
    """Exact (normal, fraud) counts per partition."""
    return SplitSpec({name: sum(c) for name, c in FRAUD_LABEL_COUNTS.items()}, {},
                     dict(FRAUD_LABEL_COUNTS), n_classes=2)


def allocate_label_counts(sizes, weights, supply, max_iter: int = 500, tol: float = 1e-9) -> np.ndarray:
    """
    Integer samples per (partition, label) close to ``sizes[p] * weights[p]`` under label supply caps.

    Args:
        sizes (array-like): ``P`` requested partition sizes.
        weights (array-like): ``P x K`` label distributions (rows are normalised).
        supply (array-like): ``K`` available samples per label.
        max_iter (int): Fitting iterations.
        tol (float): Convergence tolerance on the row sums.

    Returns:
        np.ndarray: ``P x K`` integer counts with row sums equal to ``sizes`` and column sums at most
        ``supply``.

    Raises:
        SplitAllocationError: If the request cannot be met.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    supply = np.asarray(supply, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if sizes.sum() > supply.sum():
        raise SplitAllocationError(f"Requested {sizes.sum()} samples but only {supply.sum()} are available.")
    table = weights / weights.sum(axis=1, keepdims=True) * sizes[:, None]
    for _ in range(max_iter):
        row_sums = table.sum(axis=1)
        table = table * np.divide(sizes, row_sums, out=np.zeros_like(row_sums), where=row_sums > 0)[:, None]
        col_sums = table.sum(axis=0)
        over = col_sums > supply
        table[:, over] *= supply[over] / col_sums[over]
        if np.max(np.abs(table.sum(axis=1) - sizes)) < tol:
            break

    counts = np.floor(table).astype(np.int64)
    spare = supply - counts.sum(axis=0)
    for row in range(len(sizes)):
        deficit = sizes[row] - counts[row].sum()
        for label in np.argsort(-(table[row] - counts[row]), kind='stable'):
            if deficit == 0:
                break
            if spare[label] > 0:
                counts[row, label] += 1
                spare[label] -= 1
                deficit -= 1
        for label in np.argsort(-weights[row], kind='stable'):
            extra = min(deficit, spare[label])
            counts[row, label] += extra
            spare[label] -= extra
            deficit -= extra
        if deficit > 0:
            raise SplitAllocationError(f"Cannot fill partition {row} with {sizes[row]} samples under the label "
                                       f"supply {supply.tolist()}.")
    assert np.all(counts.sum(axis=1) == sizes) and np.all(counts.sum(axis=0) <= supply)
    return counts


def split(dataset: LabeledDataset, spec: SplitSpec, seed: int = 0) -> dict[str, LabeledDataset]:
    """
    Disjoint skewed partitions of ``dataset``.

    Raises:
        SplitAllocationError: If the dataset holds too few samples of some label.
    """
    names = spec.partitions
    supply = dataset.label_counts()
    if spec.label_counts:
        counts = np.array([spec.label_counts[name] for name in names], dtype=np.int64)
        if np.any(counts.sum(axis=0) > supply):
            raise SplitAllocationError(f"Requested label counts {counts.sum(axis=0).tolist()} exceed the supply "
                                       f"{supply.tolist()}.")
    else:
        uniform = np.full(dataset.n_classes, 1.0 / dataset.n_classes)
        weights = np.array([spec.weights.get(name, uniform) for name in names])
        counts = allocate_label_counts([spec.sizes[name] for name in names], weights, supply)
    rng = np.random.default_rng(seed)
    rows = {name: [] for name in names}
    for label in range(dataset.n_classes):
        pool = rng.permutation(np.flatnonzero(dataset.y == label))
        start = 0
        for name, n in zip(names, counts[:, label]):
            rows[name].append(pool[start:start + n])
            start += n
    return {name: dataset.subset(rng.permutation(np.concatenate(rows[name])), name) for name in names}


def select_share_subset(dataset: LabeledDataset, fraction: float = 0.3, seed: int = 0) -> LabeledDataset:
    """
    Stratified uniform subset of ``round(fraction * len(dataset))`` samples, without replacement.

    Per-label quotas use the largest-remainder method; rows keep their order in ``dataset``.

    Raises:
        ValueError: If ``fraction`` is outside ``[0, 1]``.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"Share fraction must be in [0, 1], got {fraction}.")
    target = round(fraction * len(dataset))
    counts = dataset.label_counts()
    exact = fraction * counts
    quotas = np.floor(exact).astype(np.int64)
    for label in np.argsort(-(exact - quotas), kind='stable')[:target - quotas.sum()]:
        quotas[label] += 1
    rng = np.random.default_rng(seed)
    chosen = [rng.choice(np.flatnonzero(dataset.y == label), size=quotas[label], replace=False)
              for label in range(dataset.n_classes)]
    rows = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    if target == 0 and len(dataset):
        warnings.warn(f"Share fraction {fraction} selects no samples from '{dataset.name}'.", stacklevel=2)
    return dataset.subset(rows, f"{dataset.name}_shared")


def _open_maybe_gz(path: str):
    return gzip.open(path, 'rb') if path.endswith('.gz') else open(path, 'rb')


def _read_idx(path: str, magic: int) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(f"IDX file {path} not found.")
    with _open_maybe_gz(path) as idx_file:
        content = idx_file.read()
    if len(content) < 8:
        raise IDXFormatError(f"{path} is too short to be an IDX file.")
    found, = struct.unpack_from('>I', content, 0)
    if found != magic:
        raise IDXFormatError(f"{path}: bad magic 0x{found:08X}, expected 0x{magic:08X}.")
    n_dims = magic & 0xFF
    if len(content) < 4 + 4 * n_dims:
        raise IDXFormatError(f"{path}: truncated dimension header.")
    dims = struct.unpack_from(f'>{n_dims}I', content, 4)
    payload = np.frombuffer(content, dtype=np.uint8, offset=4 + 4 * n_dims)
    if payload.size != int(np.prod(dims)):
        raise IDXFormatError(f"{path}: payload of {payload.size} bytes does not match dimensions {dims}.")
    return payload.reshape(dims)


def load_mnist_idx(images_path: str, labels_path: str) -> LabeledDataset:
    """
    Reads an MNIST image/label IDX pair; pixels are flattened and scaled to ``[0, 1]``.

    Raises:
        IDXFormatError: On bad magic numbers or mismatched counts.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels.")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(X, labels.astype(np.int64), 10, 'mnist')


def resolve_data_dir(data_dir: str = None) -> str:
    """Explicit directory, else ``$PPCL_DATA_DIR``, else ``./data``."""
    return data_dir or os.environ.get(DATA_DIR_ENV) or os.path.join(os.getcwd(), 'data')


def _find(data_dir: str, name: str) -> str:
    for candidate in (name, name + '.gz'):
        path = os.path.join(data_dir, candidate)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"{name}[.gz] not found in {data_dir}.")


def load_mnist_dir(data_dir: str = None) -> tuple[LabeledDataset, LabeledDataset]:
    """Training and test sets from the four standard MNIST files in ``data_dir``."""
    data_dir = resolve_data_dir(data_dir)
    train = load_mnist_idx(_find(data_dir, MNIST_FILES['train_images']), _find(data_dir, MNIST_FILES['train_labels']))
    test = load_mnist_idx(_find(data_dir, MNIST_FILES['test_images']), _find(data_dir, MNIST_FILES['test_labels']))
    return train, test


def gen_synthetic(n: int, n_features: int = 784, n_classes: int = 10, seed: int = 0,
                  n_informative: int = 20) -> LabeledDataset:
    """
    Class clusters at hypercube vertices of an ``n_informative``-dimensional subspace, with unit
    Gaussian noise, linearly mixed into ``n_features`` dimensions and standardised.

    Example:

        .. code-block:: python

            data = gen_synthetic(2000, seed=4)
            data.X.shape    # (2000, 784)

    """
    X, y = make_classification(n_samples=n, n_features=n_features, n_informative=n_informative,
                               n_redundant=n_features - n_informative, n_repeated=0, n_classes=n_classes,
                               n_clusters_per_class=1, flip_y=0.0, shuffle=True, random_state=seed)
    return LabeledDataset(StandardScaler().fit_transform(X), y, n_classes, 'synthetic')


def _gaussian_mixture(rng: np.random.Generator, n: int, means: np.ndarray, scales: np.ndarray) -> np.ndarray:
    component = rng.integers(0, means.shape[0], size=n)
    return means[component] + scales[component, None] * rng.standard_normal((n, means.shape[1]))


def gen_fraud(seed: int = 0, label_counts: dict = None, n_features: int = 29) -> dict[str, LabeledDataset]:
    """
    Fraud-like partitions with exact (normal, fraud) counts.

    Normal transactions come from a three-component Gaussian mixture, frauds from a two-component
    mixture whose means are shifted along a random direction so the classes overlap partially.

    Returns:
        dict[str, LabeledDataset]: One dataset per partition of ``label_counts``.
    """
    label_counts = label_counts or FRAUD_LABEL_COUNTS
    rng = np.random.default_rng(seed)
    normal_means = rng.normal(0.0, 1.0, size=(3, n_features))
    direction = rng.normal(0.0, 1.0, size=n_features)
    direction /= np.linalg.norm(direction)
    fraud_means = normal_means[:2] + 3.0 * direction
    normal_scales, fraud_scales = np.array([1.0, 1.2, 0.8]), np.array([1.5, 1.1])
    splits, offset = {}, 0
    for name in PARTITIONS:
        if name not in label_counts:
            continue
        n_normal, n_fraud = label_counts[name]
        X = np.vstack([_gaussian_mixture(rng, n_normal, normal_means, normal_scales),
                       _gaussian_mixture(rng, n_fraud, fraud_means, fraud_scales)])
        y = np.concatenate([np.zeros(n_normal, dtype=np.int64), np.ones(n_fraud, dtype=np.int64)])
        order = rng.permutation(len(y))
        splits[name] = LabeledDataset(X[order], y[order], 2, name, offset + np.arange(len(y)))
        offset += len(y)
    return splits


def load_delimited(path: str, n_classes: int = 2, drop_columns=(), n_features: int = None) -> LabeledDataset:
    """
    Comma-separated samples with the label in the last column; a header row is optional.

    Args:
        path (str): File path.
        n_classes (int): Number of labels.
        drop_columns (Sequence[str | int]): Columns to ignore when present (names when a header exists,
            positions otherwise), e.g. a timestamp.
        n_features (int, optional): Expected number of feature columns after dropping.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ValueError: If the file does not hold ``n_features`` feature columns.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Delimited data file {path} not found.")
    frame = pd.read_csv(path, header=None)
    if pd.to_numeric(frame.iloc[0], errors='coerce').isna().any():
        frame = pd.read_csv(path)
    frame = frame.drop(columns=[column for column in drop_columns if column in frame.columns])
    if n_features is not None and frame.shape[1] - 1 != n_features:
        raise ValueError(f"{path} holds {frame.shape[1] - 1} feature columns after dropping {list(drop_columns)}, "
                         f"expected {n_features}.")
    return LabeledDataset(frame.iloc[:, :-1].to_numpy(dtype=np.float64), frame.iloc[:, -1].to_numpy(dtype=np.int64),
                          n_classes, os.path.basename(path))


def prepare_splits(dataset: str = 'synthetic', seed: int = 0, scale: float = 1.0, data_dir: str = None,
                   min_partition: int = 32, verbose: bool = False) -> dict[str, LabeledDataset]:
    """
    The ``global``, ``party1``, ``party2`` and ``test`` partitions of one benchmark.

    Args:
        dataset (str): ``'mnist'``, ``'synthetic'`` or ``'fraud'``.
        seed (int): Split and generation seed.
        scale (float): Uniform shrink factor for every partition.
        data_dir (str, optional): Directory with MNIST IDX files or ``fraud.csv`` (real fraud data).
        min_partition (int): Partitions smaller than this trigger a warning.
        verbose (bool): Print partition sizes.

    Returns:
        dict[str, LabeledDataset]: Partitions keyed by name.
    """
    if dataset not in DATASETS:
        raise ValueError(f"Unknown dataset '{dataset}'. Use one of {DATASETS}.")
    if dataset == 'mnist':
        train, test = load_mnist_dir(data_dir)
        splits = split(train, mnist_split_spec().scaled(scale), seed)
        n_test = max(1, round(scale * len(test))) if scale < 1 else len(test)
        splits['test'] = test.subset(np.sort(np.random.default_rng([seed, 7]).permutation(len(test))[:n_test]), 'test')
    elif dataset == 'synthetic':
        spec = synthetic_split_spec().scaled(scale)
        pool = gen_synthetic(math.ceil(1.5 * sum(spec.sizes.values())), seed=seed)
        splits = split(pool, spec, seed)
    else:
        spec = fraud_split_spec().scaled(scale)
        real = os.path.join(resolve_data_dir(data_dir), FRAUD_FILE)
        if os.path.exists(real):
            if verbose:
                print(f"(Info): Reading fraud data from {real}.")
            splits = split(load_delimited(real, drop_columns=FRAUD_DROP_COLUMNS, n_features=FRAUD_LAYER_SIZES[0]),
                           spec, seed)
        else:
            splits = gen_fraud(seed, spec.label_counts)
    for name, part in splits.items():
        if len(part) < min_partition:
            warnings.warn(f"Partition '{name}' has only {len(part)} samples.", stacklevel=2)
        if verbose:
            print(f"(Info): {dataset} partition {name}: {len(part)} samples, labels {part.label_counts().tolist()}.")
    return splits


def split_manifest(splits: dict[str, LabeledDataset]) -> dict:
    """Sizes and label histograms of every partition."""
    return {name: {'size': len(part), 'label_counts': part.label_counts().tolist()} for name, part in splits.items()}
