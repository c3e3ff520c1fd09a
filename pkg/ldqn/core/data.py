"""
Datasets
LIBSVM ingestion, the synthetic logistic generator and worker partitioning
"""
import gzip
from dataclasses import dataclass
from typing import Iterable, List, Optional, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from sklearn.preprocessing import MinMaxScaler

from ldqn.core.error_handler import ConfigError, DataError, LibsvmIndexError, ParseError
from ldqn.core.logging import data_logger as logger
from ldqn.core.objectives import LogisticShard
from ldqn.schemas.run_schemas import SynthConfig


@dataclass(frozen=True)
class Dataset:
    """Sparse rows with labels in {-1, +1}"""
    rows: sp.csr_matrix
    labels: np.ndarray

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def n_samples(self) -> int:
        return self.rows.shape[0]

    @property
    def nnz(self) -> int:
        return int(self.rows.nnz)


def _map_labels(raw: np.ndarray) -> np.ndarray:
    observed = set(np.unique(raw).tolist())
    if observed <= {-1.0, 1.0}:
        return raw.astype(float)
    if observed <= {0.0, 1.0}:
        return np.where(raw == 0.0, -1.0, 1.0)
    if observed <= {1.0, 2.0}:
        return np.where(raw == 1.0, -1.0, 1.0)
    raise ParseError(f"unsupported label set {sorted(observed)}", code="DATA_003",
                     details={"labels": sorted(observed)[:10]})


def normalize_features(rows: sp.csr_matrix) -> sp.csr_matrix:
    """Min-max scale every feature to [0, 1] (densifies; desk-scale data only)"""
    scaled = MinMaxScaler(feature_range=(0.0, 1.0)).fit_transform(rows.toarray())
    return sp.csr_matrix(scaled)


def parse_libsvm(stream: Iterable[str], normalize: bool = False,
                 n_features: Optional[int] = None) -> Dataset:
    """Parse `label idx:val ...` lines with 1-based strictly increasing indices"""
    labels: List[float] = []
    indptr = [0]
    indices: List[int] = []
    values: List[float] = []
    max_index = 0

    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
            if not np.isfinite(label):
                raise ValueError
            labels.append(label)
        except ValueError:
            raise ParseError(f"line {lineno}: bad label {tokens[0]!r}", details={"line": lineno})

        previous = 0
        for token in tokens[1:]:
            idx_text, sep, val_text = token.partition(":")
            try:
                if not sep:
                    raise ValueError
                idx = int(idx_text)
                val = float(val_text)
                if not np.isfinite(val):
                    raise ValueError
            except ValueError:
                raise ParseError(f"line {lineno}: malformed feature {token!r}", details={"line": lineno})
            if idx <= 0:
                raise LibsvmIndexError(f"line {lineno}: feature index {idx} is not 1-based",
                                       details={"line": lineno, "index": idx})
            if idx <= previous:
                raise ParseError(f"line {lineno}: indices must be strictly increasing",
                                 details={"line": lineno})
            if n_features is not None and idx > n_features:
                raise LibsvmIndexError(f"line {lineno}: feature index {idx} exceeds {n_features}",
                                       details={"line": lineno, "index": idx})
            previous = idx
            indices.append(idx - 1)
            values.append(val)
        max_index = max(max_index, previous)
        indptr.append(len(indices))

    d = n_features if n_features is not None else max_index
    rows = sp.csr_matrix((np.asarray(values, dtype=float), np.asarray(indices, dtype=np.int64),
                          np.asarray(indptr, dtype=np.int64)), shape=(len(labels), d))
    label_array = _map_labels(np.asarray(labels, dtype=float)) if labels else np.zeros(0)
    if normalize and rows.shape[0]:
        rows = normalize_features(rows)
    return Dataset(rows=rows, labels=label_array)


def load_libsvm(path: str, normalize: bool = False, n_features: Optional[int] = None) -> Dataset:
    """Read a plain or .gz LIBSVM file"""
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rt", encoding="utf-8") as stream:
            dataset = parse_libsvm(stream, normalize=normalize, n_features=n_features)
    except OSError as e:
        raise DataError(f"cannot read dataset {path}: {e}", details={"path": str(path)})
    logger.info(f"Loaded {path}: N={dataset.n_samples}, d={dataset.d}, nnz={dataset.nnz}")
    return dataset


def dump_libsvm(dataset: Dataset, stream: TextIO) -> None:
    """Write the dataset with shortest round-trip float formatting"""
    rows = dataset.rows.tocsr()
    rows.sort_indices()
    for k in range(rows.shape[0]):
        start, end = rows.indptr[k], rows.indptr[k + 1]
        entries = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(rows.indices[start:end], rows.data[start:end]))
        label = "1" if dataset.labels[k] > 0 else "-1"
        stream.write(f"{label} {entries}\n" if entries else f"{label}\n")


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Gaussian rows with covariance diag(i^-1.2), labels drawn from the logistic link"""
    rng = np.random.default_rng(cfg.seed)
    scale = np.sqrt(np.arange(1, cfg.d + 1, dtype=float) ** -1.2)
    X = rng.standard_normal((cfg.N, cfg.d)) * scale
    if cfg.sparsity > 0:
        X[rng.random((cfg.N, cfg.d)) < cfg.sparsity] = 0.0
    z = X.sum(axis=1) + rng.normal(0.0, np.sqrt(cfg.noise_sigma2), cfg.N)
    labels = np.where(rng.random(cfg.N) < expit(z), 1.0, -1.0)
    logger.debug(f"Generated synthetic dataset N={cfg.N}, d={cfg.d}, sparsity={cfg.sparsity}")
    return Dataset(rows=sp.csr_matrix(X), labels=labels)


def partition(dataset: Dataset, n: int, seed: int = 0, lam: float = 0.0) -> List[LogisticShard]:
    """Random balanced split into n shards, sizes differing by at most one"""
    if n < 1:
        raise ConfigError("number of shards must be at least 1")
    order = np.random.default_rng(seed).permutation(dataset.n_samples)
    return [LogisticShard(dataset.rows[part], dataset.labels[part], lam)
            for part in np.array_split(order, n)]
