"""Datasets, the synthetic generator, CSV ingestion, augmentation and batching."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

SENTINEL = -1
SPLITS = ("labeled", "unlabeled", "test")
TEST_FRACTION = 0.2


class ConfigError(ValueError):
    """Invalid generator, sampler or experiment configuration."""


class DatasetParseError(ValueError):
    """A dataset file does not match the expected schema."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature vectors with a labeled / unlabeled / test split.

    ``labels`` holds ``SENTINEL`` for unlabeled samples; test samples keep
    their ground truth for evaluation only.
    """

    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    K: int
    seen_classes: tuple[int, ...]
    ids: np.ndarray | None = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        split = np.asarray(self.split, dtype="<U9")
        ids = np.arange(len(labels), dtype=np.int64) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        seen = tuple(sorted(int(c) for c in self.seen_classes))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "seen_classes", seen)
        for arr in (feats, labels, split, ids):
            arr.setflags(write=False)
        self._validate()

    def _validate(self):
        n = len(self.labels)
        if self.features.ndim != 2 or self.features.shape[0] != n or len(self.split) != n or len(self.ids) != n:
            raise ValueError("features, labels, split and ids must have matching lengths")
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        if not self.seen_classes or any(not 0 <= c < self.K for c in self.seen_classes):
            raise ValueError(f"seen_classes must be a non-empty subset of [0, {self.K})")
        if len(set(self.seen_classes)) != len(self.seen_classes) or len(self.seen_classes) == self.K:
            raise ValueError("seen_classes must be distinct and leave at least one novel class")
        bad = ~np.isin(self.split, SPLITS)
        if np.any(bad):
            raise ValueError(f"unknown split tag {self.split[bad][0]!r}")
        lab = self.split == "labeled"
        if np.any(~np.isin(self.labels[lab], self.seen_classes)):
            raise ValueError("labeled samples must carry seen-class labels")
        if np.any(self.labels[self.split == "unlabeled"] != SENTINEL):
            raise ValueError("unlabeled samples must carry the sentinel label")
        test_labels = self.labels[self.split == "test"]
        if np.any((test_labels < 0) | (test_labels >= self.K)):
            raise ValueError("test samples need ground-truth labels in [0, K)")

    @property
    def D(self) -> int:
        return self.features.shape[1]

    @property
    def novel_classes(self) -> tuple[int, ...]:
        return tuple(c for c in range(self.K) if c not in self.seen_classes)

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    @property
    def n(self) -> int:
        return int(np.sum(self.split == "labeled"))

    @property
    def m(self) -> int:
        return int(np.sum(self.split == "unlabeled"))


@dataclass(frozen=True)
class SyntheticConfig:
    K: int = 8
    D: int = 16
    samples_per_class: int = 200
    seen_fraction: float = 0.5
    labeled_fraction: float = 0.5
    cluster_separation: float = 4.0
    seed: int = 0

    def validate(self):
        if self.K < 2:
            raise ConfigError("K must be >= 2")
        if self.D < 1:
            raise ConfigError("D must be >= 1")
        if not 0 < self.seen_fraction < 1:
            raise ConfigError("seen_fraction must lie in (0, 1)")
        if not 0 < self.labeled_fraction <= 1:
            raise ConfigError("labeled_fraction must lie in (0, 1]")
        if self.cluster_separation <= 0:
            raise ConfigError("cluster_separation must be positive")


def split_counts(cfg: SyntheticConfig) -> tuple[int, int, int]:
    """Per-class (test, non-test, labeled-if-seen) sample counts."""
    n_test = int(round(TEST_FRACTION * cfg.samples_per_class))
    n_train = cfg.samples_per_class - n_test
    n_labeled = int(round(cfg.labeled_fraction * n_train))
    return n_test, n_train, n_labeled


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Isotropic Gaussian clusters with a seeded seen/novel class split.

    Class centers are drawn at random and rescaled so their mean pairwise
    distance equals ``cluster_separation`` (within-class std is 1).
    """
    cfg.validate()
    n_test, n_train, n_labeled = split_counts(cfg)
    if n_test < 1 or n_labeled < 1 or n_train < 1:
        raise ConfigError(
            f"samples_per_class={cfg.samples_per_class} too small to populate test/labeled splits"
        )
    rng = np.random.default_rng([cfg.seed, 0xDA7A])
    n_seen = min(max(int(round(cfg.K * cfg.seen_fraction)), 1), cfg.K - 1)
    order = rng.permutation(cfg.K)
    seen = tuple(sorted(int(c) for c in order[:n_seen]))

    centers = rng.standard_normal((cfg.K, cfg.D))
    iu = np.triu_indices(cfg.K, 1)
    pair_dist = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)[iu]
    centers *= cfg.cluster_separation / pair_dist.mean()

    feats, labels, split = [], [], []
    for c in range(cfg.K):
        x = centers[c] + rng.standard_normal((cfg.samples_per_class, cfg.D))
        tags = np.array(["test"] * n_test + ["unlabeled"] * n_train, dtype="<U9")
        if c in seen:
            tags[n_test:n_test + n_labeled] = "labeled"
        tags = tags[rng.permutation(cfg.samples_per_class)]
        lab = np.where(tags == "unlabeled", SENTINEL, c)
        feats.append(x)
        labels.append(lab)
        split.append(tags)
    return Dataset(np.concatenate(feats), np.concatenate(labels), np.concatenate(split), cfg.K, seen)


def metadata_path(path) -> Path:
    return Path(path).with_suffix(".meta")


def save_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` as CSV plus the ``.meta`` companion file."""
    path = Path(path)
    lines = ["id,split,label," + ",".join(f"f{j}" for j in range(ds.D))]
    for i in range(len(ds.labels)):
        feats = ",".join(repr(float(v)) for v in ds.features[i])
        lines.append(f"{ds.ids[i]},{ds.split[i]},{ds.labels[i]},{feats}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    meta = f"K={ds.K}\nseen_classes={','.join(str(c) for c in ds.seen_classes)}\n"
    metadata_path(path).write_text(meta, encoding="utf-8", newline="\n")


def _read_meta(path: Path) -> tuple[int, tuple[int, ...]]:
    if not path.exists():
        raise DatasetParseError(f"{path}: metadata file not found")
    meta = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetParseError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        meta[key.strip()] = value.strip()
    try:
        K = int(meta["K"])
        seen = tuple(int(c) for c in meta["seen_classes"].split(",") if c.strip())
    except (KeyError, ValueError) as exc:
        raise DatasetParseError(f"{path}: needs integer K and seen_classes list ({exc})") from exc
    return K, seen


def load_dataset(path, meta_path=None) -> Dataset:
    """Parse a dataset CSV and its metadata file.

    Raises:
        DatasetParseError: on malformed rows, inconsistent feature width, or
            labels that violate the seen/novel split; the message names the line.
    """
    path = Path(path)
    K, seen = _read_meta(Path(meta_path) if meta_path else metadata_path(path))
    text = path.read_text(encoding="utf-8")
    rows = text.split("\n")
    if rows and rows[-1] == "":
        rows.pop()
    if not rows:
        raise DatasetParseError(f"{path}: empty file")
    header = rows[0].rstrip("\r").split(",")
    if header[:3] != ["id", "split", "label"] or len(header) < 4:
        raise DatasetParseError(f"{path}:1: header must be id,split,label,f0,...")
    D = len(header) - 3
    if header[3:] != [f"f{j}" for j in range(D)]:
        raise DatasetParseError(f"{path}:1: feature columns must be f0..f{D - 1}")

    ids, splits, labels, feats = [], [], [], []
    for lineno, raw in enumerate(rows[1:], 2):
        cells = raw.rstrip("\r").split(",")
        if len(cells) != D + 3:
            raise DatasetParseError(f"{path}:{lineno}: expected {D + 3} fields, got {len(cells)}")
        try:
            sid, tag, lab = int(cells[0]), cells[1], int(cells[2])
            x = [float(v) for v in cells[3:]]
        except ValueError as exc:
            raise DatasetParseError(f"{path}:{lineno}: {exc}") from exc
        if tag not in SPLITS:
            raise DatasetParseError(f"{path}:{lineno}: unknown split {tag!r}")
        if not all(math.isfinite(v) for v in x):
            raise DatasetParseError(f"{path}:{lineno}: non-finite feature")
        if tag == "labeled":
            if lab == SENTINEL:
                raise DatasetParseError(f"{path}:{lineno}: labeled sample has sentinel label -1")
            if lab not in seen:
                raise DatasetParseError(
                    f"{path}:{lineno}: labeled sample has label {lab}, not a seen class {list(seen)}"
                )
        elif tag == "unlabeled" and lab != SENTINEL:
            raise DatasetParseError(f"{path}:{lineno}: unlabeled sample must have label -1, got {lab}")
        elif tag == "test" and not 0 <= lab < K:
            raise DatasetParseError(f"{path}:{lineno}: test label {lab} outside [0, {K})")
        ids.append(sid)
        splits.append(tag)
        labels.append(lab)
        feats.append(x)
    try:
        return Dataset(np.array(feats).reshape(len(feats), D), np.array(labels), np.array(splits), K, seen, np.array(ids))
    except ValueError as exc:
        raise DatasetParseError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class AugmentConfig:
    sigma_weak: float = 0.1
    sigma_strong: float = 0.25
    p_mask: float = 0.1


def augment(x, strength: str, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Weak view: Gaussian jitter. Strong view: larger jitter, then random coordinate masking.

    Works row-wise on a matrix as well as on a single vector.
    """
    x = np.asarray(x, dtype=np.float64)
    if strength == "weak":
        return x + cfg.sigma_weak * rng.standard_normal(x.shape)
    if strength == "strong":
        out = x + cfg.sigma_strong * rng.standard_normal(x.shape)
        keep = rng.random(x.shape) >= cfg.p_mask
        return out * keep
    raise ValueError(f"strength must be 'weak' or 'strong', got {strength!r}")


@dataclass
class MultiViewBatch:
    """One mini-batch with both augmented views.

    ``confident`` and ``pseudo_labels`` stay ``None`` until :func:`lps.objective.partition`
    fills them from a forward pass. ``pseudo_labels`` holds the argmax of the
    weak-view prediction for unlabeled samples and SENTINEL for labeled ones.
    """

    indices: np.ndarray
    weak: np.ndarray
    strong: np.ndarray
    labels: np.ndarray
    is_labeled: np.ndarray
    confident: np.ndarray | None = None
    pseudo_labels: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def partitioned(self) -> bool:
        return self.confident is not None

    def _require_partition(self):
        if not self.partitioned:
            raise ValueError("batch has not been partitioned yet")

    @property
    def confident_set(self) -> np.ndarray:
        """Mask of B_l': labeled samples plus confident unlabeled ones."""
        self._require_partition()
        return self.is_labeled | self.confident

    @property
    def low_conf_set(self) -> np.ndarray:
        """Mask of B_u': unlabeled samples below their class threshold."""
        self._require_partition()
        return ~self.is_labeled & ~self.confident

    @property
    def targets(self) -> np.ndarray:
        """Ground truth for labeled, pseudo-label for confident, SENTINEL otherwise."""
        self._require_partition()
        out = np.where(self.is_labeled, self.labels, SENTINEL)
        return np.where(~self.is_labeled & self.confident, self.pseudo_labels, out)

    def with_partition(self, confident: np.ndarray, pseudo_labels: np.ndarray) -> "MultiViewBatch":
        return dataclasses.replace(self, confident=confident, pseudo_labels=pseudo_labels)


def _split_batch(batch_size: int, labeled_fraction_in_batch: float) -> tuple[int, int]:
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    if not 0 < labeled_fraction_in_batch < 1:
        raise ConfigError("labeled_fraction_in_batch must lie in (0, 1)")
    n_l = min(max(int(round(batch_size * labeled_fraction_in_batch)), 1), batch_size - 1)
    return n_l, batch_size - n_l


def build_batch(ds: Dataset, lab_idx: np.ndarray, unl_idx: np.ndarray, rng: np.random.Generator,
                aug: AugmentConfig = AugmentConfig()) -> MultiViewBatch:
    idx = np.concatenate([lab_idx, unl_idx]).astype(np.int64)
    x = ds.features[idx]
    weak = augment(x, "weak", rng, aug)
    strong = augment(x, "strong", rng, aug)
    is_labeled = np.zeros(len(idx), dtype=bool)
    is_labeled[: len(lab_idx)] = True
    return MultiViewBatch(idx, weak, strong, ds.labels[idx].copy(), is_labeled)


def make_batch(ds: Dataset, batch_size: int, labeled_fraction_in_batch: float, rng: np.random.Generator,
               aug: AugmentConfig = AugmentConfig()) -> MultiViewBatch:
    """Draw one batch, sampling each stream without replacement."""
    n_l, n_u = _split_batch(batch_size, labeled_fraction_in_batch)
    lab, unl = ds.indices("labeled"), ds.indices("unlabeled")
    if len(lab) == 0 or len(unl) == 0:
        raise ConfigError("dataset needs at least one labeled and one unlabeled sample")
    lab_idx = rng.choice(lab, size=min(n_l, len(lab)), replace=False)
    unl_idx = rng.choice(unl, size=min(n_u, len(unl)), replace=False)
    return build_batch(ds, lab_idx, unl_idx, rng, aug)


@dataclass
class EpochSampler:
    """Interleaves the labeled and unlabeled streams into batches.

    One epoch is one pass over the unlabeled pool without replacement; the
    labeled pool is reshuffled whenever it runs out.
    """

    ds: Dataset
    batch_size: int
    labeled_fraction_in_batch: float
    rng: np.random.Generator
    aug: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        self.n_l, self.n_u = _split_batch(self.batch_size, self.labeled_fraction_in_batch)
        self._lab = self.ds.indices("labeled")
        self._unl = self.ds.indices("unlabeled")
        if len(self._lab) == 0 or len(self._unl) == 0:
            raise ConfigError("dataset needs at least one labeled and one unlabeled sample")
        self._lab_queue = np.empty(0, dtype=np.int64)

    @property
    def batches_per_epoch(self) -> int:
        return -(-len(self._unl) // self.n_u)

    def _take_labeled(self, k: int) -> np.ndarray:
        k = min(k, len(self._lab))
        if len(self._lab_queue) < k:
            refill = self.rng.permutation(self._lab)
            # keep the batch duplicate-free across the refill boundary
            refill = np.concatenate([refill[~np.isin(refill, self._lab_queue)], refill[np.isin(refill, self._lab_queue)]])
            self._lab_queue = np.concatenate([self._lab_queue, refill])
        out, self._lab_queue = self._lab_queue[:k], self._lab_queue[k:]
        return out

    def epoch(self) -> Iterator[MultiViewBatch]:
        order = self.rng.permutation(self._unl)
        for start in range(0, len(order), self.n_u):
            unl_idx = order[start:start + self.n_u]
            yield build_batch(self.ds, self._take_labeled(self.n_l), unl_idx, self.rng, self.aug)
