"""Dataset ingestion, batch iteration, and the synthetic task generator.

The synthetic generator is the desk-scale stand-in for both the frozen CNN
features of real benchmarks and the GAN-sampled unseen features: class
prototypes are drawn in a shared low-dimensional latent subspace with a
common "hub" component whose weight rho sets the pairwise correlation
between classes (and with it the seen/unseen average linkage), features are
a fixed random linear image of the prototype plus isotropic Gaussian noise,
and the generated unseen set re-draws features with noise inflated by 1.5x
to emulate an imperfect generative model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ShapeError, ValidationError
from .linalg import (
    Rng,
    as_matrix,
    load_int_lines,
    load_matrix,
    save_int_lines,
    save_matrix,
)
from .prototypes import PrototypeSet, load_prototypes, save_prototypes, sidecar_path

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VAL: "val", TEST: "test"}

# Generated features use noise inflated by this factor; the mismatch with
# the real noise level stands in for generator imperfection.
GEN_NOISE_FACTOR = 1.5


@dataclass
class Dataset:
    """Validated feature/label/split triplet with the class partition."""

    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    seen_classes: np.ndarray
    unseen_classes: np.ndarray

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.int64)
        self.seen_classes = np.unique(np.asarray(self.seen_classes, dtype=np.int64))
        self.unseen_classes = np.unique(np.asarray(self.unseen_classes, dtype=np.int64))
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ShapeError(f"{n} feature rows but {self.labels.shape[0]} labels")
        if self.split.shape != (n,):
            raise ShapeError(f"{n} feature rows but {self.split.shape[0]} split tags")
        if np.intersect1d(self.seen_classes, self.unseen_classes).size:
            raise ValidationError("seen and unseen class sets overlap")
        known = np.union1d(self.seen_classes, self.unseen_classes)
        if not np.all(np.isin(self.labels, known)):
            bad = np.unique(self.labels[~np.isin(self.labels, known)])
            raise ValidationError(f"labels without a known class: {bad.tolist()}")
        if not np.all(np.isin(self.split, list(SPLIT_NAMES))):
            raise ValidationError("split tags must be 0 (train), 1 (val) or 2 (test)")
        train_labels = self.labels[self.split == TRAIN]
        if not np.all(np.isin(train_labels, self.seen_classes)):
            raise ValidationError("train split contains unseen-class samples")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, split_tag: int) -> tuple[np.ndarray, np.ndarray]:
        idx = np.flatnonzero(self.split == split_tag)
        return self.features[idx], self.labels[idx]


@dataclass
class GeneratedSet:
    """Synthetic unseen-class features standing in for generator output."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = as_matrix(self.features, "generated features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError("one label per generated feature row required")
        if self.labels.size == 0:
            raise ValidationError("empty generated set")

    def validate_against(self, unseen_classes) -> None:
        unseen = np.asarray(unseen_classes, dtype=np.int64)
        if not np.all(np.isin(self.labels, unseen)):
            bad = np.unique(self.labels[~np.isin(self.labels, unseen)])
            raise ValidationError(f"generated labels outside unseen set: {bad.tolist()}")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class SynthConfig:
    num_seen: int = 10
    num_unseen: int = 4
    feature_dim: int = 32
    proto_dim: int = 12
    samples_per_class: int = 200
    sigma: float = 0.1
    rho: float = 0.3
    seed: int = 0
    # Optional knobs: latent_rank defaults to half the prototype dimension,
    # gen_samples_per_class to samples_per_class.
    latent_rank: int | None = None
    gen_samples_per_class: int | None = None

    def __post_init__(self):
        for name in ("num_seen", "num_unseen", "feature_dim", "proto_dim",
                     "samples_per_class"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.sigma <= 0:
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        if not 0.0 <= self.rho < 1.0:
            raise ValidationError(f"rho must be in [0, 1), got {self.rho}")
        if self.latent_rank is not None and not 1 <= self.latent_rank <= self.proto_dim:
            raise ValidationError("latent_rank must be in [1, proto_dim]")
        if self.gen_samples_per_class is not None and self.gen_samples_per_class < 1:
            raise ValidationError("gen_samples_per_class must be >= 1")

    @property
    def rank(self) -> int:
        return self.latent_rank if self.latent_rank is not None \
            else max(2, self.proto_dim // 2)

    @property
    def gen_per_class(self) -> int:
        return self.gen_samples_per_class if self.gen_samples_per_class is not None \
            else self.samples_per_class

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise DataFormatError(f"{path}: unknown fields {sorted(unknown)}")
        return cls(**raw)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------
def _draw_prototype(rng: Rng, basis: np.ndarray, hub: np.ndarray, rho: float) -> np.ndarray:
    fresh = basis @ rng.standard_normal(basis.shape[1])
    fresh /= np.linalg.norm(fresh)
    v = np.sqrt(rho) * hub + np.sqrt(1.0 - rho) * fresh
    return v / np.linalg.norm(v)


def synth_generate(cfg: SynthConfig, rng: Rng | None = None
                   ) -> tuple[Dataset, GeneratedSet, PrototypeSet]:
    """Build a synthetic GZSL task.

    Prototypes are unit vectors of the form sqrt(rho) * hub +
    sqrt(1 - rho) * fresh, all inside a shared latent subspace, so the
    expected cosine between any two classes (and the seen/unseen average
    linkage) is approximately rho. Features are M @ prototype plus
    isotropic noise sigma; seen classes split 60/20/20 into
    train/val/test, unseen classes 50/50 into val/test. The generated set
    replays the unseen feature process with 1.5x noise.
    """
    rng = rng if rng is not None else Rng(cfg.seed)
    a, d = cfg.proto_dim, cfg.feature_dim
    basis_raw = rng.standard_normal((a, cfg.rank))
    basis, _ = np.linalg.qr(basis_raw)
    hub = basis @ rng.standard_normal(cfg.rank)
    hub /= np.linalg.norm(hub)

    num_classes = cfg.num_seen + cfg.num_unseen
    proto = np.empty((a, num_classes))
    for c in range(num_classes):
        proto[:, c] = _draw_prototype(rng, basis, hub, cfg.rho)
    seen_mask = np.zeros(num_classes, dtype=bool)
    seen_mask[: cfg.num_seen] = True
    protos = PrototypeSet(matrix=proto, class_ids=np.arange(num_classes),
                          seen_mask=seen_mask, domain="synth")

    mapping = rng.standard_normal((d, a)) / np.sqrt(a)

    feats, labels, split = [], [], []
    per = cfg.samples_per_class
    n_train = max(1, int(round(per * 0.6))) if per >= 3 else per
    n_val = max(0, (per - n_train) // 2)
    for c in range(cfg.num_seen):
        x = mapping @ proto[:, c] + cfg.sigma * rng.standard_normal((per, d))
        feats.append(x)
        labels.append(np.full(per, c))
        tags = np.full(per, TEST)
        tags[:n_train] = TRAIN
        tags[n_train:n_train + n_val] = VAL
        split.append(tags)
    half = max(1, per // 2)
    for j in range(cfg.num_unseen):
        c = cfg.num_seen + j
        x = mapping @ proto[:, c] + cfg.sigma * rng.standard_normal((per, d))
        feats.append(x)
        labels.append(np.full(per, c))
        tags = np.full(per, TEST)
        tags[:half] = VAL
        split.append(tags)
    dataset = Dataset(
        features=np.concatenate(feats),
        labels=np.concatenate(labels),
        split=np.concatenate(split),
        seen_classes=np.arange(cfg.num_seen),
        unseen_classes=np.arange(cfg.num_seen, num_classes),
    )

    gen_feats, gen_labels = [], []
    gen_sigma = GEN_NOISE_FACTOR * cfg.sigma
    for j in range(cfg.num_unseen):
        c = cfg.num_seen + j
        x = mapping @ proto[:, c] + gen_sigma * rng.standard_normal((cfg.gen_per_class, d))
        gen_feats.append(x)
        gen_labels.append(np.full(cfg.gen_per_class, c))
    generated = GeneratedSet(features=np.concatenate(gen_feats),
                             labels=np.concatenate(gen_labels))
    return dataset, generated, protos


# ---------------------------------------------------------------------------
# Batch iteration
# ---------------------------------------------------------------------------
def batch_iter(dataset: Dataset, batch_size: int, rng: Rng, epoch: int,
               split_tag: int = TRAIN):
    """Yield (features, labels) batches covering the split exactly once.

    The order is a permutation derived from (rng seed, epoch), so it does
    not depend on how much of ``rng`` has been consumed elsewhere; the last
    batch may be short.
    """
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    x, y = dataset.subset(split_tag)
    if x.shape[0] == 0:
        raise ValidationError(f"empty {SPLIT_NAMES[split_tag]} split")
    order = rng.derive(1000 + split_tag, epoch).permutation(x.shape[0])
    for start in range(0, x.shape[0], batch_size):
        idx = order[start:start + batch_size]
        yield x[idx], y[idx]


class GeneratedCycler:
    """Endless shuffled batches from a GeneratedSet.

    Each pass over the set is a fresh permutation derived from the base rng
    and the pass index; batch sizes follow the caller's request so joint
    training can mirror the real batch size exactly.
    """

    def __init__(self, generated: GeneratedSet, rng: Rng):
        self._x = generated.features
        self._y = generated.labels
        self._rng = rng
        self._pass = 0
        self._order = rng.derive(2000, 0).permutation(self._x.shape[0])
        self._cursor = 0

    def next_batch(self, size: int) -> tuple[np.ndarray, np.ndarray]:
        if size < 1:
            raise ValidationError("generated batch size must be >= 1")
        take = []
        while size:
            if self._cursor == len(self._order):
                self._pass += 1
                self._order = self._rng.derive(2000, self._pass).permutation(len(self._order))
                self._cursor = 0
            grab = min(size, len(self._order) - self._cursor)
            take.append(self._order[self._cursor:self._cursor + grab])
            self._cursor += grab
            size -= grab
        idx = np.concatenate(take)
        return self._x[idx], self._y[idx]


# ---------------------------------------------------------------------------
# Dataset file I/O
# ---------------------------------------------------------------------------
def save_dataset(directory, dataset: Dataset, protos: PrototypeSet,
                 generated: GeneratedSet | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(directory / "features.gzm", dataset.features)
    save_int_lines(directory / "labels.txt", dataset.labels)
    save_int_lines(directory / "split.txt", dataset.split)
    save_prototypes(directory / "prototypes.gzm", protos)
    if generated is not None:
        save_matrix(directory / "gen_features.gzm", generated.features)
        save_int_lines(directory / "gen_labels.txt", generated.labels)


def load_dataset(features_path, labels_path, prototypes_path, split_path,
                 prototypes_sidecar=None) -> tuple[Dataset, PrototypeSet]:
    """Load and validate a dataset, returning it with its prototype set.

    The prototype sidecar provides the seen/unseen partition; every label
    must have a prototype, features must be finite, and train-split labels
    must all be seen classes.
    """
    features = load_matrix(features_path)
    labels = load_int_lines(labels_path)
    split = load_int_lines(split_path)
    protos = load_prototypes(prototypes_path, prototypes_sidecar)
    if features.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
        )
    if features.shape[0] != split.shape[0]:
        raise DataFormatError(
            f"{features.shape[0]} feature rows but {split.shape[0]} split tags"
        )
    unknown = np.setdiff1d(np.unique(labels), protos.class_ids)
    if unknown.size:
        raise ValidationError(f"labels without a prototype: {unknown.tolist()}")
    dataset = Dataset(features=features, labels=labels, split=split,
                      seen_classes=protos.seen_ids,
                      unseen_classes=protos.unseen_ids)
    return dataset, protos


def load_generated(features_path, labels_path, unseen_classes) -> GeneratedSet:
    generated = GeneratedSet(features=load_matrix(features_path),
                             labels=load_int_lines(labels_path))
    generated.validate_against(unseen_classes)
    return generated
