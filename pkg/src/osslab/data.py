"""Synthetic open-set datasets: Gaussian ID classes plus OOD clusters.

Stands in for the image benchmarks: ID classes are isotropic Gaussians,
OOD data come from extra Gaussian clusters that appear only in the
unlabeled pool and the OOD test set. Weak/strong augmentation analogues
are small/large jitter (strong adds coordinate dropout).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .rng import stream

OOD_LABEL = -1

_CENTER_RETRIES = 1000


class InfeasibleSpecError(ValueError):
    """Center placement cannot satisfy the separation constraint."""


@dataclass(frozen=True)
class DatasetSpec:
    input_dim: int
    num_id_classes: int
    num_ood_clusters: int
    samples_per_class: int
    labeled_per_class: int
    ood_fraction: float
    cluster_spread: float
    cluster_separation: float
    seed: int

    def __post_init__(self):
        if min(self.input_dim, self.num_id_classes, self.num_ood_clusters,
               self.samples_per_class, self.labeled_per_class) < 1:
            raise ValueError("all counts must be >= 1")
        if not (0.0 < self.ood_fraction < 1.0):
            raise ValueError("ood_fraction must be strictly inside (0, 1)")
        if self.labeled_per_class > self.samples_per_class:
            raise ValueError("labeled_per_class must be <= samples_per_class")
        if self.cluster_spread <= 0 or self.cluster_separation <= 0:
            raise ValueError("cluster_spread and cluster_separation must be positive")


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    label: int  # class index for ID, OOD_LABEL otherwise
    is_id: bool

    def __post_init__(self):
        if self.is_id != (self.label >= 0):
            raise ValueError("is_id must match label validity")


@dataclass
class OpenSetDataset:
    spec: DatasetSpec | None
    labeled: list[Sample]
    unlabeled: list[Sample]  # labels retained for evaluation only
    test_id: list[Sample]
    test_ood: list[Sample]


@dataclass(frozen=True)
class BatchPair:
    """One training step's data; carries no identity of unlabeled samples.

    The training path must never see is_id or labels of unlabeled data,
    so only raw coordinates (already augmented) are exposed here.
    """

    labeled_weak: np.ndarray   # (B, input_dim)
    labels: np.ndarray         # (B,)
    unlabeled_weak: np.ndarray   # (mu*B, input_dim)
    unlabeled_strong: np.ndarray  # (mu*B, input_dim)


def _place_centers(n: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    # Draw centers one by one from an isotropic Gaussian whose scale grows
    # with the separation requirement; reject draws too close to earlier ones.
    scale = separation * max(1.0, np.sqrt(n) / np.sqrt(dim))
    centers = []
    for _ in range(n):
        for attempt in range(_CENTER_RETRIES):
            c = rng.normal(0.0, scale, size=dim)
            if all(np.linalg.norm(c - p) >= separation for p in centers):
                centers.append(c)
                break
        else:
            raise InfeasibleSpecError(
                f"could not place {n} centers at separation {separation} "
                f"in {dim} dims after {_CENTER_RETRIES} retries each"
            )
    return np.asarray(centers)


def generate(spec: DatasetSpec) -> OpenSetDataset:
    """Generate a reproducible open-set dataset from ``spec``.

    The unlabeled pool contains every ID training sample (including
    unlabeled copies of the labeled ones) plus OOD samples sized so the
    pool's OOD fraction matches ``spec.ood_fraction`` within one sample.
    """
    rng = stream(spec.seed, "data")
    n_centers = spec.num_id_classes + spec.num_ood_clusters
    centers = _place_centers(n_centers, spec.input_dim, spec.cluster_separation, rng)
    id_centers = centers[: spec.num_id_classes]
    ood_centers = centers[spec.num_id_classes:]

    def draw(center: np.ndarray, n: int) -> np.ndarray:
        return center + rng.normal(0.0, spec.cluster_spread, size=(n, spec.input_dim))

    labeled: list[Sample] = []
    unlabeled: list[Sample] = []
    for c in range(spec.num_id_classes):
        xs = draw(id_centers[c], spec.samples_per_class)
        for i, x in enumerate(xs):
            if i < spec.labeled_per_class:
                labeled.append(Sample(x=x, label=c, is_id=True))
            unlabeled.append(Sample(x=x, label=c, is_id=True))

    n_unl_id = len(unlabeled)
    f = spec.ood_fraction
    n_ood = int(round(n_unl_id * f / (1.0 - f)))
    per_cluster = np.full(spec.num_ood_clusters, n_ood // spec.num_ood_clusters)
    per_cluster[: n_ood % spec.num_ood_clusters] += 1
    for j in range(spec.num_ood_clusters):
        for x in draw(ood_centers[j], int(per_cluster[j])):
            unlabeled.append(Sample(x=x, label=OOD_LABEL, is_id=False))

    test_id: list[Sample] = []
    for c in range(spec.num_id_classes):
        for x in draw(id_centers[c], spec.samples_per_class):
            test_id.append(Sample(x=x, label=c, is_id=True))
    n_test_ood = len(test_id)
    per_cluster = np.full(spec.num_ood_clusters, n_test_ood // spec.num_ood_clusters)
    per_cluster[: n_test_ood % spec.num_ood_clusters] += 1
    test_ood: list[Sample] = []
    for j in range(spec.num_ood_clusters):
        for x in draw(ood_centers[j], int(per_cluster[j])):
            test_ood.append(Sample(x=x, label=OOD_LABEL, is_id=False))

    return OpenSetDataset(spec=spec, labeled=labeled, unlabeled=unlabeled,
                          test_id=test_id, test_ood=test_ood)


def weak_augment(x: np.ndarray, rng: np.random.Generator, sigma: float) -> np.ndarray:
    """Gaussian jitter with standard deviation ``sigma``."""
    if sigma == 0.0:
        return x.copy()
    return x + rng.normal(0.0, sigma, size=x.shape)


def strong_augment(x: np.ndarray, rng: np.random.Generator, sigma: float,
                   p_drop: float) -> np.ndarray:
    """Large Gaussian jitter plus independent coordinate dropout."""
    out = x + rng.normal(0.0, sigma, size=x.shape) if sigma > 0.0 else x.copy()
    if p_drop > 0.0:
        keep = rng.random(size=x.shape) >= p_drop
        out = out * keep
    return out


def _as_matrix(samples: list[Sample]) -> np.ndarray:
    return np.asarray([s.x for s in samples])


@dataclass
class AugmentConfig:
    sigma_weak: float
    sigma_strong: float
    p_drop: float = 0.2

    @classmethod
    def from_spread(cls, cluster_spread: float, p_drop: float = 0.2) -> "AugmentConfig":
        return cls(sigma_weak=0.1 * cluster_spread,
                   sigma_strong=0.5 * cluster_spread, p_drop=p_drop)


def batches(dataset: OpenSetDataset, B: int, mu: int, seed: int,
            augment: AugmentConfig) -> Iterator[BatchPair]:
    """Infinite stream of (labeled, unlabeled) batches with augmented views.

    Each epoch is a fresh shuffle of the pool; batches run through the
    permutation so every sample appears exactly once per epoch (across
    epochs samples repeat). Deterministic given ``seed``.
    """
    if not dataset.labeled or not dataset.unlabeled:
        raise ValueError("empty dataset")
    if B > len(dataset.labeled) or mu * B > len(dataset.unlabeled):
        raise ValueError("batch size exceeds pool size")

    Xl = _as_matrix(dataset.labeled)
    yl = np.asarray([s.label for s in dataset.labeled])
    Xu = _as_matrix(dataset.unlabeled)

    order_rng = stream(seed, "batch")
    aug_rng = stream(seed, "augment")

    def index_stream(n: int) -> Iterator[int]:
        while True:
            yield from order_rng.permutation(n)

    lab_idx = index_stream(len(dataset.labeled))
    unl_idx = index_stream(len(dataset.unlabeled))

    while True:
        li = np.fromiter(lab_idx, dtype=int, count=B)
        ui = np.fromiter(unl_idx, dtype=int, count=mu * B)
        lw = weak_augment(Xl[li], aug_rng, augment.sigma_weak)
        uw = weak_augment(Xu[ui], aug_rng, augment.sigma_weak)
        us = strong_augment(Xu[ui], aug_rng, augment.sigma_strong, augment.p_drop)
        yield BatchPair(labeled_weak=lw, labels=yl[li],
                        unlabeled_weak=uw, unlabeled_strong=us)


# --- columnar text export -------------------------------------------------
# One sample per row: split tag, label, is_id (0/1), then coordinates,
# whitespace-separated. Lines starting with '#' are comments.

def export_dataset(dataset: OpenSetDataset, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("# osslab dataset v1\n")
        fh.write("# columns: split label is_id x0 x1 ...\n")
        for split, samples in (("labeled", dataset.labeled),
                               ("unlabeled", dataset.unlabeled),
                               ("test_id", dataset.test_id),
                               ("test_ood", dataset.test_ood)):
            for s in samples:
                coords = " ".join(repr(float(v)) for v in s.x)
                fh.write(f"{split} {s.label} {int(s.is_id)} {coords}\n")


def import_dataset(path: str, spec: DatasetSpec | None = None) -> OpenSetDataset:
    splits: dict[str, list[Sample]] = {"labeled": [], "unlabeled": [],
                                       "test_id": [], "test_ood": []}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            split, label, is_id = parts[0], int(parts[1]), bool(int(parts[2]))
            x = np.asarray([float(v) for v in parts[3:]])
            if split not in splits:
                raise ValueError(f"unknown split tag {split!r}")
            splits[split].append(Sample(x=x, label=label, is_id=is_id))
    return OpenSetDataset(spec=spec, labeled=splits["labeled"],
                          unlabeled=splits["unlabeled"],
                          test_id=splits["test_id"], test_ood=splits["test_ood"])
