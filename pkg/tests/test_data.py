import dataclasses

import numpy as np
import pytest

from osslab.data import (
    AugmentConfig, BatchPair, DatasetSpec, InfeasibleSpecError, OOD_LABEL, Sample,
    batches, export_dataset, generate, import_dataset, strong_augment, weak_augment,
)


def make_spec(**kw):
    base = dict(input_dim=6, num_id_classes=4, num_ood_clusters=4,
                samples_per_class=50, labeled_per_class=10, ood_fraction=0.5,
                cluster_spread=0.5, cluster_separation=4.0, seed=7)
    base.update(kw)
    return DatasetSpec(**base)


class TestSpecValidation:
    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError):
            make_spec(ood_fraction=0.0)
        with pytest.raises(ValueError):
            make_spec(ood_fraction=1.0)

    def test_rejects_too_many_labels(self):
        with pytest.raises(ValueError):
            make_spec(labeled_per_class=51)

    def test_sample_consistency(self):
        with pytest.raises(ValueError):
            Sample(x=np.zeros(3), label=2, is_id=False)


class TestGenerate:
    def test_ood_fraction_within_one_sample(self):
        ds = generate(make_spec())
        n_ood = sum(not s.is_id for s in ds.unlabeled)
        assert abs(n_ood - 0.5 * len(ds.unlabeled)) <= 1

    def test_determinism_bitwise(self):
        a, b = generate(make_spec()), generate(make_spec())
        assert all(np.array_equal(x.x, y.x) for x, y in zip(a.unlabeled, b.unlabeled))
        assert [s.label for s in a.labeled] == [s.label for s in b.labeled]

    def test_labeled_class_balance(self):
        ds = generate(make_spec())
        labels = [s.label for s in ds.labeled]
        for c in range(4):
            assert labels.count(c) == 10

    def test_separable_spec_nearest_center_is_perfect(self):
        # oracle: brute-force 1-nearest-center on empirical class centers
        ds = generate(make_spec(cluster_spread=0.1, cluster_separation=10.0))
        centers = np.stack([
            np.mean([s.x for s in ds.labeled if s.label == c], axis=0)
            for c in range(4)])
        hits = 0
        for s in ds.test_id:
            d = np.linalg.norm(centers - s.x, axis=1)
            hits += int(np.argmin(d) == s.label)
        assert hits == len(ds.test_id)

    def test_infeasible_spec_raises(self):
        with pytest.raises(InfeasibleSpecError):
            generate(make_spec(input_dim=1, num_id_classes=40, num_ood_clusters=40,
                               cluster_separation=1e6))

    def test_unlabeled_contains_labeled_copies(self):
        ds = generate(make_spec())
        assert len(ds.unlabeled) >= len(ds.labeled)
        n_unl_id = sum(s.is_id for s in ds.unlabeled)
        assert n_unl_id == 4 * 50


class TestAugment:
    def test_weak_zero_sigma_is_identity(self, rng):
        x = rng.normal(size=6)
        assert np.array_equal(weak_augment(x, rng, sigma=0.0), x)

    def test_weak_jitter_mean(self, rng):
        # Monte Carlo: empirical mean within 3 sigma / sqrt(N) per coordinate
        x = rng.normal(size=4)
        sigma = 0.3
        n = 10_000
        draws = np.stack([weak_augment(x, rng, sigma) for _ in range(n)])
        assert np.all(np.abs(draws.mean(axis=0) - x) < 3 * sigma / np.sqrt(n))

    def test_strong_identity_and_zero(self, rng):
        x = rng.normal(size=6)
        assert np.array_equal(strong_augment(x, rng, sigma=0.0, p_drop=0.0), x)
        assert np.array_equal(strong_augment(x, rng, sigma=0.0, p_drop=1.0),
                              np.zeros(6))

    def test_strong_dropout_rate(self, rng):
        x = np.ones(8)
        p = 0.2
        n = 10_000
        zeroed = sum((strong_augment(x, rng, sigma=0.0, p_drop=p) == 0).sum()
                     for _ in range(n))
        frac = zeroed / (n * 8)
        assert abs(frac - p) < 3 * np.sqrt(p * (1 - p) / (n * 8))

    def test_preserves_shape(self, rng):
        x = rng.normal(size=9)
        assert weak_augment(x, rng, 0.1).shape == x.shape
        assert strong_augment(x, rng, 0.5, 0.2).shape == x.shape


class TestBatches:
    def setup_method(self):
        self.ds = generate(make_spec())
        self.aug = AugmentConfig(sigma_weak=0.05, sigma_strong=0.25)

    def test_batch_sizes(self):
        it = batches(self.ds, B=4, mu=2, seed=1, augment=self.aug)
        b = next(it)
        assert b.labeled_weak.shape == (4, 6)
        assert b.labels.shape == (4,)
        assert b.unlabeled_weak.shape == (8, 6)
        assert b.unlabeled_strong.shape == (8, 6)

    def test_determinism(self):
        a = batches(self.ds, B=4, mu=2, seed=1, augment=self.aug)
        b = batches(self.ds, B=4, mu=2, seed=1, augment=self.aug)
        for _ in range(5):
            x, y = next(a), next(b)
            assert np.array_equal(x.labeled_weak, y.labeled_weak)
            assert np.array_equal(x.unlabeled_strong, y.unlabeled_strong)

    def test_every_labeled_sample_seen_each_epoch(self):
        # count label multiset over exactly one epoch of labeled draws
        it = batches(self.ds, B=8, mu=1, seed=3, augment=self.aug)
        n_lab = len(self.ds.labeled)
        seen = []
        for _ in range(n_lab // 8):
            seen.extend(next(it).labels.tolist())
        # every class appears exactly labeled_per_class times per epoch
        for c in range(4):
            assert seen.count(c) == 10

    def test_no_identity_leakage(self):
        # the training-path batch object must not expose unlabeled identity
        fields = {f.name for f in dataclasses.fields(BatchPair)}
        assert fields == {"labeled_weak", "labels", "unlabeled_weak", "unlabeled_strong"}

    def test_empty_or_oversized_rejected(self):
        with pytest.raises(ValueError):
            next(batches(self.ds, B=1000, mu=1, seed=0, augment=self.aug))


def test_export_import_roundtrip(tmp_path):
    ds = generate(make_spec())
    path = tmp_path / "ds.txt"
    export_dataset(ds, str(path))
    back = import_dataset(str(path))
    assert len(back.labeled) == len(ds.labeled)
    assert len(back.test_ood) == len(ds.test_ood)
    for a, b in zip(ds.unlabeled, back.unlabeled):
        assert np.array_equal(a.x, b.x)
        assert a.label == b.label and a.is_id == b.is_id
