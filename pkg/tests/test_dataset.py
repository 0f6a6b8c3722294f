"""Dataset generation, persistence, splitting, and iteration."""

import zlib

import numpy as np
import pytest

from burstnet.dataset import (
    BatchIterator,
    DatasetConfig,
    DatasetError,
    generate_dataset,
    load_all,
    load_manifest,
    read_shard,
    split,
    to_tensor,
)


def small_config(kind="adsb", seed=7, **kw):
    base = dict(
        burst_kind=kind,
        num_classes=4,
        per_class_range=(8, 12),
        test_per_class=3,
        sample_len=1300,
        seed=seed,
    )
    base.update(kw)
    return DatasetConfig(**base)


@pytest.fixture(scope="module")
def gen(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    cfg = small_config()
    return cfg, generate_dataset(cfg, root), root


def test_rejects_empty_training_class():
    with pytest.raises(DatasetError, match="empty training class"):
        small_config(per_class_range=(3, 12), test_per_class=3)


def test_counts_within_range(gen):
    cfg, manifest, _ = gen
    assert len(manifest.per_class_counts) == 4
    assert all(8 <= c <= 12 for c in manifest.per_class_counts)
    assert manifest.total_samples == sum(manifest.per_class_counts)


def test_regeneration_identical_checksums(tmp_path):
    cfg = small_config(num_classes=3, per_class_range=(5, 7), test_per_class=2)
    m1 = generate_dataset(cfg, tmp_path / "a")
    cfg2 = small_config(num_classes=3, per_class_range=(5, 7), test_per_class=2)
    m2 = generate_dataset(cfg2, tmp_path / "b")
    assert [c.checksum for c in m1.classes] == [c.checksum for c in m2.classes]
    assert (tmp_path / "a" / "class_0000.bin").read_bytes() == (
        tmp_path / "b" / "class_0000.bin"
    ).read_bytes()


def test_different_seed_different_data(tmp_path):
    cfg1 = small_config(num_classes=2, per_class_range=(5, 5), test_per_class=2, seed=1)
    cfg2 = small_config(num_classes=2, per_class_range=(5, 5), test_per_class=2, seed=2)
    m1 = generate_dataset(cfg1, tmp_path / "s1")
    m2 = generate_dataset(cfg2, tmp_path / "s2")
    assert [c.checksum for c in m1.classes] != [c.checksum for c in m2.classes]


def test_manifest_round_trip(gen):
    cfg, manifest, root = gen
    loaded = load_manifest(root)
    assert loaded.to_json() == manifest.to_json()
    assert loaded.dataset_seed == cfg.seed


def test_shard_checksums_match_manifest(gen):
    _, manifest, root = gen
    for entry in manifest.classes:
        blob = (root / entry.shard).read_bytes()
        assert zlib.crc32(blob[16:]) == entry.checksum


def test_shard_read_write_round_trip(gen):
    _, manifest, root = gen
    rec = read_shard(root / manifest.classes[0].shard)
    assert rec.shape == (manifest.classes[0].count, 1300)
    assert rec.dtype == np.complex64


def test_corrupted_shard_rejected(gen, tmp_path):
    _, manifest, root = gen
    blob = (root / manifest.classes[0].shard).read_bytes()
    bad = tmp_path / "bad.bin"
    bad.write_bytes(blob[:-7])
    with pytest.raises(DatasetError, match="corrupted"):
        read_shard(bad)


def test_split_stratified_disjoint_exhaustive(gen):
    _, manifest, _ = gen
    train, test = split(manifest)
    assert set(train) & set(test) == set()
    assert sorted(train + test) == list(range(manifest.total_samples))
    _, labels = load_all(manifest)
    for cid in range(manifest.num_classes):
        assert int((labels[test] == cid).sum()) == manifest.test_per_class


def test_split_smallest_category(tmp_path):
    # a 60-sample class with 40 test samples leaves 20 for training
    cfg = small_config(num_classes=2, per_class_range=(60, 60), test_per_class=40,
                       sample_len=256)
    manifest = generate_dataset(cfg, tmp_path / "sixty")
    train, test = split(manifest)
    _, labels = load_all(manifest)
    assert int((labels[train] == 0).sum()) == 20
    assert int((labels[test] == 0).sum()) == 40


def test_split_deterministic(gen):
    _, manifest, _ = gen
    assert split(manifest) == split(manifest)


def test_tensor_shape_and_fidelity(gen):
    _, manifest, _ = gen
    records, _ = load_all(manifest)
    x = to_tensor(records[:5])
    assert x.shape == (5, 2, 1300)
    np.testing.assert_array_equal(x[:, 0], records[:5].real.astype(np.float64))
    np.testing.assert_array_equal(x[:, 1], records[:5].imag.astype(np.float64))


def test_batch_iterator_epoch_partition(gen):
    _, manifest, _ = gen
    it = BatchIterator(manifest, "train", batch_size=7, shuffle_seed=3)
    n_train = manifest.total_samples - manifest.num_classes * manifest.test_per_class
    seen = []
    sizes = []
    for x, y in it.epoch_batches():
        sizes.append(len(y))
        seen.extend(y.tolist())
    assert sum(sizes) == n_train
    assert all(s == 7 for s in sizes[:-1])
    # one epoch's labels are a permutation of the train labels
    _, labels = load_all(manifest)
    train_idx, _ = split(manifest)
    assert sorted(seen) == sorted(labels[train_idx].tolist())


def test_batch_iterator_seed_reproducible(gen):
    _, manifest, _ = gen
    a = BatchIterator(manifest, "train", 5, shuffle_seed=11)
    b = BatchIterator(manifest, "train", 5, shuffle_seed=11)
    for _ in range(4):
        xa, ya = a.next_batch()
        xb, yb = b.next_batch()
        np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(ya, yb)


def test_acars_generation(tmp_path):
    cfg = small_config(kind="acars", num_classes=2, per_class_range=(4, 4),
                       test_per_class=1, sample_len=1024)
    manifest = generate_dataset(cfg, tmp_path / "ac")
    records, labels = load_all(manifest)
    assert records.shape == (8, 1024)
    # cropped MSK bursts keep near-unit power
    p = np.mean(np.abs(records) ** 2, axis=1)
    assert p.min() > 0.5 and p.max() < 2.0


def test_snr_policy_adds_noise(tmp_path):
    clean = generate_dataset(
        small_config(num_classes=2, per_class_range=(3, 3), test_per_class=1),
        tmp_path / "clean",
    )
    noisy = generate_dataset(
        small_config(num_classes=2, per_class_range=(3, 3), test_per_class=1,
                     snr_range_db=(0.0, 5.0)),
        tmp_path / "noisy",
    )
    xc, _ = load_all(clean)
    xn, _ = load_all(noisy)
    assert np.abs(xc - xn).max() > 1e-3
