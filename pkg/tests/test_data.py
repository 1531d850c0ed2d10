import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unipool.data import (DataError, Dataset, SyntheticSpec, batches, channel_stats, cifar_batch_bytes,
                          export_cifar_layout, load_cifar10, load_cifar_dir, read_cifar_batch, record_length,
                          subset, synthetic, synthetic_splits, write_cifar_batch)


def test_record_layout(tmp_path, rng):
    raw = rng.integers(0, 256, size=(3, 3, 32, 32), dtype=np.uint8)
    labels = np.array([0, 9, 4])
    blob = cifar_batch_bytes(raw, labels)
    assert len(blob) == 3 * record_length() == 3 * 3073
    assert blob[0] == 0 and blob[3073] == 9
    # channel-major: the first 1024 pixel bytes of a record are its red plane
    assert blob[1:1025] == raw[0, 0].tobytes()


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 20), size=st.sampled_from([4, 8, 32]), seed=st.integers(0, 2**31 - 1))
def test_batch_file_round_trip(tmp_path_factory, n, size, seed):
    r = np.random.default_rng(seed)
    raw = r.integers(0, 256, size=(n, 3, size, size), dtype=np.uint8)
    labels = r.integers(0, 10, n)
    path = write_cifar_batch(tmp_path_factory.mktemp("b") / "x.bin", raw, labels)
    raw2, labels2 = read_cifar_batch(path, size)
    np.testing.assert_array_equal(raw2, raw)
    np.testing.assert_array_equal(labels2, labels)
    assert cifar_batch_bytes(raw2, labels2) == path.read_bytes()


def test_truncated_batch_is_an_error(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00" * 3000)
    with pytest.raises(DataError, match="records"):
        read_cifar_batch(bad)
    with pytest.raises(DataError, match="missing"):
        read_cifar_batch(tmp_path / "nope.bin")


def test_cifar10_loader_checks_files(tmp_path):
    with pytest.raises(DataError, match="missing CIFAR-10 file"):
        load_cifar10(tmp_path)
    spec = SyntheticSpec(10, 2, 32, 0.0)
    train, test = synthetic_splits(spec)
    export_cifar_layout(train, test, tmp_path, n_train_files=5)
    with pytest.raises(DataError, match="expected"):
        load_cifar10(tmp_path)


def test_synthetic_export_round_trip(tmp_path):
    train, test = synthetic_splits(SyntheticSpec(4, 6, 16, 0.1, seed=3), test_per_class=3)
    export_cifar_layout(train, test, tmp_path, n_train_files=2)
    train2, test2 = load_cifar_dir(tmp_path, image_size=16)
    np.testing.assert_array_equal(train2.raw, train.raw)
    np.testing.assert_array_equal(test2.labels, test.labels)
    assert train2.class_names == train.class_names
    np.testing.assert_allclose(test2.mean, train.mean, rtol=0, atol=1e-15)


def test_missing_directory(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        load_cifar_dir(tmp_path / "absent")
    with pytest.raises(DataError, match="no training batches"):
        load_cifar_dir(tmp_path)


# ----------------------------------------------------------------- synthetic stripes

def test_noise_free_samples_of_a_class_are_identical():
    ds = synthetic(SyntheticSpec(4, 5, 16, 0.0))
    for k in range(4):
        group = ds.raw[ds.labels == k]
        assert all(np.array_equal(group[0], g) for g in group)
    assert not np.array_equal(ds.raw[ds.labels == 0][0], ds.raw[ds.labels == 1][0])


def test_synthetic_is_seeded():
    a = synthetic(SyntheticSpec(seed=1))
    b = synthetic(SyntheticSpec(seed=1))
    c = synthetic(SyntheticSpec(seed=2))
    np.testing.assert_array_equal(a.raw, b.raw)
    assert not np.array_equal(a.raw, c.raw)
    np.testing.assert_array_equal(a.labels, c.labels)


def test_train_and_test_noise_differ():
    train, test = synthetic_splits(SyntheticSpec(4, 8, 16, 0.1))
    assert not np.array_equal(train.raw[:8], test.raw[:8])
    np.testing.assert_array_equal(test.mean, train.mean)


def test_least_squares_classifier_separates_noisy_stripes():
    train, test = synthetic_splits(SyntheticSpec(4, 64, 32, 0.1, seed=0), test_per_class=64)
    x = train.images.reshape(len(train), -1)
    x = np.hstack([x, np.ones((len(x), 1))])
    targets = np.eye(4)[train.labels]
    w, *_ = np.linalg.lstsq(x, targets, rcond=None)
    xt = np.hstack([test.images.reshape(len(test), -1), np.ones((len(test), 1))])
    acc = float(((xt @ w).argmax(axis=1) == test.labels).mean())
    assert acc >= 0.9


def test_normalized_training_mean_is_zero():
    train, _ = synthetic_splits(SyntheticSpec(4, 16, 16, 0.1))
    imgs = train.images
    np.testing.assert_allclose(imgs.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
    np.testing.assert_allclose(imgs.std(axis=(0, 2, 3)), 1.0, atol=1e-6)


def test_channel_stats_chunking_is_exact(rng):
    raw = rng.integers(0, 256, size=(37, 3, 4, 4), dtype=np.uint8)
    m1, s1 = channel_stats(raw, chunk=5)
    m2, s2 = channel_stats(raw, chunk=1000)
    np.testing.assert_allclose(m1, m2, rtol=1e-14)
    np.testing.assert_allclose(s1, s2, rtol=1e-12)
    np.testing.assert_allclose(m1, (raw / 255.0).mean(axis=(0, 2, 3)), rtol=1e-13)


def test_invalid_spec():
    with pytest.raises(ValueError):
        SyntheticSpec(num_classes=1)
    with pytest.raises(ValueError):
        SyntheticSpec(noise_std=-0.1)


def test_dataset_validation():
    with pytest.raises(DataError, match="labels outside"):
        Dataset(np.zeros((2, 3, 2, 2)), [0, 2], ["a", "b"])
    with pytest.raises(DataError, match="labels"):
        Dataset(np.zeros((2, 3, 2, 2)), [0], ["a", "b"])


# ----------------------------------------------------------------- batching

@settings(max_examples=20, deadline=None)
@given(n_per=st.integers(1, 10), batch=st.integers(1, 40), seed=st.integers(0, 1000))
def test_epoch_covers_every_sample_once(n_per, batch, seed):
    ds = synthetic(SyntheticSpec(4, n_per, 4, 0.1, seed))
    batch = min(batch, len(ds))
    seen = []
    for x, y in batches(ds, batch, shuffle_seed=seed):
        assert len(y) <= batch
        seen.append(x.data.reshape(len(y), -1))
    images = np.concatenate(seen)
    assert len(images) == len(ds)
    ref = ds.images.reshape(len(ds), -1)
    assert sorted(map(bytes, images)) == sorted(map(bytes, ref))


def test_equal_seeds_give_equal_order():
    ds = synthetic(SyntheticSpec(4, 8, 4, 0.1))
    a = [y.tolist() for _, y in batches(ds, 5, shuffle_seed=7)]
    b = [y.tolist() for _, y in batches(ds, 5, shuffle_seed=7)]
    c = [y.tolist() for _, y in batches(ds, 5, shuffle_seed=8)]
    assert a == b != c


def test_generator_seed_is_consumed():
    ds = synthetic(SyntheticSpec(4, 8, 4, 0.1))
    rng = np.random.default_rng(0)
    first = [y.tolist() for _, y in batches(ds, 32, shuffle_seed=rng)]
    second = [y.tolist() for _, y in batches(ds, 32, shuffle_seed=rng)]
    assert first != second


def test_oversized_batch_is_an_error():
    ds = synthetic(SyntheticSpec(4, 2, 4, 0.1))
    with pytest.raises(DataError, match="batch_size"):
        next(batches(ds, 9))


def test_augmentation_keeps_shapes():
    ds = synthetic(SyntheticSpec(4, 2, 8, 0.1))
    x, y = next(batches(ds, 8, shuffle_seed=0, augment=True))
    assert x.shape == (8, 3, 8, 8)


def test_stratified_subset():
    ds = synthetic(SyntheticSpec(4, 10, 4, 0.1))
    sub = subset(ds, 3, seed=1)
    assert np.bincount(sub.labels).tolist() == [3, 3, 3, 3]
    np.testing.assert_array_equal(sub.mean, ds.mean)
    with pytest.raises(DataError, match="fewer"):
        subset(ds, 11)
