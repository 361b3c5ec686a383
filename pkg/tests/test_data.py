import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histonorm.color_math import save_rgb
from histonorm.errors import BadPatchSize, BatchTooSmall, EmptyClass
from histonorm.pipeline.data import (
    Dataset,
    LabeledPatch,
    balanced_counts,
    load_dataset,
    rotate90,
    rotations_of,
    sample_balanced_batch,
    save_dataset,
)


def tiny_dataset(k=9, per_class=3, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(k * per_class, 150, 150, 3), dtype=np.uint8)
    labels = np.repeat(np.arange(k), per_class)
    return Dataset(images, labels, [f"c{i}" for i in range(k)])


def test_256_over_9_classes():
    counts = balanced_counts(256, 9, np.random.default_rng(0))
    assert counts.sum() == 256
    assert sorted(set(counts.tolist())) == [28, 29]
    assert (counts == 29).sum() == 4


@settings(max_examples=200)
@given(st.integers(2, 12), st.integers(0, 300), st.integers(0, 2**32 - 1))
def test_counts_spread_at_most_one(k, extra, seed):
    counts = balanced_counts(k + extra, k, np.random.default_rng(seed))
    assert counts.sum() == k + extra and counts.max() - counts.min() <= 1


def test_remainder_classes_are_spread_uniformly():
    rng = np.random.default_rng(0)
    hits = sum((balanced_counts(256, 9, rng) == 29).astype(int) for _ in range(9000))
    assert np.all(np.abs(hits - 4000) < 250)


def test_batch_of_k_has_one_per_class():
    ds = tiny_dataset()
    images, labels = sample_balanced_batch(ds, 9, np.random.default_rng(0))
    assert sorted(labels.tolist()) == list(range(9))
    assert images.shape == (9, 150, 150, 3)


def test_batch_too_small():
    with pytest.raises(BatchTooSmall):
        sample_balanced_batch(tiny_dataset(), 5, np.random.default_rng(0))


def test_batches_come_from_their_class():
    ds = tiny_dataset(k=3, per_class=4)
    images, labels = sample_balanced_batch(ds, 30, np.random.default_rng(1))
    for img, lab in zip(images, labels):
        members = ds.images[ds.labels == lab]
        assert any(np.array_equal(np.rot90(img, -k, axes=(0, 1)), m) for m in members for k in range(4))


def test_augmentation_uses_all_rotations():
    ds = tiny_dataset(k=2, per_class=1)
    images, _ = sample_balanced_batch(ds, 200, np.random.default_rng(2))
    seen = set()
    for img in images[:100]:
        seen |= {k for k in range(4) if np.array_equal(np.rot90(ds.images[0], k, axes=(0, 1)), img)}
    assert seen == {0, 1, 2, 3}


def test_no_augmentation_returns_originals():
    ds = tiny_dataset(k=2, per_class=1)
    images, labels = sample_balanced_batch(ds, 10, np.random.default_rng(3), augment=False)
    assert all(np.array_equal(img, ds.images[lab]) for img, lab in zip(images, labels))


def test_sampling_is_deterministic():
    ds = tiny_dataset()
    a = sample_balanced_batch(ds, 64, np.random.default_rng(5))
    b = sample_balanced_batch(ds, 64, np.random.default_rng(5))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_four_quarter_turns_are_identity():
    patch = tiny_dataset().patch(4)
    img = patch.image
    for _ in range(4):
        img = rotate90(img)
    assert np.array_equal(img, patch.image)


def test_rotations_of_patch():
    patch = tiny_dataset().patch(0)
    rots = rotations_of(patch)
    assert len(rots) == 4 and all(r.label == patch.label for r in rots)
    assert np.array_equal(rots[0].image, patch.image)
    assert np.array_equal(rots[1].image, np.rot90(patch.image))
    const = LabeledPatch(np.full((150, 150, 3), 77, np.uint8), 1)
    assert all(np.array_equal(r.image, const.image) for r in rotations_of(const))


def test_rotation_pool_is_fourfold():
    ds = tiny_dataset(k=2, per_class=5)
    pool = [r for i in range(len(ds)) for r in rotations_of(ds.patch(i))]
    assert len(pool) == 4 * len(ds)


def test_dataset_validation():
    with pytest.raises(EmptyClass):
        Dataset(np.zeros((2, 150, 150, 3), np.uint8), [0, 0], ["a", "b"])
    with pytest.raises(BadPatchSize):
        Dataset(np.zeros((2, 100, 100, 3), np.uint8), [0, 1], ["a", "b"])
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 150, 150, 3), np.uint8), [0, 1], ["a"])


def test_split_holds_out_per_class():
    ds = tiny_dataset(k=3, per_class=10)
    rest, held = ds.split(4, seed=0)
    assert np.bincount(held.labels).tolist() == [4, 4, 4]
    assert len(rest) + len(held) == len(ds)
    r2, h2 = ds.split(4, seed=0)
    assert np.array_equal(held.images, h2.images)


def test_directory_round_trip(tmp_path):
    ds = tiny_dataset(k=3, per_class=2)
    ds.slides = np.array([0, 1, 0, 1, 1, 1])
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.class_names == ["c0", "c1", "c2"]
    assert len(back) == 6
    for c in range(3):
        got = {img.tobytes() for img in back.images[back.labels == c]}
        assert got == {img.tobytes() for img in ds.images[ds.labels == c]}
    assert sorted(back.slides.tolist()) == sorted(ds.slides.tolist())


def test_load_nine_classes_of_ten(tmp_path):
    img = np.zeros((150, 150, 3), np.uint8)
    for c in range(9):
        (tmp_path / f"class{c}").mkdir()
        for j in range(10):
            save_rgb(img, tmp_path / f"class{c}" / f"{j}.png")
    ds = load_dataset(tmp_path)
    assert ds.num_classes == 9 and len(ds) == 90 and ds.slides is None


def test_bad_patch_size_names_file(tmp_path):
    for c in "ab":
        (tmp_path / c).mkdir()
        save_rgb(np.zeros((150, 150, 3), np.uint8), tmp_path / c / "ok.png")
    save_rgb(np.zeros((100, 100, 3), np.uint8), tmp_path / "b" / "small.png")
    with pytest.raises(BadPatchSize, match="small.png"):
        load_dataset(tmp_path)


def test_empty_class_directory(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    save_rgb(np.zeros((150, 150, 3), np.uint8), tmp_path / "a" / "x.png")
    with pytest.raises(EmptyClass):
        load_dataset(tmp_path)
