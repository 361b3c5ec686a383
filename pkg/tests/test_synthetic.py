import numpy as np
import pytest

from histonorm.pipeline.synthetic import (
    DEFAULT_TEXTURE_ORDER,
    REFERENCE_BASIS,
    SHIFTED_BASIS,
    TEXTURES,
    SyntheticConfig,
    generate_synthetic_dataset,
    jitter_basis,
    render_stains,
    stain_shift_benchmark,
    synthetic_tile,
)
from histonorm.stain_norm import angle_between, estimate_stain_basis


def test_same_seed_same_dataset():
    cfg = SyntheticConfig(classes=3, patches_per_class=4, seed=11)
    a, b = generate_synthetic_dataset(cfg), generate_synthetic_dataset(cfg)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, generate_synthetic_dataset(SyntheticConfig(3, 4, seed=12)).images)


def test_noiseless_background_is_white():
    ds = generate_synthetic_dataset(SyntheticConfig(classes=2, patches_per_class=3, noise_sd=0.0))
    assert ds.class_names[0] == "background"
    assert np.all(ds.images[ds.labels == 0] == 255)


def test_render_matches_beer_lambert_by_hand():
    conc = np.array([[[0.5, 0.25]]])
    expected = np.floor(255 * 10 ** -(0.5 * REFERENCE_BASIS.h_vector + 0.25 * REFERENCE_BASIS.e_vector) + 0.5)
    assert render_stains(conc, REFERENCE_BASIS)[0, 0].tolist() == expected.tolist()


def test_estimation_recovers_rendering_basis():
    basis = REFERENCE_BASIS
    names = ("nuclei", "stroma", "lymphocytes", "debris")
    tile = synthetic_tile(np.arange(4).reshape(2, 2), names, basis, seed=3)
    est = estimate_stain_basis(tile)
    assert angle_between(est.h_vector, basis.h_vector) < 2.0
    assert angle_between(est.e_vector, basis.e_vector) < 2.0


def test_textures_are_distinct():
    rng = np.random.default_rng(0)
    fields = {name: fn(rng) for name, fn in TEXTURES.items()}
    assert all(f.shape == (150, 150, 2) and np.all(f >= 0) for f in fields.values())
    means = {name: tuple(np.round(f.mean(axis=(0, 1)), 2)) for name, f in fields.items()}
    assert len(set(means.values())) == len(means)


def test_slides_get_distinct_bases():
    cfg = SyntheticConfig(classes=2, patches_per_class=6, slides=3, basis_jitter_deg=5.0, noise_sd=0.0)
    ds = generate_synthetic_dataset(cfg)
    assert sorted(set(ds.slides.tolist())) == [0, 1, 2]
    assert np.bincount(ds.slides).tolist() == [4, 4, 4]


def test_jitter_stays_within_bound():
    rng = np.random.default_rng(0)
    for _ in range(20):
        b = jitter_basis(SHIFTED_BASIS, 4.0, rng)
        assert angle_between(b.h_vector, SHIFTED_BASIS.h_vector) <= 4.0 + 1e-9
        assert angle_between(b.e_vector, SHIFTED_BASIS.e_vector) <= 4.0 + 1e-9


def test_config_validation():
    with pytest.raises(ValueError):
        generate_synthetic_dataset(SyntheticConfig(classes=1))
    with pytest.raises(ValueError):
        SyntheticConfig(classes=2, textures=("nuclei", "nope")).texture_names()
    with pytest.raises(ValueError):
        SyntheticConfig(classes=3, textures=("nuclei", "stroma")).texture_names()


def test_stain_shift_benchmark_layout():
    bench = stain_shift_benchmark(seed=3, patches_per_class=4, test_per_class=2)
    assert bench.train.images.shape == (24, 150, 150, 3) and bench.test.images.shape == (12, 150, 150, 3)
    assert bench.train.class_names == bench.test.class_names == list(DEFAULT_TEXTURE_ORDER)
    assert sorted(set(bench.train.slides.tolist())) == [0, 1, 2, 3]
    # the test lab stains darker than the training lab
    assert bench.test.images.mean() < bench.train.images.mean()
    again = stain_shift_benchmark(seed=3, patches_per_class=4, test_per_class=2)
    assert np.array_equal(again.test.images, bench.test.images) and again.template == bench.template
    control = stain_shift_benchmark(seed=3, shift=False, patches_per_class=4, test_per_class=2)
    assert control.template == bench.template and np.array_equal(control.train.images, bench.train.images)
