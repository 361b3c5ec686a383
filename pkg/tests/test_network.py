import numpy as np
import pytest

from histonorm.convnet.network import (
    CANONICAL_WIDTHS,
    Conv,
    MaxPool,
    NetworkParams,
    build_network,
    canonical_spec,
    dense_forward,
    forward,
    init_params,
    loss_and_gradient,
    output_size,
    receptive_field,
)
from histonorm.errors import InputTooSmall, InvalidClassCount

from oracles import check_network_gradient

SMALL = (2, 3, 4, 4, 8, 6)


def small_net(num_classes=3, seed=0, dtype=np.float32, widths=SMALL):
    return build_network(num_classes, seed=seed, widths=widths, dtype=dtype)


def lively(params, rng, scale=0.05):
    """Random non-zero biases so few ReLUs are dead in a gradient check."""
    return NetworkParams(params.kernels, [rng.normal(0, scale, b.shape) + scale for b in params.biases])


def test_canonical_layer_table():
    spec = canonical_spec(9)
    convs = spec.conv_layers
    assert len(convs) == 7
    assert [(c.kernel, c.out_channels, c.padding) for c in convs] == [
        (5, 32, "same"), (5, 64, "same"), (3, 128, "same"), (3, 256, "same"),
        (9, 1024, "valid"), (1, 512, "valid"), (1, 9, "valid"),
    ]
    assert [c.relu for c in convs] == [True] * 6 + [False]
    assert sum(isinstance(layer, MaxPool) for layer in spec.layers) == 4
    assert spec.widths == CANONICAL_WIDTHS


def test_parameter_count_for_nine_classes():
    spec, params = build_network(9, seed=0)
    by_layer = (
        5 * 5 * 3 * 32 + 32,
        5 * 5 * 32 * 64 + 64,
        3 * 3 * 64 * 128 + 128,
        3 * 3 * 128 * 256 + 256,
        9 * 9 * 256 * 1024 + 1024,
        1 * 1 * 1024 * 512 + 512,
        1 * 1 * 512 * 9 + 9,
    )
    assert [k.size + b.size for k, b in zip(params.kernels, params.biases)] == list(by_layer)
    assert params.num_parameters == sum(by_layer) == 22_186_825
    assert [k.shape for k in params.kernels] == spec.kernel_shapes()


def test_he_initialization():
    _, params = build_network(9, seed=1)
    k = params.kernels[4]  # 9x9x256 fan-in, 1024 outputs: plenty of samples
    assert abs(k.mean()) < 1e-3
    assert k.var() == pytest.approx(2.0 / (9 * 9 * 256), rel=0.02)
    assert all(not b.any() for b in params.biases)


def test_same_seed_same_params():
    a, b = small_net(seed=3)[1], small_net(seed=3)[1]
    assert a.equals(b)
    assert not a.equals(small_net(seed=4)[1])


def test_one_class_rejected():
    with pytest.raises(InvalidClassCount):
        build_network(1, seed=0)


@pytest.mark.parametrize("size,grid", [(150, 1), (151, 1), (166, 2), (175, 2), (176, 3), (5000, 304)])
def test_output_size_recurrence(size, grid):
    assert output_size(canonical_spec(9), size) == grid


def test_receptive_field():
    stride, left, right = receptive_field(canonical_spec(9))
    assert stride == 16
    # the cell of a 150x150 patch sees the whole patch
    assert left + right + 1 >= 150 and left <= 18


def test_patch_gives_one_probability_vector():
    spec, params = build_network(9, seed=0)
    x = np.random.default_rng(0).random((150, 150, 3))
    p = forward(spec, params, x)
    assert p.shape == (1, 1, 1, 9)
    assert p.sum() == pytest.approx(1.0, abs=1e-6)
    assert np.all((p >= 0) & (p <= 1))


def test_166_gives_two_by_two():
    spec, params = build_network(9, seed=0)
    p = forward(spec, params, np.random.default_rng(0).random((166, 166, 3)))
    assert p.shape == (1, 2, 2, 9)
    assert np.allclose(p.sum(-1), 1.0, atol=1e-6)


def test_too_small_input():
    spec, params = small_net()
    with pytest.raises(InputTooSmall):
        forward(spec, params, np.zeros((149, 200, 3)))
    with pytest.raises(InputTooSmall):
        dense_forward(spec, params, np.zeros((200, 100, 3)))


def test_forward_is_pure_and_batch_independent():
    spec, params = small_net()
    x = np.random.default_rng(1).random((4, 150, 150, 3)).astype(np.float32)
    first = forward(spec, params, x[2])
    assert np.array_equal(first, forward(spec, params, x[2]))
    assert np.array_equal(first[0], forward(spec, params, x)[2])
    assert np.array_equal(first[0], forward(spec, params, x[1:3])[1])


def test_loss_of_uniform_prediction_is_log_k():
    spec, params = small_net(num_classes=9)
    zero = NetworkParams([np.zeros_like(k) for k in params.kernels], [np.zeros_like(b) for b in params.biases])
    loss, _ = loss_and_gradient(spec, zero, np.zeros((2, 150, 150, 3)), np.array([0, 4]))
    assert loss == pytest.approx(np.log(9), abs=1e-6)


def test_loss_near_zero_for_confident_correct_prediction():
    spec, params = small_net(num_classes=3, dtype=np.float64)
    params = params.zeros_like()
    params.biases[-1][:] = [200.0, 0.0, 0.0]
    loss, _ = loss_and_gradient(spec, params, np.zeros((1, 150, 150, 3)), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_full_network_gradient_check():
    rng = np.random.default_rng(0)
    spec, params = small_net(num_classes=3, dtype=np.float64)
    params = lively(params, rng)
    batch = rng.random((2, 150, 150, 3))
    errors, _ = check_network_gradient(spec, params, batch, np.array([0, 2]), 16, rng)
    assert len(errors) >= 100
    assert max(errors) < 1e-3


def test_gradient_check_on_a_two_by_two_grid():
    rng = np.random.default_rng(1)
    spec, params = small_net(num_classes=3, dtype=np.float64)
    params = lively(params, rng)
    errors, _ = check_network_gradient(spec, params, rng.random((1, 166, 166, 3)), np.array([1]), 4, rng)
    assert len(errors) >= 20
    assert max(errors) < 1e-3


def test_gradient_shapes_and_dtype():
    spec, params = small_net()
    loss, grads = loss_and_gradient(spec, params, np.zeros((3, 150, 150, 3), np.float32), np.array([0, 1, 2]))
    assert [g.shape for g in grads.arrays()] == [p.shape for p in params.arrays()]
    assert grads.dtype == np.float32


def test_dense_blocks_match_whole_image():
    spec, params = small_net(seed=5)
    rng = np.random.default_rng(2)
    params = lively(params, rng)
    img = rng.random((420, 390, 3)).astype(np.float32)
    whole = forward(spec, params, img)[0]
    for block in (1, 3, 7, 64):
        assert np.allclose(dense_forward(spec, params, img, block_cells=block), whole, atol=1e-6)


def test_translation_by_one_stride_shifts_grid_by_one_cell():
    spec, params = small_net(seed=6)
    rng = np.random.default_rng(3)
    params = lively(params, rng)
    img = rng.random((400, 400, 3)).astype(np.float32)
    base = forward(spec, params, img[16:])[0]
    full = forward(spec, params, img)[0]
    # cell k of the cropped image is cell k + 1 of the full one; only the top
    # rows differ, where the crop's receptive fields reach into zero padding
    assert base.shape[0] == full.shape[0] - 1
    assert np.allclose(full[3:], base[2:], atol=1e-5)
    assert not np.allclose(full[1], base[0], atol=1e-5)


def test_custom_widths_follow_the_table():
    spec = canonical_spec(4, widths=(1, 2, 3, 4, 5, 6))
    assert spec.kernel_shapes()[4] == (5, 4, 9, 9)
    assert isinstance(spec.layers[-2], Conv)
    with pytest.raises(ValueError):
        canonical_spec(4, widths=(1, 2, 3))


def test_init_dtype():
    spec = canonical_spec(3, SMALL)
    assert init_params(spec, 0, np.float64).dtype == np.float64
