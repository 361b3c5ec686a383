import numpy as np
import pytest

from histonorm.convnet.network import build_network, forward
from histonorm.errors import BadMagic, InputTooSmall, PaletteTooSmall, TruncatedFile
from histonorm.lut import apply_lut, identity_lut
from histonorm.pipeline.inference import (
    ClassMap,
    classify_tile,
    probability_dump_bytes,
    read_probability_dump,
    render_class_map,
    write_probability_dump,
)
from histonorm.pipeline.training import to_unit

SMALL = (2, 3, 4, 4, 8, 6)


def test_patch_tile_is_one_cell():
    spec, params = build_network(3, seed=0, widths=SMALL)
    tile = np.random.default_rng(0).integers(0, 256, (150, 150, 3), dtype=np.uint8)
    cm = classify_tile(spec, params, tile)
    assert cm.shape == (1, 1)
    assert np.array_equal(cm.probabilities, forward(spec, params, to_unit(tile))[0])
    assert cm.stride == 16 and cm.origin < 0


def test_class_grid_is_argmax():
    spec, params = build_network(4, seed=1, widths=SMALL)
    tile = np.random.default_rng(1).integers(0, 256, (300, 260, 3), dtype=np.uint8)
    cm = classify_tile(spec, params, tile)
    assert cm.shape == (10, 8)
    assert np.array_equal(cm.classes, cm.probabilities.argmax(-1))


def test_normalizer_runs_first():
    spec, params = build_network(3, seed=0, widths=SMALL)
    tile = np.random.default_rng(2).integers(0, 256, (160, 170, 3), dtype=np.uint8)
    plain = classify_tile(spec, params, tile)
    same = classify_tile(spec, params, tile, normalizer=lambda im: apply_lut(im, identity_lut()))
    inverted = classify_tile(spec, params, tile, normalizer=lambda im: 255 - im)
    assert np.array_equal(plain.probabilities, same.probabilities)
    assert np.array_equal(inverted.probabilities, classify_tile(spec, params, 255 - tile).probabilities)


def test_too_small_tile():
    spec, params = build_network(3, seed=0, widths=SMALL)
    with pytest.raises(InputTooSmall):
        classify_tile(spec, params, np.zeros((100, 200, 3), np.uint8))


def test_white_tile_is_background(toy_model, toy_data):
    assert toy_data.class_names[0] == "background"
    cm = classify_tile(toy_model.spec, toy_model.params, np.full((400, 400, 3), 255, np.uint8))
    assert np.all(cm.classes == 0)
    assert cm.probabilities[..., 0].min() > 0.9


def two_by_two():
    probs = np.zeros((2, 2, 3))
    probs[0, 0, 0] = probs[0, 1, 1] = probs[1, 0, 2] = probs[1, 1, 0] = 1.0
    return ClassMap(probs.argmax(-1), probs, 16, -18)


def test_render_blocks():
    palette = np.array([[255, 0, 0], [0, 255, 0], [0, 0, 255]], np.uint8)
    img = render_class_map(two_by_two(), palette)
    assert img.shape == (32, 32, 3)
    assert np.all(img[:16, :16] == [255, 0, 0]) and np.all(img[:16, 16:] == [0, 255, 0])
    assert np.all(img[16:, :16] == [0, 0, 255]) and np.all(img[16:, 16:] == [255, 0, 0])


def test_palette_too_small():
    with pytest.raises(PaletteTooSmall):
        render_class_map(two_by_two(), np.zeros((2, 3), np.uint8))


def test_blend_keeps_source_dims():
    src = np.full((40, 27, 3), 100, np.uint8)
    palette = np.array([[200, 200, 200], [0, 0, 0], [50, 50, 50]], np.uint8)
    out = render_class_map(two_by_two(), palette, source=src)
    assert out.shape == src.shape
    assert out[0, 0].tolist() == [150, 150, 150]


def test_probability_dump_round_trip(tmp_path):
    p = np.random.default_rng(0).random((5, 7, 3)).astype(np.float32)
    write_probability_dump(p, tmp_path / "p.clm")
    assert np.array_equal(read_probability_dump(tmp_path / "p.clm"), p)
    buf = probability_dump_bytes(p)
    assert buf[:4] == b"CLM1" and len(buf) == 16 + 4 * p.size
    assert int.from_bytes(buf[4:8], "little") == 5 and int.from_bytes(buf[12:16], "little") == 3


def test_probability_dump_errors(tmp_path):
    (tmp_path / "a").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(BadMagic):
        read_probability_dump(tmp_path / "a")
    (tmp_path / "b").write_bytes(probability_dump_bytes(np.zeros((2, 2, 2), np.float32))[:-3])
    with pytest.raises(TruncatedFile):
        read_probability_dump(tmp_path / "b")
