import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stancefuse import tensor as T
from stancefuse.config import EncoderConfig
from stancefuse.encoders import (
    encode_image,
    encode_ppm,
    encode_rawimg,
    encode_text,
    image_from_array,
    init_text_encoder,
    init_vision_encoder,
    load_image,
    patch_embed,
    patchify,
)
from stancefuse.errors import ContractError, DataError
from stancefuse.gradcheck import grad_check, grad_check_details
from stancefuse.params import ParamStore
from stancefuse.text import TokenSeq

from conftest import generic_point

SMALL = EncoderConfig(text_width=16, vision_width=16, layers=1, heads=2, max_len=12, image_size=16, patch_size=8)


def text_store(cfg=SMALL, vocab=30, seed=0):
    s = ParamStore(seed)
    init_text_encoder(s, cfg, vocab)
    return s


def vision_store(cfg=SMALL, seed=0):
    s = ParamStore(seed)
    init_vision_encoder(s, cfg)
    return s


# ---------------------------------------------------------------- images


def write(path, blob):
    path.write_bytes(blob)
    return path


def test_black_and_white_images(tmp_path):
    cfg = EncoderConfig(image_size=16, patch_size=16)
    black = load_image(write(tmp_path / "b.ppm", encode_ppm(np.zeros((3, 16, 16)))), cfg)
    white = load_image(write(tmp_path / "w.ppm", encode_ppm(np.ones((3, 16, 16)))), cfg)
    assert np.array_equal(black.pixels, np.zeros((3, 16, 16)))
    assert np.array_equal(white.pixels, np.ones((3, 16, 16)))


def test_non_divisible_image_names_file(tmp_path):
    path = write(tmp_path / "odd.ppm", encode_ppm(np.zeros((3, 63, 64))))
    with pytest.raises(DataError, match="odd.ppm"):
        load_image(path, EncoderConfig(image_size=64, patch_size=16))


def test_unsupported_formats_rejected(tmp_path):
    cfg = EncoderConfig()
    with pytest.raises(DataError, match="unsupported"):
        load_image(write(tmp_path / "x.png", b"\x89PNG...."), cfg)
    with pytest.raises(DataError, match="maxval"):
        load_image(write(tmp_path / "x.ppm", b"P6\n16 16\n65535\n" + bytes(16 * 16 * 6)), cfg)
    with pytest.raises(DataError, match="raster"):
        load_image(write(tmp_path / "y.ppm", b"P6\n16 16\n255\n" + bytes(10)), cfg)


def test_ppm_header_comments_and_channel_order(tmp_path):
    raster = bytes([255, 0, 0] * 256)
    path = write(tmp_path / "red.ppm", b"P6\n# a comment\n16 16\n255\n" + raster)
    img = load_image(path, EncoderConfig(image_size=16, patch_size=16))
    assert img.pixels[0].min() == 1.0 and img.pixels[1:].max() == 0.0


def test_rawimg_round_trip(tmp_path, gen):
    pix = gen.random((3, 32, 32)).astype(np.float32).astype(np.float64)
    img = load_image(write(tmp_path / "a.rawimg", encode_rawimg(pix)), EncoderConfig(image_size=32, patch_size=16))
    assert np.array_equal(img.pixels, pix)
    bad = struct.pack("<3I", 3, 16, 16) + np.full(3 * 256, 2.0, "<f4").tobytes()
    with pytest.raises(DataError, match=r"\[0, 1\]"):
        load_image(write(tmp_path / "bad.rawimg", bad), EncoderConfig(image_size=16, patch_size=16))


def test_nearest_upsampling_repeats_pixels(tmp_path, gen):
    small = np.round(gen.random((3, 16, 16)) * 255) / 255
    img = load_image(write(tmp_path / "s.ppm", encode_ppm(small)), EncoderConfig(image_size=64, patch_size=16))
    assert img.shape == (3, 64, 64)
    assert np.allclose(img.pixels[:, ::4, ::4], small, atol=1e-12)


def test_digest_is_content_hash(tmp_path):
    blob = encode_ppm(np.full((3, 16, 16), 0.5))
    cfg = EncoderConfig(image_size=16, patch_size=16)
    assert load_image(write(tmp_path / "a.ppm", blob), cfg).digest == load_image(write(tmp_path / "b.ppm", blob), cfg).digest


# ---------------------------------------------------------------- text encoder


def test_text_output_has_one_row_per_token():
    s = text_store()
    for n in (1, 5, 12):
        out = encode_text(TokenSeq.from_ids(range(4, 4 + n)), s, SMALL)
        assert out.H_t.shape == (n, 16)


def test_text_too_long_or_empty_is_contract_error():
    s = text_store()
    with pytest.raises(ContractError, match="position table"):
        encode_text(TokenSeq.from_ids([5] * 13), s, SMALL)
    with pytest.raises(ContractError):
        encode_text(TokenSeq((), ()), s, SMALL)


def test_text_padding_invariance():
    s = generic_point(text_store(), std=0.3)
    seq = TokenSeq.from_ids([5, 9, 7, 11])
    ref = encode_text(seq, s, SMALL).H_t.data
    padded = encode_text(seq.padded(10), s, SMALL).H_t.data
    junk = TokenSeq(seq.ids + (17, 4, 22), seq.attention_mask + (0, 0, 0))
    other = encode_text(junk, s, SMALL).H_t.data
    assert np.max(np.abs(padded[:4] - ref)) < 1e-9
    assert np.max(np.abs(other[:4] - ref)) < 1e-9


def test_text_is_deterministic_per_seed():
    seq = TokenSeq.from_ids([5, 6, 7])
    a = encode_text(seq, text_store(seed=2), SMALL).H_t.data
    b = encode_text(seq, text_store(seed=2), SMALL).H_t.data
    c = encode_text(seq, text_store(seed=3), SMALL).H_t.data
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_text_embedding_gradients():
    s = generic_point(text_store())
    seq = TokenSeq.from_ids([5, 9, 7, 11, 0, 0])
    f = lambda p: T.mean(encode_text(seq, p, SMALL).H_t)  # noqa: E731
    assert grad_check(f, s, h=1e-5, per_param=3, n_samples=60) < 1e-4


# ---------------------------------------------------------------- vision encoder


def test_patch_count():
    cfg = EncoderConfig(image_size=64, patch_size=16)
    s = vision_store(cfg)
    out = encode_image(image_from_array(np.zeros((3, 64, 64))), s, cfg)
    assert out.H_v.shape == (16, 64)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.sampled_from([2, 4, 8]))
def test_patchify_shape_formula(gh, gw, p):
    pixels = np.zeros((3, gh * p, gw * p))
    assert patchify(pixels, p).shape == (gh * gw, 3 * p * p)


def test_patch_swap_permutes_embeddings(gen):
    cfg = SMALL
    s = vision_store(cfg)
    pix = gen.random((3, 16, 16))
    swapped = pix.copy()
    swapped[:, 0:8, 0:8], swapped[:, 8:16, 8:16] = pix[:, 8:16, 8:16], pix[:, 0:8, 0:8]
    a = patch_embed(image_from_array(pix), s, cfg).data
    b = patch_embed(image_from_array(swapped), s, cfg).data
    assert np.array_equal(b[[3, 1, 2, 0]], a)


def test_patchify_row_major_layout():
    pix = np.zeros((3, 4, 4))
    pix[:, 0:2, 2:4] = 1.0
    assert patchify(pix, 2)[:, 0].tolist() == [0.0, 1.0, 0.0, 0.0]


def test_wrong_image_size_is_contract_error():
    s = vision_store()
    with pytest.raises(ContractError):
        encode_image(image_from_array(np.zeros((3, 32, 32))), s, SMALL)
    with pytest.raises(ContractError):
        patchify(np.zeros((3, 10, 16)), 8)


def test_patch_projection_gradients(gen):
    s = generic_point(vision_store())
    img = image_from_array(gen.random((3, 16, 16)))
    f = lambda p: T.mean(encode_image(img, p, SMALL).H_v)  # noqa: E731
    checks = grad_check_details(f, s, h=1e-5, per_param=8, n_samples=40)
    patch = [c for c in checks if c.name.startswith("vision.patch")]
    assert patch and max(c.rel_error for c in patch) < 1e-4
    assert max(c.rel_error for c in checks) < 1e-4
