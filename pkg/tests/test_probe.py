"""
Tests for attention maps, smoothing and tendency.
"""

import numpy as np
import pytest

from src.ai.models import MicroDiT, ModelConfig, ProbeConfig, sincos_2d, timestep_embedding
from src.ai.probe import (GaussianKernel, SpatialAttnMap, TokenMask, attention_record, extract_map,
                          gaussian_smooth, masked_max, prompt_tendency, tendency)
from src.ai.vocab import find_word, parse_prompt
from src.core.errors import ConfigError, ShapeError
from src.core.rng import Rng
from src.core.tensor import Tensor
from tests.conftest import SMALL, randomize

PROMPT = "red circle top-left blue square bottom-right on black"


def _map(values) -> SpatialAttnMap:
    return SpatialAttnMap(values=Tensor(np.asarray(values, dtype=np.float32)), token_index=1)


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def _layernorm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    centered = x - x.mean(axis=-1, keepdims=True)
    return centered / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + 1e-5) * gain + bias


class TestTokenMask:

    def test_any_pixel_marks_token(self):
        pixels = np.zeros((32, 32), dtype=bool)
        pixels[5, 30] = True
        mask = TokenMask.from_pixels(pixels)
        assert mask.count == 1
        assert mask.grid[1, 7]

    def test_dilate(self):
        grid = np.zeros((8, 8), dtype=bool)
        grid[0, 0] = True
        assert TokenMask(grid).dilate(1).count == 4
        grid[4, 4] = True
        assert TokenMask(grid).dilate(1).count == 4 + 9

    def test_to_pixels_and_latent(self):
        mask = TokenMask.empty(2)
        assert mask.is_empty
        full = TokenMask.full(2)
        assert full.to_pixels(4).shape == (8, 8)
        assert full.expand_to_latent(48).shape == (4, 48)


class TestSmoothing:

    def test_kernel_weights_normalized(self):
        w = GaussianKernel(5, 1.5).weights()
        assert w.shape == (5, 5)
        assert w.sum() == pytest.approx(1.0)
        assert w[2, 2] == w.max()

    @pytest.mark.parametrize("size,sigma", [(4, 1.0), (9, 1.0), (3, 0.0)])
    def test_invalid_kernel(self, size, sigma):
        with pytest.raises(ConfigError):
            GaussianKernel(size, sigma).validate()

    def test_constant_map_is_fixed_point(self):
        out = gaussian_smooth(_map(np.full((8, 8), 0.25)), GaussianKernel(5, 2.0))
        np.testing.assert_allclose(out.numpy(), 0.25, rtol=1e-5)

    def test_size_one_is_identity(self):
        values = Rng(0).uniform((8, 8))
        out = gaussian_smooth(_map(values), GaussianKernel(1, 1.0))
        assert np.array_equal(out.numpy(), values.astype(np.float64))

    def test_interior_mass_preserved(self):
        values = np.zeros((8, 8))
        values[4, 4] = 1.0
        out = gaussian_smooth(_map(values), GaussianKernel(3, 1.0))
        assert out.numpy().sum() == pytest.approx(1.0, rel=1e-5)
        assert out.numpy()[4, 4] < 1.0

    def test_centered_delta_reproduces_the_kernel(self):
        kern = GaussianKernel(5, 1.2)
        values = np.zeros((8, 8))
        values[4, 4] = 1.0
        out = gaussian_smooth(_map(values), kern).numpy()
        np.testing.assert_allclose(out[2:7, 2:7], kern.weights(), rtol=1e-5, atol=1e-8)
        assert np.count_nonzero(out) == 25

    def test_smoothing_is_linear(self):
        kern = GaussianKernel(3, 0.8)
        a = Rng(0).uniform((8, 8))
        b = Rng(1).uniform((8, 8))
        combined = gaussian_smooth(_map(2.0 * a - 0.5 * b), kern).numpy()
        separate = 2.0 * gaussian_smooth(_map(a), kern).numpy() - 0.5 * gaussian_smooth(_map(b), kern).numpy()
        np.testing.assert_allclose(combined, separate, rtol=1e-5, atol=1e-6)


class TestTendency:

    def test_masked_mean(self):
        values = np.arange(4, dtype=np.float32).reshape(2, 2) / 4
        mask = TokenMask(np.array([[True, False], [False, True]]))
        assert tendency(_map(values), mask) == pytest.approx((0.0 + 0.75) / 2)
        assert masked_max(_map(values), mask).item() == pytest.approx(0.75)

    def test_empty_mask(self):
        with pytest.raises(ConfigError):
            tendency(_map(np.ones((2, 2))), TokenMask.empty(2))
        with pytest.raises(ConfigError):
            masked_max(_map(np.ones((2, 2))), TokenMask.empty(2))

    def test_grid_mismatch(self):
        with pytest.raises(ShapeError):
            tendency(_map(np.ones((2, 2))), TokenMask.full(4))

    def test_maps_from_model(self, small_model):
        prompt = parse_prompt(PROMPT, 10)
        z = Rng(0).normal((SMALL.n_image_tokens, SMALL.token_dim))
        record, _ = attention_record(small_model, z, prompt)
        attn = extract_map(record, find_word(prompt, "square"))
        values = attn.numpy()
        assert values.shape == (8, 8)
        assert np.all(values >= 0.0) and np.all(values <= 1.0)
        value = prompt_tendency(small_model, z, prompt, find_word(prompt, "square"), TokenMask.full(8))
        assert value == pytest.approx(values.mean(), rel=1e-6)

    def test_layer_selection(self, small_model):
        prompt = parse_prompt(PROMPT, 10)
        z = Rng(0).normal((SMALL.n_image_tokens, SMALL.token_dim))
        record, _ = attention_record(small_model, z, prompt)
        first = extract_map(record, 1, ProbeConfig(layers=[0])).numpy()
        second = extract_map(record, 1, ProbeConfig(layers=[1])).numpy()
        both = extract_map(record, 1).numpy()
        np.testing.assert_allclose(both, (first + second) / 2, rtol=1e-5, atol=1e-7)

    def test_map_matches_hand_computed_attention(self):
        cfg = ModelConfig(image_size=8, patch=4, d_model=16, heads=1, layers=1, time_embed_dim=16, mlp_ratio=2)
        model = randomize(MicroDiT.init(cfg, Rng(0)), seed=4)
        p = {name: param.data.astype(np.float64) for name, param in model.params.items()}
        prompt = parse_prompt("red circle top-left on black", cfg.max_text_tokens)
        z = Rng(1).normal((cfg.n_image_tokens, cfg.token_dim))
        token = find_word(prompt, "circle")
        record, _ = attention_record(model, z, prompt, t=0.6)
        got = extract_map(record, token).numpy()

        d = cfg.d_model
        txt = p["tok_embed"][np.asarray(prompt.ids)] + p["txt_pos"]
        img = z @ p["patch_in.w"] + p["patch_in.b"] + sincos_2d(d, cfg.grid)
        h = np.concatenate([txt, img])
        temb = timestep_embedding(np.array([0.6]), cfg.time_embed_dim)
        c = _silu(temb @ p["time.w1"] + p["time.b1"]) @ p["time.w2"] + p["time.b2"]
        mod = (_silu(c) @ p["blocks.0.ada.w"] + p["blocks.0.ada.b"])[0]
        shift1, scale1 = mod[:d], mod[d:2 * d]
        x = _layernorm(h, p["blocks.0.ln1.g"], p["blocks.0.ln1.b"]) * (1.0 + scale1) + shift1
        q = x @ p["blocks.0.wq"] + p["blocks.0.bq"]
        k = x @ p["blocks.0.wk"] + p["blocks.0.bk"]
        scores = q @ k.T / np.sqrt(d)
        attn = np.exp(scores - scores.max(axis=1, keepdims=True))
        attn /= attn.sum(axis=1, keepdims=True)
        expected = attn[cfg.max_text_tokens:, token].reshape(cfg.grid, cfg.grid)
        np.testing.assert_allclose(got, expected, rtol=1e-4, atol=1e-6)

    def test_padding_token_has_no_map(self, small_model):
        prompt = parse_prompt("red circle", 10)
        z = Rng(0).normal((SMALL.n_image_tokens, SMALL.token_dim))
        record, _ = attention_record(small_model, z, prompt)
        with pytest.raises(ConfigError):
            extract_map(record, 5)
        with pytest.raises(ConfigError):
            extract_map(record, 1, ProbeConfig(layers=[3]))
