"""
Tests for latent optimization and the full edit pipeline.
"""

import numpy as np
import pytest

from src.ai.flow import ScheduleConfig
from src.ai.lore import OptimConfig, edit, optimize_latent, random_tendency_gradcheck, tendency_loss
from src.ai.models import ProbeConfig
from src.ai.probe import TokenMask, attention_record
from src.ai.vocab import find_word, parse_prompt
from src.bench.suites import build_suite
from src.core.errors import ConfigError
from src.core.rng import Rng
from tests.conftest import SMALL

SRC = "red circle top-left on black"
TGT = "red square top-left on black"


def _top_left_mask() -> TokenMask:
    grid = np.zeros((8, 8), dtype=bool)
    grid[:4, :4] = True
    return TokenMask(grid)


def _z0(seed: int = 0) -> np.ndarray:
    return Rng(seed).normal((SMALL.n_image_tokens, SMALL.token_dim))


class TestOptimConfig:

    @pytest.mark.parametrize("kwargs", [{"lr": 0.0}, {"iterations": -1}, {"kernel_size": 4},
                                        {"injection_start": 3, "injection_end": 1}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            OptimConfig(**kwargs).validate()


class TestTendencyLoss:

    def test_loss_range(self, small_model):
        prompt = parse_prompt(TGT, 10)
        record, _ = attention_record(small_model, _z0(), prompt)
        loss = tendency_loss(record, find_word(prompt, "square"), _top_left_mask(), OptimConfig()).item()
        assert 0.0 <= loss <= 1.0

    def test_source_suppression_adds_source_peak(self, small_model):
        src, tgt = parse_prompt(SRC, 10), parse_prompt(TGT, 10)
        record, _ = attention_record(small_model, _z0(), tgt)
        src_record, _ = attention_record(small_model, _z0(), src)
        token = find_word(tgt, "square")
        plain = tendency_loss(record, token, _top_left_mask(), OptimConfig()).item()
        both = tendency_loss(record, token, _top_left_mask(), OptimConfig(source_suppression=True),
                             source_record=src_record, source_token=token).item()
        assert plain < both <= 2.0

    def test_empty_mask(self, small_model):
        prompt = parse_prompt(TGT, 10)
        record, _ = attention_record(small_model, _z0(), prompt)
        with pytest.raises(ConfigError):
            tendency_loss(record, 1, TokenMask.empty(8), OptimConfig())

    def test_gradient_matches_finite_differences(self):
        assert random_tendency_gradcheck(3) < 1e-3


class TestOptimizeLatent:

    def test_zero_iterations_is_identity(self, small_model):
        prompt = parse_prompt(TGT, 10)
        z0 = _z0()
        out = optimize_latent(small_model, z0, prompt, find_word(prompt, "square"), _top_left_mask(),
                              OptimConfig(iterations=0), Rng(0))
        assert np.array_equal(out.latent, z0)
        assert out.loss_trace == []

    def test_update_restricted_to_mask(self, small_model):
        prompt = parse_prompt(TGT, 10)
        mask = _top_left_mask()
        z0 = _z0()
        out = optimize_latent(small_model, z0, prompt, find_word(prompt, "square"), mask,
                              OptimConfig(iterations=3, lr=0.5), Rng(0))
        outside = ~mask.expand_to_latent(SMALL.token_dim)
        assert np.array_equal(out.latent[outside], z0[outside])
        assert not np.array_equal(out.latent[~outside], z0[~outside])
        assert len(out.loss_trace) == 3

    def test_unrestricted_update_moves_everything(self, small_model):
        prompt = parse_prompt(TGT, 10)
        mask = _top_left_mask()
        z0 = _z0()
        out = optimize_latent(small_model, z0, prompt, find_word(prompt, "square"), mask,
                              OptimConfig(iterations=1, lr=0.5, mask_restricted_update=False), Rng(0))
        outside = ~mask.expand_to_latent(SMALL.token_dim)
        assert not np.array_equal(out.latent[outside], z0[outside])

    def test_renoise_only_touches_mask(self, small_model):
        prompt = parse_prompt(TGT, 10)
        mask = _top_left_mask()
        z0 = _z0()
        out = optimize_latent(small_model, z0, prompt, find_word(prompt, "square"), mask,
                              OptimConfig(iterations=0, renoise=True), Rng(4))
        inside = mask.expand_to_latent(SMALL.token_dim)
        assert np.array_equal(out.latent[~inside], z0[~inside])
        assert not np.array_equal(out.latent[inside], z0[inside])

    def test_non_finite_latent(self, small_model):
        z0 = _z0()
        z0[0, 0] = np.inf
        with pytest.raises(ConfigError):
            optimize_latent(small_model, z0, parse_prompt(TGT, 10), 1, _top_left_mask(), OptimConfig(), Rng(0))

    def test_model_weights_untouched(self, small_model):
        before = {k: v.data.copy() for k, v in small_model.params.items()}
        prompt = parse_prompt(TGT, 10)
        optimize_latent(small_model, _z0(), prompt, find_word(prompt, "square"), _top_left_mask(),
                        OptimConfig(iterations=2), Rng(0))
        for name, data in before.items():
            assert np.array_equal(small_model.params[name].data, data)
            assert small_model.params[name].grad is None


class TestEdit:

    @pytest.fixture
    def task(self):
        return build_suite("pie", 1, Rng(8))[0]

    def test_end_to_end(self, small_model, task):
        sched = ScheduleConfig(steps=3)
        result = edit(task, small_model, OptimConfig(iterations=2), sched, rng=Rng(0))
        assert result.image.shape == (32, 32, 3)
        assert len(result.loss_trace) == 2
        assert set(result.tendency) == {"source_pre", "target_pre", "source_post", "target_post"}
        assert set(result.timings) == {"invert", "optimize", "denoise"}
        assert result.total_time >= 0.0
        assert result.to_record()["loss_trace"] == [float(x) for x in result.loss_trace]

    def test_deterministic(self, small_model, task):
        sched = ScheduleConfig(steps=2)
        cfg = OptimConfig(iterations=1, renoise=True)
        a = edit(task, small_model, cfg, sched, rng=Rng(5))
        b = edit(task, small_model, cfg, sched, rng=Rng(5))
        assert np.array_equal(a.image, b.image)
        assert a.loss_trace == b.loss_trace

    def test_without_injection(self, small_model, task):
        result = edit(task, small_model, OptimConfig(iterations=0, value_injection=False), ScheduleConfig(steps=2),
                      probe=ProbeConfig(layers=[1]))
        assert result.loss_trace == []

    def test_padding_target_rejected(self, small_model, task):
        task.target_token = 9
        with pytest.raises(ConfigError):
            edit(task, small_model, OptimConfig(), ScheduleConfig(steps=2))
