"""
Tests for training, guidance, sampling and inversion.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from src.ai.flow import (SGD, ScheduleConfig, TrainConfig, cfg_velocity, denoise, invert, reconstruction_mse, sample,
                         train, train_step)
from src.ai.injection import COND, NULL
from src.ai.models import ForwardOutput, MicroDiT, ProbeConfig, patchify
from src.ai.vocab import null_prompt, parse_prompt
from src.bench.shapes import gen_dataset
from src.core.errors import ConfigError, NumericalError
from src.core.rng import Rng
from src.core.tensor import Tensor
from tests.conftest import SMALL, TINY

PROMPT = "red circle top-left on black"


class ConstantField:
    """Velocity field that returns the same array everywhere."""

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float32)
        self.config = SimpleNamespace(patch=4, layers=1)
        self.calls = []

    def velocity(self, z, prompt, t, injection=None, probe=None, step=None):
        self.calls.append((t, prompt.is_null))
        return ForwardOutput(velocity=Tensor(self.value))


def _tiny_data(n: int = 8):
    images = Rng(3).uniform((n, 8, 8, 3)) * 2 - 1
    prompts = [parse_prompt(PROMPT, TINY.max_text_tokens)] * n
    return images.astype(np.float32), prompts


class TestSchedule:

    def test_grid(self):
        sched = ScheduleConfig(steps=4)
        assert sched.timesteps().tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert sched.denoise_time(0) == 1.0
        assert sched.invert_time(0) == 0.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            ScheduleConfig(steps=0).validate()
        with pytest.raises(ConfigError):
            ScheduleConfig(guidance=-1.0).validate()

    def test_train_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(optimizer="lion").validate()
        with pytest.raises(ConfigError):
            TrainConfig(prompt_dropout=1.5).validate()


class TestIntegrators:

    def test_constant_field_denoise_is_exact(self):
        field = ConstantField(np.full((4, 48), 0.5))
        z1 = np.zeros((4, 48), dtype=np.float32)
        out = denoise(field, z1, parse_prompt(PROMPT, 10), ScheduleConfig(steps=8, guidance=1.0))
        assert np.all(out.latent == -0.5)

    def test_constant_field_round_trip_is_exact(self):
        field = ConstantField(np.full((4, 48), 0.25))
        x = Rng(0).normal((4, 48))
        sched = ScheduleConfig(steps=4, guidance=2.0)
        inv = invert(field, x, parse_prompt(PROMPT, 10), sched)
        assert len(inv.trajectory) == 5
        back = sample(field, inv.latent, parse_prompt(PROMPT, 10), sched)
        assert np.array_equal(back, x)

    def test_time_order(self):
        field = ConstantField(np.zeros((4, 48)))
        prompt = parse_prompt(PROMPT, 10)
        denoise(field, np.zeros((4, 48), dtype=np.float32), prompt, ScheduleConfig(steps=4, guidance=1.0))
        assert [t for t, _ in field.calls] == [1.0, 0.75, 0.5, 0.25]
        field.calls.clear()
        invert(field, np.zeros((4, 48), dtype=np.float32), prompt, ScheduleConfig(steps=4, guidance=1.0))
        assert [t for t, _ in field.calls] == [0.0, 0.25, 0.5, 0.75]

    def test_non_finite_latent_rejected(self):
        field = ConstantField(np.zeros((4, 48)))
        z = np.zeros((4, 48), dtype=np.float32)
        z[0, 0] = np.nan
        with pytest.raises(NumericalError):
            denoise(field, z, parse_prompt(PROMPT, 10), ScheduleConfig(steps=2))

    def test_inversion_cache_records_every_step(self, tiny_model):
        z = Rng(0).normal((TINY.n_image_tokens, TINY.token_dim))
        inv = invert(tiny_model, z, parse_prompt(PROMPT, 10), ScheduleConfig(steps=3),
                     probe=ProbeConfig(record_values=True))
        inv.cache.check_schedule(3)
        assert inv.cache.frozen
        assert sorted(inv.cache.branches(0)) == [COND, NULL]
        assert len(inv.cache.layer_rows(2, COND)) == TINY.layers

    def test_inversion_without_guidance_uses_condition_only(self, tiny_model):
        z = Rng(0).normal((TINY.n_image_tokens, TINY.token_dim))
        inv = invert(tiny_model, z, parse_prompt(PROMPT, 10),
                     ScheduleConfig(steps=2, invert_with_guidance=False), probe=ProbeConfig(record_values=True))
        assert inv.cache.branches(0) == [COND]

    def test_zero_field_inversion_returns_the_image(self):
        model = MicroDiT.init(TINY, Rng(0))
        image = Rng(2).uniform((8, 8, 3), -1.0, 1.0)
        inv = invert(model, image, parse_prompt(PROMPT, 10), ScheduleConfig(steps=5, guidance=2.0))
        assert np.array_equal(inv.latent, patchify(image, TINY.patch))

    def test_sampling_is_deterministic(self, tiny_model):
        z1 = Rng(9).normal((TINY.n_image_tokens, TINY.token_dim))
        sched = ScheduleConfig(steps=3)
        a = sample(tiny_model, z1, parse_prompt(PROMPT, 10), sched)
        b = sample(tiny_model, z1, parse_prompt(PROMPT, 10), sched)
        assert np.array_equal(a, b)


class TestGuidance:

    @pytest.mark.parametrize("g,branch", [(1.0, COND), (0.0, NULL)])
    def test_endpoints_are_exact(self, tiny_model, g, branch):
        z = Rng(0).normal((TINY.n_image_tokens, TINY.token_dim))
        prompt = parse_prompt(PROMPT, 10)
        out = cfg_velocity(tiny_model, z, prompt, 0.5, g)
        assert list(out.branches) == [branch]
        ref_prompt = prompt if branch == COND else null_prompt(10)
        ref = tiny_model.velocity(z, ref_prompt, 0.5).velocity.data
        assert np.array_equal(out.velocity, ref)

    def test_extrapolation(self, tiny_model):
        z = Rng(0).normal((TINY.n_image_tokens, TINY.token_dim))
        out = cfg_velocity(tiny_model, z, parse_prompt(PROMPT, 10), 0.5, 3.0)
        cond, null = out.branches[COND].velocity.data, out.branches[NULL].velocity.data
        np.testing.assert_allclose(out.velocity, null + 3.0 * (cond - null), rtol=1e-5, atol=1e-6)

    def test_negative_guidance(self, tiny_model):
        with pytest.raises(ConfigError):
            cfg_velocity(tiny_model, np.zeros((4, 48), dtype=np.float32), parse_prompt(PROMPT, 10), 0.5, -1.0)


class TestTraining:

    def test_train_step_with_zero_head_regresses_to_zero_velocity(self):
        images, prompts = _tiny_data(4)
        model = MicroDiT.init(TINY, Rng(0))
        rng = Rng(1)
        x = np.stack([patchify(im, TINY.patch) for im in images])
        eps = rng.spawn(1).normal(x.shape)
        expected = float(np.mean((eps.astype(np.float64) - x) ** 2))
        loss = train_step(model, images, prompts, rng, SGD(model.parameters(), lr=1e-2), prompt_dropout=0.0)
        assert loss == pytest.approx(expected, rel=1e-5)
        assert np.any(model.params["head.w"].data != 0.0)

    def test_train_step_rejects_mismatched_batch(self):
        images, prompts = _tiny_data(4)
        model = MicroDiT.init(TINY, Rng(0))
        with pytest.raises(ConfigError):
            train_step(model, images, prompts[:2], Rng(1), SGD(model.parameters()))

    def test_training_is_deterministic(self):
        images, prompts = _tiny_data()
        cfg = TrainConfig(steps=3, batch_size=4, lr=1e-2, log_every=0)
        runs = []
        for _ in range(2):
            model = MicroDiT.init(TINY, Rng(0))
            losses = train(model, images, prompts, cfg, Rng(1), progress=False)
            runs.append((losses, model.params["head.w"].data.copy()))
        assert runs[0][0] == runs[1][0]
        assert np.array_equal(runs[0][1], runs[1][1])

    def test_training_moves_the_head(self):
        images, prompts = _tiny_data()
        model = MicroDiT.init(TINY, Rng(0))
        losses = train(model, images, prompts, TrainConfig(steps=2, batch_size=4, optimizer="adam", log_every=0),
                       Rng(1), progress=False)
        assert len(losses) == 2
        assert np.all(np.isfinite(losses))
        assert np.any(model.params["head.w"].data != 0.0)

    @pytest.mark.slow
    def test_short_training_lowers_loss(self):
        images, prompts, _ = gen_dataset(128, Rng(0))
        model = MicroDiT.init(SMALL, Rng(1))
        losses = train(model, images, prompts, TrainConfig(steps=150, batch_size=16, lr=3e-3, optimizer="adam",
                                                           log_every=0), Rng(2), progress=False)
        assert np.mean(losses[-20:]) < np.mean(losses[:20])

    @pytest.mark.slow
    def test_round_trip_error_shrinks_with_steps(self, trained_model):
        images, prompts, _ = gen_dataset(5, Rng(11))
        errors = []
        for steps in (5, 15, 30):
            sched = ScheduleConfig(steps=steps, guidance=2.0)
            errors.append(np.mean([reconstruction_mse(trained_model, im, p, sched)
                                   for im, p in zip(images, prompts)]))
        assert errors[0] > errors[1] > errors[2]
