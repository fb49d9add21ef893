"""
Tests for the oracle classifier and the edit metrics.
"""

import numpy as np
import pytest

from src.ai.lore import EditResult
from src.ai.oracle import OracleClassifier, crop_features, oracle_score, score_batch, train_oracle
from src.ai.vocab import CLASSES
from src.bench.metrics import background_mse, evaluate, nonincreasing_fraction, task_frame
from src.bench.shapes import gen_scene, random_spec, single_object_spec
from src.bench.suites import build_suite
from src.core.errors import ConfigError, OracleError
from src.core.rng import Rng


def _result(image, trace=(0.9, 0.8, 0.85), pre=0.1, post=0.2) -> EditResult:
    return EditResult(image=image, latent=np.zeros((64, 48), dtype=np.float32),
                      inverted=np.zeros((64, 48), dtype=np.float32), loss_trace=list(trace),
                      tendency={"source_pre": 0.3, "target_pre": pre, "source_post": 0.2, "target_post": post},
                      timings={"invert": 0.1, "optimize": 0.2, "denoise": 0.1})


class TestOracle:

    def test_features(self):
        scene = gen_scene(single_object_spec(("circle", "red"), 2, "black", seed=0))
        feats = crop_features(scene.image, scene.mask_for(2))
        assert feats.shape == (16 * 16 * 3 + 3,)
        with pytest.raises(ConfigError):
            crop_features(scene.image, np.zeros((32, 32), dtype=bool))

    def test_untrained_oracle_refuses(self):
        scene = gen_scene(single_object_spec(("circle", "red"), 0, "black", seed=0))
        with pytest.raises(OracleError):
            OracleClassifier().predict_proba(scene.image, scene.mask_for(0))

    def test_gate_enforced(self):
        with pytest.raises(OracleError):
            train_oracle(Rng(0), n_train=40, n_holdout=20, n_noise=0, gate=1.01)

    def test_probabilities(self, quick_oracle):
        scene = gen_scene(single_object_spec(("square", "blue"), 1, "white", seed=3))
        mask = scene.mask_for(1)
        probs = quick_oracle.predict_proba(scene.image, mask)
        assert probs.shape == (len(CLASSES),)
        assert probs.sum() == pytest.approx(1.0)
        assert oracle_score(quick_oracle, scene.image, mask, ("square", "blue")) == pytest.approx(probs[6 + 2])
        batch = score_batch(quick_oracle, [scene.image], [mask])
        np.testing.assert_allclose(batch[0], probs)

    def test_training_is_deterministic(self, quick_oracle):
        again = train_oracle(Rng(0), n_train=300, n_holdout=40, n_noise=2, gate=0.0)
        assert again.accuracy == quick_oracle.accuracy

    @pytest.mark.slow
    def test_default_oracle_passes_gate(self, gated_oracle):
        assert gated_oracle.accuracy >= 0.98

    @pytest.mark.slow
    def test_noise_crops_get_a_flat_distribution(self, gated_oracle):
        rng = Rng(77)
        for i in range(10):
            spec = random_spec(rng.spawn(i, 0), min_objects=1, max_objects=1)
            mask = gen_scene(spec).mask_for(spec.objects[0].cell)
            noise = rng.spawn(i, 1).uniform((32, 32, 3), -1.0, 1.0)
            assert gated_oracle.predict_proba(noise, mask).max() < 3.0 / len(CLASSES)


class TestMetrics:

    def test_unchanged_image_has_zero_background_error(self):
        task = build_suite("pie", 1, Rng(0))[0]
        assert background_mse(task.image, task.image, task.mask) == 0.0

    def test_background_error_ignores_dilated_mask(self):
        source = np.zeros((32, 32, 3))
        mask = np.zeros((32, 32), dtype=bool)
        mask[8:12, 8:12] = True
        edited = source.copy()
        edited[4:16, 4:16] = 1.0
        assert background_mse(source, edited, mask) == 0.0
        edited[0, 0] = 1.0
        assert background_mse(source, edited, mask) > 0.0

    def test_nonincreasing_fraction(self):
        assert nonincreasing_fraction([3.0, 2.0, 2.0, 2.5]) == pytest.approx(2 / 3)
        assert nonincreasing_fraction([1.0]) == 1.0

    def test_report(self, quick_oracle):
        tasks = build_suite("pie", 3, Rng(4))
        results = [_result(t.image) for t in tasks]
        report = evaluate(tasks, results, quick_oracle)
        assert report.n_tasks == 3
        assert report.background_mse == 0.0
        assert report.target_gain_rate == 1.0
        assert report.loss_nonincreasing == pytest.approx(0.5)
        assert 0.0 <= report.alignment <= 1.0
        assert set(report.to_dict()) >= {"alignment", "success_rate", "background_mse"}

    def test_report_ignores_result_order(self, quick_oracle):
        tasks = build_suite("pie", 3, Rng(4))
        results = [_result(t.image, pre=0.1 * i) for i, t in enumerate(tasks)]
        forward = task_frame(tasks, results, quick_oracle)
        backward = task_frame(tasks[::-1], results[::-1], quick_oracle)
        assert forward.equals(backward)

    def test_mismatched_lists(self, quick_oracle):
        with pytest.raises(ConfigError):
            evaluate(build_suite("pie", 2, Rng(0)), [], quick_oracle)
