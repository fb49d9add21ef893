"""
Tests for the counter-based random streams.
"""

import numpy as np
import pytest

from src.core.rng import Rng


class TestRng:

    def test_same_seed_same_stream(self):
        assert np.array_equal(Rng(42).normal(16), Rng(42).normal(16))

    def test_spawn_does_not_advance_parent(self):
        parent = Rng(7)
        parent.spawn(3).normal(100)
        assert np.array_equal(parent.normal(4), Rng(7).normal(4))

    def test_spawn_order_is_irrelevant(self):
        root = Rng(9)
        a_first = root.spawn(1).normal(5)
        root.spawn(2).normal(5)
        assert np.array_equal(a_first, Rng(9).spawn(1).normal(5))

    def test_children_differ(self):
        root = Rng(11)
        assert not np.array_equal(root.spawn(0).normal(8), root.spawn(1).normal(8))

    def test_choice_without_replacement_is_distinct(self):
        picks = Rng(3).choice(50, size=50)
        assert sorted(picks.tolist()) == list(range(50))

    def test_normal_is_float32(self):
        assert Rng(0).normal((2, 3)).dtype == np.float32

    @pytest.mark.parametrize("seed", [-1, 2 ** 64])
    def test_seed_must_be_u64(self, seed):
        with pytest.raises(ValueError):
            Rng(seed)
