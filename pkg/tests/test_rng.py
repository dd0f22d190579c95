import numpy as np
import pytest

from sipbench.rng import as_rng, seed_sequence, substream, substream_seed


class TestSubstreams:
    def test_same_tags_same_stream(self):
        a = substream(7, "x", 1).standard_normal(5)
        b = substream(7, "x", 1).standard_normal(5)
        assert np.array_equal(a, b)

    def test_different_tags_different_streams(self):
        a = substream(7, "x").standard_normal(5)
        b = substream(7, "y").standard_normal(5)
        assert not np.array_equal(a, b)

    def test_int_and_str_tags_distinct(self):
        a = substream(7, 1).standard_normal(3)
        b = substream(7, "1").standard_normal(3)
        assert not np.array_equal(a, b)

    def test_substream_seed_stable(self):
        assert substream_seed(0, "a", 2) == substream_seed(0, "a", 2)
        assert substream_seed(0, "a", 2) != substream_seed(0, "a", 3)

    def test_seed_sequence_accepts_sequence_root(self):
        root = seed_sequence(5, "outer")
        child = seed_sequence(root, "inner")
        again = seed_sequence(seed_sequence(5, "outer"), "inner")
        a = np.random.default_rng(child).standard_normal(4)
        b = np.random.default_rng(again).standard_normal(4)
        assert np.array_equal(a, b)

    def test_bad_tag_type_rejected(self):
        with pytest.raises(TypeError):
            seed_sequence(0, 3.14)

    def test_as_rng_passthrough(self):
        gen = np.random.default_rng(3)
        assert as_rng(gen) is gen
        assert isinstance(as_rng(5), np.random.Generator)
