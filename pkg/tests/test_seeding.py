import numpy as np
import pytest

from psdlab.seeding import STREAMS, SeedStreams


def test_streams_are_reproducible():
    a, b = SeedStreams(42), SeedStreams(42)
    for name in STREAMS:
        assert a.seed(name) == b.seed(name)
        np.testing.assert_array_equal(a.generator(name).random(4), b.generator(name).random(4))


def test_streams_are_independent():
    streams = SeedStreams(0)
    seeds = [streams.seed(name) for name in STREAMS]
    assert len(set(seeds)) == len(STREAMS)


def test_master_seed_matters():
    assert SeedStreams(1).seed("poison") != SeedStreams(2).seed("poison")


def test_drawing_from_one_stream_leaves_others_alone():
    streams = SeedStreams(5)
    before = streams.generator("init").random(3)
    streams.generator("shuffle").random(1000)
    np.testing.assert_array_equal(streams.generator("init").random(3), before)


def test_negative_seed():
    with pytest.raises(ValueError):
        SeedStreams(-1)
