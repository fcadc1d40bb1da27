import numpy as np

from qdecay.rng import BlockStreams, Purpose, stream


def test_streams_are_keyed():
    a = stream(1, Purpose.TRANSITION, 3).random(5)
    assert np.array_equal(a, stream(1, Purpose.TRANSITION, 3).random(5))
    assert not np.array_equal(a, stream(1, Purpose.TRANSITION, 4).random(5))
    assert not np.array_equal(a, stream(1, Purpose.REWARD, 3).random(5))
    assert not np.array_equal(a, stream(2, Purpose.TRANSITION, 3).random(5))
    assert not np.array_equal(a, stream(1, Purpose.TRANSITION, 3, domain=1).random(5))


def test_block_streams_independent_of_batching():
    full = BlockStreams(7, Purpose.TRANSITION, [0, 1, 2, 3], (5,), block=8)
    part = BlockStreams(7, Purpose.TRANSITION, [2, 3], (5,), block=3)
    for _ in range(20):
        assert np.array_equal(full.next()[2:], part.next())


def test_block_stream_matches_plain_generator():
    bs = BlockStreams(11, Purpose.GAUSSIAN, [5], (3,), kind="normal", block=4)
    ref = stream(11, Purpose.GAUSSIAN, 5).standard_normal((8, 3))
    got = np.array([bs.next()[0] for _ in range(8)])
    assert np.array_equal(got, ref)
