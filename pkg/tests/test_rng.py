import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from stopflow import rng


def _hex(words):
    return [f"{int(w):08x}" for w in words]


def test_philox_known_answers():
    # Random123 known-answer vectors for Philox4x32-10
    assert _hex(rng.philox4x32([0, 0, 0, 0], [0, 0])) == ["6627e8d5", "e169c58d", "bc57ac4c", "9b00dbd8"]
    ones = 0xFFFFFFFF
    assert _hex(rng.philox4x32([ones] * 4, [ones, ones])) == ["408f276d", "41c83b0e", "a20bc7c6", "6d5451fd"]
    assert _hex(rng.philox4x32([0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344],
                               [0xA4093822, 0x299F31D0])) == ["d16cfe09", "94fdcceb", "5001e420", "24126ea1"]


def test_uniforms_open_interval():
    u = rng.uniforms(1, np.arange(100), 400)
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.01


def test_normal_moments():
    z = rng.normals(3, np.arange(2000), 100).ravel()
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 64 - 1), st.lists(st.integers(1, 8), min_size=1, max_size=6))
def test_chunking_invariance(seed, chunks):
    paths = np.array([0, 5, 2 ** 33 + 1], dtype=np.uint64)
    total = 4 * sum(chunks)
    ref = rng.normals(seed, paths, total)
    s = rng.PathStream(seed, paths)
    got = np.concatenate([s.next(4 * c) for c in chunks], axis=1)
    assert np.array_equal(ref, got)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=20, unique=True))
def test_path_subsets_are_independent_of_batch(seed, ids):
    ids = np.array(ids, dtype=np.uint64)
    full = rng.normals(seed, ids, 12)
    for k, p in enumerate(ids):
        assert np.array_equal(rng.normals(seed, [p], 12)[0], full[k])


def test_purposes_and_seeds_differ():
    a = rng.blocks(1, [0], 2, rng.BROWNIAN)
    assert not np.array_equal(a, rng.blocks(1, [0], 2, rng.DEADLINE))
    assert not np.array_equal(a, rng.blocks(2, [0], 2, rng.BROWNIAN))


def test_words_at_matches_blocks():
    w = rng.blocks(9, [3, 4], 5, rng.AUX)
    got = rng.words_at(9, [3, 4], [2, 4], rng.AUX)
    assert np.array_equal(got[0], w[0, 8:12]) and np.array_equal(got[1], w[1, 16:20])
