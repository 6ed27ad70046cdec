"""Counter-based stream contracts: determinism, range, key sensitivity."""

import numpy as np

from bgwqsd.streams import CoupleStream, mix, uniforms


def test_uniforms_deterministic_and_in_range():
    u1 = uniforms(42, np.arange(10_000))
    u2 = uniforms(42, np.arange(10_000))
    assert np.array_equal(u1, u2)
    assert u1.min() >= 0.0 and u1.max() < 1.0


def test_uniforms_look_uniform():
    u = uniforms(7, np.arange(200_000))
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(np.mean(u < 0.25) - 0.25) < 0.005


def test_keys_are_order_sensitive():
    assert mix(1, 2) != mix(2, 1)
    assert mix(0, 0) != mix(0, 1)


def test_seed_changes_stream():
    a = uniforms(1, np.arange(1000))
    b = uniforms(2, np.arange(1000))
    assert np.mean(a == b) < 0.01


def test_couple_stream_prefix_coupling():
    # enlarging the couple count only appends draws, never re-keys old ones
    s = CoupleStream(seed=9, path=3, generation=5)
    u_small = s.couple_uniforms(0, 4)
    u_big = s.couple_uniforms(0, 9)
    assert np.array_equal(u_big[:4], u_small)


def test_couple_stream_coordinates_independent():
    s = CoupleStream(seed=9, path=3, generation=5)
    t = CoupleStream(seed=9, path=3, generation=6)
    assert not np.array_equal(s.couple_uniforms(0, 8), t.couple_uniforms(0, 8))
    assert not np.array_equal(s.couple_uniforms(0, 8), s.couple_uniforms(1, 8))
