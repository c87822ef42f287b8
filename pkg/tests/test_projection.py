"""The top-m distribution against a brute-force projection oracle."""
import numpy as np
import pytest

from sdndispatch.dispatch import project, sample_action

from _oracles import simplex_projection_oracle


def test_hand_example_redistributes_tail_mass():
    # normalized (0.5, 0.25, 0.25); drop the last, split its mass over two
    d = project(np.array([2.0, 1.0, 1.0]), 2)
    assert np.allclose(d.probabilities, [0.625, 0.375, 0.0], atol=1e-15)
    assert d.support_size == 2
    assert list(d.permutation) == [0, 1, 2]  # tie broken toward lower index


def test_uniform_priorities_keep_lowest_indices():
    d = project(np.ones(4), 2)
    assert np.allclose(d.probabilities, [0.5, 0.5, 0.0, 0.0])


def test_support_larger_than_vector_is_plain_normalization():
    d = project(np.array([3.0, 1.0]), 5)
    assert np.allclose(d.probabilities, [0.75, 0.25])
    assert d.support_size == 2


def test_support_one_is_argmax():
    d = project(np.array([0.1, 5.0, 2.0]), 1)
    assert np.array_equal(d.probabilities > 0, [False, True, False])
    assert d.probabilities[1] == pytest.approx(1.0)


def test_normalized_sorted_is_descending():
    rng = np.random.default_rng(3)
    o = rng.exponential(1.0, size=6)
    d = project(o, 3)
    assert np.all(np.diff(d.normalized_sorted) <= 0)
    assert d.normalized_sorted[0] == pytest.approx(o.max() / o.sum())


def test_oracle_agreement_over_random_vectors():
    # acceptance-grade sweep: 1000 draws, all controller counts and supports
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        m = int(rng.integers(1, n + 1))
        o = rng.exponential(1.0, size=n) + 1e-6
        d = project(o, m)
        p = d.probabilities
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.count_nonzero(p) <= m
        assert np.all(p >= 0)
        want = simplex_projection_oracle(o, m)
        worst = max(worst, float(np.max(np.abs(p - want))))
    assert worst < 1e-9


@pytest.mark.parametrize("bad", [
    np.array([]),
    np.array([1.0, -0.5]),
    np.array([0.0, 0.0]),
    np.array([1.0, np.nan]),
    np.array([1.0, np.inf]),
])
def test_invalid_priorities_rejected(bad):
    with pytest.raises(ValueError):
        project(bad, 2)


def test_invalid_support_rejected():
    with pytest.raises(ValueError):
        project(np.array([1.0, 1.0]), 0)


def test_sampling_matches_probabilities():
    d = project(np.array([2.0, 1.0, 1.0]), 2)
    rng = np.random.default_rng(11)
    n = 200_000
    counts = np.bincount([sample_action(d, rng) for _ in range(n)], minlength=3)
    freq = counts / n
    assert counts[2] == 0  # zero-probability entries never appear
    assert abs(freq[0] - 0.625) < 0.01
    assert abs(freq[1] - 0.375) < 0.01


def test_sampling_never_returns_dropped_controller():
    rng = np.random.default_rng(5)
    for _ in range(200):
        o = rng.exponential(1.0, size=5) + 1e-9
        d = project(o, 2)
        allowed = set(np.flatnonzero(d.probabilities > 0))
        for _ in range(20):
            assert sample_action(d, rng) in allowed
