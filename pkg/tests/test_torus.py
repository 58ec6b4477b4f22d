import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from torusdiff.errors import InvalidInputError
from torusdiff.models import example_f
from torusdiff.torus import nonempty_axis_subsets, periodic_eval, sample_boundary_pairs, wrap


@pytest.mark.parametrize(
    "x, expected",
    [
        ((1.3, -0.2), (0.3, 0.8)),
        ((0.0, 0.0), (0.0, 0.0)),
        ((2.0, -1.0), (0.0, 0.0)),
    ],
)
def test_wrap_examples(x, expected):
    np.testing.assert_allclose(wrap(x), expected, atol=1e-15)


def test_wrap_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        wrap([0.1, np.nan])
    with pytest.raises(InvalidInputError):
        wrap([np.inf])


def test_wrap_tiny_negative_stays_half_open():
    y = wrap([-1e-20, -0.0])
    assert np.all(y >= 0) and np.all(y < 1)


def test_wrap_idempotent_bulk(rng):
    x = rng.uniform(-10, 10, size=(100_000, 3))
    w = wrap(x)
    assert np.array_equal(wrap(w), w)
    assert np.all((w >= 0) & (w < 1))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-1e3, 1e3)))
def test_wrap_idempotent_property(x):
    w = wrap(x)
    assert np.array_equal(wrap(w), w)
    assert np.all((w >= 0) & (w < 1))


def test_periodic_eval_examples():
    assert periodic_eval(lambda p: p[0], np.array([1.25, 0.0])) == pytest.approx(0.25)
    assert periodic_eval(lambda p: 7.0, np.array([123.4, -9.9])) == 7.0
    assert periodic_eval(example_f, np.array([1.0, 1.0])) == pytest.approx(1.5)


def test_periodic_eval_integer_shifts(rng):
    x = rng.uniform(-1e3, 1e3, size=(20_000, 2))
    k = rng.integers(-5, 6, size=x.shape)
    a = periodic_eval(example_f, x + k)
    b = periodic_eval(example_f, x)
    assert np.max(np.abs(a - b) / np.abs(b)) <= 2.0**-40 * 1e3


def test_basis_shift_periodicity(rng):
    g = lambda p: np.sin(2 * np.pi * p[..., 0]) + p[..., 1] ** 2  # noqa: E731
    x = rng.uniform(-10, 10, size=(1000, 2))
    for e in np.eye(2):
        np.testing.assert_allclose(periodic_eval(g, x + e), periodic_eval(g, x), rtol=0, atol=1e-9)


def test_boundary_pairs_d1():
    x, y = sample_boundary_pairs(1, 1, np.random.default_rng(0))
    assert x.tolist() == [[0.0]] and y.tolist() == [[1.0]]


def test_boundary_pairs_identified_and_distinct(rng):
    for d in (1, 2, 3):
        x, y = sample_boundary_pairs(500, d, rng)
        assert x.shape == y.shape == (500, d)
        assert np.array_equal(wrap(x), wrap(y))
        assert np.all(np.any(x != y, axis=1))
        assert np.all(np.any(x == 0.0, axis=1))


def test_boundary_pairs_empty(rng):
    x, y = sample_boundary_pairs(0, 2, rng)
    assert x.shape == (0, 2) and y.shape == (0, 2)


def test_boundary_pair_axis_frequencies_uniform():
    # multinomial oracle: each of the 3 nonempty subsets of 2 axes has p = 1/3
    n = 10_000
    x, y = sample_boundary_pairs(n, 2, np.random.default_rng(7))
    on_face = (x == 0.0) & (y == 1.0)
    subsets = nonempty_axis_subsets(2)
    counts = np.array([np.sum(np.all(on_face == m, axis=1)) for m in subsets])
    assert counts.sum() == n
    p = 1 / 3
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma), counts


def test_nonempty_axis_subsets():
    assert len(nonempty_axis_subsets(3)) == 7
    with pytest.raises(InvalidInputError):
        nonempty_axis_subsets(0)
