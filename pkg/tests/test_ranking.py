import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xtnet.metrics import ranking_error


def test_identical_orderings():
    x = np.array([[0.1, 0.5, 0.3], [3.0, 2.0, 1.0]])
    assert ranking_error(x, x * 7 + 1) == (0.0, 0.0)


def test_two_combos_reversed():
    assert ranking_error([[0.0, 1.0]], [[1.0, 0.0]])[0] == 1.0


def test_four_combo_example():
    mean, _ = ranking_error([[1, 2, 3, 4]], [[2, 1, 4, 3]])
    assert mean == 0.5


def test_max_displacement_reaches_one():
    for c in range(2, 9):
        mean, _ = ranking_error([np.arange(c)], [np.arange(c)[::-1]])
        assert mean == 1.0


def test_matches_enumeration_for_small_c():
    # exhaustive max over permutations pins the normaliser
    for c in range(2, 7):
        worst = max(sum(abs(i - p) for i, p in enumerate(perm)) for perm in itertools.permutations(range(c)))
        assert worst == (c * c) // 2


@given(arrays(np.float64, (5, 6), elements=st.floats(-10, 10)),
       arrays(np.float64, (5, 6), elements=st.floats(-10, 10)))
def test_bounds(a, b):
    mean, std = ranking_error(a, b)
    assert 0.0 <= mean <= 1.0 and std >= 0.0


def test_trailing_outcome_axis_is_squeezed(rng):
    a, b = rng.normal(size=(4, 5, 1)), rng.normal(size=(4, 5, 1))
    assert ranking_error(a, b) == ranking_error(a[..., 0], b[..., 0])


@pytest.mark.parametrize("a,b", [([[1.0]], [[2.0]]), ([[1.0, 2.0]], [[1.0, 2.0, 3.0]])])
def test_rejects_bad_shapes(a, b):
    with pytest.raises(ValueError):
        ranking_error(a, b)
