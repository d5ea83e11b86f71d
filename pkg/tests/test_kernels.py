"""The compiled correctly-rounded sum must agree with math.fsum bit for bit."""
import math

import numpy as np
from hypothesis import given, settings, strategies as st

from bhflow import _kernels as K

finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e300, max_value=1e300)


@settings(max_examples=300, deadline=None)
@given(st.lists(finite, max_size=60))
def test_exact_sum_matches_fsum(xs):
    assert K.exact_sum(np.array(xs, dtype=float)) == math.fsum(xs)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=200), st.randoms(use_true_random=False))
def test_force_sum_order_independent(masses, rnd):
    n = len(masses)
    rng = np.random.default_rng(n)
    src = np.column_stack([np.abs(masses) + 1e-3, rng.normal(size=(n, 3)) * 10.0 ** rng.integers(-6, 6, size=(n, 1))])
    a, _ = K.accel_from_rows(np.zeros(3), src, 1.0, 1e-6)
    perm = list(range(n))
    rnd.shuffle(perm)
    b, _ = K.accel_from_rows(np.zeros(3), src[perm], 1.0, 1e-6)
    np.testing.assert_array_equal(a, b)
    terms = [K.term(0.0, 0.0, 0.0, *src[j, 1:4], src[j, 0], 1.0, 1e-6) for j in range(n)]
    np.testing.assert_array_equal(a, [math.fsum(t[k] for t in terms) for k in range(3)])


def test_cancellation_falls_back_to_exact():
    # hi/lo certification cannot decide these; the exact path must
    src = np.array([[1.0, 1.0, 0, 0], [1.0, -1.0, 0, 0], [1e-300, 3.0, 0, 0], [1.0, 1e16, 0, 0], [1.0, -1e16, 0, 0]])
    a, _ = K.accel_from_rows(np.zeros(3), src, 1.0, 0.0)
    terms = [K.term(0.0, 0.0, 0.0, *r[1:4], r[0], 1.0, 0.0) for r in src]
    assert a[0] == math.fsum(t[0] for t in terms)


def test_empty_sum_is_zero():
    a, status = K.accel_from_rows(np.zeros(3), np.zeros((0, 6)), 1.0, 0.0)
    assert status == 0 and a.tolist() == [0.0, 0.0, 0.0]
