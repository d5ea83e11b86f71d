import numpy as np
from hypothesis import given, strategies as st

from bhflow.backends import chunk_ranges, serial_force, static_chunk_force
from bhflow.octree import ForceParams, interaction_lists, make_tree

from conftest import plummer_sample


@given(st.integers(0, 5000), st.integers(1, 64))
def test_chunks_partition(n, w):
    ranges = chunk_ranges(n, w)
    flat = [i for lo, hi in ranges for i in range(lo, hi)]
    assert flat == list(range(n))
    sizes = [hi - lo for lo, hi in ranges]
    assert not sizes or max(sizes) - min(sizes) <= 1


def test_static_matches_serial():
    mass, pos, _ = plummer_sample(3000)
    tree = make_tree(pos, mass)
    a, lens = serial_force(tree, pos, 0.5, ForceParams())
    b, lens2, report = static_chunk_force(tree, pos, 0.5, 4, ForceParams())
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(lens, lens2)
    off, _ = interaction_lists(tree, pos, 0.5)
    np.testing.assert_array_equal(lens, np.diff(off))
    assert len(report.times) == 4 and report.imbalance >= 1.0


def test_static_chunks_unequal_work():
    # equal-count chunks of a radially sorted cloud carry unequal list lengths
    mass, pos, _ = plummer_sample(4000)
    tree = make_tree(pos, mass)
    order = np.argsort(np.linalg.norm(pos, axis=1))
    lens = serial_force(tree, pos, 0.5, ForceParams())[1]
    per_chunk = [lens[order][lo:hi].sum() for lo, hi in chunk_ranges(4000, 4)]
    assert max(per_chunk) > 1.05 * min(per_chunk)
